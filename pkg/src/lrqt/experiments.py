"""Experiment drivers behind the command-line subcommands.

Each driver returns the CSV rows (header first) plus a metadata dict; the
CLI layer only handles configuration and file output. Spectral-mode runs
work in the eigenbasis of the (pre-quench) Hamiltonian: Gaussian vectors are
rotation invariant, so sampling there gives the same estimator statistics
while imaginary-time propagation becomes elementwise.
"""
from __future__ import annotations

import functools
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import QuenchProtocol, default_time_grid, dqt_quench, lrdqt_quench
from .ensemble import EnsembleStats, fit_power_law, run_ensemble
from .estimators import EstimatorKind, estimate_expectation
from .lattice import OperatorMatrix, build_nn_correlator, build_sector_basis, build_xxz_hamiltonian
from .multitemp import IllConditionedError, TemperatureSweep, sweep_lrqt, sweep_qt
from .propagator import CostCounter, PropagatorPlan, ScaledBlock, imag_time_apply
from .randrange import DEFAULT_RANK_TOL, Role, orthogonalize_qr, sample_gaussian_block, stream_id
from .spectral import (
    QuenchOracle,
    SpectralDecomposition,
    exact_partition,
    exact_thermal_expectation,
    full_diagonalize,
    truncated_trace_error,
)

STATIC_HEADER = ["T", "kind", "mean", "variance", "stderr", "n", "exact"]
RSWEEP_HEADER = ["r", "kind", "variance", "stderr", "n"]
QUENCH_HEADER = ["t", "kind", "mean", "variance", "exact"]
TRACEERR_HEADER = ["r", "beta", "lr_err", "trunc_err"]
RAW_HEADER = ["kind", "point", "realization", "value"]


def _raw_rows(label: str, points, raw: np.ndarray) -> list[list[str]]:
    """Long-format per-realization values; ``raw`` has shape (n_realizations, len(points))."""
    raw = np.asarray(raw).reshape(raw.shape[0], -1)
    return [[label, _fmt(p), str(k), _fmt(raw[k, i])]
            for i, p in enumerate(points) for k in range(raw.shape[0])]

ALL_KINDS = (EstimatorKind.HTQT, EstimatorKind.LTQT, EstimatorKind.LR_HTQT, EstimatorKind.LR_LTQT)


@dataclass
class ModelConfig:
    L: int = 14
    delta: float = 0.0
    total_sz: float = 0.0


@dataclass
class EstimatorConfig:
    rank: int = 10
    samples: int | None = None  # plain-QT vectors; defaults to 3 * rank
    kinds: list[str] | None = None
    rank_tol: float | None = DEFAULT_RANK_TOL

    @property
    def m_samples(self) -> int:
        return 3 * self.rank if self.samples is None else self.samples


@dataclass
class ScheduleConfig:
    tmin: float = 0.1
    tmax: float = 10.0
    tpoints: int = 21
    temperature_grid: list[float] | None = None  # explicit temperatures; overrides the log grid
    temperature: float = 1.0
    r_grid: list[int] = field(default_factory=lambda: [10, 20, 40, 80, 160])
    beta: float = 0.5
    delta_final: float = 4.0
    t_final: float = 10.0
    dt: float = 0.1
    beta_grid: list[float] = field(default_factory=lambda: [0.5, 1.0, 2.0, 4.0])
    trace_ranks: list[int] | None = None  # traceerr; defaults to powers of two up to dim/4


@dataclass
class EnsembleConfig:
    n_realizations: int = 1000
    seed: int = 20210101
    threads: int = 1


@dataclass
class OutputConfig:
    directory: str = "results"
    format: str = "csv"


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        payload = self.to_dict()
        payload["output"] = None  # where results go does not change them
        payload["ensemble"] = dict(payload["ensemble"], threads=None)
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def temperatures(self) -> np.ndarray:
        s = self.schedule
        if s.temperature_grid is not None:
            return np.asarray(s.temperature_grid, dtype=float)
        return np.logspace(np.log10(s.tmin), np.log10(s.tmax), s.tpoints)

    def kinds(self, default=ALL_KINDS) -> list[EstimatorKind]:
        if self.estimator.kinds is None:
            return list(default)
        return [EstimatorKind(k) for k in self.estimator.kinds]


class ConfigValidationError(ValueError):
    """Invalid configuration values; ``problems`` holds (dotted key, message) pairs."""

    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = problems
        super().__init__("invalid configuration: " + "; ".join(f"{k} {msg}" for k, msg in problems))


def validate(cfg: ExperimentConfig, command: str) -> None:
    m, e, s, n = cfg.model, cfg.estimator, cfg.schedule, cfg.ensemble
    errors: list[tuple[str, str]] = []
    if m.L < 3:
        errors.append(("model.L", "must be >= 3"))
    if abs(m.total_sz) > m.L / 2 or abs((m.L / 2 + m.total_sz) - round(m.L / 2 + m.total_sz)) > 1e-9:
        errors.append(("model.total_sz", "must satisfy |total_sz| <= L/2 with L/2 + total_sz integral"))
    if e.rank < 1:
        errors.append(("estimator.rank", "must be >= 1"))
    if e.m_samples < 1:
        errors.append(("estimator.samples", "must be >= 1"))
    if n.n_realizations < 2:
        errors.append(("ensemble.n_realizations", "must be >= 2"))
    if not 0 <= n.seed < 2**64:
        errors.append(("ensemble.seed", "must be an unsigned 64-bit integer"))
    if n.threads < 1:
        errors.append(("ensemble.threads", "must be >= 1"))
    if command in ("static", "varsweep"):
        if s.temperature_grid is not None and (not s.temperature_grid or min(s.temperature_grid) <= 0):
            errors.append(("schedule.temperature_grid", "must hold temperatures > 0"))
        if not 0 < s.tmin <= s.tmax:
            errors.append(("schedule.tmin", "must satisfy 0 < tmin <= tmax"))
        if s.tpoints < 1:
            errors.append(("schedule.tpoints", "must be >= 1"))
    if command == "rsweep":
        if len(s.r_grid) < 3 or any(r < 1 for r in s.r_grid):
            errors.append(("schedule.r_grid", "needs at least three ranks >= 1 for the slope fit"))
        if s.temperature <= 0:
            errors.append(("schedule.temperature", "must be > 0"))
    if command == "quench":
        if s.t_final < 0:
            errors.append(("schedule.t_final", "must be >= 0"))
        if s.dt <= 0:
            errors.append(("schedule.dt", "must be > 0"))
        if s.beta < 0:
            errors.append(("schedule.beta", "must be >= 0"))
    if command == "traceerr":
        if not s.beta_grid or any(b < 0 for b in s.beta_grid):
            errors.append(("schedule.beta_grid", "must hold nonnegative values"))
        if s.trace_ranks is not None and (not s.trace_ranks or any(r < 1 for r in s.trace_ranks)):
            errors.append(("schedule.trace_ranks", "must hold ranks >= 1"))
    for k in e.kinds or ():
        if k not in EstimatorKind.__members__:
            errors.append(("estimator.kinds", f"has unknown kind {k!r}"))
    if errors:
        raise ConfigValidationError(errors)


@dataclass(frozen=True)
class Workspace:
    """Model matrices, spectrum and eigenbasis-frame plan for one (L, delta, Sz)."""

    dim: int
    hamiltonian: OperatorMatrix
    correlator: OperatorMatrix
    spectrum: SpectralDecomposition
    plan: PropagatorPlan  # acts in the eigenbasis of ``hamiltonian``
    correlator_eig: OperatorMatrix


@functools.lru_cache(maxsize=4)
def workspace(L: int, delta: float, total_sz: float = 0.0) -> Workspace:
    basis = build_sector_basis(L, total_sz)
    H = build_xxz_hamiltonian(basis, delta)
    C = build_nn_correlator(basis)
    spec = full_diagonalize(H)
    plan = PropagatorPlan.from_spectrum(spec.in_eigenbasis())
    return Workspace(basis.dim, H, C, spec, plan, spec.rotate(C))


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def _check_ranks(cfg: ExperimentConfig, dim: int, ranks, key: str) -> None:
    if any(kind.low_rank for kind in cfg.kinds()) and max(ranks) > dim:
        raise ConfigValidationError([(key, f"must not exceed the sector dimension {dim}")])


def _lr_sweep_values(ws: Workspace, kind, betas, r, seed, k, counter, rank_tol):
    """Reuse-path sweep; temperatures whose R(beta) is too ill-conditioned are done directly."""
    try:
        return [e.value for e in sweep_lrqt(TemperatureSweep(tuple(betas), kind, r), ws.plan,
                                             ws.correlator_eig, seed, k, counter, rank_tol=rank_tol)]
    except IllConditionedError:
        pass
    from .multitemp import build_cache, lr_from_cache, required_taus
    from .estimators import lr_blocks

    S, G = lr_blocks(ws.plan, r, seed, k)
    y_taus, g_taus = required_taus(kind, betas)
    cache = build_cache(ws.plan, S, G, y_taus, g_taus, counter, rank_tol=rank_tol)
    out = []
    for b in betas:
        try:
            out.append(lr_from_cache(cache, kind, ws.correlator_eig, b).value)
        except IllConditionedError:
            out.append(estimate_expectation(kind, ws.plan, ws.correlator_eig, b, r, seed, k,
                                            counter, rank_tol=rank_tol).value)
    return out


class _Counters:
    """Per-realization cost counters, merged in realization order."""

    def __init__(self):
        self._by_key: dict = {}

    def new(self, key) -> CostCounter:
        c = CostCounter()
        self._by_key[key] = c
        return c

    def per_realization(self, kind_label: str) -> list[CostCounter]:
        return [c for (lbl, _), c in sorted(self._by_key.items()) if lbl == kind_label]

    def total(self) -> CostCounter:
        out = CostCounter()
        for c in self._by_key.values():
            out.merge(c)
        return out


def _grid_stats(cfg, ws, temps, kinds, r, M):
    betas = 1.0 / np.asarray(temps)
    order = np.argsort(betas)
    betas_sorted = betas[order]
    counters = _Counters()
    seed = cfg.ensemble.seed
    n = cfg.ensemble.n_realizations
    stats, raws = {}, {}
    inv = np.argsort(order)
    for kind in kinds:
        def experiment(seed, k, kind=kind):
            counter = counters.new((kind.value, k))
            if kind.low_rank:
                return _lr_sweep_values(ws, kind, betas_sorted, r, seed, k, counter, cfg.estimator.rank_tol)
            return [e.value for e in sweep_qt(kind, ws.plan, ws.correlator_eig, betas_sorted, M, seed, k, counter)]

        st, raw = run_ensemble(experiment, n, seed, cfg.ensemble.threads)
        stats[kind] = EnsembleStats(st.n_realizations, st.mean[inv], st.variance[inv], st.std_error[inv])
        raws[kind] = raw[:, inv]
    return stats, raws, counters


def run_static(cfg: ExperimentConfig):
    """Mean/variance of <C> versus temperature for each estimator kind."""
    m, e = cfg.model, cfg.estimator
    ws = workspace(m.L, m.delta, m.total_sz)
    temps = cfg.temperatures()
    kinds = cfg.kinds()
    _check_ranks(cfg, ws.dim, [e.rank], "estimator.rank")
    stats, raws, counters = _grid_stats(cfg, ws, temps, kinds, e.rank, e.m_samples)
    exact = [exact_thermal_expectation(ws.spectrum, ws.correlator, 1.0 / T) for T in temps]
    rows, raw_rows = [STATIC_HEADER], [RAW_HEADER]
    for kind in kinds:
        st = stats[kind]
        raw_rows += _raw_rows(kind.value, temps, raws[kind])
        for i, T in enumerate(temps):
            rows.append([_fmt(T), kind.value, _fmt(st.mean[i]), _fmt(st.variance[i]),
                         _fmt(st.std_error[i]), _fmt(st.n_realizations), _fmt(exact[i])])
    meta = {"expm_per_realization": {
        kind.value: sorted({c.expm_applications for c in counters.per_realization(kind.value)})
        for kind in kinds}}
    return rows, raw_rows, counters.total(), meta


def run_rsweep(cfg: ExperimentConfig):
    """Variance of <C> versus rank at fixed temperature, with matched budget M = 3r."""
    m = cfg.model
    ws = workspace(m.L, m.delta, m.total_sz)
    beta = 1.0 / cfg.schedule.temperature
    kinds = cfg.kinds()
    _check_ranks(cfg, ws.dim, cfg.schedule.r_grid, "schedule.r_grid")
    counters = _Counters()
    rows, raw_rows = [RSWEEP_HEADER], [RAW_HEADER]
    variances = {kind: [] for kind in kinds}
    budget = {}
    for kind in kinds:
        for r in cfg.schedule.r_grid:
            n_vec = r if kind.low_rank else 3 * r

            def experiment(seed, k, kind=kind, r=r, n_vec=n_vec):
                counter = counters.new((f"{kind.value}@{r}", k))
                return estimate_expectation(kind, ws.plan, ws.correlator_eig, beta, n_vec, seed, k, counter,
                                            **({"rank_tol": cfg.estimator.rank_tol} if kind.low_rank else {})).value

            st, raw = run_ensemble(experiment, cfg.ensemble.n_realizations, cfg.ensemble.seed, cfg.ensemble.threads)
            raw_rows += _raw_rows(kind.value, [r], raw)
            variances[kind].append(st.variance)
            rows.append([_fmt(r), kind.value, _fmt(st.variance), _fmt(st.std_error), _fmt(st.n_realizations)])
            budget[f"{kind.value}@r={r}"] = sorted(
                {c.expm_applications for c in counters.per_realization(f"{kind.value}@{r}")})
    slopes = {}
    for kind in kinds:
        v = np.asarray(variances[kind])
        if np.all(v > 0):
            slopes[kind.value] = fit_power_law(cfg.schedule.r_grid, v)[0]
    return rows, raw_rows, counters.total(), {"slopes": slopes, "expm_per_realization": budget}


def quench_workspace(L: int, delta: float, delta_final: float, total_sz: float = 0.0):
    """Pre-quench eigenframe plans: (ws_init, plan_init, plan_final, C in that frame)."""
    ws0 = workspace(L, delta, total_sz)
    ws1 = workspace(L, delta_final, total_sz)
    final_in_frame = ws1.spectrum.expressed_in(ws0.spectrum)
    return ws0, ws1, ws0.plan, PropagatorPlan.from_spectrum(final_in_frame), ws0.correlator_eig


def run_quench(cfg: ExperimentConfig):
    """<C(t)> after a quench delta -> delta_final from temperature 1/beta."""
    m, e, s = cfg.model, cfg.estimator, cfg.schedule
    ws0, ws1, plan0, plan1, C0 = quench_workspace(m.L, m.delta, s.delta_final, m.total_sz)
    times = default_time_grid(s.t_final, s.dt)
    protocol = QuenchProtocol(ws0.hamiltonian, ws1.hamiltonian, s.beta, times)
    exact = QuenchOracle(ws0.spectrum, ws1.spectrum, ws0.correlator, s.beta)(times)
    kinds = cfg.kinds(default=(EstimatorKind.LTQT, EstimatorKind.LR_LTQT))
    if any(k.low_rank for k in kinds) and e.rank > ws0.dim:
        raise ConfigValidationError([("estimator.rank", f"must not exceed the sector dimension {ws0.dim}")])
    counters = _Counters()
    rows, raw_rows = [QUENCH_HEADER], [RAW_HEADER]
    realtime = {}
    for kind in kinds:
        def experiment(seed, k, kind=kind):
            counter = counters.new((kind.value, k))
            if kind.low_rank:
                series = lrdqt_quench(protocol, plan0, plan1, C0, kind, e.rank, seed, k, counter,
                                      rank_tol=e.rank_tol)
            else:
                series = dqt_quench(protocol, plan0, plan1, C0, kind, e.m_samples, seed, k, counter)
            return [x.value for x in series]

        st, raw = run_ensemble(experiment, cfg.ensemble.n_realizations, cfg.ensemble.seed, cfg.ensemble.threads)
        raw_rows += _raw_rows(kind.value, times, raw)
        for i, t in enumerate(times):
            rows.append([_fmt(t), kind.value, _fmt(st.mean[i]), _fmt(st.variance[i]), _fmt(exact[i])])
        steps = int(np.count_nonzero(times))
        per_step = sorted({c.realtime_applications // max(steps, 1)
                           for c in counters.per_realization(kind.value)})
        realtime[kind.value] = per_step
    return rows, raw_rows, counters.total(), {"realtime_per_step": realtime}


def lowrank_trace_error(ws: Workspace, beta: float, ranks: Sequence[int], seed: int, k: int,
                        counter: CostCounter | None = None) -> np.ndarray:
    """|Z - Tr(Q^dagger e^{-beta H} Q)| / Z for nested rank-r range finders of one realization."""
    r_max = max(ranks)
    S = sample_gaussian_block(ws.dim, r_max, seed, stream_id(k, Role.RANGE)).vectors
    Y = imag_time_apply(ws.plan, beta, ScaledBlock(S), counter)
    basis = orthogonalize_qr(Y.vectors, rank_tol=None)
    spec = ws.plan.spectral
    w = spec.boltzmann_weights(beta)  # Z = exp(-beta E0) * sum(w)
    captured = np.cumsum(np.einsum("ij,ij->j", basis.q_block.conj(), w[:, None] * basis.q_block).real)
    z = w.sum()
    return np.array([abs(z - captured[r - 1]) / z for r in ranks])


def default_trace_ranks(dim: int) -> list[int]:
    top = max(1, dim // 4)
    ranks = sorted({1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024, top} & set(range(1, top + 1)))
    return ranks


def run_traceerr(cfg: ExperimentConfig):
    """Low-rank trace error versus the truncated-spectrum error."""
    m = cfg.model
    ws = workspace(m.L, m.delta, m.total_sz)
    ranks = cfg.schedule.trace_ranks
    ranks = default_trace_ranks(ws.dim) if ranks is None else sorted(set(ranks))
    if ranks[-1] > ws.dim:
        raise ConfigValidationError([("schedule.trace_ranks", f"must not exceed the sector dimension {ws.dim}")])
    rows, raw_rows = [TRACEERR_HEADER], [RAW_HEADER]
    counters = _Counters()
    for beta in cfg.schedule.beta_grid:
        def experiment(seed, k, beta=beta):
            return lowrank_trace_error(ws, beta, ranks, seed, k, counters.new((f"{beta}", k)))

        st, raw = run_ensemble(experiment, cfg.ensemble.n_realizations, cfg.ensemble.seed, cfg.ensemble.threads)
        raw_rows += _raw_rows(f"beta={_fmt(beta)}", ranks, raw)
        for i, r in enumerate(ranks):
            rows.append([_fmt(r), _fmt(beta), _fmt(st.mean[i]),
                         _fmt(truncated_trace_error(ws.spectrum, beta, r))])
    return rows, raw_rows, counters.total(), {"ranks": list(ranks)}


COMMANDS = {
    "static": run_static,
    "varsweep": run_static,
    "rsweep": run_rsweep,
    "quench": run_quench,
    "traceerr": run_traceerr,
}


@dataclass
class RunResult:
    rows: list  # summary CSV, header first
    raw_rows: list  # per-realization values, header first
    sidecar: dict


def run_command(command: str, cfg: ExperimentConfig) -> RunResult:
    """Validate, run and time one subcommand."""
    if command not in COMMANDS:
        raise ValueError(f"unknown command {command!r}; expected one of {sorted(COMMANDS)}")
    validate(cfg, command)
    t0 = time.perf_counter()
    rows, raw_rows, counter, meta = COMMANDS[command](cfg)
    sidecar = {
        "command": command,
        "config_hash": cfg.config_hash(),
        "seed": cfg.ensemble.seed,
        "expm_applications": counter.expm_applications,
        "realtime_applications": counter.realtime_applications,
        "wall_seconds": time.perf_counter() - t0,
        "config": cfg.to_dict(),
        **meta,
    }
    return RunResult(rows, raw_rows, sidecar)


__all__ = [
    "ExperimentConfig", "ModelConfig", "EstimatorConfig", "ScheduleConfig", "EnsembleConfig",
    "OutputConfig", "Workspace", "workspace", "quench_workspace", "run_command", "RunResult", "validate", "ConfigValidationError",
    "run_static", "run_rsweep", "run_quench", "run_traceerr", "lowrank_trace_error", "exact_partition",
]
