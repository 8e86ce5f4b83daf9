"""Temperature sweeps that propagate each random vector only once.

For the low-rank estimators the basis Q(beta) changes with beta, but since
Y(beta) = Q(beta) R(beta),

    exp(-tau H) Q(beta)  = Y(beta + tau) R(beta)^{-1}
    exp(-tau H) G~(beta) = G(tau) - [exp(-tau H) Q(beta)] Q(beta)^dagger G(0)

so every quantity at every beta follows from two cached imaginary-time
trajectories, Y(tau) = exp(-tau H) S and G(tau) = exp(-tau H) G.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .estimators import (
    EstimatorKind,
    ExpectationEstimate,
    TraceEstimate,
    lr_blocks,
    weighted_traces,
)
from .propagator import CostCounter, PropagatorPlan, ScaledBlock, imag_time_trajectory
from .randrange import (
    DEFAULT_RANK_TOL,
    RangeBasis,
    Role,
    orthogonalize_cholesky,
    orthogonalize_qr,
    sample_gaussian_block,
    stream_id,
)

MAX_R_CONDITION = 1e12


class IllConditionedError(np.linalg.LinAlgError):
    pass


def _key(tau: float) -> float:
    return round(float(tau), 12)


@dataclass
class CachedEvolution:
    """Checkpoints of the Y and G imaginary-time trajectories."""

    y_family: dict[float, ScaledBlock]
    g_family: dict[float, ScaledBlock]
    tau_max: float
    method: str = "qr"
    rank_tol: float | None = DEFAULT_RANK_TOL
    _bases: dict = field(default_factory=dict, repr=False)

    def y(self, tau: float) -> ScaledBlock:
        return _lookup(self.y_family, tau, "Y")

    def g(self, tau: float) -> ScaledBlock:
        return _lookup(self.g_family, tau, "G")

    def basis(self, beta: float) -> RangeBasis:
        """Q(beta), R(beta) of the cached Y(beta), with a conditioning guard."""
        k = _key(beta)
        if k not in self._bases:
            Y = self.y(beta).vectors
            if self.method == "qr":
                basis = orthogonalize_qr(Y, rank_tol=self.rank_tol, source_beta=beta)
            elif self.method == "cholesky":
                basis = orthogonalize_cholesky(Y, source_beta=beta)
            else:
                raise ValueError(f"unknown orthogonalization method {self.method!r}")
            cond = np.linalg.cond(basis.r_factor)
            if not cond < MAX_R_CONDITION:
                raise IllConditionedError(
                    f"R(beta={beta}) has condition number {cond:.3e} > {MAX_R_CONDITION:g}; "
                    "the reuse path would amplify roundoff, evaluate this beta directly"
                )
            self._bases[k] = basis
        return self._bases[k]


def _lookup(family: dict, tau: float, name: str) -> ScaledBlock:
    try:
        return family[_key(tau)]
    except KeyError:
        raise KeyError(f"{name}(tau={tau}) is not cached; cached taus: {sorted(family)}") from None


def tau_max(kind: EstimatorKind, beta_max: float) -> float:
    """1.5 beta_max for LR-LTQT, 2 beta_max for LR-HTQT."""
    return EstimatorKind(kind).tau_max_factor * beta_max


def required_taus(kind: EstimatorKind, beta_grid: Sequence[float]):
    """Imaginary times needed on the (Y, G) trajectories for a sweep."""
    kind = EstimatorKind(kind)
    y_taus, g_taus = {0.0}, {0.0}
    for b in beta_grid:
        if kind.symmetric:
            y_taus |= {b, 1.5 * b}
            g_taus.add(b / 2)
        else:
            y_taus |= {b, 2 * b}
            g_taus.add(b)
    return sorted(y_taus), sorted(g_taus)


def build_cache(plan: PropagatorPlan, S, G, required_taus: Sequence[float],
                g_taus: Sequence[float] | None = None, counter: CostCounter | None = None,
                method: str = "qr", rank_tol: float | None = DEFAULT_RANK_TOL) -> CachedEvolution:
    """Propagate S and G once each, keeping checkpoints at the requested taus."""
    S = np.asarray(getattr(S, "vectors", S))
    G = np.asarray(getattr(G, "vectors", G))
    g_taus = required_taus if g_taus is None else g_taus
    y_traj = imag_time_trajectory(plan, list(required_taus) + [0.0], ScaledBlock(S), counter)
    g_traj = imag_time_trajectory(plan, list(g_taus) + [0.0], ScaledBlock(G), counter)
    all_taus = list(y_traj) + list(g_traj)
    return CachedEvolution(
        {_key(t): b for t, b in y_traj.items()},
        {_key(t): b for t, b in g_traj.items()},
        tau_max=max(all_taus),
        method=method,
        rank_tol=rank_tol,
    )


def evolved_q(cache: CachedEvolution, beta: float, tau: float) -> ScaledBlock:
    """exp(-tau H) Q(beta) = Y(beta + tau) R(beta)^{-1} (triangular solve)."""
    basis = cache.basis(beta)
    y_bt = cache.y(beta + tau)
    vectors = la.solve_triangular(basis.r_factor, y_bt.vectors.T, trans="T").T
    return ScaledBlock(vectors, y_bt.log_scale - cache.y(beta).log_scale, y_bt.source_tau - beta)


def _common_scale(*blocks: ScaledBlock) -> float:
    return max(b.log_scale for b in blocks)


def evolved_g_tilde(cache: CachedEvolution, beta: float, tau: float) -> ScaledBlock:
    """exp(-tau H) G~ = G(tau) - [exp(-tau H) Q(beta)] Q(beta)^dagger G(0)."""
    basis = cache.basis(beta)
    g_tau, g0 = cache.g(tau), cache.g(0.0)
    eq = evolved_q(cache, beta, tau)
    overlap = basis.q_block.conj().T @ g0.with_scale(0.0).vectors
    ls = _common_scale(g_tau, eq)
    vectors = g_tau.with_scale(ls).vectors - eq.with_scale(ls).vectors @ overlap
    return ScaledBlock(vectors, ls, tau)


def _hstack(*blocks: ScaledBlock) -> ScaledBlock:
    ls = _common_scale(*blocks)
    return ScaledBlock(np.hstack([b.with_scale(ls).vectors for b in blocks]), ls)


@dataclass(frozen=True)
class TemperatureSweep:
    beta_grid: tuple
    kind: EstimatorKind
    rank_r: int

    def __post_init__(self):
        grid = tuple(float(b) for b in self.beta_grid)
        if not grid or any(b <= 0 for b in grid):
            raise ValueError("beta grid must be nonempty with beta > 0")
        if any(b2 <= b1 for b1, b2 in zip(grid, grid[1:])):
            raise ValueError("beta grid must be strictly increasing")
        object.__setattr__(self, "beta_grid", grid)
        object.__setattr__(self, "kind", EstimatorKind(self.kind))


def lr_from_cache(cache: CachedEvolution, kind: EstimatorKind, obs, beta: float) -> ExpectationEstimate:
    kind = EstimatorKind(kind)
    r = cache.y(0.0).vectors.shape[1]
    n_g = cache.g(0.0).vectors.shape[1]
    weights = np.concatenate([np.ones(r), np.full(n_g, 1.0 / n_g)])
    if kind is EstimatorKind.LR_LTQT:
        half = _hstack(evolved_q(cache, beta, beta / 2), evolved_g_tilde(cache, beta, beta / 2))
        num, part = weighted_traces(obs, half, half, weights, r, kind)
    elif kind is EstimatorKind.LR_HTQT:
        left = _hstack(evolved_q(cache, beta, 0.0), evolved_g_tilde(cache, beta, 0.0))
        right = _hstack(evolved_q(cache, beta, beta), evolved_g_tilde(cache, beta, beta))
        num, part = weighted_traces(obs, left, right, weights, r, kind)
    else:
        raise ValueError(f"{kind} is not a low-rank estimator")
    return ExpectationEstimate(num, part, beta, r, kind)


def sweep_lrqt(sweep: TemperatureSweep, plan: PropagatorPlan, obs, seed: int, realization: int,
               counter: CostCounter | None = None, method: str = "qr",
               rank_tol: float | None = DEFAULT_RANK_TOL) -> list[ExpectationEstimate]:
    """LR estimates on every beta of ``sweep`` from one pair of trajectories.

    Uses the same random streams as ``lrqt_expectation`` so results agree with
    direct per-beta evaluation.
    """
    if not sweep.kind.low_rank:
        raise ValueError(f"{sweep.kind} is not a low-rank estimator")
    S, G = lr_blocks(plan, sweep.rank_r, seed, realization)
    y_taus, g_taus = required_taus(sweep.kind, sweep.beta_grid)
    cache = build_cache(plan, S, G, y_taus, g_taus, counter, method, rank_tol)
    return [lr_from_cache(cache, sweep.kind, obs, b) for b in sweep.beta_grid]


def _dense(obs) -> np.ndarray:
    e = obs.entries
    return e.toarray() if sp.issparse(e) else np.asarray(e)


def sweep_qt(kind: EstimatorKind, plan: PropagatorPlan, obs, beta_grid: Sequence[float], M: int,
             seed: int, realization: int, counter: CostCounter | None = None) -> list[ExpectationEstimate]:
    """Plain QT on a beta grid, one imaginary-time trajectory per vector.

    In a diagonal spectral frame the symmetric numerator is a quadratic form in
    the Boltzmann factors, sum_jk s_j s_k O_jk P_jk with P = sum_i z_i z_i^dagger,
    so each extra temperature costs O(dim^2) instead of an operator application.
    """
    kind = EstimatorKind(kind)
    if kind.low_rank:
        raise ValueError(f"{kind} is not a plain typicality estimator")
    grid = [float(b) for b in beta_grid]
    z = sample_gaussian_block(plan.dim, M, seed, stream_id(realization, Role.TYPICAL)).vectors
    raw = ScaledBlock(z)
    weights = np.full(M, 1.0 / M)
    out = []
    if kind is EstimatorKind.HTQT:
        traj = imag_time_trajectory(plan, grid, raw, counter)
        o_z = z if obs is None else obs.entries @ z
        for b in grid:
            num, part = weighted_traces(obs, raw, traj[b], weights, 0, kind, obs_left=np.asarray(o_z))
            out.append(ExpectationEstimate(num, part, b, M, kind))
        return out
    diagonal_frame = plan.mode == "spectral" and plan.spectral.is_diagonal_frame and obs is not None
    if diagonal_frame:
        if counter is not None:
            counter.expm_applications += M
        spec = plan.spectral
        P = z.conj() @ z.T
        W = _dense(obs) * P
        col_norms = np.real(np.einsum("ij,ij->i", z.conj(), z))
        for b in grid:
            s = spec.boltzmann_weights(b / 2)
            ls = -b * spec.ground_energy
            num = float(np.real(s @ (W @ s))) / M
            zt = float(np.dot(s * s, col_norms)) / M
            out.append(ExpectationEstimate(
                TraceEstimate(0.0, num, ls, 0, kind.value),
                TraceEstimate(0.0, zt, ls, 0, kind.value), b, M, kind))
        return out
    traj = imag_time_trajectory(plan, [b / 2 for b in grid], raw, counter)
    for b in grid:
        half = traj[b / 2]
        num, part = weighted_traces(obs, half, half, weights, 0, kind)
        out.append(ExpectationEstimate(num, part, b, M, kind))
    return out
