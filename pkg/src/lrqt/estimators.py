"""Stochastic trace estimators and the four typicality expectation estimators.

Plain typicality (QT) averages ``<z|...|z>`` over Gaussian vectors. The
low-rank variants (LR-QT) trace exactly over an orthonormal basis Q of the
range of ``exp(-beta H) S`` and use Gaussian probes projected onto the
complement of Q for the remainder.

Within one realization the numerator ``Tr(O rho)`` and the partition
function ``Tr(rho)`` are always evaluated on the same vectors, so an
identity observable gives exactly 1.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .lattice import OperatorMatrix, apply_operator
from .propagator import CostCounter, PropagatorPlan, ScaledBlock, imag_time_apply
from .randrange import (
    DEFAULT_RANK_TOL,
    RangeBasis,
    Role,
    orthogonalize_cholesky,
    orthogonalize_qr,
    project_complement,
    sample_gaussian_block,
    stream_id,
)

LinearAction = Union[OperatorMatrix, np.ndarray, Callable[[np.ndarray], np.ndarray]]

PROJECTION_TOL = 1e-10


class EstimatorKind(str, enum.Enum):
    HTQT = "HTQT"
    LTQT = "LTQT"
    LR_HTQT = "LR_HTQT"
    LR_LTQT = "LR_LTQT"

    @property
    def symmetric(self) -> bool:
        """Boltzmann factor split as exp(-beta H / 2) on both sides."""
        return self in (EstimatorKind.LTQT, EstimatorKind.LR_LTQT)

    @property
    def low_rank(self) -> bool:
        return self in (EstimatorKind.LR_HTQT, EstimatorKind.LR_LTQT)

    @property
    def tau_max_factor(self) -> float:
        """Largest imaginary time, in units of beta, needed by a reuse sweep."""
        return 1.5 if self.symmetric else 2.0

    @property
    def plain(self) -> "EstimatorKind":
        return EstimatorKind.LTQT if self.symmetric else EstimatorKind.HTQT


@dataclass(frozen=True)
class TraceEstimate:
    """Two-term trace estimate; the represented trace is ``total * exp(log_scale)``."""

    deterministic_term: float
    stochastic_term: float
    log_scale: float = 0.0
    rank_r: int = 0
    kind: str = "hutchinson"

    @property
    def total(self) -> float:
        return self.deterministic_term + self.stochastic_term

    @property
    def value(self) -> float:
        return self.total * np.exp(self.log_scale)


@dataclass(frozen=True)
class ExpectationEstimate:
    numerator: TraceEstimate
    partition: TraceEstimate
    beta: float
    n_vectors: int
    kind: EstimatorKind | None = None

    @property
    def value(self) -> float:
        ratio = self.numerator.total / self.partition.total
        if self.numerator.log_scale == self.partition.log_scale:
            return float(ratio)
        return float(ratio * np.exp(self.numerator.log_scale - self.partition.log_scale))


def _matvec(action: LinearAction) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(action, OperatorMatrix):
        return lambda x: apply_operator(action, x)
    if callable(action):
        return action
    mat = action
    return lambda x: mat @ x


def _column_dots(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """<left_i | right_i> for every column i (real part: all traces here are real)."""
    return np.real(np.einsum("ij,ij->j", left.conj(), right))


def _basis_array(Q) -> np.ndarray:
    return Q.q_block if isinstance(Q, RangeBasis) else np.asarray(Q)


def _check_projected(Q: np.ndarray, G_tilde: np.ndarray) -> None:
    leak = np.max(np.abs(Q.conj().T @ G_tilde), initial=0.0)
    scale = max(1.0, float(np.max(np.abs(G_tilde), initial=0.0)))
    if leak > PROJECTION_TOL * scale:
        raise ValueError(
            f"probe block is not orthogonal to Q: max|Q^dagger G~|={leak:.3e} "
            f"exceeds {PROJECTION_TOL:g} (project with project_complement first)"
        )


def hutchinson_trace(apply_A: LinearAction, dim: int, M: int, seed: int, stream: int) -> TraceEstimate:
    """(1/M) sum_i z_i^dagger A z_i with Gaussian z_i."""
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    z = sample_gaussian_block(dim, M, seed, stream).vectors
    est = _column_dots(z, _matvec(apply_A)(z)).sum() / M
    return TraceEstimate(0.0, float(est), 0.0, 0, "hutchinson")


def lowrank_trace(apply_A: LinearAction, Q, G_tilde: np.ndarray, r: int | None = None) -> TraceEstimate:
    """Tr(Q^dagger A Q) + (1/r) Tr(G~^dagger A G~)."""
    Q = _basis_array(Q)
    G_tilde = np.asarray(G_tilde)
    r = G_tilde.shape[1] if r is None else r
    _check_projected(Q, G_tilde)
    A = _matvec(apply_A)
    det = _column_dots(Q, A(Q)).sum()
    sto = _column_dots(G_tilde, A(G_tilde)).sum() / r
    return TraceEstimate(float(det), float(sto), 0.0, Q.shape[1], "lowrank")


def lowrank_trace_symmetric(apply_B: LinearAction, Q, G_tilde: np.ndarray, r: int | None = None) -> TraceEstimate:
    """Tr((BQ)^dagger BQ) + (1/r) Tr((BG~)^dagger BG~) for Hermitian B; estimates Tr(B^2)."""
    Q = _basis_array(Q)
    G_tilde = np.asarray(G_tilde)
    r = G_tilde.shape[1] if r is None else r
    _check_projected(Q, G_tilde)
    B = _matvec(apply_B)
    det = np.sum(np.abs(B(Q)) ** 2)
    sto = np.sum(np.abs(B(G_tilde)) ** 2) / r
    return TraceEstimate(float(det), float(sto), 0.0, Q.shape[1], "lowrank_symmetric")


def _apply_obs(obs: OperatorMatrix | None, block: np.ndarray) -> np.ndarray:
    return block if obs is None else apply_operator(obs, block)


def weighted_traces(obs, left: ScaledBlock, right: ScaledBlock, weights: np.ndarray,
                    n_det: int, kind: EstimatorKind, obs_left: np.ndarray | None = None):
    """Numerator and partition traces from bra/ket blocks.

    Column ``i`` contributes ``weights[i] * <left_i| O |right_i>``; the first
    ``n_det`` columns form the deterministic (low-rank) term. ``obs_left``
    may hold a precomputed ``O @ left.vectors``.
    """
    if obs_left is None:
        if left is right:
            o_side = _apply_obs(obs, right.vectors)
            num_cols = _column_dots(left.vectors, o_side)
        else:
            num_cols = _column_dots(_apply_obs(obs, left.vectors), right.vectors)
    else:
        num_cols = _column_dots(obs_left, right.vectors)
    z_cols = _column_dots(left.vectors, right.vectors)
    log_scale = left.log_scale + right.log_scale
    num_w, z_w = num_cols * weights, z_cols * weights
    r = n_det
    numerator = TraceEstimate(float(num_w[:n_det].sum()), float(num_w[n_det:].sum()), log_scale, r, kind.value)
    partition = TraceEstimate(float(z_w[:n_det].sum()), float(z_w[n_det:].sum()), log_scale, r, kind.value)
    return numerator, partition


def qt_from_vectors(kind: EstimatorKind, plan: PropagatorPlan, obs, beta: float, z: np.ndarray,
                    counter: CostCounter | None = None) -> ExpectationEstimate:
    """Plain typicality on given vectors ``z`` (columns)."""
    kind = EstimatorKind(kind)
    M = z.shape[1]
    weights = np.full(M, 1.0 / M)
    raw = ScaledBlock(z)
    if kind is EstimatorKind.LTQT:
        half = imag_time_apply(plan, beta / 2, raw, counter)
        num, part = weighted_traces(obs, half, half, weights, 0, kind)
    elif kind is EstimatorKind.HTQT:
        full = imag_time_apply(plan, beta, raw, counter)
        num, part = weighted_traces(obs, raw, full, weights, 0, kind)
    else:
        raise ValueError(f"{kind} is not a plain typicality estimator")
    return ExpectationEstimate(num, part, beta, M, kind)


def qt_expectation(kind: EstimatorKind, plan: PropagatorPlan, obs, beta: float, M: int,
                   seed: int, realization: int, counter: CostCounter | None = None) -> ExpectationEstimate:
    """LTQT: <z|e^{-bH/2} O e^{-bH/2}|z>;  HTQT: <z|O e^{-bH}|z>; same z for Z."""
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    z = sample_gaussian_block(plan.dim, M, seed, stream_id(realization, Role.TYPICAL)).vectors
    return qt_from_vectors(kind, plan, obs, beta, z, counter)


@dataclass(frozen=True)
class LowRankState:
    """Q, R and the projected probes of one LR realization at one beta."""

    basis: RangeBasis
    probes: np.ndarray  # G, unprojected
    g_tilde: np.ndarray


def build_lowrank_state(plan: PropagatorPlan, beta: float, S: np.ndarray, G: np.ndarray,
                        counter: CostCounter | None = None, rank_tol: float | None = DEFAULT_RANK_TOL,
                        method: str = "qr") -> LowRankState:
    """Steps 1-3: Y = exp(-beta H) S, Y = Q R, G~ = G - Q Q^dagger G."""
    Y = imag_time_apply(plan, beta, ScaledBlock(S), counter)
    if method == "qr":
        basis = orthogonalize_qr(Y.vectors, rank_tol=rank_tol, source_beta=beta)
    elif method == "cholesky":
        basis = orthogonalize_cholesky(Y.vectors, source_beta=beta)
    else:
        raise ValueError(f"unknown orthogonalization method {method!r}")
    return LowRankState(basis, G, project_complement(basis, G))


def lrqt_from_state(kind: EstimatorKind, plan: PropagatorPlan, obs, beta: float, state: LowRankState,
                    counter: CostCounter | None = None) -> ExpectationEstimate:
    """Step 4: evolve [Q | G~] once and form both traces."""
    kind = EstimatorKind(kind)
    Q, Gt = state.basis.q_block, state.g_tilde
    r = Q.shape[1]
    weights = np.concatenate([np.ones(r), np.full(Gt.shape[1], 1.0 / Gt.shape[1])])
    X = ScaledBlock(np.hstack([Q, Gt]))
    if kind is EstimatorKind.LR_LTQT:
        half = imag_time_apply(plan, beta / 2, X, counter)
        num, part = weighted_traces(obs, half, half, weights, r, kind)
    elif kind is EstimatorKind.LR_HTQT:
        full = imag_time_apply(plan, beta, X, counter)
        num, part = weighted_traces(obs, X, full, weights, r, kind)
    else:
        raise ValueError(f"{kind} is not a low-rank estimator")
    return ExpectationEstimate(num, part, beta, r, kind)


def lr_blocks(plan: PropagatorPlan, r: int, seed: int, realization: int):
    """The S (range sketch) and G (probe) blocks of one realization."""
    S = sample_gaussian_block(plan.dim, r, seed, stream_id(realization, Role.RANGE)).vectors
    G = sample_gaussian_block(plan.dim, r, seed, stream_id(realization, Role.PROBE)).vectors
    return S, G


def lrqt_expectation(kind: EstimatorKind, plan: PropagatorPlan, obs, beta: float, r: int,
                     seed: int, realization: int, counter: CostCounter | None = None,
                     rank_tol: float | None = DEFAULT_RANK_TOL, method: str = "qr") -> ExpectationEstimate:
    """LR-HTQT / LR-LTQT expectation value of ``obs`` at inverse temperature ``beta``.

    Costs 3r applications of the matrix exponential: r to build the range
    sketch and 2r to evolve Q and the projected probes.
    """
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    if r > plan.dim:
        raise ValueError(f"r={r} exceeds the space dimension {plan.dim}")
    S, G = lr_blocks(plan, r, seed, realization)
    state = build_lowrank_state(plan, beta, S, G, counter, rank_tol, method)
    return lrqt_from_state(kind, plan, obs, beta, state, counter)


def estimate_expectation(kind, plan: PropagatorPlan, obs, beta: float, n: int, seed: int,
                         realization: int, counter: CostCounter | None = None, **kw) -> ExpectationEstimate:
    """Dispatch on ``kind``; ``n`` is M for plain kinds and r for low-rank kinds."""
    kind = EstimatorKind(kind)
    if kind.low_rank:
        return lrqt_expectation(kind, plan, obs, beta, n, seed, realization, counter, **kw)
    return qt_expectation(kind, plan, obs, beta, n, seed, realization, counter)
