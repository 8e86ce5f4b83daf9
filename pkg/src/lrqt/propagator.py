"""Imaginary- and real-time propagation of vector blocks.

Two backends share one interface:

* ``spectral``: exact, through a full eigendecomposition (the reference path);
* ``lanczos``: column-by-column Krylov approximation of ``exp(-tau H) v``,
  validated against the spectral path.

Imaginary-time results carry a shared log-scale factor so that
``exp(-tau H)`` never under- or overflows.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np
import scipy.linalg as la

from .lattice import OperatorMatrix
from .spectral import SpectralDecomposition


class LanczosConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual estimate {residual:.3e})")
        self.residual = residual


@dataclass
class CostCounter:
    """Number of vector-level calls to the matrix exponential."""

    expm_applications: int = 0
    realtime_applications: int = 0

    def merge(self, other: "CostCounter") -> None:
        self.expm_applications += other.expm_applications
        self.realtime_applications += other.realtime_applications


@dataclass(frozen=True)
class ScaledBlock:
    """Column block whose represented value is ``exp(log_scale) * vectors``."""

    vectors: np.ndarray
    log_scale: float = 0.0
    source_tau: float = 0.0

    @property
    def shape(self):
        return self.vectors.shape

    @property
    def n_columns(self) -> int:
        return 1 if self.vectors.ndim == 1 else self.vectors.shape[1]

    def value(self) -> np.ndarray:
        return np.exp(self.log_scale) * self.vectors

    def rebalanced(self) -> "ScaledBlock":
        """Move the largest column norm into ``log_scale``."""
        norm = float(np.max(np.linalg.norm(self.vectors, axis=0), initial=0.0))
        if norm == 0.0 or not np.isfinite(norm):
            return self
        return replace(self, vectors=self.vectors / norm, log_scale=self.log_scale + np.log(norm))

    def with_scale(self, log_scale: float) -> "ScaledBlock":
        """Same represented value expressed relative to ``log_scale``."""
        factor = np.exp(self.log_scale - log_scale)
        return replace(self, vectors=self.vectors * factor, log_scale=log_scale)


def as_block(vectors, log_scale: float = 0.0) -> ScaledBlock:
    if isinstance(vectors, ScaledBlock):
        return vectors
    v = np.asarray(vectors)
    if v.ndim == 1:
        v = v[:, None]
    return ScaledBlock(v, log_scale)


@dataclass(frozen=True)
class LanczosSettings:
    max_krylov_dim: int = 64
    residual_tol: float = 1e-10
    reorthogonalize: bool = True
    substeps: int = 1
    strict: bool = True  # False: return the max_krylov_dim approximation instead of raising

    def __post_init__(self):
        if self.max_krylov_dim < 1 or self.substeps < 1:
            raise ValueError("max_krylov_dim and substeps must be >= 1")
        if self.residual_tol < 0:
            raise ValueError("residual_tol must be >= 0")


@dataclass(frozen=True)
class PropagatorPlan:
    mode: str
    spectral: SpectralDecomposition | None = field(default=None, repr=False)
    lanczos: LanczosSettings | None = None
    operator: OperatorMatrix | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode == "spectral":
            if self.spectral is None or self.lanczos is not None:
                raise ValueError("spectral plan needs a decomposition and no Lanczos settings")
        elif self.mode == "lanczos":
            if self.lanczos is None or self.operator is None or self.spectral is not None:
                raise ValueError("lanczos plan needs an operator and settings, and no decomposition")
        else:
            raise ValueError(f"unknown propagator mode {self.mode!r}")

    @classmethod
    def from_spectrum(cls, spec: SpectralDecomposition) -> "PropagatorPlan":
        return cls("spectral", spectral=spec)

    @classmethod
    def from_operator(cls, op: OperatorMatrix, **settings) -> "PropagatorPlan":
        return cls("lanczos", lanczos=LanczosSettings(**settings), operator=op)

    @property
    def dim(self) -> int:
        return self.spectral.dim if self.mode == "spectral" else self.operator.dim


def _check_block(plan: PropagatorPlan, block: ScaledBlock) -> None:
    if block.vectors.shape[0] != plan.dim:
        raise ValueError(f"block has {block.vectors.shape[0]} rows, propagator dim is {plan.dim}")


def _krylov_exp(matvec, v, coef, settings: LanczosSettings, shift=None):
    """exp(coef * (H - shift)) v by Lanczos.

    With ``shift=None`` the smallest Ritz value is used and returned, so the
    caller can reuse it for the remaining columns.
    """
    norm_v = np.linalg.norm(v)
    if norm_v == 0.0:
        return np.zeros_like(v, dtype=np.result_type(v, coef)), (0.0 if shift is None else shift)
    m = settings.max_krylov_dim
    dtype = np.result_type(v.dtype, float)
    basis = np.zeros((v.shape[0], m + 1), dtype=dtype)
    basis[:, 0] = v / norm_v
    alpha, beta = [], []
    err = np.inf
    for j in range(m):
        w = np.asarray(matvec(basis[:, j]), dtype=dtype)
        a = float(np.real(np.vdot(basis[:, j], w)))
        w = w - a * basis[:, j]
        if j > 0:
            w = w - beta[-1] * basis[:, j - 1]
        if settings.reorthogonalize:
            for _ in range(2):
                w = w - basis[:, : j + 1] @ (basis[:, : j + 1].conj().T @ w)
        b = float(np.linalg.norm(w))
        alpha.append(a)
        evals, evecs = la.eigh_tridiagonal(np.array(alpha), np.array(beta))
        s = evals[0] if shift is None else shift
        y = evecs @ (np.exp(coef * (evals - s)) * evecs[0].conj())
        err = b * abs(y[-1])
        breakdown = b <= 1e-13 * max(1.0, abs(a))
        if breakdown or err <= settings.residual_tol:
            return norm_v * (basis[:, : j + 1] @ y), s
        if j == m - 1 and not settings.strict:
            return norm_v * (basis[:, : j + 1] @ y), s
        beta.append(b)
        basis[:, j + 1] = w / b
    raise LanczosConvergenceError(
        f"Lanczos did not converge within max_krylov_dim={m}", float(err)
    )


def _lanczos_block(plan: PropagatorPlan, coef, vectors: np.ndarray, shifted: bool):
    op = plan.operator
    matvec = op.entries.__matmul__
    settings = plan.lanczos
    out = np.empty(vectors.shape, dtype=np.result_type(vectors.dtype, coef))
    shift = None if shifted else 0.0
    sub_coef = coef / settings.substeps
    for k in range(vectors.shape[1]):
        col = vectors[:, k]
        for _ in range(settings.substeps):
            col, shift = _krylov_exp(matvec, col, sub_coef, settings, shift)
        out[:, k] = col
    return out, (shift if shift is not None else 0.0)


def imag_time_apply(plan: PropagatorPlan, tau: float, block, counter: CostCounter | None = None) -> ScaledBlock:
    """Represent ``exp(-tau H) @ block``; the energy shift lands in ``log_scale``."""
    block = as_block(block)
    _check_block(plan, block)
    if not np.isfinite(tau):
        raise ValueError(f"tau must be finite, got {tau}")
    if counter is not None:
        counter.expm_applications += block.n_columns
    if tau == 0:
        return block
    if plan.mode == "spectral":
        spec = plan.spectral
        coords = spec.to_coords(block.vectors) * spec.boltzmann_weights(tau)[:, None]
        vectors, shift = spec.from_coords(coords), spec.ground_energy
    else:
        # shift cancels from every ratio; only its consistency across columns matters
        vectors, shift = _lanczos_block(plan, -tau, block.vectors, shifted=True)
    out = ScaledBlock(vectors, block.log_scale - tau * shift, block.source_tau + tau)
    return out.rebalanced()


def imag_time_trajectory(plan: PropagatorPlan, taus: Iterable[float], block,
                         counter: CostCounter | None = None) -> dict[float, ScaledBlock]:
    """Checkpoints of ``exp(-tau H) @ block`` for every requested tau.

    Each column is propagated once along increasing tau; intermediate taus are
    checkpoints of the same trajectory, so the counter is charged once per
    column regardless of how many checkpoints are requested.
    """
    block = as_block(block)
    _check_block(plan, block)
    taus = sorted({float(t) for t in taus})
    if any(t < 0 for t in taus):
        raise ValueError("imaginary times must be nonnegative")
    if counter is not None:
        counter.expm_applications += block.n_columns
    out: dict[float, ScaledBlock] = {}
    if plan.mode == "spectral":
        spec = plan.spectral
        coords = spec.to_coords(block.vectors)
        log_scale, prev = block.log_scale, 0.0
        for tau in taus:
            if tau == 0.0:
                out[tau] = block
                continue
            coords = coords * spec.boltzmann_weights(tau - prev)[:, None]
            log_scale -= (tau - prev) * spec.ground_energy
            norm = float(np.max(np.linalg.norm(coords, axis=0), initial=0.0))
            if norm > 0:
                coords = coords / norm
                log_scale += np.log(norm)
            out[tau] = ScaledBlock(spec.from_coords(coords), log_scale, block.source_tau + tau)
            prev = tau
    else:
        current, prev = block, 0.0
        for tau in taus:
            current = imag_time_apply(plan, tau - prev, current)
            out[tau] = current
            prev = tau
    return out


def real_time_apply(plan: PropagatorPlan, t: float, block, counter: CostCounter | None = None) -> ScaledBlock:
    """Represent ``exp(-i t H) @ block`` (complex output, unchanged scale)."""
    block = as_block(block)
    _check_block(plan, block)
    if counter is not None:
        counter.realtime_applications += block.n_columns
    if t == 0:
        return ScaledBlock(block.vectors.astype(complex), block.log_scale, block.source_tau)
    if plan.mode == "spectral":
        spec = plan.spectral
        phases = np.exp(-1j * t * spec.eigenvalues)
        vectors = spec.from_coords(spec.to_coords(block.vectors) * phases[:, None])
    else:
        vectors, _ = _lanczos_block(plan, -1j * t, block.vectors, shifted=False)
    return ScaledBlock(np.asarray(vectors, dtype=complex), block.log_scale, block.source_tau)
