"""Gaussian probe blocks, randomized range finding and complement projection."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

DEFAULT_RANK_TOL = 1e-12


class RankDeficiencyError(np.linalg.LinAlgError):
    pass


class Role(enum.IntEnum):
    """Purpose of a random block inside one realization."""

    RANGE = 0  # S: sketch for the range finder
    PROBE = 1  # G: stochastic probes for the complement
    TYPICAL = 2  # z: plain typicality vectors


N_ROLES = len(Role)


def stream_id(realization: int, role: Role) -> int:
    """Counter-based stream index; distinct (realization, role) never collide."""
    return int(realization) * N_ROLES + int(role)


@dataclass(frozen=True)
class RandomBlock:
    vectors: np.ndarray = field(repr=False)
    seed: int
    stream_id: int

    @property
    def shape(self):
        return self.vectors.shape


@dataclass(frozen=True)
class RangeBasis:
    """Orthonormal Q and positive-diagonal upper-triangular R with Y = Q R."""

    q_block: np.ndarray = field(repr=False)
    r_factor: np.ndarray = field(repr=False)
    source_beta: float = 0.0

    @property
    def rank(self) -> int:
        return int(self.q_block.shape[1])


def rng_for(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(stream),))))


def sample_gaussian_block(dim: int, r: int, seed: int, stream_id: int) -> RandomBlock:
    """i.i.d. N(0, 1) entries, reproducible from ``(seed, stream_id)``.

    Columns are drawn one after another, so the first k columns of a wider
    block from the same stream equal the narrower block of width k.
    """
    if dim < 1 or r < 1:
        raise ValueError(f"need dim >= 1 and r >= 1, got dim={dim}, r={r}")
    vectors = np.ascontiguousarray(rng_for(seed, stream_id).standard_normal((r, dim)).T)
    return RandomBlock(vectors, int(seed), int(stream_id))


def _as_array(block) -> np.ndarray:
    return np.asarray(getattr(block, "vectors", block))


def _positive_diagonal(Q: np.ndarray, R: np.ndarray):
    d = np.diag(R)
    phase = np.where(d == 0, 1.0, d / np.abs(np.where(d == 0, 1.0, d)))
    return Q * phase, R * phase.conj()[:, None]


def orthogonalize_qr(Y, rank_tol: float | None = DEFAULT_RANK_TOL, source_beta: float = 0.0) -> RangeBasis:
    """Householder QR with the positive-diagonal convention.

    ``rank_tol=None`` skips the rank check; Q is orthonormal either way, but
    directions below the tolerance are then set by roundoff.
    """
    Y = _as_array(Y)
    Q, R = la.qr(Y, mode="economic")
    Q, R = _positive_diagonal(Q, R)
    if rank_tol is not None:
        sv = la.svdvals(R)
        deficient = int(np.count_nonzero(sv <= rank_tol * sv[0])) if sv[0] > 0 else len(sv)
        if deficient:
            raise RankDeficiencyError(
                f"Y is numerically rank deficient: {deficient} of {Y.shape[1]} columns "
                f"below rank_tol={rank_tol:g} (sigma_min/sigma_max={sv[-1] / max(sv[0], 1e-300):.3e})"
            )
    return RangeBasis(Q, R, source_beta)


def orthogonalize_cholesky(Y, source_beta: float = 0.0) -> RangeBasis:
    """R from the Cholesky factor of the overlap Y^dagger Y, then Q = Y R^{-1}.

    Cheap, but breaks down as soon as the columns of Y are (numerically)
    linearly dependent.
    """
    Y = _as_array(Y)
    overlap = Y.conj().T @ Y
    try:
        R = la.cholesky(overlap, lower=False)
    except la.LinAlgError as exc:
        raise RankDeficiencyError(
            "overlap matrix Y^dagger Y is not positive definite; columns of Y are "
            "linearly dependent, use orthogonalize_qr instead"
        ) from exc
    d = np.abs(np.diag(R))
    if d.min() <= np.sqrt(np.finfo(float).eps) * d.max():
        raise RankDeficiencyError(
            "overlap matrix Y^dagger Y is numerically singular; use orthogonalize_qr instead"
        )
    Q = la.solve_triangular(R, Y.conj().T, trans="C").conj().T
    return RangeBasis(Q, R, source_beta)


def project_complement(basis: RangeBasis, G) -> np.ndarray:
    """G - Q Q^dagger G."""
    G = _as_array(G)
    Q = basis.q_block
    if G.shape[0] != Q.shape[0]:
        raise ValueError(f"probe block has {G.shape[0]} rows, basis has {Q.shape[0]}")
    if Q.shape[1] == Q.shape[0]:
        # Q spans everything: the complement is empty
        return np.zeros_like(G, dtype=np.result_type(G, Q))
    return G - Q @ (Q.conj().T @ G)
