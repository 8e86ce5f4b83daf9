"""Quench dynamics at finite temperature: DQT and LR-DQT.

The initial thermal weight comes from the pre-quench Hamiltonian H0; the
observable is then evolved under the post-quench Hamiltonian H1,
O(t) = exp(+i H1 t) O exp(-i H1 t), by evolving bra and ket vectors in real
time. The partition function does not depend on t and is taken at t = 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .estimators import (
    EstimatorKind,
    ExpectationEstimate,
    TraceEstimate,
    _column_dots,
    build_lowrank_state,
    lr_blocks,
    weighted_traces,
)
from .lattice import OperatorMatrix, apply_operator
from .propagator import CostCounter, PropagatorPlan, ScaledBlock, imag_time_apply, real_time_apply
from .randrange import DEFAULT_RANK_TOL, Role, sample_gaussian_block, stream_id


def default_time_grid(t_max: float = 10.0, dt: float = 0.1) -> np.ndarray:
    n = int(round(t_max / dt))
    return np.round(np.arange(n + 1) * dt, 12)


@dataclass
class QuenchProtocol:
    h_init: OperatorMatrix
    h_final: OperatorMatrix
    beta: float
    t_grid: Sequence[float] = field(default_factory=default_time_grid)
    _rotated: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.h_init.dim != self.h_final.dim:
            raise ValueError("pre- and post-quench Hamiltonians act on different sectors")
        grid = np.asarray(self.t_grid, dtype=float)
        if grid.ndim != 1 or grid.size == 0 or grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
            raise ValueError("t_grid must be ascending and start at 0")
        self.t_grid = grid

    def rotated_observable(self, plan_final: PropagatorPlan, obs: OperatorMatrix) -> np.ndarray:
        """obs in the post-quench eigenbasis (computed once per plan/observable)."""
        key = (id(plan_final), id(obs))
        if key not in self._rotated:
            rot = plan_final.spectral.rotate(obs).entries
            self._rotated[key] = (rot.toarray() if sp.issparse(rot) else np.asarray(rot), plan_final, obs)
        return self._rotated[key][0]


def _phase_forms(W: np.ndarray, energies: np.ndarray, times: np.ndarray) -> np.ndarray:
    """sum_jk W_jk exp(i (E_j - E_k) t) for every t."""
    phases = np.exp(-1j * np.outer(times, energies))
    if np.isrealobj(W):
        left = phases.real @ W - 1j * (phases.imag @ W)
    else:
        left = phases.conj() @ W
    return (left * phases).sum(axis=1)


def _time_series(protocol: QuenchProtocol, plan_final: PropagatorPlan, obs, left: ScaledBlock,
                 right: ScaledBlock, weights: np.ndarray, n_det: int, kind: EstimatorKind,
                 static: ExpectationEstimate, counter: CostCounter | None) -> list[ExpectationEstimate]:
    times = protocol.t_grid
    moving = times[times != 0.0]
    n_evolved = left.n_columns if left is right else left.n_columns + right.n_columns
    log_scale = left.log_scale + right.log_scale
    values = {}
    if plan_final.mode == "spectral":
        if counter is not None:
            counter.realtime_applications += n_evolved * moving.size
        spec = plan_final.spectral
        o_rot = protocol.rotated_observable(plan_final, obs)
        lc = spec.to_coords(left.vectors)
        rc = lc if left is right else spec.to_coords(right.vectors)
        parts = []
        for lo, hi in ((0, n_det), (n_det, lc.shape[1])):
            if hi == lo:
                parts.append(np.zeros(moving.size))
                continue
            P = (lc[:, lo:hi].conj() * weights[lo:hi]) @ rc[:, lo:hi].T
            parts.append(np.real(_phase_forms(o_rot * P, spec.eigenvalues, moving)))
        for k, t in enumerate(moving):
            values[t] = (parts[0][k], parts[1][k])
    else:
        for t in moving:
            lt = real_time_apply(plan_final, t, left, counter)
            rt = lt if left is right else real_time_apply(plan_final, t, right, counter)
            cols = _column_dots(apply_operator(obs, lt.vectors), rt.vectors) * weights
            values[t] = (cols[:n_det].sum(), cols[n_det:].sum())
    out = []
    for t in times:
        if t == 0.0:
            out.append(static)
            continue
        det, sto = values[t]
        num = TraceEstimate(float(det), float(sto), log_scale, n_det, kind.value)
        out.append(ExpectationEstimate(num, static.partition, protocol.beta, static.n_vectors, kind))
    return out


def dqt_quench(protocol: QuenchProtocol, plan_init: PropagatorPlan, plan_final: PropagatorPlan,
               obs: OperatorMatrix, kind=EstimatorKind.LTQT, M: int = 30, seed: int = 0,
               realization: int = 0, counter: CostCounter | None = None) -> list[ExpectationEstimate]:
    """Plain dynamical typicality; one estimate per point of ``protocol.t_grid``."""
    kind = EstimatorKind(kind)
    if kind.low_rank:
        raise ValueError(f"{kind} is not a plain typicality estimator")
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    z = ScaledBlock(sample_gaussian_block(plan_init.dim, M, seed, stream_id(realization, Role.TYPICAL)).vectors)
    weights = np.full(M, 1.0 / M)
    if kind.symmetric:
        left = right = imag_time_apply(plan_init, protocol.beta / 2, z, counter)
    else:
        left, right = z, imag_time_apply(plan_init, protocol.beta, z, counter)
    num, part = weighted_traces(obs, left, right, weights, 0, kind)
    static = ExpectationEstimate(num, part, protocol.beta, M, kind)
    return _time_series(protocol, plan_final, obs, left, right, weights, 0, kind, static, counter)


def lrdqt_quench(protocol: QuenchProtocol, plan_init: PropagatorPlan, plan_final: PropagatorPlan,
                 obs: OperatorMatrix, kind=EstimatorKind.LR_LTQT, r: int = 10, seed: int = 0,
                 realization: int = 0, counter: CostCounter | None = None,
                 rank_tol: float | None = DEFAULT_RANK_TOL) -> list[ExpectationEstimate]:
    """Low-rank dynamical typicality: only the 2r vectors [Q | G~] evolve in real time."""
    kind = EstimatorKind(kind)
    if not kind.low_rank:
        raise ValueError(f"{kind} is not a low-rank estimator")
    S, G = lr_blocks(plan_init, r, seed, realization)
    state = build_lowrank_state(plan_init, protocol.beta, S, G, counter, rank_tol)
    X = ScaledBlock(np.hstack([state.basis.q_block, state.g_tilde]))
    weights = np.concatenate([np.ones(r), np.full(r, 1.0 / r)])
    if kind.symmetric:
        left = right = imag_time_apply(plan_init, protocol.beta / 2, X, counter)
    else:
        left, right = X, imag_time_apply(plan_init, protocol.beta, X, counter)
    num, part = weighted_traces(obs, left, right, weights, r, kind)
    static = ExpectationEstimate(num, part, protocol.beta, r, kind)
    return _time_series(protocol, plan_final, obs, left, right, weights, r, kind, static, counter)
