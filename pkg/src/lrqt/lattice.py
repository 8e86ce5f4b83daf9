"""Spin-1/2 XXZ ring restricted to a fixed-magnetization sector.

Configurations are encoded as integers with bit ``i`` set when spin ``i`` is
up. Sector states are kept in ascending integer order, so the index of a
configuration is its rank among the sector states.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class SectorBasis:
    """All configurations of ``chain_length`` spins with ``n_up`` up spins."""

    chain_length: int
    n_up: int
    states: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return int(self.states.shape[0])

    @property
    def total_sz(self) -> float:
        return self.n_up - self.chain_length / 2

    def index_of(self, config):
        """Ordinal of one or many configurations; raises ``KeyError`` if absent."""
        config = np.asarray(config, dtype=np.int64)
        pos = np.searchsorted(self.states, config)
        pos_c = np.clip(pos, 0, self.dim - 1)
        if np.any(self.states[pos_c] != config):
            raise KeyError(f"configuration(s) not in sector n_up={self.n_up}")
        return int(pos_c) if pos_c.ndim == 0 else pos_c

    def spins(self) -> np.ndarray:
        """(dim, L) array of +1/2, -1/2 values."""
        bits = (self.states[:, None] >> np.arange(self.chain_length)) & 1
        return bits - 0.5


@dataclass(frozen=True)
class OperatorMatrix:
    """Hermitian operator in the sector ordering (sparse or dense storage)."""

    entries: sp.spmatrix | np.ndarray = field(repr=False)
    hermitian: bool = True
    name: str = ""

    @property
    def dim(self) -> int:
        return int(self.entries.shape[0])

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.entries)

    def toarray(self) -> np.ndarray:
        if self.is_sparse:
            return self.entries.toarray()
        return np.array(self.entries, copy=True)

    def diagonal(self) -> np.ndarray:
        return np.asarray(self.entries.diagonal())

    def is_diagonal(self) -> bool:
        if self.is_sparse:
            coo = self.entries.tocoo()
            return bool(np.all((coo.row == coo.col) | (coo.data == 0)))
        a = np.asarray(self.entries)
        return bool(np.count_nonzero(a - np.diag(np.diag(a))) == 0)

    def __matmul__(self, block):
        return apply_operator(self, block)


def build_sector_basis(L: int, total_sz: float = 0.0) -> SectorBasis:
    """Enumerate the sector with ``sum_i S^z_i = total_sz``.

    >>> build_sector_basis(4, 0).dim
    6
    """
    if int(L) != L or L < 3:
        raise ValueError(f"chain length must be an integer >= 3, got {L!r}")
    L = int(L)
    n_up_f = L / 2 + float(total_sz)
    n_up = int(round(n_up_f))
    if abs(n_up_f - n_up) > 1e-9:
        raise ValueError(
            f"total_sz={total_sz} incompatible with L={L}: L/2 + total_sz must be an integer"
        )
    if abs(float(total_sz)) > L / 2 or not 0 <= n_up <= L:
        raise ValueError(f"|total_sz|={abs(total_sz)} exceeds L/2={L / 2}")
    states = np.fromiter(
        (sum(1 << i for i in c) for c in combinations(range(L), n_up)),
        dtype=np.int64,
    )
    states.sort()
    states.setflags(write=False)
    return SectorBasis(chain_length=L, n_up=n_up, states=states)


def _bonds(L: int):
    return [(i, (i + 1) % L) for i in range(L)]


def _bond_szsz(basis: SectorBasis) -> np.ndarray:
    """Sum over periodic bonds of S^z_i S^z_{i+1} for every sector state."""
    s = basis.spins()
    return (s * np.roll(s, -1, axis=1)).sum(axis=1)


def build_xxz_hamiltonian(basis: SectorBasis, delta: float) -> OperatorMatrix:
    """H = sum_i (1+delta) Sz_i Sz_{i+1} + Sx_i Sx_{i+1} + Sy_i Sy_{i+1}, periodic."""
    states = basis.states
    diag = (1.0 + delta) * _bond_szsz(basis)

    rows, cols = [np.arange(basis.dim)], [np.arange(basis.dim)]
    vals = [diag]
    for i, j in _bonds(basis.chain_length):
        flip = (1 << i) | (1 << j)
        anti = ((states >> i) & 1) != ((states >> j) & 1)
        src = np.nonzero(anti)[0]
        dst = basis.index_of(states[src] ^ flip)
        rows.append(dst)
        cols.append(src)
        vals.append(np.full(src.shape, 0.5))
    H = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(basis.dim, basis.dim),
    )
    H.sum_duplicates()
    return OperatorMatrix(H, name=f"xxz(L={basis.chain_length}, delta={delta})")


def build_nn_correlator(basis: SectorBasis) -> OperatorMatrix:
    """C = (1/L) sum_i Sz_i Sz_{i+1}; diagonal in the configuration basis."""
    c = _bond_szsz(basis) / basis.chain_length
    return OperatorMatrix(sp.diags(c, format="csr"), name="nn_szsz")


def identity_operator(dim: int) -> OperatorMatrix:
    return OperatorMatrix(sp.identity(dim, format="csr"), name="identity")


def apply_operator(op: OperatorMatrix, block: np.ndarray) -> np.ndarray:
    """Return ``op @ block`` as a new array (inputs untouched)."""
    block = np.asarray(block)
    if block.shape[0] != op.dim:
        raise ValueError(f"block has {block.shape[0]} rows, operator dim is {op.dim}")
    out = op.entries @ block
    return np.asarray(out)
