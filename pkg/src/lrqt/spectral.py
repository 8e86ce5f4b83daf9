"""Full-diagonalization reference values.

Everything here is exact up to floating point and serves as the ground truth
the stochastic estimators are checked against. Boltzmann weights are always
formed relative to the ground-state energy so that ``exp(-beta * E)`` never
underflows.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .lattice import OperatorMatrix

DEFAULT_MAX_DIM = 8192


@dataclass(frozen=True)
class SpectralDecomposition:
    """Ascending eigenvalues and matching orthonormal eigenvectors.

    ``eigenvectors=None`` marks a decomposition expressed in its own eigenbasis,
    i.e. the operator is diag(eigenvalues) and the eigenvectors are the
    identity. Estimators run unchanged in that frame but propagation becomes
    elementwise.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return int(self.eigenvalues.shape[0])

    @property
    def ground_energy(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def is_diagonal_frame(self) -> bool:
        return self.eigenvectors is None

    def boltzmann_weights(self, beta: float) -> np.ndarray:
        """exp(-beta (E_k - E_0)); multiply by exp(-beta E_0) for the true weight."""
        return np.exp(-beta * (self.eigenvalues - self.eigenvalues[0]))

    def to_coords(self, block: np.ndarray) -> np.ndarray:
        """Components of ``block`` along the eigenvectors (V^dagger X)."""
        if self.eigenvectors is None:
            return np.array(block, copy=True)
        return self.eigenvectors.conj().T @ block

    def from_coords(self, coords: np.ndarray) -> np.ndarray:
        if self.eigenvectors is None:
            return np.array(coords, copy=True)
        return self.eigenvectors @ coords

    def in_eigenbasis(self) -> "SpectralDecomposition":
        return SpectralDecomposition(self.eigenvalues)

    def expressed_in(self, frame: "SpectralDecomposition") -> "SpectralDecomposition":
        """The same decomposition with eigenvectors written in ``frame``'s eigenbasis."""
        if frame.eigenvectors is None:
            return self
        vecs = np.eye(self.dim) if self.eigenvectors is None else self.eigenvectors
        return SpectralDecomposition(self.eigenvalues, frame.to_coords(vecs))

    def rotate(self, op: OperatorMatrix) -> OperatorMatrix:
        """Express ``op`` in this eigenbasis (V^dagger O V, dense)."""
        _check_dims(self, op)
        if self.eigenvectors is None:
            return op
        V = self.eigenvectors
        rotated = V.conj().T @ np.asarray(op.entries @ V)
        rotated = 0.5 * (rotated + rotated.conj().T)
        return OperatorMatrix(rotated, name=op.name)

    def diagonal_operator(self) -> OperatorMatrix:
        return OperatorMatrix(sp.diags(self.eigenvalues, format="csr"), name="diag(E)")

    def reconstruct(self) -> np.ndarray:
        if self.eigenvectors is None:
            return np.diag(self.eigenvalues)
        V = self.eigenvectors
        return (V * self.eigenvalues) @ V.conj().T


def _check_dims(spec: SpectralDecomposition, op: OperatorMatrix) -> None:
    if op.dim != spec.dim:
        raise ValueError(f"operator dim {op.dim} != spectrum dim {spec.dim}")


def full_diagonalize(op: OperatorMatrix, max_dim: int = DEFAULT_MAX_DIM) -> SpectralDecomposition:
    if op.dim > max_dim:
        raise ValueError(
            f"refusing dense diagonalization of dim {op.dim} (> max_dim={max_dim})"
        )
    evals, evecs = la.eigh(op.toarray())
    return SpectralDecomposition(evals, evecs)


def exact_partition(spec: SpectralDecomposition, beta: float) -> float:
    """log Z with Z = Tr exp(-beta H)."""
    w = spec.boltzmann_weights(beta)
    return float(np.log(w.sum()) - beta * spec.ground_energy)


def observable_diagonal(spec: SpectralDecomposition, obs: OperatorMatrix) -> np.ndarray:
    """<k|O|k> for every eigenvector k."""
    _check_dims(spec, obs)
    if spec.eigenvectors is None:
        return np.real(obs.diagonal())
    V = spec.eigenvectors
    return np.real(np.einsum("ij,ij->j", V.conj(), np.asarray(obs.entries @ V)))


def exact_thermal_expectation(spec: SpectralDecomposition, obs: OperatorMatrix, beta: float) -> float:
    """Tr(O exp(-beta H)) / Tr(exp(-beta H))."""
    w = spec.boltzmann_weights(beta)
    return float(np.dot(w, observable_diagonal(spec, obs)) / w.sum())


class QuenchOracle:
    """Exact <O(t)> after a sudden switch from H0 (thermal at ``beta``) to H1.

    The observable and the initial density matrix are rotated into the H1
    eigenbasis once; each time point is then a single quadratic form.
    """

    def __init__(self, spec_init: SpectralDecomposition, spec_final: SpectralDecomposition,
                 obs: OperatorMatrix, beta: float):
        if spec_init.dim != spec_final.dim:
            raise ValueError("pre- and post-quench spectra live on different spaces")
        _check_dims(spec_final, obs)
        self.energies = spec_final.eigenvalues
        w = spec_init.boltzmann_weights(beta)
        w = w / w.sum()
        if spec_init.eigenvectors is None and spec_final.eigenvectors is None:
            overlap = np.eye(spec_init.dim)
        elif spec_init.eigenvectors is None:
            overlap = spec_final.eigenvectors.conj().T
        elif spec_final.eigenvectors is None:
            overlap = spec_init.eigenvectors
        else:
            overlap = spec_final.eigenvectors.conj().T @ spec_init.eigenvectors
        rho = (overlap * w) @ overlap.conj().T
        rotated = spec_final.rotate(obs).entries
        obs_f = rotated.toarray() if sp.issparse(rotated) else np.asarray(rotated)
        # Tr(rho O(t)) = sum_jk rho_kj O_jk exp(i (E_j - E_k) t)
        self._weights = rho.T * obs_f

    def __call__(self, t):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        phases = np.exp(-1j * np.outer(t_arr, self.energies))
        vals = np.real(((phases.conj() @ self._weights) * phases).sum(axis=1))
        return vals if np.ndim(t) else float(vals[0])


def exact_quench_expectation(spec_init: SpectralDecomposition, spec_final: SpectralDecomposition,
                             obs: OperatorMatrix, beta: float, t):
    """Tr(exp(-beta H0) O(t)) / Tr(exp(-beta H0)) with O(t) evolved under H1."""
    return QuenchOracle(spec_init, spec_final, obs, beta)(t)


def truncated_trace_error(spec: SpectralDecomposition, beta: float, r: int) -> float:
    """Relative error of Z when only the r largest Boltzmann weights are kept."""
    if not 1 <= r <= spec.dim:
        raise ValueError(f"r must lie in [1, {spec.dim}], got {r}")
    w = spec.boltzmann_weights(beta)
    return float(w[r:].sum() / w.sum())
