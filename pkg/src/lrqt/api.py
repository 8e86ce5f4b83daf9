"""Estimator-style wrappers around the functional API.

``LowRankTraceEstimator`` estimates the trace of a positive semi-definite
matrix. ``ThermalTypicality`` is fitted to a Hamiltonian and then returns
thermal expectation values of observables.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .estimators import EstimatorKind, estimate_expectation, lowrank_trace
from .lattice import OperatorMatrix
from .propagator import CostCounter, PropagatorPlan
from .randrange import orthogonalize_qr, project_complement, sample_gaussian_block
from .spectral import full_diagonalize


def _as_operator(A, name: str) -> OperatorMatrix:
    if isinstance(A, OperatorMatrix):
        return A
    entries = A if sp.issparse(A) else np.asarray(A)
    if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {entries.shape}")
    if sp.issparse(entries):
        entries = entries.tocsr()
    return OperatorMatrix(entries, hermitian=True, name=name)


class LowRankTraceEstimator(BaseEstimator):
    """Randomized low-rank trace estimate of a PSD matrix using 3*rank products.

    After ``fit(A)`` the estimate is in ``trace_``, split into
    ``deterministic_term_`` (exact trace over the sketched range) and
    ``stochastic_term_`` (Gaussian probes on the complement).
    """

    def __init__(self, rank: int = 10, random_state: int = 0):
        self.rank = rank
        self.random_state = random_state

    def fit(self, A, y=None):
        op = _as_operator(A, "A")
        if not 1 <= self.rank <= op.dim:
            raise ValueError(f"rank must lie in [1, {op.dim}], got {self.rank}")
        seed = int(self.random_state)
        S = sample_gaussian_block(op.dim, self.rank, seed, 0).vectors
        G = sample_gaussian_block(op.dim, self.rank, seed, 1).vectors
        basis = orthogonalize_qr(op @ S, rank_tol=None)
        est = lowrank_trace(op, basis, project_complement(basis, G), self.rank)
        self.deterministic_term_ = est.deterministic_term
        self.stochastic_term_ = est.stochastic_term
        self.trace_ = est.value
        return self


class ThermalTypicality(BaseEstimator):
    """Thermal expectation values ``Tr(O e^{-beta H}) / Tr(e^{-beta H})``.

    ``n_vectors`` is M for the plain kinds and the rank r for the low-rank
    kinds. ``propagator="spectral"`` diagonalizes H once during ``fit``;
    ``"lanczos"`` uses Krylov exponentials and scales to larger sectors.
    """

    def __init__(self, kind: str = "LR_LTQT", n_vectors: int = 10, beta: float = 1.0,
                 propagator: str = "spectral", random_state: int = 0):
        self.kind = kind
        self.n_vectors = n_vectors
        self.beta = beta
        self.propagator = propagator
        self.random_state = random_state

    def fit(self, H, y=None):
        op = _as_operator(H, "H")
        if self.propagator == "spectral":
            self.plan_ = PropagatorPlan.from_spectrum(full_diagonalize(op))
        elif self.propagator == "lanczos":
            self.plan_ = PropagatorPlan.from_operator(op)
        else:
            raise ValueError(f"propagator must be 'spectral' or 'lanczos', got {self.propagator!r}")
        self.kind_ = EstimatorKind(self.kind)
        self.counter_ = CostCounter()
        return self

    def expectation(self, obs, beta: float | None = None, realization: int = 0) -> float:
        check_is_fitted(self, "plan_")
        beta = self.beta if beta is None else beta
        est = estimate_expectation(self.kind_, self.plan_, _as_operator(obs, "obs"), beta,
                                   self.n_vectors, int(self.random_state), realization, self.counter_)
        return est.value

    def predict(self, observables) -> np.ndarray:
        """Expectation value of each observable in ``observables`` at ``self.beta``."""
        return np.array([self.expectation(o) for o in observables])
