"""Low-rank quantum typicality for finite-temperature spin chains."""
from .api import LowRankTraceEstimator, ThermalTypicality
from .dynamics import QuenchProtocol, default_time_grid, dqt_quench, lrdqt_quench
from .ensemble import EnsembleStats, RealizationError, fit_power_law, run_ensemble
from .estimators import (
    EstimatorKind,
    ExpectationEstimate,
    TraceEstimate,
    estimate_expectation,
    hutchinson_trace,
    lowrank_trace,
    lowrank_trace_symmetric,
    lrqt_expectation,
    qt_expectation,
)
from .lattice import (
    OperatorMatrix,
    SectorBasis,
    apply_operator,
    build_nn_correlator,
    build_sector_basis,
    build_xxz_hamiltonian,
    identity_operator,
)
from .multitemp import TemperatureSweep, sweep_lrqt, sweep_qt
from .propagator import (
    CostCounter,
    LanczosConvergenceError,
    LanczosSettings,
    PropagatorPlan,
    ScaledBlock,
    imag_time_apply,
    imag_time_trajectory,
    real_time_apply,
)
from .randrange import (
    RangeBasis,
    RankDeficiencyError,
    orthogonalize_cholesky,
    orthogonalize_qr,
    project_complement,
    sample_gaussian_block,
)
from .spectral import (
    QuenchOracle,
    SpectralDecomposition,
    exact_partition,
    exact_quench_expectation,
    exact_thermal_expectation,
    full_diagonalize,
    truncated_trace_error,
)

__version__ = "0.1.0"
