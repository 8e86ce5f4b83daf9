import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lrqt import (
    CostCounter,
    EstimatorKind,
    OperatorMatrix,
    PropagatorPlan,
    exact_thermal_expectation,
    hutchinson_trace,
    identity_operator,
    imag_time_apply,
    lowrank_trace,
    lowrank_trace_symmetric,
    lrqt_expectation,
    orthogonalize_qr,
    project_complement,
    qt_expectation,
    sample_gaussian_block,
    truncated_trace_error,
)
from lrqt.estimators import build_lowrank_state, estimate_expectation, lr_blocks
from lrqt.experiments import workspace
from lrqt.multitemp import TemperatureSweep, sweep_lrqt, sweep_qt

ALL = list(EstimatorKind)
LR = [EstimatorKind.LR_HTQT, EstimatorKind.LR_LTQT]
PLAIN = [EstimatorKind.HTQT, EstimatorKind.LTQT]


def within_5se(values, target):
    values = np.asarray(values)
    se = values.std(ddof=1) / np.sqrt(len(values))
    return abs(values.mean() - target) < 5 * se


def lr_parts(dim, r, apply_A, seed, k):
    S = sample_gaussian_block(dim, r, seed, 3 * k).vectors
    G = sample_gaussian_block(dim, r, seed, 3 * k + 1).vectors
    basis = orthogonalize_qr(apply_A(S))
    return basis, project_complement(basis, G)


def heat(plan, beta):
    return lambda X: imag_time_apply(plan, beta, X).value()


def test_kind_properties():
    assert EstimatorKind.LR_LTQT.symmetric and EstimatorKind.LR_LTQT.low_rank
    assert not EstimatorKind.HTQT.symmetric and not EstimatorKind.HTQT.low_rank
    assert EstimatorKind.LR_HTQT.plain is EstimatorKind.HTQT
    assert EstimatorKind("LTQT") is EstimatorKind.LTQT


def test_hutchinson_identity_is_unbiased():
    vals = [hutchinson_trace(identity_operator(40), 40, 5, 3, k).value for k in range(1000)]
    assert within_5se(vals, 40.0)


def test_hutchinson_zero_and_diagonal():
    assert hutchinson_trace(np.zeros((3, 3)), 3, 4, 1, 0).value == 0.0
    A = np.diag([1.0, 2.0, 3.0])
    vals = [hutchinson_trace(A, 3, 200, 1, k).value for k in range(300)]
    assert within_5se(vals, 6.0)
    assert np.mean(vals) == pytest.approx(6.0, abs=0.05)


def test_lowrank_identity():
    dim, r = 30, 6
    stoch = []
    for k in range(1000):
        basis, Gt = lr_parts(dim, r, lambda X: X, 5, k)
        est = lowrank_trace(np.eye(dim), basis, Gt, r)
        assert est.deterministic_term == pytest.approx(r, abs=1e-12)
        stoch.append(est.stochastic_term)
    assert within_5se(stoch, dim - r)


def test_lowrank_full_rank_is_exact(rng):
    M = rng.standard_normal((20, 20))
    A = M @ M.T
    basis, Gt = lr_parts(20, 20, lambda X: A @ X, 1, 0)
    est = lowrank_trace(A, basis, Gt)
    assert est.stochastic_term == 0.0
    assert est.total == pytest.approx(np.trace(A), rel=1e-12)


@pytest.mark.parametrize("beta", [1.0, 2.0, 4.0])
def test_lowrank_partition_error_tracks_truncation(chain10, plan10, beta):
    spec = chain10[3]
    basis, Gt = lr_parts(252, 50, heat(plan10, beta), 11, 0)
    est = lowrank_trace(heat(plan10, beta), basis, Gt)
    z = np.exp(-beta * spec.eigenvalues).sum()
    assert abs(est.value - z) / z < 10 * truncated_trace_error(spec, beta, 50)


def test_lowrank_rejects_unprojected_probes(rng):
    basis = orthogonalize_qr(rng.standard_normal((10, 2)))
    with pytest.raises(ValueError, match="not orthogonal"):
        lowrank_trace(np.eye(10), basis, rng.standard_normal((10, 2)))


def test_symmetric_identity_and_positivity(rng):
    dim, r = 25, 5
    vals = []
    for k in range(1000):
        basis, Gt = lr_parts(dim, r, lambda X: X, 8, k)
        est = lowrank_trace_symmetric(np.eye(dim), basis, Gt, r)
        assert est.total == pytest.approx(r + np.linalg.norm(Gt) ** 2 / r, rel=1e-12)
        vals.append(est.total)
    assert within_5se(vals, dim)
    M = rng.standard_normal((dim, dim))
    est = lowrank_trace_symmetric(M + M.T, basis, Gt, r)
    assert est.deterministic_term >= 0 and est.stochastic_term >= 0


def test_symmetric_matches_full_exponential(plan10):
    beta = 1.5
    basis, Gt = lr_parts(252, 20, heat(plan10, beta), 4, 0)
    a = lowrank_trace(heat(plan10, beta), basis, Gt)
    b = lowrank_trace_symmetric(heat(plan10, beta / 2), basis, Gt)
    assert b.value == pytest.approx(a.value, rel=1e-9)


@pytest.mark.parametrize("kind", ALL)
@pytest.mark.parametrize("beta", [0.0, 1.0, 8.0])
def test_identity_observable_gives_one(plan10, kind, beta):
    for k in range(3):
        est = estimate_expectation(kind, plan10, identity_operator(252), beta, 10, 2, k)
        assert est.value == 1.0


@pytest.mark.parametrize("kind", LR)
def test_full_rank_is_exact(chain10, plan10, kind):
    C, spec = chain10[2], chain10[3]
    for beta in (0.5, 2.0):
        est = lrqt_expectation(kind, plan10, C, beta, 252, 3, 0)
        assert est.numerator.stochastic_term == 0.0 and est.partition.stochastic_term == 0.0
        assert est.value == pytest.approx(exact_thermal_expectation(spec, C, beta), abs=1e-9)


@pytest.mark.parametrize("kind", LR)
def test_infinite_temperature_deterministic_term(plan10, kind):
    est = lrqt_expectation(kind, plan10, identity_operator(252), 0.0, 12, 4, 0)
    assert est.partition.deterministic_term == 12.0 or est.partition.deterministic_term == pytest.approx(12.0, abs=1e-12)


def test_infinite_temperature_ltqt_formula(chain10, plan10):
    C = chain10[2]
    z = sample_gaussian_block(252, 10, 6, 2).vectors
    est = qt_expectation("LTQT", plan10, C, 0.0, 10, 6, 0)
    expected = np.einsum("ij,ij", z, C.entries @ z) / np.einsum("ij,ij", z, z)
    assert est.value == pytest.approx(expected, rel=1e-13)
    vals = [qt_expectation("LTQT", plan10, C, 0.0, 10, 6, k).value for k in range(300)]
    assert within_5se(vals, C.diagonal().mean())


@settings(max_examples=15, deadline=None)
@given(c=st.floats(-5, 5).filter(lambda x: abs(x) > 1e-3), seed=st.integers(0, 1000),
       kind=st.sampled_from(ALL))
def test_scale_and_shift_covariance(c, seed, kind):
    basis_obs = workspace(8, 0.0)
    plan, C = basis_obs.plan, basis_obs.correlator_eig
    dense = C.toarray()
    base = estimate_expectation(kind, plan, C, 1.3, 6, seed, 0).value
    scaled = estimate_expectation(kind, plan, OperatorMatrix(c * dense), 1.3, 6, seed, 0).value
    shifted = estimate_expectation(kind, plan, OperatorMatrix(dense + c * np.eye(plan.dim)), 1.3, 6, seed, 0).value
    assert scaled == pytest.approx(c * base, rel=1e-12, abs=1e-14)
    assert shifted == pytest.approx(base + c, abs=1e-12)


def test_lowrank_split_recomputed_independently(chain10, plan10):
    H = chain10[1]
    beta, r = 1.2, 8
    S, G = lr_blocks(plan10, r, 9, 0)
    state = build_lowrank_state(plan10, beta, S, G)
    est = lrqt_expectation("LR_HTQT", plan10, identity_operator(252), beta, r, 9, 0)
    Q = state.basis.q_block
    from scipy.linalg import expm
    E0 = chain10[3].ground_energy
    rho = expm(-beta * (H.toarray() - E0 * np.eye(252)))
    direct = np.trace(Q.T @ rho @ Q)
    scale = np.exp(est.partition.log_scale + beta * E0)
    assert est.partition.deterministic_term * scale == pytest.approx(direct, rel=1e-10)


def test_symmetric_partition_terms_nonnegative(plan10):
    for k in range(20):
        est = lrqt_expectation("LR_LTQT", plan10, identity_operator(252), 3.0, 6, 1, k)
        assert est.partition.deterministic_term >= 0 and est.partition.stochastic_term >= 0


@pytest.mark.parametrize("kind", ALL)
def test_budget_is_three_r(plan10, kind):
    counter = CostCounter()
    n = 7 if kind.low_rank else 21
    estimate_expectation(kind, plan10, identity_operator(252), 1.0, n, 0, 0, counter)
    assert counter.expm_applications == 21


def test_argument_checks(plan10):
    C = identity_operator(252)
    with pytest.raises(ValueError):
        qt_expectation("LTQT", plan10, C, 1.0, 0, 0, 0)
    with pytest.raises(ValueError):
        lrqt_expectation("LR_LTQT", plan10, C, -1.0, 4, 0, 0)
    with pytest.raises(ValueError):
        lrqt_expectation("LR_LTQT", plan10, C, 1.0, 300, 0, 0)
    with pytest.raises(ValueError):
        qt_expectation("LR_LTQT", plan10, C, 1.0, 5, 0, 0)


def test_lanczos_and_spectral_estimates_agree(chain10, plan10):
    lanczos = PropagatorPlan.from_operator(chain10[1])
    for kind in ALL:
        a = estimate_expectation(kind, plan10, chain10[2], 2.0, 5, 1, 0).value
        b = estimate_expectation(kind, lanczos, chain10[2], 2.0, 5, 1, 0).value
        assert b == pytest.approx(a, rel=1e-8)


@pytest.fixture(scope="module")
def l14():
    ws = workspace(14, 0.0)
    betas = [1.0, 2.0]
    vals = {}
    for kind in ALL:
        if kind.low_rank:
            sweep = TemperatureSweep(betas, kind, 10)
            rows = [[e.value for e in sweep_lrqt(sweep, ws.plan, ws.correlator_eig, 77, k)] for k in range(1000)]
        else:
            rows = [[e.value for e in sweep_qt(kind, ws.plan, ws.correlator_eig, betas, 30, 77, k)]
                    for k in range(1000)]
        vals[kind] = dict(zip(betas, np.array(rows).T))
    return ws, vals


@pytest.mark.slow
def test_l14_unbiased_at_unit_temperature(l14):
    ws, vals = l14
    exact = exact_thermal_expectation(ws.spectrum, ws.correlator, 1.0)
    for kind in ALL:
        assert within_5se(vals[kind][1.0], exact), kind


@pytest.mark.slow
def test_l14_lowrank_variance_smaller_below_crossover(l14):
    # r=10 against M=30; the high-temperature crossover lies just below T=1
    _, vals = l14
    for kind in LR:
        assert vals[kind][2.0].var(ddof=1) <= vals[kind.plain][2.0].var(ddof=1)
