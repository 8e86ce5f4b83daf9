import numpy as np
import pytest

from lrqt import (
    CostCounter,
    PropagatorPlan,
    QuenchProtocol,
    ScaledBlock,
    default_time_grid,
    dqt_quench,
    exact_quench_expectation,
    imag_time_apply,
    lrdqt_quench,
    lrqt_expectation,
    qt_expectation,
    real_time_apply,
    sample_gaussian_block,
)
from lrqt.randrange import Role, stream_id

from conftest import chain

BETA = 0.5


@pytest.fixture(scope="module")
def quench10():
    _, H0, C, s0 = chain(10, 0.0)
    _, H1, _, s1 = chain(10, 4.0)
    protocol = QuenchProtocol(H0, H1, BETA, default_time_grid(3.0, 0.25))
    return protocol, PropagatorPlan.from_spectrum(s0), PropagatorPlan.from_spectrum(s1), C, s0, s1


def test_default_grid():
    grid = default_time_grid()
    assert grid[0] == 0.0 and grid[-1] == 10.0 and len(grid) == 101


def test_protocol_validation(quench10):
    protocol = quench10[0]
    with pytest.raises(ValueError):
        QuenchProtocol(protocol.h_init, protocol.h_final, BETA, [0.5, 1.0])
    with pytest.raises(ValueError):
        QuenchProtocol(protocol.h_init, protocol.h_final, BETA, [0.0, 1.0, 0.5])
    with pytest.raises(ValueError):
        QuenchProtocol(protocol.h_init, chain(8)[1], BETA)


@pytest.mark.parametrize("kind", ["LTQT", "HTQT"])
def test_dqt_time_zero_is_static(quench10, kind):
    protocol, p0, p1, C, *_ = quench10
    series = dqt_quench(protocol, p0, p1, C, kind, M=12, seed=3, realization=2)
    assert series[0].value == qt_expectation(kind, p0, C, BETA, 12, 3, 2).value


@pytest.mark.parametrize("kind", ["LR_LTQT", "LR_HTQT"])
def test_lrdqt_time_zero_is_static(quench10, kind):
    protocol, p0, p1, C, *_ = quench10
    series = lrdqt_quench(protocol, p0, p1, C, kind, r=8, seed=3, realization=2)
    assert series[0].value == lrqt_expectation(kind, p0, C, BETA, 8, 3, 2).value


@pytest.mark.parametrize("which", ["dqt", "lrdqt"])
def test_energy_conservation(quench10, which):
    protocol, p0, p1, _, *_ = quench10
    H1 = protocol.h_final
    series = (dqt_quench(protocol, p0, p1, H1, M=10, seed=1) if which == "dqt"
              else lrdqt_quench(protocol, p0, p1, H1, r=6, seed=1))
    values = np.array([e.value for e in series])
    np.testing.assert_allclose(values, values[0], atol=1e-9)


@pytest.mark.parametrize("kind", ["LTQT", "HTQT", "LR_LTQT", "LR_HTQT"])
def test_fast_path_matches_literal_evolution(quench10, kind):
    protocol, p0, _, C, _, _ = quench10
    fast_plan = quench10[2]
    literal_plan = PropagatorPlan.from_operator(protocol.h_final)
    run = dqt_quench if kind in ("LTQT", "HTQT") else lrdqt_quench
    n = {"M": 9} if run is dqt_quench else {"r": 5}
    a = run(protocol, p0, fast_plan, C, kind, seed=4, **n)
    b = run(protocol, p0, literal_plan, C, kind, seed=4, **n)
    np.testing.assert_allclose([e.value for e in b], [e.value for e in a], rtol=1e-8, atol=1e-12)


def test_partition_and_reality_under_evolution(quench10):
    protocol, p0, p1, C, *_ = quench10
    z = sample_gaussian_block(252, 6, 2, stream_id(0, Role.TYPICAL)).vectors
    half = imag_time_apply(p0, BETA / 2, z)
    z0 = np.sum(np.abs(half.vectors) ** 2)
    for t in (0.7, 2.9):
        ev = real_time_apply(p1, t, half).vectors
        assert np.sum(np.abs(ev) ** 2) == pytest.approx(z0, rel=1e-10)
        form = np.einsum("ij,ij", ev.conj(), C.entries @ ev)
        assert abs(form.imag) < 1e-10 * max(1.0, abs(form.real))


def test_realtime_counters(quench10):
    protocol, p0, p1, C, *_ = quench10
    r, steps = 7, len(protocol.t_grid) - 1
    lr, plain = CostCounter(), CostCounter()
    lrdqt_quench(protocol, p0, p1, C, r=r, counter=lr)
    dqt_quench(protocol, p0, p1, C, M=3 * r, counter=plain)
    assert lr.realtime_applications == 2 * r * steps
    assert plain.realtime_applications == 3 * r * steps
    assert lr.expm_applications == plain.expm_applications == 3 * r


def test_literal_path_counts_the_same(quench10):
    protocol, p0, _, C, *_ = quench10
    plan = PropagatorPlan.from_operator(protocol.h_final)
    counter = CostCounter()
    lrdqt_quench(protocol, p0, plan, C, r=4, counter=counter)
    assert counter.realtime_applications == 8 * (len(protocol.t_grid) - 1)


def test_kind_checks(quench10):
    protocol, p0, p1, C, *_ = quench10
    with pytest.raises(ValueError):
        dqt_quench(protocol, p0, p1, C, "LR_LTQT")
    with pytest.raises(ValueError):
        lrdqt_quench(protocol, p0, p1, C, "LTQT")


def test_ensemble_means_track_oracle(quench10):
    protocol, p0, p1, C, s0, s1 = quench10
    exact = exact_quench_expectation(s0, s1, C, BETA, protocol.t_grid)
    for run, n in ((dqt_quench, {"M": 30}), (lrdqt_quench, {"r": 10})):
        vals = np.array([[e.value for e in run(protocol, p0, p1, C, seed=8, realization=k, **n)]
                         for k in range(200)])
        se = vals.std(axis=0, ddof=1) / np.sqrt(len(vals))
        assert np.all(np.abs(vals.mean(axis=0) - exact) < 5 * se)
