import random
import threading
import time

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lrqt import EnsembleStats, RealizationError, fit_power_law, run_ensemble


def test_constant_experiment_has_zero_variance():
    stats, raw = run_ensemble(lambda seed, k: 3.5, 10, 0)
    assert stats.mean == 3.5 and stats.variance == 0.0 and stats.std_error == 0.0
    assert raw.shape == (10,)


@given(n=st.integers(2, 300))
def test_integer_closed_forms(n):
    stats, _ = run_ensemble(lambda seed, k: k, n, 0)
    assert stats.mean == pytest.approx((n - 1) / 2)
    # sample variance of 0..n-1 with the n-1 denominator
    assert stats.variance == pytest.approx(n * (n + 1) / 12)
    assert stats.std_error == np.sqrt(stats.variance / n)


def test_seeded_runs_are_bitwise_identical():
    def experiment(seed, k):
        return np.random.default_rng([seed, k]).standard_normal(3)

    a = run_ensemble(experiment, 20, 42)[1]
    b = run_ensemble(experiment, 20, 42)[1]
    np.testing.assert_array_equal(a, b)


def test_order_independent_merge():
    def experiment(seed, k):
        time.sleep(random.random() * 1e-3)
        return np.sin(seed + k)

    serial = run_ensemble(experiment, 40, 7)
    threaded = run_ensemble(experiment, 40, 7, threads=4)
    np.testing.assert_array_equal(serial[1], threaded[1])
    assert serial[0] == threaded[0]


def test_threads_actually_used():
    seen = set()

    def experiment(seed, k):
        seen.add(threading.get_ident())
        time.sleep(2e-3)
        return k

    run_ensemble(experiment, 16, 0, threads=4)
    assert len(seen) > 1


def test_failure_reports_index():
    def experiment(seed, k):
        if k == 5:
            raise ArithmeticError("boom")
        return 1.0

    with pytest.raises(RealizationError) as info:
        run_ensemble(experiment, 8, 0)
    assert info.value.index == 5


def test_needs_two_realizations():
    with pytest.raises(ValueError):
        run_ensemble(lambda s, k: 1.0, 1, 0)


def test_array_valued_statistics():
    stats, raw = run_ensemble(lambda s, k: [k, 2 * k], 5, 0)
    np.testing.assert_allclose(stats.mean, [2, 4])
    np.testing.assert_allclose(stats.variance, [2.5, 10])
    assert raw.shape == (5, 2)


def test_variance_estimator_is_unbiased():
    rng = np.random.default_rng(0)
    samples = rng.normal(0.0, 3.0, size=(10_000, 5))
    mean_var = np.mean([EnsembleStats.from_values(row).variance for row in samples])
    assert mean_var == pytest.approx(9.0, rel=0.02)


@pytest.mark.parametrize("power", [-1.0, -0.5, 0.0])
def test_power_law_slopes(power):
    xs = np.array([10, 20, 40, 80, 160], dtype=float)
    ys = 3.0 * xs ** power
    slope, intercept = fit_power_law(xs, ys)
    assert slope == pytest.approx(power, abs=1e-12)
    assert intercept == pytest.approx(np.log(3.0), abs=1e-12)


def test_power_law_rejects_bad_input():
    with pytest.raises(ValueError):
        fit_power_law([1, 2, 3], [1, 0, 2])
    with pytest.raises(ValueError):
        fit_power_law([1, 2], [1, 2])
