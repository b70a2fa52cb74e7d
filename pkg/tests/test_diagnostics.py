import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from hyperdyne.diagnostics import circular_center, ess, split_rhat


def ar1_chains(rho, m=4, n=20000, seed=0):
    rng = np.random.default_rng(seed)
    x = np.empty((m, n))
    x[:, 0] = rng.standard_normal(m) / np.sqrt(1 - rho**2)
    e = rng.standard_normal((m, n))
    for t in range(1, n):
        x[:, t] = rho * x[:, t - 1] + e[:, t]
    return x


def test_ess_of_independent_draws_is_close_to_count():
    x = np.random.default_rng(1).standard_normal((4, 5000))
    assert ess(x) == pytest.approx(20000, rel=0.1)


@pytest.mark.parametrize("rho", [0.5, 0.9])
def test_ess_matches_ar1_integrated_time(rho):
    x = ar1_chains(rho)
    expected = x.size * (1 - rho) / (1 + rho)
    assert ess(x) == pytest.approx(expected, rel=0.15)


def test_rhat_near_one_for_mixed_chains():
    assert split_rhat(np.random.default_rng(2).standard_normal((4, 2000))) == pytest.approx(1.0, abs=0.01)


def test_rhat_flags_shifted_chains():
    x = np.random.default_rng(3).standard_normal((4, 2000))
    x[0] += 3.0
    assert split_rhat(x) > 1.5


def test_rhat_flags_drift_within_one_chain():
    x = np.random.default_rng(4).standard_normal((1, 2000)) + np.linspace(0, 5, 2000)
    assert split_rhat(x) > 1.2


def test_constant_chains():
    assert split_rhat(np.ones((2, 10))) == 1.0
    assert ess(np.ones((2, 10))) == 20.0
    x = np.ones((2, 10))
    x[1] = 2.0
    assert split_rhat(x) == np.inf


def test_shape_errors():
    with pytest.raises(ValueError):
        split_rhat(np.zeros(10))
    with pytest.raises(ValueError):
        split_rhat(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        ess(np.zeros((2, 3)))


@given(st.floats(-np.pi, np.pi), st.floats(0.01, 1.0), st.integers(0, 1000))
def test_circular_center_is_contiguous_around_mean(mu, spread, seed):
    a = mu + spread * np.random.default_rng(seed).standard_normal(200)
    wrapped = np.angle(np.exp(1j * a))
    c = circular_center(wrapped)
    np.testing.assert_allclose(np.exp(1j * c), np.exp(1j * wrapped), atol=1e-12)
    m = np.angle(np.mean(np.exp(1j * wrapped)))
    assert np.all(np.abs(c - m) <= np.pi + 1e-12)
    # the spread is only preserved when no draw lies more than pi from the centre
    assume(np.max(np.abs(a - (m + 2 * np.pi * np.round((np.mean(a) - m) / (2 * np.pi))))) < np.pi - 1e-6)
    assert np.std(c) == pytest.approx(np.std(a), rel=1e-9)
