import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hyperdyne.diffusion import (FieldTrace, InsufficientDataError, SimulationBox, SpinEnsemble, advance,
                                 coherent_amplitude, field_trace, fit_correlation, init_ensemble, line_offsets,
                                 max_timestep, ou_surrogate_trace, sampled_ou_trace)
from hyperdyne.constants import DIPOLAR_PREFACTOR, GAMMA_1H
from hyperdyne.physics import NuclearSpecies, NVSensor, brms_analytic, larmor_frequency, water

NV = NVSensor(6.2e-9)


def _box_for(n, density=1e27):
    side = (n / density) ** (1 / 3)
    return SimulationBox(side, side, side)


class _FixedSteps:
    """Stand-in generator whose normal draws are fixed in advance."""

    def __init__(self, steps):
        self.steps = np.asarray(steps, float)

    def standard_normal(self, shape):
        return self.steps.reshape(shape)


def _ensemble(positions, species, box, polarization=0.0, seed=0):
    n = len(positions)
    return SpinEnsemble(box, species, polarization, seed, np.array(positions, float), np.zeros(n), np.ones(n),
                        np.random.default_rng(seed))


# ---------------------------------------------------------------------------
# ensembles and motion

def test_box_validation():
    with pytest.raises(ValueError):
        SimulationBox(0, 1, 1)
    with pytest.raises(ValueError):
        SimulationBox(1, 1, 1, top="open")
    with pytest.raises(ValueError):
        SimulationBox.around(NV, 4, 6).check_nv(NV)
    SimulationBox.around(NV, 8, 6).check_nv(NV)


def test_init_rejects_bad_polarization():
    for p in (-0.1, 1.5):
        with pytest.raises(ValueError):
            init_ensemble(_box_for(100), NuclearSpecies(density=1e27), p, 0)


def test_init_count_and_bounds():
    box = SimulationBox(20e-9, 30e-9, 40e-9)
    sp = NuclearSpecies(density=2e26)
    ens = init_ensemble(box, sp, 0.3, 1)
    assert ens.n == round(sp.density * box.volume)
    assert np.all(np.abs(ens.positions[:, 0]) <= box.lx / 2)
    assert np.all(np.abs(ens.positions[:, 1]) <= box.ly / 2)
    assert np.all((ens.positions[:, 2] >= 0) & (ens.positions[:, 2] <= box.lz))
    assert np.all(np.abs(ens.mz) <= 1)


def test_full_polarization():
    ens = init_ensemble(_box_for(5000), NuclearSpecies(density=1e27), 1.0, 2)
    assert np.all(ens.mz == 1.0)


def test_unpolarized_mean_vanishes():
    ens = init_ensemble(_box_for(200000), NuclearSpecies(density=1e27), 0.0, 3)
    assert abs(ens.mz.mean()) < 3 / math.sqrt(ens.n)


@pytest.mark.slow
def test_small_polarization_binomial_statistics():
    # per-seed means follow the +-1 binomial law; their average over 100 seeds
    # sits within 3 standard errors of P_n
    sp = NuclearSpecies(density=1e27)
    box = _box_for(1_000_000)
    means = np.array([init_ensemble(box, sp, 0.001, s).mz.mean() for s in range(100)])
    n = round(sp.density * box.volume)
    sd = math.sqrt(1 - 0.001**2) / math.sqrt(n)
    assert np.all(np.abs(means - 0.001) < 5 * sd)
    assert abs(means.mean() - 0.001) < 3 * sd / math.sqrt(100)
    assert means.std(ddof=1) == pytest.approx(sd, rel=0.25)


def test_frozen_sample_does_not_move():
    ens = init_ensemble(_box_for(1000), NuclearSpecies(density=1e27, diffusion=0.0), 0.0, 4)
    before = ens.positions.copy()
    advance(ens, 1e-6)
    np.testing.assert_array_equal(ens.positions, before)


def test_advance_rejects_bad_step():
    ens = init_ensemble(_box_for(10), NuclearSpecies(density=1e27), 0.0, 4)
    with pytest.raises(ValueError):
        advance(ens, 0.0)
    with pytest.raises(ValueError):
        advance(ens, 2e-6, dt_max=1e-6)


def test_einstein_relation():
    D, dt, steps, n = 1e-9, 1e-6, 1000, 20000
    box = SimulationBox(1e-3, 1e-3, 1e-3)
    start = np.tile([0.0, 0.0, 5e-4], (n, 1))
    ens = _ensemble(start, NuclearSpecies(diffusion=D), box)
    for _ in range(steps):
        advance(ens, dt)
    msd = np.mean(np.sum((ens.positions - start) ** 2, axis=1))
    assert msd == pytest.approx(6 * D * dt * steps, rel=0.02)


def test_reflection_at_surface():
    box = SimulationBox(1e-6, 1e-6, 1e-6)
    D, dt = 1e-9, 1e-9
    sd = math.sqrt(2 * D * dt)
    ens = _ensemble([[0.0, 0.0, 0.2e-9]], NuclearSpecies(diffusion=D), box)
    ens.rng = _FixedSteps([0.0, 0.0, -0.5e-9 / sd])
    advance(ens, dt)
    assert ens.positions[0, 2] == pytest.approx(0.3e-9, rel=1e-9)


def test_reflection_at_top_and_reservoir_mode():
    D, dt = 1e-9, 1e-9
    sd = math.sqrt(2 * D * dt)
    box = SimulationBox(1e-6, 1e-6, 10e-9)
    ens = _ensemble([[0.0, 0.0, 9.8e-9]], NuclearSpecies(diffusion=D), box)
    ens.rng = _FixedSteps([0.0, 0.0, 0.5e-9 / sd])
    advance(ens, dt)
    assert ens.positions[0, 2] == pytest.approx(9.7e-9, rel=1e-9)
    res = _ensemble([[0.0, 0.0, 9.8e-9]] * 50, NuclearSpecies(diffusion=D), SimulationBox(1e-6, 1e-6, 10e-9, "reservoir"))
    for _ in range(50):
        advance(res, dt)
    assert np.all((res.positions[:, 2] >= 0) & (res.positions[:, 2] <= 10e-9))


@settings(max_examples=30)
@given(st.integers(0, 2**32), st.floats(1e-12, 1e-8))
def test_positions_stay_inside(seed, D):
    box = SimulationBox(10e-9, 10e-9, 10e-9)
    ens = init_ensemble(box, NuclearSpecies(density=1e27, diffusion=D), 0.0, seed)
    for _ in range(5):
        advance(ens, 1e-9)
    p = ens.positions
    assert np.all(np.abs(p[:, :2]) <= 5e-9 * (1 + 1e-12))
    assert np.all((p[:, 2] >= 0) & (p[:, 2] <= 10e-9))


def test_timestep_bound():
    sp = NuclearSpecies(diffusion=1e-9)
    assert max_timestep(NV, sp, [0.0]) == pytest.approx(NV.depth**2 / 100e-9)
    assert max_timestep(NV, NuclearSpecies(diffusion=0.0), [1e6]) == pytest.approx(1 / 5e7)


# ---------------------------------------------------------------------------
# field traces

def test_line_offsets():
    b0 = 0.1
    larmor = larmor_frequency(b0, GAMMA_1H)
    d, w = line_offsets(b0, GAMMA_1H, [(0.0, 1.0), (10.0, 3.0)], filter_center=larmor - 100.0)
    np.testing.assert_allclose(d, [100.0, 100.0 + larmor * 1e-5])
    np.testing.assert_allclose(w, [0.25, 0.75])
    with pytest.raises(ValueError):
        line_offsets(b0, GAMMA_1H, [])


def test_empty_ensemble_rejected():
    ens = _ensemble(np.zeros((0, 3)), NuclearSpecies(), SimulationBox.around(NV))
    with pytest.raises(ValueError):
        field_trace(ens, NV, 1e-6, 1e-7, 0.0)


def test_unpolarized_has_no_coherent_field():
    sp = NuclearSpecies(density=3e25, diffusion=1e-11)
    ens = init_ensemble(SimulationBox.around(NV), sp, 0.0, 1)
    tr = field_trace(ens, NV, 20 * 1e-8, 1e-8, 0.0)
    assert np.all(tr.coh_env == 0) and np.all(tr.b_coh == 0)
    assert np.any(tr.b_stat != 0)


def test_single_static_spin_closed_form():
    b0, delta, t2 = 0.1, 2 * math.pi * 5000.0, 3e-4
    sp = NuclearSpecies(density=1.0, diffusion=0.0, t1=1.0, t2=t2)
    pos = np.array([[1.5e-9, -2e-9, 2.5e-9]])
    ens = _ensemble(pos, sp, SimulationBox.around(NV), polarization=1.0)
    center = larmor_frequency(b0, GAMMA_1H) - delta
    dt = 5e-7
    tr = field_trace(ens, NV, 1e-3, dt, b0, filter_center=center, image_range=0)
    r = pos[0] - NV.position
    d = np.linalg.norm(r)
    e1, e2, n = NV.frame()
    b_perp = 3 * DIPOLAR_PREFACTOR * GAMMA_1H * abs(r @ n / d) * math.hypot(r @ e1, r @ e2) / d**4
    t = np.arange(tr.n) * dt
    expected = 0.5 * b_perp * np.cos(delta * t) * np.exp(-t / t2)
    np.testing.assert_allclose(tr.b_coh, expected, rtol=0, atol=1e-10 * b_perp)


def test_statistical_exceeds_coherent_at_low_polarization():
    # water at a 6.2 nm NV with P_n = 0.1%: the statistical field rms dominates
    ens = init_ensemble(SimulationBox.around(NV), water(), 0.001, 11)
    tr = field_trace(ens, NV, 1e-9, 1e-9, 0.0, image_range=0, check_dt=False)
    coherent_rms = tr.coh_env[0] / math.sqrt(2)
    assert brms_analytic(NV, water()) > coherent_rms > 0


def test_coherent_linear_in_polarization_and_density():
    box = SimulationBox.around(NV)
    ps = np.array([0.001, 0.004, 0.016])
    amps = [coherent_amplitude(NV, water(), p, box) for p in ps]
    assert np.polyfit(np.log(ps), np.log(amps), 1)[0] == pytest.approx(1.0, abs=0.02)
    rhos = np.array([1e27, 4e27, 1.6e28])
    amps = [coherent_amplitude(NV, NuclearSpecies(density=r), 0.01, box) for r in rhos]
    assert np.polyfit(np.log(rhos), np.log(amps), 1)[0] == pytest.approx(1.0, abs=0.02)
    # field_trace uses the same scalar model, linear in P_n at fixed positions
    sp = NuclearSpecies(density=3e25)
    e = [init_ensemble(box, sp, p, 5) for p in (0.01, 0.02)]
    envs = [field_trace(x, NV, 1e-9, 1e-9, 0.0, image_range=0, check_dt=False).coh_env[0] for x in e]
    assert envs[1] / envs[0] == pytest.approx(2.0, rel=1e-12)


@pytest.mark.slow
def test_ensemble_variance_matches_brms():
    sp = NuclearSpecies(density=3e25, diffusion=0.0)
    box = SimulationBox.around(NV, 12, 6)
    samples = []
    for s in range(5000):
        tr = field_trace(init_ensemble(box, sp, 0.0, s), NV, 1e-9, 1e-9, 0.0, image_range=1, check_dt=False)
        samples += [tr.b_stat[0], tr.b_stat_q[0]]
    x = np.array(samples)
    target = brms_analytic(NV, sp) ** 2
    se_mean = math.sqrt(target / x.size)
    assert abs(x.mean()) < 3 * se_mean
    var = np.mean(x**2)
    # relative std of a Gaussian variance estimate is sqrt(2/n); allow the
    # sub-percent truncation of the finite box on top of 3 sigma
    assert abs(var / target - 1) < 3 * math.sqrt(2 / x.size) + 0.01


def test_trace_determinism():
    sp = NuclearSpecies(density=3e25, diffusion=1e-11)
    make = lambda: field_trace(init_ensemble(SimulationBox.around(NV), sp, 0.01, 9), NV, 20e-8, 1e-8, 0.0)
    a, b = make(), make()
    for ch in ("b_stat", "b_stat_q", "coh_env", "coh_phase"):
        np.testing.assert_array_equal(getattr(a, ch), getattr(b, ch))


def test_timestep_limit_enforced():
    sp = NuclearSpecies(density=3e25, diffusion=1e-9)
    ens = init_ensemble(SimulationBox.around(NV), sp, 0.0, 0)
    with pytest.raises(ValueError):
        field_trace(ens, NV, 1e-6, 1e-7, 0.0)


def test_phase_condition_advisory():
    ens = init_ensemble(SimulationBox.around(NV), NuclearSpecies(density=3e25, diffusion=0.0), 0.0, 0)
    with pytest.warns(UserWarning):
        field_trace(ens, NV, 1e-9, 1e-9, 0.0, tau_m=1.0, image_range=0)


# ---------------------------------------------------------------------------
# correlation fits and OU surrogates

def test_ou_preconditions():
    with pytest.raises(ValueError):
        ou_surrogate_trace(1e-7, 1e-6, 1e-3, 1e-6, 0)
    with pytest.raises(ValueError):
        ou_surrogate_trace(-1.0, 1e-5, 1e-3, 1e-6, 0)


def test_ou_stationary_statistics():
    b, tc, dt = 2e-7, 20e-6, 1e-6
    tr = ou_surrogate_trace(b, tc, 40.0, dt, 7)  # 2e6 tau_c of samples
    x = np.concatenate([tr.b_stat, tr.b_stat_q])
    assert np.var(x) == pytest.approx(b**2, rel=0.02)
    lag = int(round(tc / dt))
    c = np.mean([np.mean(ch[:-lag] * ch[lag:]) for ch in (tr.b_stat, tr.b_stat_q)])
    assert c == pytest.approx(b**2 / math.e, rel=0.03)


def test_ou_determinism_and_streams():
    a = ou_surrogate_trace(1e-7, 1e-5, 1e-3, 1e-6, 5)
    b = ou_surrogate_trace(1e-7, 1e-5, 1e-3, 1e-6, 5)
    np.testing.assert_array_equal(a.b_stat, b.b_stat)
    c = ou_surrogate_trace(1e-7, 1e-5, 1e-3, 1e-6, 6)
    assert not np.array_equal(a.b_stat, c.b_stat)
    s0 = sampled_ou_trace(1e-7, 1e-6, 100, 1e-5, 5, index=0)
    s1 = sampled_ou_trace(1e-7, 1e-6, 100, 1e-5, 5, index=1)
    assert not np.array_equal(s0.b_stat, s1.b_stat)


def test_sampled_ou_decorrelates_when_coarse():
    # dt = 10 tau_c: neighbouring samples are nearly independent
    tr = sampled_ou_trace(1.0, 1e-6, 200000, 1e-5, 3)
    x = tr.b_stat
    assert np.var(x) == pytest.approx(1.0, rel=0.02)
    assert abs(np.mean(x[:-1] * x[1:])) < 0.02


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_fit_recovers_ou_parameters(seed):
    b, tc, dt = 3e-7, 10e-6, 1e-6
    tr = ou_surrogate_trace(b, tc, 0.4, dt, seed)
    fit = fit_correlation(tr)
    assert fit.b_rms == pytest.approx(b, rel=0.05)
    assert fit.tau_c == pytest.approx(tc, rel=0.05)
    assert fit.residual < 0.1


def test_fit_white_noise():
    rng = np.random.default_rng(0)
    n, dt = 20000, 1e-6
    tr = FieldTrace(dt, rng.standard_normal(n), np.zeros(n), np.zeros(n), np.zeros(n))
    assert fit_correlation(tr).tau_c < 2 * dt


def test_fit_rejects_short_trace():
    tr = ou_surrogate_trace(1e-7, 1e-4, 1e-3, 1e-6, 0)  # only 10 tau_c
    with pytest.raises(InsufficientDataError):
        fit_correlation(tr)
    with pytest.raises(InsufficientDataError):
        fit_correlation(FieldTrace(1e-6, np.zeros(4), np.zeros(4), np.zeros(4), np.zeros(4)))


def atomistic_fit(seeds=(0, 1), steps=12000, D=1e-11):
    sp = NuclearSpecies(density=3e25, diffusion=D)
    dt = NV.depth**2 / (100 * D)
    fits = []
    for s in seeds:
        tr = field_trace(init_ensemble(SimulationBox.around(NV), sp, 0.0, s), NV, steps * dt, dt, 0.0, image_range=1)
        fits.append(fit_correlation(tr))
    return fits


@pytest.fixture(scope="module")
def atomistic():
    return atomistic_fit()


@pytest.mark.slow
def test_atomistic_correlation_is_exponential(atomistic):
    for f in atomistic:
        assert f.residual < 0.1
        # smoothed autocorrelation decreases over the fitted lags
        smooth = np.convolve(f.acf, np.ones(5) / 5, mode="valid")
        assert np.all(np.diff(smooth) < 0)


@pytest.mark.slow
def test_atomistic_correlation_time_scale(atomistic):
    tau = np.mean([f.tau_c for f in atomistic])
    D = 1e-11
    assert tau == pytest.approx(NV.depth**2 / (2 * D), rel=0.2)


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="the exponential fit settles near 0.46 d^2/D, not d^2/D; "
                                        "the O(1) prefactor is not fixed by dimensional analysis")
def test_atomistic_correlation_time_unit_prefactor(atomistic):
    tau = np.mean([f.tau_c for f in atomistic])
    assert tau == pytest.approx(NV.depth**2 / 1e-11, rel=0.2)
