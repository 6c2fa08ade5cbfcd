import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qudit_qkd.hilbert import PhaseMask, detection_probability_ideal, make_slit_state
from qudit_qkd.photonics import (
    NoiseConfig,
    ProjectionModel,
    PulseConfig,
    apply_phase_noise,
    calibrate_noise,
    click_probability,
    expected_jitter_projections,
    predicted_qber,
    simulate_pulse,
    simulate_pulses,
)

MU_A_CLICK = 1 - math.exp(-0.6)  # 0.451188...


def test_presets():
    a = PulseConfig.preset("mu-a")
    b = PulseConfig.preset("mu-b")
    assert (a.mu, a.window_ns, a.rep_rate) == (0.60, 50.0, 30.0)
    assert (b.mu, b.window_ns) == (0.18, 20.0)
    with pytest.raises(ValueError):
        PulseConfig.preset("mu-c")


@pytest.mark.parametrize("kwargs", [dict(mu=-1), dict(eta=1.5), dict(rep_rate=0), dict(window_ns=0)])
def test_pulse_config_invariants(kwargs):
    with pytest.raises(ValueError):
        PulseConfig(**kwargs)


def test_click_probability_closed_form_cases():
    assert click_probability(PulseConfig(), 0.0) == 0.0
    assert click_probability(PulseConfig(mu=1e4), 1.0) == pytest.approx(1.0)
    assert click_probability(PulseConfig(mu=0.6), 1.0) == pytest.approx(0.4512, abs=1e-4)


def test_click_probability_against_poisson_monte_carlo():
    # oracle: Poisson photon numbers, each photon detected with prob eta*p
    rng = np.random.default_rng(7)
    n = 1_000_000
    photons = rng.poisson(0.6, n)
    clicks = rng.binomial(photons, 1.0 * 1.0) > 0
    sigma = math.sqrt(MU_A_CLICK * (1 - MU_A_CLICK) / n)
    assert clicks.mean() == pytest.approx(click_probability(PulseConfig(mu=0.6), 1.0), abs=4 * sigma)

    cfg = PulseConfig(mu=0.6, eta=0.3, dark_rate_hz=2e6, window_ns=50)
    dark = rng.random(n) < cfg.p_dark
    clicks = (rng.binomial(rng.poisson(0.6, n), 0.3 * 0.5) > 0) | dark
    p = click_probability(cfg, 0.5)
    assert clicks.mean() == pytest.approx(p, abs=4 * math.sqrt(p * (1 - p) / n))


def test_dark_floor():
    cfg = PulseConfig(dark_rate_hz=1000, window_ns=50)
    assert cfg.p_dark == pytest.approx(5e-5)
    assert click_probability(cfg, 0.0) == pytest.approx(5e-5)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 5), st.floats(0, 1))
def test_click_probability_monotone(p1, p2, mu, eta):
    cfg = PulseConfig(mu=mu, eta=eta)
    lo, hi = sorted((p1, p2))
    assert click_probability(cfg, lo) <= click_probability(cfg, hi) + 1e-15


def test_click_probability_rejects_out_of_range():
    with pytest.raises(ValueError):
        click_probability(PulseConfig(), 1.5)


def test_zero_jitter_is_identity(family, rng):
    mask = family.mask(0, 4)
    assert apply_phase_noise(mask, NoiseConfig(), rng) is mask


def _mean_matched_projection(family, sigma, n, rng):
    noise = NoiseConfig(phase_jitter_rad=sigma)
    bob = make_slit_state(family.mask(0, 5))
    return np.mean(
        [detection_probability_ideal(make_slit_state(apply_phase_noise(family.mask(0, 5), noise, rng)), bob) for _ in range(n)]
    )


def test_small_jitter_dephasing(family, rng):
    sigma = 0.3
    damp = math.exp(-sigma**2)
    approx = damp + (1 - damp) / 16
    assert expected_jitter_projections(sigma, 16)[0] == pytest.approx(approx)
    assert _mean_matched_projection(family, sigma, 5000, rng) == pytest.approx(approx, rel=0.02)


def test_large_jitter_randomizes(family, rng):
    assert _mean_matched_projection(family, 50.0, 5000, rng) == pytest.approx(1 / 16, rel=0.1)


def test_simulate_pulse_reproducible(family):
    cfg, noise = PulseConfig(), NoiseConfig(0.4, 0.01)
    a, b = family.mask(0, 1), family.mask(1, 2)

    def draw(seed):
        rng = np.random.default_rng(seed)
        return [simulate_pulse(cfg, noise, a, b, "ideal", rng) for _ in range(300)]

    assert draw(9) == draw(9)
    assert draw(9) != draw(10)


def test_single_pulse_rate(family):
    rng = np.random.default_rng(3)
    cfg = PulseConfig()
    a = family.mask(0, 6)
    clicks = [simulate_pulse(cfg, NoiseConfig(), a, a, "ideal", rng) for _ in range(4000)]
    assert np.mean(clicks) == pytest.approx(MU_A_CLICK, abs=4 * math.sqrt(0.25 / 4000))


def test_single_pulse_optical_null(family):
    rng = np.random.default_rng(3)
    clicks = [simulate_pulse(PulseConfig(), NoiseConfig(), family.mask(0, 6), family.mask(0, 2), "optical", rng) for _ in range(50)]
    assert np.mean(clicks) < 0.2


def test_unknown_model(family, rng):
    with pytest.raises(ValueError):
        simulate_pulse(PulseConfig(), NoiseConfig(), family.mask(0, 0), family.mask(0, 0), "fancy", rng)


@pytest.mark.parametrize(
    "alice, bob, expected, tol",
    [
        ((0, 3), (0, 3), MU_A_CLICK, 0.005),
        ((0, 3), (0, 8), 0.0, 0.0),
        ((0, 3), (1, 11), 1 - math.exp(-0.6 / 16), 0.002),
    ],
)
def test_batch_pulse_rates(family, alice, bob, expected, tol):
    n = 100_000
    projection = ProjectionModel(family)
    rng = np.random.default_rng(21)
    a = (np.full(n, alice[0]), np.full(n, alice[1]))
    b = (np.full(n, bob[0]), np.full(n, bob[1]))
    clicks = simulate_pulses(PulseConfig(), NoiseConfig(), projection, a, b, rng)
    assert clicks.mean() == pytest.approx(expected, abs=tol)


def test_projection_model_tables(family):
    ideal = ProjectionModel(family, "ideal")
    optical = ProjectionModel(family, "optical")
    assert ideal.table.shape == (2, 16, 2, 16)
    assert np.allclose(ideal.table[0, :, 0, :], np.eye(16), atol=1e-12)
    assert np.allclose(optical.table[0, :, 0, :].diagonal(), 1.0)
    assert np.abs(optical.table - ideal.table).max() < 0.01


def test_projection_with_jitter_matches_single_state_path(family):
    projection = ProjectionModel(family)
    rng = np.random.default_rng(0)
    jitter = rng.normal(0, 0.5, (5, 16))
    got = projection((np.zeros(5, int), np.arange(5)), (np.zeros(5, int), np.arange(5)), jitter)
    for i in range(5):
        a = make_slit_state(PhaseMask(family.mask(0, i).phases + jitter[i]))
        assert got[i] == pytest.approx(detection_probability_ideal(a, family.state(0, i)), abs=1e-12)


def test_calibrate_noise_hits_prediction(family):
    projection = ProjectionModel(family)
    cfg = PulseConfig()
    noise = calibrate_noise(0.134, cfg, projection, background_click_prob=1e-4)
    assert noise.background_click_prob == 1e-4
    assert noise.phase_jitter_rad > 0
    assert predicted_qber(cfg, noise, projection) == pytest.approx(0.134, abs=1e-8)


def test_calibrate_noise_rejects_unreachable(family):
    projection = ProjectionModel(family)
    with pytest.raises(ValueError, match="noise floor"):
        calibrate_noise(0.01, PulseConfig(eta=0.01), projection, background_click_prob=0.01)
