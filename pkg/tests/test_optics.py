import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad, simpson

from qudit_qkd.hilbert import PhaseMask, detection_probability_ideal
from qudit_qkd.optics import (
    OpticalSetup,
    PinholeIntegrator,
    QuadratureError,
    focal_plane_amplitude,
    pinhole_click_probability,
    render_pattern,
)


def brute_intensity(setup, signs, u):
    """Direct per-slit field sum, written independently of the module."""
    total = 0j
    for l, s in enumerate(signs):
        x = (l - (setup.dim - 1) / 2) * setup.slit_pitch
        total += s * np.exp(-2j * np.pi * x * u / (setup.wavelength * setup.focal_length))
    arg = np.pi * setup.slit_width * u / (setup.wavelength * setup.focal_length)
    envelope = 1.0 if arg == 0 else np.sin(arg) / arg
    return abs(envelope * total) ** 2


def brute_click(setup, signs):
    half = setup.pinhole_diameter / 2
    num = quad(lambda u: brute_intensity(setup, signs, u), -half, half, epsabs=0, epsrel=1e-12)[0]
    ref = quad(lambda u: brute_intensity(setup, np.ones(setup.dim), u), -half, half, epsabs=0, epsrel=1e-12)[0]
    return num / ref


def test_setup_defaults():
    s = OpticalSetup()
    assert s.slit_width == pytest.approx(64e-6)
    assert s.slit_pitch == pytest.approx(96e-6)
    assert s.pinhole_diameter < s.lobe_width
    assert s.lobe_width == pytest.approx(67.4e-6, rel=1e-3)


@pytest.mark.parametrize(
    "kwargs",
    [dict(focal_length=0), dict(wavelength=-1e-9), dict(slit_width=100e-6), dict(pinhole_diameter=0)],
)
def test_setup_rejects_bad_geometry(kwargs):
    with pytest.raises(ValueError):
        OpticalSetup(**kwargs)


def test_on_axis_is_maximum_for_in_phase_mask():
    setup = OpticalSetup()
    mask = PhaseMask(np.full(16, 0.7))
    u = np.linspace(-2e-3, 2e-3, 4001)
    intensity = np.abs(focal_plane_amplitude(setup, mask, u)) ** 2
    assert abs(focal_plane_amplitude(setup, mask, 0.0)) ** 2 == pytest.approx(intensity.max())
    assert abs(focal_plane_amplitude(setup, mask, 0.0)) == pytest.approx(16.0)


def test_orthogonal_states_cancel_on_axis(family):
    setup = OpticalSetup()
    for k, kp in [(13, 7), (0, 1), (4, 15)]:
        combined = family.mask(0, k).combine(family.mask(0, kp))
        assert abs(focal_plane_amplitude(setup, combined, 0.0)) < 1e-12


def test_single_slit_is_sinc_squared():
    setup = OpticalSetup(dim=1, slit_pitch=96e-6)
    mask = PhaseMask([0.0])
    u = np.linspace(-5e-3, 5e-3, 201)
    expected = np.sinc(setup.slit_width * u / setup.scale) ** 2
    np.testing.assert_allclose(np.abs(focal_plane_amplitude(setup, mask, u)) ** 2, expected, atol=1e-14)


def test_amplitude_matches_brute_force(family):
    setup = OpticalSetup()
    signs = family.integer_form[0][3] * family.integer_form[1][9]
    combined = family.mask(0, 3).combine(family.mask(1, 9))
    for u in (-37e-6, 0.0, 4e-6, 120e-6):
        assert abs(focal_plane_amplitude(setup, combined, u)) ** 2 == pytest.approx(
            brute_intensity(setup, signs, u), rel=1e-9, abs=1e-9
        )


def test_matched_pairs_normalize_to_one(family):
    setup = OpticalSetup()
    for b, k in [(0, 0), (0, 13), (1, 5)]:
        assert pinhole_click_probability(setup, family.mask(b, k), family.mask(b, k)) == pytest.approx(1.0, abs=1e-12)


def test_mismatched_same_basis_against_fine_quadrature(family):
    # oracle: adaptive quadrature of the brute-force intensity (well beyond 10x resolution)
    setup = OpticalSetup()
    worst = 0.0
    for k, kp in [(13, 7), (0, 15), (2, 3), (8, 9)]:
        signs = family.integer_form[0][k] * family.integer_form[0][kp]
        expected = brute_click(setup, signs)
        got = pinhole_click_probability(setup, family.mask(0, k), family.mask(0, kp))
        assert got == pytest.approx(expected, abs=1e-7)
        worst = max(worst, got)
    assert 0 < worst < 0.01


def test_cross_basis_mean_is_one_sixteenth(family):
    setup = OpticalSetup()
    integ = PinholeIntegrator(setup)
    amps = family.amplitude_table()
    p = integ(amps[0][:, None, :] * amps[1][None, :, :])
    assert p.shape == (16, 16)
    assert p.mean() == pytest.approx(1 / 16, rel=0.05)


def test_small_pinhole_converges_to_ideal(family, all_masks):
    setup = OpticalSetup(pinhole_diameter=1e-6)
    integ = PinholeIntegrator(setup)
    flat = family.amplitude_table().reshape(32, 16)
    p = integ(flat[:, None, :] * flat[None, :, :])
    ideal = np.array(
        [[detection_probability_ideal(family.state(*divmod(i, 16)), family.state(*divmod(j, 16))) for j in range(32)] for i in range(32)]
    )
    assert np.abs(p - ideal).max() < 0.01


def test_monotone_in_pinhole_diameter(family):
    # un-normalized collected energy grows with the aperture
    a, b = family.mask(0, 2), family.mask(1, 7)
    values = []
    for d in (2e-6, 5e-6, 10e-6, 20e-6):
        setup = OpticalSetup(pinhole_diameter=d)
        integ = PinholeIntegrator(setup)
        ref = integ._grids[1][3]
        values.append(pinhole_click_probability(setup, a, b) * ref)
    assert all(x < y for x, y in zip(values, values[1:]))


def test_low_resolution_raises():
    setup = OpticalSetup(samples_per_lobe=4, quad_tol=1e-9)
    with pytest.raises(QuadratureError, match="samples_per_lobe"):
        pinhole_click_probability(setup, PhaseMask(np.zeros(16)), PhaseMask(np.r_[np.zeros(8), np.full(8, np.pi)]))


def test_energy_is_mask_independent(family):
    setup = OpticalSetup()
    u = np.linspace(-0.05, 0.05, 11873)
    energies = []
    for mask in [PhaseMask(np.zeros(16)), family.mask(0, 3), family.mask(0, 3).combine(family.mask(1, 5)),
                 PhaseMask(np.random.default_rng(0).uniform(0, 6.3, 16))]:
        energies.append(simpson(np.abs(focal_plane_amplitude(setup, mask, u)) ** 2, x=u))
    energies = np.array(energies)
    np.testing.assert_allclose(energies, energies[0], rtol=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 31), st.integers(0, 31), st.floats(-6.3, 6.3, allow_nan=False))
def test_global_phase_invariance(family, i, j, offset):
    setup = OpticalSetup()
    a = family.mask(*divmod(i, 16))
    b = family.mask(*divmod(j, 16))
    p = pinhole_click_probability(setup, a, b)
    assert pinhole_click_probability(setup, a.shifted(offset), b) == pytest.approx(p, abs=1e-12)
    assert pinhole_click_probability(setup, a, b.shifted(offset)) == pytest.approx(p, abs=1e-12)


def test_render_pattern_shapes(family):
    setup = OpticalSetup()
    matched = render_pattern(setup, family.mask(0, 13), family.mask(0, 13), 400e-6, 801)
    assert matched.u[np.argmax(matched.intensity)] == pytest.approx(0.0, abs=1e-12)
    assert matched.intensity.max() == pytest.approx(1.0)
    assert matched.pinhole_edges == pytest.approx((-5e-6, 5e-6))

    ortho = render_pattern(setup, family.mask(0, 13), family.mask(0, 7), 400e-6, 801)
    mid = 400
    assert ortho.intensity[mid] < 1e-20
    assert ortho.intensity[mid] <= ortho.intensity[mid - 1] and ortho.intensity[mid] <= ortho.intensity[mid + 1]

    cross = render_pattern(setup, family.mask(0, 13), family.mask(1, 13), 400e-6, 801)
    assert cross.intensity[mid] == pytest.approx(1 / 16, rel=1e-9)
    csv = cross.to_csv().splitlines()
    assert csv[0] == "u_meters,intensity" and len(csv) == 802


def test_render_pattern_needs_two_points(family):
    with pytest.raises(ValueError):
        render_pattern(OpticalSetup(), family.mask(0, 0), family.mask(0, 0), 1e-4, 1)
