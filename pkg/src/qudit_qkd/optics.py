"""Focal-plane diffraction model of Bob's detector.

Alice's slit array, imaged onto Bob's SLM, acts as a single multi-slit
aperture whose per-slit field is the product of both masks. A lens maps it
to its Fraunhofer pattern at the focal plane, where a small pinhole in
front of the APD samples the centre of the pattern.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.integrate import simpson

from .hilbert import PhaseMask, _check_dims, make_slit_state

PIXEL = 32e-6


class QuadratureError(RuntimeError):
    """Pinhole integral did not converge at the requested resolution."""


@dataclass(frozen=True)
class OpticalSetup:
    dim: int = 16
    slit_width: float = 2 * PIXEL
    slit_pitch: float = 3 * PIXEL
    wavelength: float = 690e-9
    focal_length: float = 0.150
    pinhole_diameter: float = 10e-6
    samples_per_lobe: int = 64
    quad_tol: float = 1e-7

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.wavelength <= 0 or self.focal_length <= 0:
            raise ValueError("wavelength and focal_length must be positive")
        if self.pinhole_diameter <= 0:
            raise ValueError("pinhole_diameter must be positive")
        if not 0 < self.slit_width < self.slit_pitch:
            raise ValueError("need 0 < slit_width < slit_pitch")
        if self.samples_per_lobe < 1:
            raise ValueError("samples_per_lobe must be >= 1")

    @property
    def scale(self) -> float:
        """lambda * f, converting aperture coordinates to focal-plane spatial frequency."""
        return self.wavelength * self.focal_length

    @property
    def lobe_width(self) -> float:
        """Distance from the central maximum to the first null of the array factor."""
        return self.scale / (self.dim * self.slit_pitch)

    @property
    def slit_centers(self) -> np.ndarray:
        return (np.arange(self.dim) - (self.dim - 1) / 2) * self.slit_pitch

    def replace(self, **changes) -> "OpticalSetup":
        from dataclasses import replace

        return replace(self, **changes)


def _combined_coefficients(alice: PhaseMask, bob: PhaseMask) -> np.ndarray:
    """Per-slit field after both SLMs: product of the two normalized slit states.

    Phases add (for 0/pi masks this equals Bob's conjugate projection).
    """
    _check_dims(alice.dim, bob.dim)
    return make_slit_state(alice).amplitudes * make_slit_state(bob).amplitudes


def _amplitude(setup: OpticalSetup, coeffs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Field at focal-plane points ``u`` for slit coefficients ``coeffs`` (..., D)."""
    u = np.asarray(u, dtype=float)
    phase = np.exp(-2j * np.pi * np.multiply.outer(setup.slit_centers, u) / setup.scale)
    envelope = np.sinc(setup.slit_width * u / setup.scale)
    return envelope * (coeffs @ phase)


def focal_plane_amplitude(setup: OpticalSetup, combined_mask: PhaseMask, u):
    """Unnormalized complex field at ``u`` (metres) behind a single combined mask."""
    _check_dims(setup.dim, combined_mask.dim)
    coeffs = np.where(combined_mask.open_slits, np.exp(1j * combined_mask.phases), 0.0)
    out = _amplitude(setup, coeffs, u)
    return complex(out) if np.ndim(u) == 0 else out


class PinholeIntegrator:
    """Simpson integration of focal-plane intensity across the pinhole.

    Results are normalized by the same integral for the uniform in-phase
    field (coefficients ``1/D`` on every slit), which is what a matched pair
    of built-in MUB states produces; matched pairs therefore give exactly 1.
    """

    def __init__(self, setup: OpticalSetup):
        self.setup = setup
        n = math.ceil(setup.pinhole_diameter / setup.lobe_width * setup.samples_per_lobe)
        self.n_intervals = max(2, n + (n % 2))
        self._grids = [self._grid(self.n_intervals), self._grid(2 * self.n_intervals)]

    def _grid(self, n_intervals):
        s = self.setup
        u = np.linspace(-s.pinhole_diameter / 2, s.pinhole_diameter / 2, n_intervals + 1)
        phase = np.exp(-2j * np.pi * np.multiply.outer(s.slit_centers, u) / s.scale)
        envelope2 = np.sinc(s.slit_width * u / s.scale) ** 2
        ref = simpson(np.abs(phase.sum(axis=0) / s.dim) ** 2 * envelope2, x=u)
        return u, phase, envelope2, ref

    @staticmethod
    def _integrate(grid, coeffs):
        u, phase, envelope2, ref = grid
        intensity = np.abs(coeffs @ phase) ** 2 * envelope2
        return simpson(intensity, x=u, axis=-1) / ref

    def __call__(self, coeffs: np.ndarray, check: bool = True) -> np.ndarray:
        """Normalized click probabilities for slit coefficients of shape (..., D)."""
        coeffs = np.asarray(coeffs, dtype=complex)
        coarse = self._integrate(self._grids[0], coeffs)
        if check:
            fine = self._integrate(self._grids[1], coeffs)
            err = float(np.max(np.abs(fine - coarse), initial=0.0))
            if err > self.setup.quad_tol:
                raise QuadratureError(
                    f"pinhole quadrature not converged: change {err:.3g} on doubling "
                    f"{self.n_intervals} intervals (samples_per_lobe="
                    f"{self.setup.samples_per_lobe}); increase samples_per_lobe"
                )
            coarse = fine
        return np.clip(coarse, 0.0, 1.0)

    @cached_property
    def reference_peak(self) -> float:
        s = self.setup
        return float(abs(_amplitude(s, np.full(s.dim, 1.0 / s.dim), 0.0)) ** 2)


def pinhole_click_probability(setup: OpticalSetup, alice_mask: PhaseMask, bob_mask: PhaseMask) -> float:
    """Probability that the photon lands in the pinhole, relative to a matched pair."""
    _check_dims(setup.dim, alice_mask.dim)
    coeffs = _combined_coefficients(alice_mask, bob_mask)
    return float(PinholeIntegrator(setup)(coeffs))


@dataclass
class PatternCurve:
    u: np.ndarray
    intensity: np.ndarray
    pinhole_edges: tuple[float, float]

    def to_csv(self) -> str:
        lines = ["u_meters,intensity"]
        lines += [f"{u:.9e},{i:.9e}" for u, i in zip(self.u, self.intensity)]
        return "\n".join(lines) + "\n"


def render_pattern(
    setup: OpticalSetup,
    alice_mask: PhaseMask,
    bob_mask: PhaseMask,
    span: float = 400e-6,
    n_points: int = 801,
) -> PatternCurve:
    """Sample |A(u)|^2 over ``[-span/2, span/2]``.

    Intensities are scaled so that a matched pair peaks at 1, which keeps
    curves for different mask pairs on a common scale.
    """
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    u = np.linspace(-span / 2, span / 2, n_points)
    coeffs = _combined_coefficients(alice_mask, bob_mask)
    intensity = np.abs(_amplitude(setup, coeffs, u)) ** 2
    peak = PinholeIntegrator(setup).reference_peak
    half = setup.pinhole_diameter / 2
    return PatternCurve(u, intensity / peak, (-half, half))
