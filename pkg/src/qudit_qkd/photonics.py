"""Weak coherent pulses, threshold detection and noise injection.

Per clock cycle Bob's single APD either clicks or not. The click
probability combines Poisson photon statistics with the projection
probability of the chosen detection model (``ideal`` overlap or the
``optical`` pinhole integral), dark counts inside the gate, and a
signal-independent background.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .hilbert import (
    MubFamily,
    PhaseMask,
    _check_dims,
    detection_probability_ideal,
    make_slit_state,
)
from .optics import OpticalSetup, PinholeIntegrator, pinhole_click_probability

MODELS = ("ideal", "optical")

# (mu, gate window in ns)
PRESETS = {
    "mu-a": (0.60, 50.0),
    "mu-b": (0.18, 20.0),
}


@dataclass(frozen=True)
class PulseConfig:
    mu: float = 0.60
    rep_rate: float = 30.0
    window_ns: float = 50.0
    eta: float = 1.0
    dark_rate_hz: float = 0.0

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError(f"mu must be >= 0, got {self.mu}")
        if not 0 <= self.eta <= 1:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if self.rep_rate <= 0:
            raise ValueError(f"rep_rate must be > 0, got {self.rep_rate}")
        if self.window_ns <= 0:
            raise ValueError(f"window_ns must be > 0, got {self.window_ns}")
        if self.dark_rate_hz < 0:
            raise ValueError(f"dark_rate_hz must be >= 0, got {self.dark_rate_hz}")

    @classmethod
    def preset(cls, name: str, **overrides) -> "PulseConfig":
        try:
            mu, window = PRESETS[name]
        except KeyError:
            raise ValueError(f"unknown preset {name!r} (choose from {', '.join(PRESETS)})") from None
        return cls(**{"mu": mu, "window_ns": window, **overrides})

    @property
    def p_dark(self) -> float:
        """Probability of a dark count inside one gate."""
        return min(1.0, self.dark_rate_hz * self.window_ns * 1e-9)


@dataclass(frozen=True)
class NoiseConfig:
    phase_jitter_rad: float = 0.0
    background_click_prob: float = 0.0

    def __post_init__(self):
        if self.phase_jitter_rad < 0:
            raise ValueError("phase_jitter_rad must be >= 0")
        if not 0 <= self.background_click_prob <= 1:
            raise ValueError("background_click_prob must lie in [0, 1]")


def click_probability(cfg: PulseConfig, projection_prob):
    """Threshold-detector click probability ``1 - (1 - p_dark) exp(-mu eta p)``.

    Works elementwise on arrays.
    """
    p = np.asarray(projection_prob, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("projection probability must lie in [0, 1]")
    out = 1.0 - (1.0 - cfg.p_dark) * np.exp(-cfg.mu * cfg.eta * p)
    return float(out) if out.ndim == 0 else out


def total_click_probability(cfg: PulseConfig, noise: NoiseConfig, projection_prob):
    """Click probability including the accidental background."""
    pc = click_probability(cfg, projection_prob)
    return 1.0 - (1.0 - pc) * (1.0 - noise.background_click_prob)


def apply_phase_noise(mask: PhaseMask, noise: NoiseConfig, rng: np.random.Generator) -> PhaseMask:
    if noise.phase_jitter_rad == 0:
        return mask
    jitter = rng.normal(0.0, noise.phase_jitter_rad, size=mask.dim)
    return PhaseMask(mask.phases + jitter, mask.open_slits)


def expected_jitter_projections(sigma: float, dim: int) -> tuple[float, float]:
    """Mean (matched, same-basis mismatched) projection under Gaussian slit jitter.

    For equal-magnitude +1/-1 states, ``E exp(i(e_l - e_m)) = exp(-sigma^2)``
    for ``l != m`` gives ``exp(-s^2) + (1 - exp(-s^2))/D`` and
    ``(1 - exp(-s^2))/D``.
    """
    damp = math.exp(-sigma * sigma)
    return damp + (1 - damp) / dim, (1 - damp) / dim


def simulate_pulse(
    cfg: PulseConfig,
    noise: NoiseConfig,
    alice_mask: PhaseMask,
    bob_mask: PhaseMask,
    model: str,
    rng: np.random.Generator,
    setup: OpticalSetup | None = None,
) -> bool:
    """Draw one click/no-click outcome for a single clock cycle."""
    _check_dims(alice_mask.dim, bob_mask.dim)
    noisy = apply_phase_noise(alice_mask, noise, rng)
    if model == "ideal":
        p = detection_probability_ideal(make_slit_state(noisy), make_slit_state(bob_mask))
    elif model == "optical":
        p = pinhole_click_probability(setup or OpticalSetup(dim=alice_mask.dim), noisy, bob_mask)
    else:
        raise ValueError(f"unknown model {model!r}")
    return bool(rng.random() < total_click_probability(cfg, noise, p))


class ProjectionModel:
    """Vectorised projection probabilities for basis-state choices of a MUB family.

    ``alice``/``bob`` are pairs of integer arrays ``(basis, k)``; ``jitter``
    is an optional ``(N, D)`` array of phase offsets applied to Alice's slits.
    Without jitter the optical model is evaluated once for all ``(2D)^2``
    pairs and looked up.
    """

    def __init__(self, family: MubFamily, model: str = "ideal", setup: OpticalSetup | None = None):
        if model not in MODELS:
            raise ValueError(f"unknown model {model!r} (choose from {', '.join(MODELS)})")
        self.family = family
        self.model = model
        self.dim = family.dim
        self.amps = family.amplitude_table()
        if model == "optical":
            setup = setup or OpticalSetup(dim=self.dim)
            if setup.dim != self.dim:
                raise ValueError(f"optical setup has dim {setup.dim}, family has {self.dim}")
            self.integrator = PinholeIntegrator(setup)
        flat = self.amps.reshape(2 * self.dim, self.dim)
        self.table = self._evaluate(flat[:, None, :], flat[None, :, :]).reshape(
            2, self.dim, 2, self.dim
        )

    def _evaluate(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.model == "ideal":
            return np.clip(np.abs(np.sum(np.conj(b) * a, axis=-1)) ** 2, 0.0, 1.0)
        return self.integrator(a * b)

    def __call__(self, alice, bob, jitter: np.ndarray | None = None) -> np.ndarray:
        ab, ak = alice
        bb, bk = bob
        if jitter is None:
            return self.table[ab, ak, bb, bk]
        a = self.amps[ab, ak] * np.exp(1j * jitter)
        return self._evaluate(a, self.amps[bb, bk])


def simulate_pulses(
    cfg: PulseConfig,
    noise: NoiseConfig,
    projection: ProjectionModel,
    alice,
    bob,
    rng: np.random.Generator,
) -> np.ndarray:
    """Batch version of :func:`simulate_pulse` over arrays of basis-state choices."""
    n = len(alice[0])
    jitter = None
    if noise.phase_jitter_rad > 0:
        jitter = rng.normal(0.0, noise.phase_jitter_rad, size=(n, projection.dim))
    p = projection(alice, bob, jitter)
    return rng.random(n) < total_click_probability(cfg, noise, p)


def predicted_qber(
    cfg: PulseConfig,
    noise: NoiseConfig,
    projection: ProjectionModel,
    n_samples: int = 20000,
    seed: int = 0,
) -> float:
    """Expected sifted QBER, estimated with a fixed set of random draws.

    The same standard-normal draws are rescaled for every jitter value, so
    the estimate is a smooth, monotone function of the noise parameters and
    can be handed to a root finder.
    """
    d = projection.dim
    rng = np.random.default_rng(seed)
    basis = rng.integers(0, 2, n_samples)
    k = rng.integers(0, d, n_samples)
    k_wrong = (k + rng.integers(1, d, n_samples)) % d
    z = rng.standard_normal((n_samples, d)) if noise.phase_jitter_rad > 0 else None
    jitter = None if z is None else noise.phase_jitter_rad * z
    p_ok = total_click_probability(cfg, noise, projection((basis, k), (basis, k), jitter)).mean()
    p_bad = total_click_probability(cfg, noise, projection((basis, k), (basis, k_wrong), jitter)).mean()
    correct = p_ok / d
    wrong = p_bad * (d - 1) / d
    return float(wrong / (correct + wrong))


def calibrate_noise(
    target_qber: float,
    cfg: PulseConfig,
    projection: ProjectionModel,
    background_click_prob: float = 0.0,
    n_samples: int = 20000,
    seed: int = 0,
    max_jitter: float = 6.0,
) -> NoiseConfig:
    """Find the slit phase jitter that yields ``target_qber`` for a fixed background.

    Raises ``ValueError`` if the target is below what the background alone
    produces or above what full dephasing can reach.
    """

    def gap(sigma):
        noise = NoiseConfig(sigma, background_click_prob)
        return predicted_qber(cfg, noise, projection, n_samples, seed) - target_qber

    lo, hi = gap(0.0), gap(max_jitter)
    if lo > 0:
        raise ValueError(
            f"target QBER {target_qber} is below the noise floor {lo + target_qber:.4f} "
            "set by background and dark counts"
        )
    if lo == 0:
        return NoiseConfig(0.0, background_click_prob)
    if hi < 0:
        raise ValueError(f"target QBER {target_qber} is not reachable with phase jitter")
    sigma = brentq(gap, 0.0, max_jitter, xtol=1e-10)
    return NoiseConfig(sigma, background_click_prob)
