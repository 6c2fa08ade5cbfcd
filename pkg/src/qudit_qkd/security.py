"""QBER thresholds, symbol entropy, rate accounting and the session verdict."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import bisect, brentq

from .photonics import NoiseConfig, PulseConfig, expected_jitter_projections, total_click_probability
from .protocol import SiftResult, symbol_counts

SECURE_BOTH = "secure_both"
SECURE_INDIVIDUAL_ONLY = "secure_individual_only"
INSECURE = "insecure"


def _check_dim(dim: int) -> None:
    if dim < 2:
        raise ValueError(f"dimension must be >= 2, got {dim}")


def threshold_individual(dim: int) -> float:
    """Maximum QBER tolerated against individual attacks, ``(1 - 1/sqrt(D)) / 2``."""
    _check_dim(dim)
    return (1.0 - 1.0 / math.sqrt(dim)) / 2.0


def dit_error_entropy(qber: float, dim: int) -> float:
    """Entropy of a D-ary symmetric channel with error rate ``qber``, in bits."""
    q = qber
    h = 0.0
    if q < 1:
        h -= (1 - q) * math.log2(1 - q)
    if q > 0:
        h -= q * (math.log2(q) - math.log2(dim - 1))
    return h


def key_rate_collective(qber: float, dim: int) -> float:
    """Asymptotic secret fraction ``log2 D - 2 h_D(Q)`` in bits per sifted symbol."""
    _check_dim(dim)
    if not 0 <= qber <= (dim - 1) / dim:
        raise ValueError(f"QBER {qber} outside [0, {(dim - 1) / dim}] for D = {dim}")
    return math.log2(dim) - 2.0 * dit_error_entropy(qber, dim)


def threshold_coherent(dim: int) -> float:
    """QBER at which the collective-attack key rate reaches zero."""
    _check_dim(dim)
    return bisect(key_rate_collective, 0.0, (dim - 1) / dim, args=(dim,), xtol=1e-10)


def shannon_entropy(counts) -> float:
    """``-sum p log2 p`` of a histogram; raises on an empty histogram."""
    counts = np.asarray(counts, dtype=float)
    if np.any(counts < 0):
        raise ValueError("histogram counts must be non-negative")
    total = counts.sum()
    if total == 0:
        raise ValueError("entropy of an empty histogram is undefined")
    p = counts[counts > 0] / total
    return float(-(p * np.log2(p)).sum()) + 0.0


def qber_standard_error(result: SiftResult) -> float | None:
    n = result.n_correct + result.n_incorrect
    if n == 0:
        return None
    q = result.n_incorrect / n
    return math.sqrt(q * (1 - q) / n)


def verdict(qber: float, dim: int) -> str:
    if qber < threshold_coherent(dim):
        return SECURE_BOTH
    if qber < threshold_individual(dim):
        return SECURE_INDIVIDUAL_ONLY
    return INSECURE


# -- rates --------------------------------------------------------------


def predicted_sifted_rate(cfg: PulseConfig, dim: int, noise: NoiseConfig | None = None) -> float:
    """Expected sifted detections per hour for uniformly random choices.

    Half the cycles share a basis; of those, 1/D also share the state. Under
    phase jitter the mean matched and mismatched projections are used.
    """
    noise = noise or NoiseConfig()
    p_match, p_err = expected_jitter_projections(noise.phase_jitter_rad, dim)
    per_cycle = 0.5 * (
        total_click_probability(cfg, noise, p_match) / dim
        + total_click_probability(cfg, noise, p_err) * (dim - 1) / dim
    )
    return cfg.rep_rate * 3600.0 * per_cycle


def solve_eta(target_sifted_per_hour: float, cfg: PulseConfig, dim: int, noise: NoiseConfig | None = None) -> float:
    """Overall efficiency that makes the predicted sifted rate equal the target."""

    def gap(eta):
        return predicted_sifted_rate(PulseConfig(**{**asdict(cfg), "eta": eta}), dim, noise) - target_sifted_per_hour

    lo, hi = gap(0.0), gap(1.0)
    if lo > 0 or hi < 0:
        raise ValueError(
            f"target {target_sifted_per_hour}/h outside the reachable range "
            f"[{lo + target_sifted_per_hour:.4g}, {hi + target_sifted_per_hour:.4g}]"
        )
    return brentq(gap, 0.0, 1.0, xtol=1e-12)


@dataclass
class RateSummary:
    raw_per_hour: float
    sifted_per_hour: float
    predicted_sifted_per_hour: float


def rate_accounting(
    result: SiftResult, cfg: PulseConfig, wall_hours: float, noise: NoiseConfig | None = None
) -> RateSummary:
    if wall_hours <= 0:
        raise ValueError("wall_hours must be positive")
    return RateSummary(
        result.raw_detections / wall_hours,
        result.sifted_detections / wall_hours,
        predicted_sifted_rate(cfg, result.dim, noise),
    )


# -- report -------------------------------------------------------------


@dataclass
class SecurityReport:
    dim: int
    qber: float | None
    qber_stderr: float | None
    threshold_individual: float
    threshold_coherent: float
    verdict: str | None
    entropy_bits: float | None
    secret_fraction: float | None
    raw_rate_per_hour: float
    sifted_rate_per_hour: float
    predicted_sifted_rate_per_hour: float
    counts: dict

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def build_report(
    result: SiftResult,
    cfg: PulseConfig,
    wall_hours: float,
    noise: NoiseConfig | None = None,
    include_incorrect: bool = False,
) -> SecurityReport:
    """Assemble thresholds, entropy, rates and verdict for a sifted session.

    With nothing sifted the QBER, entropy and verdict are left as ``None``.
    """
    d = result.dim
    q = result.qber
    rates = rate_accounting(result, cfg, wall_hours, noise)
    try:
        entropy = shannon_entropy(symbol_counts(result, include_incorrect))
    except ValueError:
        entropy = None
    fraction = None
    if q is not None and q <= (d - 1) / d:
        fraction = key_rate_collective(q, d)
    return SecurityReport(
        dim=d,
        qber=q,
        qber_stderr=qber_standard_error(result),
        threshold_individual=threshold_individual(d),
        threshold_coherent=threshold_coherent(d),
        verdict=None if q is None else verdict(q, d),
        entropy_bits=entropy,
        secret_fraction=fraction,
        raw_rate_per_hour=rates.raw_per_hour,
        sifted_rate_per_hour=rates.sifted_per_hour,
        predicted_sifted_rate_per_hour=rates.predicted_sifted_per_hour,
        counts=result.summary(),
    )
