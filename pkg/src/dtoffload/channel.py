"""Time-correlated fading links and instantaneous achievable link rates.

Small-scale fading follows the first-order Gauss-Markov recurrence
h_t = kappa * h_{t-1} + l_t with circularly symmetric complex Gaussian
innovations of variance 1 - kappa^2, so the second moment of h stays 1.
kappa is the Jakes correlation J0(2*pi*f_D*T) with Doppler f_D = v*f_c/c.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import SimParams

LIGHT_SPEED_MPS = 3.0e8

# J0 evaluation switches from the ascending power series to the Hankel
# asymptotic expansion here; both are ~1e-8 accurate at the seam.
_J0_SERIES_CUTOFF = 16.0


def bessel_j0(x: float) -> float:
    """Zeroth-order Bessel function of the first kind.

    Power series sum_k (-x^2/4)^k / (k!)^2 for |x| < 16, three-term Hankel
    asymptotic expansion beyond.
    """
    x = abs(float(x))
    if x < _J0_SERIES_CUTOFF:
        total = 1.0
        term = 1.0
        q = -0.25 * x * x
        for k in range(1, 80):
            term *= q / (k * k)
            total += term
            if abs(term) < 1e-17 * max(1.0, abs(total)):
                break
        return total
    # Abramowitz & Stegun 9.2.5: J0(x) ~ sqrt(2/(pi x)) [P cos w - Q sin w],
    # w = x - pi/4.
    inv = 1.0 / x
    inv2 = inv * inv
    p = 1.0 - 0.0703125 * inv2 + 0.1121520996 * inv2 * inv2
    q = -0.125 * inv + 0.0732421875 * inv * inv2
    w = x - math.pi / 4.0
    return math.sqrt(2.0 / (math.pi * x)) * (p * math.cos(w) - q * math.sin(w))


def kappa_from_mobility(speed_mps: float, carrier_hz: float, slot_s: float) -> float:
    """Jakes fading correlation J0(2 pi f_D T) for a CSI interval of one slot."""
    if speed_mps < 0:
        raise ValueError("speed must be nonnegative")
    if carrier_hz <= 0 or slot_s <= 0:
        raise ValueError("carrier frequency and slot duration must be positive")
    doppler = speed_mps * carrier_hz / LIGHT_SPEED_MPS
    return bessel_j0(2.0 * math.pi * doppler * slot_s)


@dataclass
class FadingLink:
    """One vehicle-to-server link: fading state plus static link budget."""

    h: complex
    kappa: float
    large_scale: float
    bandwidth_hz: float
    noise_power_w: float

    def __post_init__(self):
        if abs(self.kappa) > 1.0:
            raise ValueError("|kappa| must be <= 1")
        if self.large_scale <= 0 or self.bandwidth_hz <= 0 or self.noise_power_w <= 0:
            raise ValueError("large_scale, bandwidth and noise power must be positive")


def init_fading(rng: np.random.Generator) -> complex:
    """Initial h ~ CN(0, 1)."""
    re, im = rng.standard_normal(2)
    return complex(re, im) / math.sqrt(2.0)


def step_fading(link: FadingLink, rng: np.random.Generator) -> complex:
    """Advance h one slot: h <- kappa*h + CN(0, 1 - kappa^2). Returns new h."""
    var = max(0.0, 1.0 - link.kappa * link.kappa)
    re, im = rng.standard_normal(2)
    innovation = complex(re, im) * math.sqrt(var / 2.0)
    link.h = link.kappa * link.h + innovation
    return link.h


def gain(link: FadingLink) -> float:
    """Instantaneous linear power gain |h|^2 * large_scale."""
    h = link.h
    return (h.real * h.real + h.imag * h.imag) * link.large_scale


def link_rate(link: FadingLink, tx_power_w: float, slot_s: float) -> float:
    """Shannon rate B log2(1 + g p / sigma^2), converted to MB per slot."""
    if tx_power_w < 0:
        raise ValueError("tx power must be nonnegative")
    snr = gain(link) * tx_power_w / link.noise_power_w
    bits_per_s = link.bandwidth_hz * math.log2(1.0 + snr)
    return bits_per_s * slot_s / 8e6


def large_scale_loss(distance_m: float, exponent: float = 2.0, ref_m: float = 1.0) -> float:
    """Log-distance loss (d0 / max(d, d0))^alpha; distances under d0 clamp to 1."""
    if distance_m < 0:
        raise ValueError("distance must be nonnegative")
    return (ref_m / max(distance_m, ref_m)) ** exponent


def noise_power_w(params: SimParams, bandwidth_hz: float) -> float:
    """Per-link noise power under either dBm reading (total vs per-Hz density)."""
    base = params.noise_power_w
    if params.noise_as_density:
        return base * bandwidth_hz
    return base


def make_mec_link(params: SimParams, distance_m: float, rng: np.random.Generator) -> FadingLink:
    return FadingLink(
        h=init_fading(rng),
        kappa=kappa_from_mobility(params.vehicle_speed_mps, params.carrier_hz,
                                  params.slot_duration_s),
        large_scale=large_scale_loss(distance_m, params.path_loss_exponent,
                                     params.path_loss_ref_m),
        bandwidth_hz=params.mec_bandwidth_hz,
        noise_power_w=noise_power_w(params, params.mec_bandwidth_hz),
    )


def make_cloud_link(params: SimParams, rng: np.random.Generator) -> FadingLink:
    return FadingLink(
        h=init_fading(rng),
        kappa=kappa_from_mobility(params.vehicle_speed_mps, params.carrier_hz,
                                  params.slot_duration_s),
        large_scale=large_scale_loss(params.cloud_link_distance_m,
                                     params.path_loss_exponent, params.path_loss_ref_m),
        bandwidth_hz=params.cloud_bandwidth_hz,
        noise_power_w=noise_power_w(params, params.cloud_bandwidth_hz),
    )
