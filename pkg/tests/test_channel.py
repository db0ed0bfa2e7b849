import numpy as np
import pytest
import scipy.special

from dtoffload import channel
from dtoffload.config import SimParams, make_rng


def make_link(h=1.0 + 0.0j, kappa=0.5, large_scale=1.0, bw=10e6, noise=1e-12):
    return channel.FadingLink(h=h, kappa=kappa, large_scale=large_scale,
                              bandwidth_hz=bw, noise_power_w=noise)


# -- J0 / kappa ---------------------------------------------------------------

def test_j0_against_scipy_oracle_grid():
    xs = np.concatenate([np.linspace(0, 15.9, 160), np.linspace(16, 200, 300)])
    ours = np.array([channel.bessel_j0(x) for x in xs])
    ref = scipy.special.j0(xs)
    assert np.max(np.abs(ours - ref)) < 5e-8


def test_kappa_zero_speed_is_one():
    assert channel.kappa_from_mobility(0.0, 2e9, 0.2) == 1.0


def test_kappa_near_first_bessel_zero():
    # argument 2.404826 is the first zero of J0
    assert abs(channel.bessel_j0(2.404826)) < 1e-4


def test_kappa_default_mobility():
    # v=10 m/s, f_c=2 GHz, T=0.2 s -> argument 83.7758..., value frozen from
    # the scipy oracle.
    kappa = channel.kappa_from_mobility(10.0, 2e9, 0.2)
    assert abs(kappa - 0.0226873686) < 1e-6


def test_j0_even_and_decreasing_to_first_zero():
    assert channel.bessel_j0(-3.7) == channel.bessel_j0(3.7)
    xs = np.linspace(0.0, 2.4048, 60)
    vals = [channel.bessel_j0(x) for x in xs]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_kappa_preconditions():
    with pytest.raises(ValueError):
        channel.kappa_from_mobility(-1.0, 2e9, 0.2)
    with pytest.raises(ValueError):
        channel.kappa_from_mobility(1.0, 0.0, 0.2)


# -- fading recurrence --------------------------------------------------------

def test_step_fading_kappa_one_freezes():
    link = make_link(h=0.3 + 0.4j, kappa=1.0)
    rng = make_rng(0, 0)
    for _ in range(5):
        channel.step_fading(link, rng)
    assert link.h == 0.3 + 0.4j


def test_step_fading_kappa_zero_is_memoryless():
    link = make_link(kappa=0.0)
    rng = make_rng(1, 0)
    h1 = channel.step_fading(link, rng)
    h2 = channel.step_fading(link, rng)
    assert h1 != h2
    # innovation variance 1: unit second moment statistically
    draws = np.array([abs(channel.step_fading(link, rng)) ** 2 for _ in range(20000)])
    assert abs(draws.mean() - 1.0) < 0.03


def test_fading_stationarity_and_autocorrelation():
    kappa = 0.9
    link = make_link(h=channel.init_fading(make_rng(7, 1)), kappa=kappa)
    rng = make_rng(7, 2)
    n = 100_000
    hs = np.empty(n, dtype=complex)
    for i in range(n):
        hs[i] = channel.step_fading(link, rng)
    power = np.abs(hs) ** 2
    assert abs(power.mean() - 1.0) < 0.02
    lag1 = np.real(np.mean(hs[1:] * np.conj(hs[:-1]))) / power.mean()
    assert abs(lag1 - kappa) < 0.02 * kappa + 0.02


# -- gain / rate --------------------------------------------------------------

def test_gain_examples():
    assert channel.gain(make_link(h=1 + 0j, large_scale=1.0)) == 1.0
    assert channel.gain(make_link(h=3 + 4j, large_scale=0.01)) == pytest.approx(0.25)
    assert channel.gain(make_link(h=0j, large_scale=5.0)) == 0.0


def test_link_rate_known_snrs():
    # g*p/sigma^2 = 0, 1, 3 -> 0, B, 2B bits/s before unit conversion
    slot_s, bw = 1.0, 8e6  # 8 Mbit/s * 1 s = 1 MB per unit log2
    link = make_link(h=0j, large_scale=1.0, bw=bw, noise=1.0)
    assert channel.link_rate(link, 1.0, slot_s) == 0.0
    link.h = 1 + 0j
    assert channel.link_rate(link, 1.0, slot_s) == pytest.approx(1.0)  # log2(2)=1
    assert channel.link_rate(link, 3.0, slot_s) == pytest.approx(2.0)  # log2(4)=2


def test_link_rate_monotone():
    rng = make_rng(3, 0)
    for _ in range(50):
        g1, g2 = sorted(rng.uniform(0.001, 1.0, 2))
        p1, p2 = sorted(rng.uniform(0.1, 3.0, 2))
        b1, b2 = sorted(rng.uniform(1e6, 20e6, 2))
        low = make_link(h=1 + 0j, large_scale=g1, bw=b1, noise=1e-9)
        high = make_link(h=1 + 0j, large_scale=g2, bw=b2, noise=1e-9)
        assert channel.link_rate(low, p1, 0.2) <= channel.link_rate(high, p2, 0.2)


def test_large_scale_loss_examples():
    assert channel.large_scale_loss(1.0) == 1.0
    assert channel.large_scale_loss(10.0, exponent=2.0) == pytest.approx(0.01)
    assert channel.large_scale_loss(0.0) == 1.0  # clamped at d0


def test_noise_power_interpretations():
    params = SimParams()
    total = channel.noise_power_w(params, 10e6)
    assert total == pytest.approx(10 ** (-114 / 10) / 1000)
    density = channel.noise_power_w(SimParams(noise_as_density=True), 10e6)
    assert density == pytest.approx(total * 10e6)


def test_link_validation():
    with pytest.raises(ValueError):
        make_link(kappa=1.5)
    with pytest.raises(ValueError):
        make_link(large_scale=0.0)
