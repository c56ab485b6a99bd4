import math

import numpy as np
import pytest

from dqrp.theory import (
    DEFAULT_RATES,
    ErrorModel,
    PlaneMode,
    RatePolicy,
    a1,
    a2,
    binary_entropy,
    bit_error_likelihood,
    bitflip_probability,
    bsc_capacity,
    compression_ratio,
    epsilon_x_from_epsilon_y,
    plan_bitplanes,
    planes_to_code,
)

# Monte Carlo oracle values, 1e6 draws each (see _decoder_sim below for the flip oracle):
#   flip frequency of bit 3 at s=1 (seed 1)            -> 0.054549
#   mass of N(0,1) over unit cells centred at 2 + 8l   -> 0.060719
MC_P3_S1 = 0.054549
MC_A1_K3_C2_S1 = 0.060719


def _decoder_sim(k, s, n, seed):
    """Simulate the decoder's choice of bit k given the true lower bits.

    Returns the flip indicator and the normalized distance of the prediction to
    the chosen level.
    """
    rng = np.random.default_rng(seed)
    half = 2 ** (k - 1)
    q = rng.integers(0, 1 << 20, n)
    y = q + rng.random(n) - 0.5
    y_hat = y - rng.normal(0.0, s, n)
    r = q % half
    v = (r + half * np.ceil((y_hat - r) / half - 0.5)).astype(np.int64)
    flip = ((v >> (k - 1)) & 1) != ((q >> (k - 1)) & 1)
    return flip, 2 * np.abs(y_hat - v)


def test_entropy_and_capacity():
    assert binary_entropy(0.5) == 1.0
    assert binary_entropy(0.0) == 0.0 and binary_entropy(1.0) == 0.0
    assert binary_entropy(0.11) == pytest.approx(0.499916, abs=1e-6)
    assert bsc_capacity(0.11) == pytest.approx(0.5, abs=1e-3)
    assert binary_entropy(0.2) == pytest.approx(binary_entropy(0.8))
    with pytest.raises(ValueError):
        binary_entropy(1.2)


def test_compression_ratio():
    assert compression_ratio(0.0) == 1.0
    assert compression_ratio(0.5) == 2.0
    assert compression_ratio(0.45) == pytest.approx(20 / 11)
    with pytest.raises(ValueError):
        compression_ratio(1.0)


def test_error_model_normalization():
    m = ErrorModel(epsilon=30.0, sigma=0.5, delta=3.0)
    assert m.normalized == pytest.approx(5.0)
    with pytest.raises(ValueError):
        ErrorModel(epsilon=-1.0, sigma=1.0, delta=1.0)
    with pytest.raises(ValueError):
        ErrorModel(epsilon=1.0, sigma=1.0, delta=0.0)


@pytest.mark.parametrize("k", range(1, 9))
def test_bitflip_limits(k):
    assert abs(bitflip_probability(k, ErrorModel(0.0, 1.0, 1.0), tol=1e-9)) < 1e-6
    assert bitflip_probability(k, 1e3) == pytest.approx(0.5, abs=1e-9)


def test_bitflip_large_error_k3():
    assert bitflip_probability(3, ErrorModel(1e3, 1.0, 1.0)) == pytest.approx(0.5, abs=1e-9)


def test_bitflip_matches_monte_carlo():
    assert bitflip_probability(3, 1.0) == pytest.approx(MC_P3_S1, abs=0.005)


def test_bitflip_matches_live_decoder_simulation():
    for k, s in [(1, 0.3), (2, 0.8), (4, 3.0)]:
        flip, _ = _decoder_sim(k, s, 200_000, seed=k)
        assert bitflip_probability(k, s) == pytest.approx(flip.mean(), abs=0.005)


def test_bitflip_monotone_grid():
    ss = [0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0]
    p = np.array([[bitflip_probability(k, s) for s in ss] for k in range(1, 9)])
    assert np.all(np.diff(p, axis=0) <= 1e-12)
    assert np.all(np.diff(p, axis=1) >= -1e-12)
    assert np.all((p >= 0) & (p <= 0.5))


def test_a1_examples():
    assert a1(3, 0.0, 0.0) == pytest.approx(1.0)
    assert a1(3, 2.0, 1.0) == pytest.approx(MC_A1_K3_C2_S1, abs=0.005)
    c = np.linspace(0, 4, 9)
    np.testing.assert_allclose(a2(3, c, 1.3), a1(3, 4 - c, 1.3))
    with pytest.raises(ValueError):
        a1(3, 4.5, 1.0)
    with pytest.raises(ValueError):
        a1(3, -0.1, 1.0)


def test_a1_series_matches_direct_sum():
    # the Fourier series and the direct interval sum must agree
    s, k = 1.7, 4
    c = np.linspace(0, 8, 17)
    j = np.arange(-20, 21)
    from scipy.stats import norm

    centres = c[:, None] + 16 * j[None, :]
    direct = (norm.cdf((centres + 0.5) / s) - norm.cdf((centres - 0.5) / s)).sum(axis=1)
    np.testing.assert_allclose(a1(k, c, s), direct, atol=1e-12)


def test_likelihood_boundary_and_limits():
    assert bit_error_likelihood(3, 4.0, 1.0) == 0.5
    assert bit_error_likelihood(3, 0.0, ErrorModel(0.0, 1.0, 1.0)) == 0.0
    assert bit_error_likelihood(3, 4.0, 0.0) == 0.5


@pytest.mark.parametrize("k,s", [(1, 0.2), (2, 0.5), (3, 1.0), (5, 4.0), (8, 20.0)])
def test_likelihood_monotone_and_bounded(k, s):
    c = np.linspace(0, 2 ** (k - 1), 101)
    lk = bit_error_likelihood(k, c, s)
    assert np.all(np.diff(lk) >= -1e-12)
    assert lk[0] >= 0 and lk[-1] == 0.5
    assert np.all(lk <= 0.5)


def test_likelihood_bucket_monte_carlo():
    flip, c = _decoder_sim(3, 0.5, 2_000_000, seed=3)
    sel = np.abs(c - 1.0) < 0.05
    assert abs(flip[sel].mean() - bit_error_likelihood(3, 1.0, 0.5)) < 0.01
    flip, c = _decoder_sim(3, 1.5, 2_000_000, seed=5)
    sel = np.abs(c - 3.0) < 0.05
    assert abs(flip[sel].mean() - bit_error_likelihood(3, 3.0, 1.5)) < 0.01


def test_likelihood_total_probability():
    for k, s in [(2, 0.8), (4, 2.5)]:
        flip, c = _decoder_sim(k, s, 500_000, seed=10 + k)
        assert np.mean(bit_error_likelihood(k, c, s)) == pytest.approx(flip.mean(), abs=0.01)
        assert np.mean(bit_error_likelihood(k, c, s)) == pytest.approx(bitflip_probability(k, s), abs=0.005)


def test_rip_transfer():
    assert epsilon_x_from_epsilon_y(1.0, 10, 10, 1.0) == 1.0
    assert epsilon_x_from_epsilon_y(2.0, 4096, 4000, 10.0) == pytest.approx(20 * math.sqrt(4096 / 4000))


def test_rip_transfer_on_srht():
    from dqrp.measurement import SRHT, apply, build_operator

    op = build_operator(SRHT, 4096, 4000, seed=0)
    rng = np.random.default_rng(0)
    delta = 5.0
    for _ in range(5):
        d = rng.normal(size=4096)
        eps_y = np.linalg.norm(apply(op, d)) / delta
        assert epsilon_x_from_epsilon_y(eps_y, 4096, 4000, delta) == pytest.approx(np.linalg.norm(d), rel=0.05)


def test_rate_policy():
    pol = RatePolicy()
    assert pol.available_rates == DEFAULT_RATES
    assert pol.select_rate(0.11) == pytest.approx(0.45)
    assert pol.select_rate(0.5) is None
    assert pol.rate_index(0.45) == 9 and pol.rate_at(9) == pytest.approx(0.45)
    for p in np.linspace(0.001, 0.5, 200):
        r = pol.select_rate(p)
        if r is not None:
            assert r <= bsc_capacity(p) + 1e-12


def test_plan_examples():
    s = ErrorModel.from_normalized(0.4)
    plan = plan_bitplanes(s, 11)
    assert len(plan) == 11
    modes = plan.modes
    first_skip = modes.index(PlaneMode.SKIP)
    assert all(m == PlaneMode.SKIP for m in modes[first_skip:])
    for e in plan:
        if e.mode == PlaneMode.SYNDROME:
            assert e.rate <= bsc_capacity(e.p)
    huge = plan_bitplanes(1e4, 3)
    assert huge.entry(1).mode == PlaneMode.RAW


def test_plan_typical_profile():
    # normalized error of a few units: one or two raw planes, a few syndrome planes, rest skipped
    for s in (0.7, 1.0, 1.3):
        plan = plan_bitplanes(s, 11)
        assert 1 <= plan.count(PlaneMode.RAW) <= 2
        assert 1 <= plan.count(PlaneMode.SYNDROME) <= 3
        assert all(plan.entry(k).mode == PlaneMode.SKIP for k in range(5, 12))


def test_plan_selects_045_at_p011():
    # find s with p_1 = 0.11 and check the plane is coded at 0.45
    from scipy.optimize import brentq

    s = brentq(lambda v: bitflip_probability(1, v) - 0.11, 0.01, 1.0)
    e = plan_bitplanes(s, 4).entry(1)
    assert e.mode == PlaneMode.SYNDROME and e.rate == pytest.approx(0.45)


def test_planes_to_code_decreases_with_delta():
    counts = [planes_to_code(ErrorModel(100.0, 1.0, d), 16, 1e-3) for d in (1, 4, 16, 64)]
    assert counts == sorted(counts, reverse=True)
    assert counts[0] > counts[-1]
