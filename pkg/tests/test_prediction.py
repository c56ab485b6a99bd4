import numpy as np
import pytest

from dqrp.measurement import SRHT, QuantizerConfig, apply, build_operator, make_dither, quantize
from dqrp.prediction import (
    LinearSideInfo,
    ParamRangeError,
    SuccessiveSideInfo,
    band_stats,
    blob_to_params,
    decode_param,
    encode_param,
    linear_error_energy,
    linear_side_info,
    lmmse_predict,
    measurement_stats,
    params_to_blob,
    prediction_epsilon,
    quantize_param,
    successive_epsilon,
    successive_mse,
    successive_predict,
    successive_side_info,
)


def _pair(n=4096, rho=0.9, seed=0):
    rng = np.random.default_rng(seed)
    x0 = rng.normal(100, 20, n)
    xi = 3.0 + 0.7 * x0 * rho + rng.normal(0, 20 * np.sqrt(1 - rho**2), n)
    return x0, xi


def test_param_encoding_precision():
    v = np.concatenate([np.geomspace(1e-8, 1e9, 500), -np.geomspace(1e-6, 1e6, 50), [0.0, 1.0, -2.5]])
    back = quantize_param(v)
    assert np.all(np.abs(back - v) <= np.abs(v) * 2.0**-10 + 1e-300)
    assert quantize_param(0.0)[0] == 0.0
    assert quantize_param(1.0)[0] == 1.0
    assert np.all(np.sign(back) == np.sign(v))
    assert encode_param([1.0, 2.0]).dtype == np.uint16


def test_param_encoding_range():
    with pytest.raises(ParamRangeError):
        encode_param(1e10)
    with pytest.raises(ParamRangeError):
        encode_param(np.nan)
    assert decode_param(encode_param(1e-12))[0] == 0.0


def test_blob_sizes():
    assert len(LinearSideInfo(1.0, 2.0).to_blob()) * 8 == 32
    assert len(SuccessiveSideInfo(1.0, (0.5,), 3.0).to_blob()) * 8 == 48
    assert len(SuccessiveSideInfo(1.0, (0.5, 0.2), 3.0).to_blob()) * 8 == 64
    assert len(SuccessiveSideInfo(1.0, (0.5, 0.2, 0.1)).to_blob()) * 8 == 64
    vals = [1.5, -3.25, 1e5]
    np.testing.assert_allclose(blob_to_params(params_to_blob(vals)), vals, rtol=2**-10)
    info = SuccessiveSideInfo(1.0, (0.5, 0.25), 3.0)
    assert SuccessiveSideInfo.from_blob(info.to_blob(), 2, True) == info
    assert LinearSideInfo.from_blob(LinearSideInfo(-2.0, 8.0).to_blob()) == LinearSideInfo(-2.0, 8.0)


def test_band_stats_matches_two_pass_oracle():
    x0, xi = _pair()
    st = band_stats(x0, xi)
    c = np.cov(np.stack([x0, xi]), bias=True)
    assert st.mu0 == pytest.approx(np.mean(x0), rel=1e-12)
    assert st.mu == pytest.approx(np.mean(xi), rel=1e-12)
    assert st.var0 == pytest.approx(c[0, 0], rel=1e-12)
    assert st.var == pytest.approx(c[1, 1], rel=1e-12)
    assert st.cov0 == pytest.approx(c[0, 1], rel=1e-12)


def test_band_stats_trivial_cases():
    x0, _ = _pair()
    st = band_stats(x0, x0)
    assert st.cov0 == pytest.approx(st.var0)
    assert band_stats(x0, np.full_like(x0, 7.0)).var == 0.0
    with pytest.raises(ValueError):
        band_stats(x0, x0[:10])


def test_lmmse_exact_affine_dependence():
    x0, _ = _pair()
    xi = 2.5 * x0 - 40.0
    st = band_stats(x0, xi)
    np.testing.assert_allclose(lmmse_predict(x0, st.mu, st.cov0), xi, atol=1e-9)
    assert linear_error_energy(st, st.mu, st.cov0) == pytest.approx(0.0, abs=1e-6)


def test_lmmse_uncorrelated_and_constant_reference():
    x0, xi = _pair()
    assert np.all(lmmse_predict(x0, 5.0, 0.0) == 5.0)
    assert np.all(lmmse_predict(np.full(10, 3.0), 5.0, 2.0) == 5.0)


def test_lmmse_error_closed_form():
    x0, xi = _pair(rho=0.8, seed=3)
    st = band_stats(x0, xi)
    x_hat = lmmse_predict(x0, st.mu, st.cov0)
    direct = np.sum((xi - x_hat) ** 2)
    assert direct == pytest.approx(st.n * (st.var - st.cov0**2 / st.var0), rel=1e-9)
    assert linear_error_energy(st, st.mu, st.cov0) == pytest.approx(direct, rel=1e-9)
    # residual is orthogonal to the reference
    assert abs(np.dot(xi - x_hat, x0 - x0.mean())) < 1e-6 * np.linalg.norm(xi - x_hat) * np.linalg.norm(x0)


def test_lmmse_gain_is_optimal():
    x0, xi = _pair(rho=0.95, seed=4)
    st = band_stats(x0, xi)
    best = np.sum((xi - lmmse_predict(x0, st.mu, st.cov0)) ** 2)
    for f in (0.99, 1.01):
        assert np.sum((xi - lmmse_predict(x0, st.mu, f * st.cov0)) ** 2) >= best


def test_linear_side_info_epsilon_matches_direct_norm():
    for seed in range(5):
        x0, xi = _pair(rho=0.97, seed=seed)
        info, eps = linear_side_info(x0, xi)
        direct = np.linalg.norm(xi - lmmse_predict(x0, info.mu, info.cov0))
        assert eps == pytest.approx(direct, rel=1e-8)


def test_prediction_epsilon():
    assert prediction_epsilon(0.0, 4096, 4000, 3.0) == 0.0
    assert successive_epsilon(0.0, 4096, 4000, 3.0) == 0.0
    assert successive_epsilon(0.25, 4096, 4000, 2.0) == pytest.approx(2.0 * np.sqrt(4096 / 4000) * np.sqrt(4000 * 0.25))


def test_dither_statistics_identities():
    m = 100_000
    rng = np.random.default_rng(5)
    y = rng.normal(3.0, 40.0, m)
    w = rng.random(m) - 1.0
    yq = quantize(y + w, QuantizerConfig(16)) - w
    se_mean = np.sqrt(1 / 12 / m)
    assert abs(yq.mean() - y.mean()) < 3 * se_mean
    gap = yq.var() - y.var()
    # the rounding error is independent of y with variance 1/12, so var(yq - y) bounds the spread
    se_var = np.std((yq - y) ** 2) / np.sqrt(m) + 2 * np.std(y) * np.sqrt(1 / 12 / m)
    assert abs(gap - 1 / 12) < 3 * se_var
    cross = np.mean((yq - yq.mean()) * (y - y.mean()))
    assert cross == pytest.approx(y.var(), rel=1e-3)


def _three_bands(m=4000, seed=0):
    """Jointly Gaussian scaled measurements of a reference and three bands."""
    rng = np.random.default_rng(seed)
    c = np.array([
        [1.0, 0.9, 0.8, 0.6],
        [0.9, 1.0, 0.9, 0.7],
        [0.8, 0.9, 1.0, 0.8],
        [0.6, 0.7, 0.8, 1.0],
    ]) * 400.0
    y = rng.multivariate_normal([5.0, -3.0, 8.0, 1.0], c, size=m).T
    return [y[i] for i in range(4)]


def _dither_removed(y, seed):
    w = make_dither(len(y), seed).values
    return quantize(y + w, QuantizerConfig(16)) - w


def test_successive_first_band_is_scalar_lmmse():
    ys = _three_bands()
    info = successive_side_info(ys, 1, with_var=True)
    pred = successive_predict(ys[0], [], [info], 1)
    a = info.cross[0] / np.var(ys[0])
    # the solver's 1e-9 ridge is the only difference
    np.testing.assert_allclose(pred, info.mu + a * (ys[0] - ys[0].mean()), rtol=0, atol=1e-6)


def test_successive_perfect_correlation():
    ys = _three_bands()
    y1 = 2.0 * ys[0] + 1.0
    info = SuccessiveSideInfo(float(y1.mean()), (float(np.mean((y1 - y1.mean()) * (ys[0] - ys[0].mean()))),), float(y1.var()))
    pred = successive_predict(ys[0], [], [info], 1)
    assert np.linalg.norm(pred - y1) < 1e-6 * np.linalg.norm(y1)
    assert successive_mse(ys[0], [info], 1, float(y1.var())) < 1e-8 * y1.var()


@pytest.mark.parametrize("k", [1, 2, 3])
def test_successive_mse_formula_matches_empirical(k):
    ys = _three_bands(seed=k)
    infos = [successive_side_info(ys, j, with_var=j < 3) for j in range(1, 4)]
    decoded = [_dither_removed(ys[j], 10 + j) for j in range(1, 3)]
    pred = successive_predict(ys[0], decoded, infos, k)
    empirical = np.mean((pred - ys[k]) ** 2)
    var_k = float(np.var(ys[k]))
    assert successive_mse(ys[0], infos, k, var_k) == pytest.approx(empirical, rel=0.05)


def test_successive_beats_linear_for_later_bands():
    ys = _three_bands(seed=7)
    infos = [successive_side_info(ys, j, with_var=j < 3) for j in range(1, 4)]
    decoded = [_dither_removed(ys[j], 20 + j) for j in range(1, 3)]
    for k in (2, 3):
        succ = np.mean((successive_predict(ys[0], decoded, infos, k) - ys[k]) ** 2)
        lin = np.mean((successive_predict(ys[0], [], [SuccessiveSideInfo(infos[k - 1].mu, infos[k - 1].cross[:1])], 1) - ys[k]) ** 2)
        assert succ <= lin


def test_successive_validation():
    ys = _three_bands()
    infos = [successive_side_info(ys, j, with_var=False) for j in range(1, 3)]
    with pytest.raises(ValueError):
        successive_predict(ys[0], [ys[1]], infos, 2)  # band 1 variance missing
    with pytest.raises(ValueError):
        successive_predict(ys[0], [], infos, 2)


def test_measurement_stats_and_srht_domain():
    op = build_operator(SRHT, 1024, 1000, seed=0)
    x0, xi = _pair(n=1024)
    y = apply(op, np.stack([x0, xi]))
    mu, cov = measurement_stats(y)
    np.testing.assert_allclose(cov, np.cov(y, bias=True), rtol=1e-12)
    np.testing.assert_allclose(mu, y.mean(axis=1), rtol=1e-12)


def _srht_bands(offsets=(0.0, 30.0, -20.0, 45.0), seed=0):
    """Correlated pixel-domain bands with band-specific offsets, measured by one SRHT."""
    rng = np.random.default_rng(seed)
    op = build_operator(SRHT, 4096, 4000, seed=3)
    dc = int(np.flatnonzero(op.row_subset == 0)[0])
    base = rng.normal(0, 20, 4096)
    xs = [60 + offsets[0] + base]
    for k in range(1, 4):
        xs.append(60 + offsets[k] + (1 - 0.15 * k) * base + rng.normal(0, 4 * k, 4096))
    deltas = [1.0, 3.0, 4.0, 5.0]
    ys = [apply(op, x) / d for x, d in zip(xs, deltas)]
    return op, dc, ys


def test_dc_aware_successive_predicts_dc_row():
    op, dc, ys = _srht_bands()
    infos, decoded = [], []
    for k in range(1, 4):
        infos.append(successive_side_info(ys, k, k < 3, dc, infos, decoded))
        pred = successive_predict(ys[0], decoded, infos, k, dc)
        err = pred - ys[k]
        others = np.sqrt(np.mean(np.delete(err, dc) ** 2))
        # the DC row is predicted like a typical row despite the offsets; the slack
        # covers the 16-bit rounding of the intercept
        assert abs(err[dc]) < 4 * others + abs(infos[-1].mu) * 2.0**-10
        decoded.append(_dither_removed(ys[k], 30 + k))
        plain = successive_predict(
            ys[0], decoded[:k - 1], [successive_side_info(ys, j, j < 3) for j in range(1, k + 1)], k
        )
        assert np.linalg.norm(err) < np.linalg.norm(plain - ys[k])


def test_dc_aware_parameter_count_unchanged():
    op, dc, ys = _srht_bands()
    infos, decoded = [], []
    for k in range(1, 4):
        infos.append(successive_side_info(ys, k, k < 3, dc, infos, decoded))
        decoded.append(_dither_removed(ys[k], 40 + k))
    assert [i.n_params for i in infos] == [3, 4, 4]
    assert sum(len(i.to_blob()) for i in infos) * 8 == 176


def test_dc_aware_mse_formula():
    op, dc, ys = _srht_bands(seed=2)
    infos, decoded = [], []
    for k in range(1, 4):
        infos.append(successive_side_info(ys, k, k < 3, dc, infos, decoded))
        pred = successive_predict(ys[0], decoded, infos, k, dc)
        rows = np.delete(ys[k], dc)
        empirical = np.mean(np.delete(pred - ys[k], dc) ** 2)
        assert successive_mse(ys[0], infos, k, float(rows @ rows / rows.size), dc) == pytest.approx(empirical, rel=0.05)
        decoded.append(_dither_removed(ys[k], 50 + k))
