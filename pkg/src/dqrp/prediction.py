"""Side-information prediction of spectral bands from a reference band.

Two predictors are provided.  The linear one predicts band ``i`` pixel-wise
from the reference band ``x0`` with a scalar LMMSE gain; only the mean of band
``i`` and its covariance with ``x0`` are transmitted, since the decoder holds
``x0`` itself.  The successive one works in the measurement domain and adds
previously decoded bands (their dither-removed quantized measurements) as extra
regressors of a multivariate LMMSE estimator.

All sample statistics divide by the number of samples.  Parameters are sent as
16-bit words; see :func:`encode_param`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .theory import epsilon_x_from_epsilon_y

LINEAR = "linear"
SUCCESSIVE = "successive"

# 16-bit parameter word: sign | 6-bit exponent | 9-bit mantissa, value
# (1 + mant/512) * 2**(exp - 32); exponent field 0 encodes zero.
_MANT_BITS = 9
_EXP_BIAS = 32
_EXP_MAX = 63
PARAM_BITS = 16
QUANT_NOISE_VAR = 1.0 / 12.0


class ParamRangeError(ValueError):
    """A statistic is too large for the 16-bit parameter format."""


def encode_param(values) -> np.ndarray:
    """Encode floats as 16-bit words (round to nearest, relative error <= 2**-10)."""
    v = np.atleast_1d(np.asarray(values, dtype=np.float64))
    if not np.all(np.isfinite(v)):
        raise ParamRangeError("non-finite statistic")
    sign = (v < 0).astype(np.uint16)
    mag = np.abs(v)
    frac, exp = np.frexp(mag)  # mag = frac * 2**exp, frac in [0.5, 1)
    mant = np.rint((2.0 * frac - 1.0) * (1 << _MANT_BITS)).astype(np.int64)
    carry = mant == (1 << _MANT_BITS)
    mant[carry] = 0
    e = exp - 1 + carry + _EXP_BIAS
    if np.any((mag > 0) & (e > _EXP_MAX)):
        raise ParamRangeError(f"statistic magnitude {mag.max():.3g} exceeds the 16-bit range")
    tiny = (mag == 0) | (e < 1)
    e = np.where(tiny, 0, e)
    mant = np.where(tiny, 0, mant)
    return ((sign << 15) | (e.astype(np.uint16) << _MANT_BITS) | mant.astype(np.uint16)).astype(np.uint16)


def decode_param(words) -> np.ndarray:
    w = np.atleast_1d(np.asarray(words, dtype=np.uint16)).astype(np.int64)
    sign = np.where(w >> 15, -1.0, 1.0)
    e = (w >> _MANT_BITS) & _EXP_MAX
    mant = w & ((1 << _MANT_BITS) - 1)
    val = sign * (1.0 + mant / (1 << _MANT_BITS)) * np.exp2(e - _EXP_BIAS)
    return np.where(e == 0, 0.0, val)


def quantize_param(values) -> np.ndarray:
    """Value the decoder will see after transmission."""
    return decode_param(encode_param(values))


def params_to_blob(values) -> bytes:
    return encode_param(values).astype(">u2").tobytes()


def blob_to_params(blob: bytes) -> np.ndarray:
    if len(blob) % 2:
        raise ValueError("stats blob must hold whole 16-bit words")
    return decode_param(np.frombuffer(blob, dtype=">u2"))


@dataclass(frozen=True)
class BandStats:
    """Sample statistics of band ``i`` together with the reference band."""

    mu0: float
    var0: float
    mu: float
    var: float
    cov0: float
    n: int


def band_stats(x0: np.ndarray, xi: np.ndarray) -> BandStats:
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    xi = np.asarray(xi, dtype=np.float64).ravel()
    if x0.shape != xi.shape:
        raise ValueError("bands must have the same number of samples")
    mu0, mu = x0.mean(), xi.mean()
    d0, di = x0 - mu0, xi - mu
    return BandStats(mu0, float(d0 @ d0) / x0.size, mu, float(di @ di) / x0.size, float(d0 @ di) / x0.size, x0.size)


@dataclass(frozen=True)
class PredictionResult:
    values: np.ndarray  # x_hat (linear) or the pre-dither measurement prediction (successive)
    epsilon: float  # source-domain l2 error used for rate planning
    mode: str


# ---------------------------------------------------------------- linear mode

@dataclass(frozen=True)
class LinearSideInfo:
    """Transmitted parameters of one band: mean and covariance with the reference."""

    mu: float
    cov0: float

    n_params = 2

    def to_blob(self) -> bytes:
        return params_to_blob([self.mu, self.cov0])

    @classmethod
    def from_blob(cls, blob: bytes) -> "LinearSideInfo":
        p = blob_to_params(blob)
        if p.size != cls.n_params:
            raise ValueError(f"linear side information has {cls.n_params} parameters, got {p.size}")
        return cls(float(p[0]), float(p[1]))

    def quantized(self) -> "LinearSideInfo":
        return LinearSideInfo.from_blob(self.to_blob())


def lmmse_predict(x0: np.ndarray, mu: float, cov0: float) -> np.ndarray:
    """``x_hat = (cov0 / var0) (x0 - mu0) + mu`` with reference statistics taken from ``x0``.

    A constant reference falls back to the mean predictor.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    mu0 = x0.mean()
    d0 = x0 - mu0
    var0 = float(np.mean(d0 * d0))
    if var0 <= 0:
        return np.full_like(x0, mu)
    return (cov0 / var0) * d0 + mu


def linear_error_energy(stats: BandStats, mu_hat: float, cov_hat: float) -> float:
    """``||x_i - x_hat_i||^2`` of the predictor built from ``(mu_hat, cov_hat)``.

    With exact parameters this is ``n (var - cov0**2 / var0)``.
    """
    a = cov_hat / stats.var0 if stats.var0 > 0 else 0.0
    e2 = stats.var - 2 * a * stats.cov0 + a * a * stats.var0 + (stats.mu - mu_hat) ** 2
    return max(stats.n * e2, 0.0)


def linear_side_info(x0: np.ndarray, xi: np.ndarray) -> tuple[LinearSideInfo, float]:
    """Quantized parameters for band ``i`` and the exact l2 error of the resulting prediction."""
    st = band_stats(x0, xi)
    info = LinearSideInfo(st.mu, st.cov0).quantized()
    return info, math.sqrt(linear_error_energy(st, info.mu, info.cov0))


# ------------------------------------------------------------ successive mode

@dataclass(frozen=True)
class SuccessiveSideInfo:
    """Measurement-domain parameters of band ``k``.

    ``cross[j]`` is the covariance with band ``j`` (``j = 0`` the reference);
    ``var`` is only needed when later bands use band ``k`` as a regressor.
    """

    mu: float
    cross: tuple
    var: Optional[float] = None

    @property
    def n_params(self) -> int:
        return 1 + len(self.cross) + (self.var is not None)

    def to_blob(self) -> bytes:
        vals = [self.mu] + ([self.var] if self.var is not None else []) + list(self.cross)
        return params_to_blob(vals)

    @classmethod
    def from_blob(cls, blob: bytes, n_regressors: int, has_var: bool) -> "SuccessiveSideInfo":
        p = blob_to_params(blob)
        if p.size != 1 + n_regressors + has_var:
            raise ValueError("successive side information has the wrong parameter count")
        if has_var:
            return cls(float(p[0]), tuple(float(v) for v in p[2:]), float(p[1]))
        return cls(float(p[0]), tuple(float(v) for v in p[1:]))

    def quantized(self) -> "SuccessiveSideInfo":
        return SuccessiveSideInfo.from_blob(self.to_blob(), len(self.cross), self.var is not None)


def measurement_stats(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Means and covariance (divide by m) of stacked measurement vectors, one per row."""
    y = np.asarray(y, dtype=np.float64)
    mu = y.mean(axis=1)
    d = y - mu[:, None]
    return mu, (d @ d.T) / y.shape[1]


def _without_row(y: np.ndarray, row: Optional[int]) -> np.ndarray:
    return y if row is None else np.delete(y, row, axis=-1)


def successive_side_info(
    y_tilde: Sequence[np.ndarray],
    k: int,
    with_var: bool,
    dc_row: Optional[int] = None,
    previous: Sequence[SuccessiveSideInfo] = (),
    decoded: Sequence[np.ndarray] = (),
) -> SuccessiveSideInfo:
    """Quantized parameters for band ``k`` from the exact scaled measurements of bands ``0..k``.

    Without ``dc_row`` the parameters are the sample mean, variance and
    cross-covariances over all measurements.  With ``dc_row`` (the index of the
    constant Hadamard row of an SRHT) the second moments are taken about zero
    over the remaining rows, where a pixel-domain offset has no effect, and the
    mean slot carries the intercept of the DC measurement instead; that
    intercept is fitted against ``previous`` (already quantized side
    information of bands ``1..k-1``) and ``decoded`` (their dither-removed
    quantized measurements), exactly as the decoder will see them.
    """
    Y = np.stack([np.asarray(v, dtype=np.float64) for v in y_tilde[: k + 1]])
    if dc_row is None:
        mu, cov = measurement_stats(Y)
        info = SuccessiveSideInfo(float(mu[k]), tuple(float(c) for c in cov[k, :k]), float(cov[k, k]) if with_var else None)
        return info.quantized()
    Yn = _without_row(Y, dc_row)
    S = (Yn @ Yn.T) / Yn.shape[1]
    info = SuccessiveSideInfo(0.0, tuple(float(c) for c in S[k, :k]), float(S[k, k]) if with_var else None).quantized()
    infos = list(previous[: k - 1]) + [info]
    coef = _coefficients(Y[0], infos, k, dc_row)
    z_dc = np.array([Y[0, dc_row]] + [float(d[dc_row]) for d in decoded[: k - 1]])
    intercept = float(Y[k, dc_row] - coef @ z_dc)
    return SuccessiveSideInfo(intercept, info.cross, info.var).quantized()


def _regression(y0_tilde: np.ndarray, infos: Sequence[SuccessiveSideInfo], k: int, dc_row: Optional[int] = None):
    """Means, regressor covariance (dither corrected) and target cross-covariance for band ``k``."""
    y0 = np.asarray(y0_tilde, dtype=np.float64)
    mu = np.zeros(k)
    cz = np.empty((k, k))
    if dc_row is None:
        mu[0] = y0.mean()
        cz[0, 0] = float(np.mean((y0 - mu[0]) ** 2))
    else:
        r0 = _without_row(y0, dc_row)
        cz[0, 0] = float(r0 @ r0) / r0.size
    for j in range(1, k):
        info = infos[j - 1]
        if info.var is None:
            raise ValueError(f"band {j} is a regressor but its variance was not transmitted")
        if dc_row is None:
            mu[j] = info.mu
        cz[j, j] = info.var + QUANT_NOISE_VAR
        for l in range(j):
            cz[j, l] = cz[l, j] = info.cross[l]
    target = infos[k - 1]
    if len(target.cross) != k:
        raise ValueError(f"band {k} needs {k} cross-covariances, has {len(target.cross)}")
    c_kz = np.asarray(target.cross, dtype=np.float64)
    ridge = 1e-9 * max(np.trace(cz), 1e-300)
    return mu, cz + ridge * np.eye(k), c_kz


def _coefficients(y0_tilde, infos, k, dc_row=None) -> np.ndarray:
    _, cz, c_kz = _regression(y0_tilde, infos, k, dc_row)
    return np.linalg.solve(cz, c_kz)


def successive_predict(
    y0_tilde: np.ndarray,
    decoded: Sequence[np.ndarray],
    infos: Sequence[SuccessiveSideInfo],
    k: int,
    dc_row: Optional[int] = None,
) -> np.ndarray:
    """LMMSE prediction of the scaled measurements ``A x_k / delta_k`` of band ``k >= 1``.

    ``decoded[j-1]`` holds ``q_j - w_j`` for the already decoded bands ``j < k``;
    ``infos[j-1]`` the side information of band ``j``.  ``dc_row`` selects the
    DC-aware model of :func:`successive_side_info`.
    """
    if k < 1:
        raise ValueError("band index must be >= 1")
    if len(decoded) < k - 1:
        raise ValueError(f"band {k} needs the {k - 1} previously decoded bands")
    z = np.stack([np.asarray(y0_tilde, dtype=np.float64)] + [np.asarray(d, dtype=np.float64) for d in decoded[: k - 1]])
    mu, cz, c_kz = _regression(y0_tilde, infos, k, dc_row)
    coef = np.linalg.solve(cz, c_kz)
    if dc_row is None:
        return infos[k - 1].mu + coef @ (z - mu[:, None])
    pred = coef @ z
    pred[dc_row] += infos[k - 1].mu
    return pred


def successive_mse(
    y0_tilde: np.ndarray,
    infos: Sequence[SuccessiveSideInfo],
    k: int,
    var_k: float,
    dc_row: Optional[int] = None,
) -> float:
    """Model MSE ``var_k - C_kz^T C_z^{-1} C_kz`` per measurement."""
    _, cz, c_kz = _regression(y0_tilde, infos, k, dc_row)
    return max(var_k - float(c_kz @ np.linalg.solve(cz, c_kz)), 0.0)


def prediction_epsilon(eps_y: float, n: int, m: int, delta: float) -> float:
    """Source-domain error for rate planning from a measurement-domain error ``||y - y_hat||``."""
    return epsilon_x_from_epsilon_y(eps_y, n, m, delta)


def successive_epsilon(mse: float, n: int, m: int, delta: float) -> float:
    return prediction_epsilon(math.sqrt(m * mse), n, m, delta)

