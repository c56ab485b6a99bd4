"""Closed-form bitplane error model and syndrome-rate planning.

Everything here is a function of the normalized prediction error
``s = epsilon * sigma / delta``: the predicted-minus-true measurement difference
is modelled as ``N(0, s**2)`` and the quantization offset as uniform on
``[-1/2, 1/2)``.

Two equivalent evaluations are used for every probability: the Fourier series
(fast when ``s`` is large relative to the bitplane period) and a direct sum of
Gaussian masses over the periodic set of intervals (fast and exact when ``s`` is
small, including ``s == 0``).  The cheaper one is chosen per call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterator

import numpy as np
from scipy.special import expit, log_ndtr, ndtr

DEFAULT_TOL = 1e-10
MIN_FOURIER_TERMS = 64
_MAX_FOURIER_TERMS = 4096


def binary_entropy(p):
    """Binary entropy in bits; accepts scalars or arrays."""
    arr = np.asarray(p, dtype=np.float64)
    if np.any((arr < 0) | (arr > 1)) or np.any(np.isnan(arr)):
        raise ValueError("p must lie in [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -arr * np.log2(arr) - (1 - arr) * np.log2(1 - arr)
    h = np.where((arr == 0) | (arr == 1), 0.0, h)
    return float(h) if h.ndim == 0 else h


def bsc_capacity(p):
    return 1.0 - binary_entropy(p)


def compression_ratio(rate: float) -> float:
    """Bits per bitplane over bits per syndrome, ``1 / (1 - R)``."""
    if not 0 <= rate < 1:
        raise ValueError("rate must lie in [0, 1)")
    return 1.0 / (1.0 - rate)


@dataclass(frozen=True)
class ErrorModel:
    """Prediction error ``epsilon = ||x - x_hat||_2`` with operator deviation and scale."""

    epsilon: float
    sigma: float
    delta: float

    def __post_init__(self):
        if self.epsilon < 0 or not np.isfinite(self.epsilon):
            raise ValueError("epsilon must be finite and >= 0")
        if self.sigma <= 0 or self.delta <= 0:
            raise ValueError("sigma and delta must be positive")

    @property
    def normalized(self) -> float:
        return self.epsilon * self.sigma / self.delta

    @classmethod
    def from_normalized(cls, s: float) -> "ErrorModel":
        return cls(float(s), 1.0, 1.0)


def _as_s(model) -> float:
    return model.normalized if isinstance(model, ErrorModel) else float(model)


def _fourier_terms(s: float, period_half: float, tol: float) -> int:
    """Number of Fourier terms after which the Gaussian envelope tail is below ``tol``."""
    if s == 0:
        return -1
    a = 0.5 * (math.pi * s / period_half) ** 2
    n = int(math.ceil(math.sqrt(max(math.log(1.0 / tol), 1.0) / a))) + 1
    # tail of sum_{l>n} exp(-a l^2) is geometric-dominated; grow until it is below tol
    while math.exp(-a * (n + 1) ** 2) / max(-math.expm1(-a * (2 * n + 3)), 1e-300) > tol:
        n += 1
    return max(n, MIN_FOURIER_TERMS)


def _spatial_cells(s: float, period: float, centers_shift: np.ndarray, half_width: float, tol: float) -> np.ndarray:
    """Integer offsets ``j`` so that intervals ``shift + j*period`` capture all but ``tol`` mass."""
    z = math.sqrt(2.0 * math.log(1.0 / tol)) + 1.0
    reach = s * z + half_width + float(np.max(np.abs(centers_shift), initial=0.0))
    j = int(math.ceil(reach / period)) + 1
    return np.arange(-j, j + 1)


def _smoothed_cdf(c: np.ndarray, s: float) -> np.ndarray:
    """``P(D + t <= c)`` for ``D ~ N(0, s^2)``, ``t ~ U[-1/2, 1/2]``."""
    c = np.asarray(c, dtype=np.float64)
    if s == 0:
        return np.clip(c + 0.5, 0.0, 1.0)

    def psi(z):
        return z * ndtr(z) + np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)

    return s * (psi((c + 0.5) / s) - psi((c - 0.5) / s))


def _bitflip_fourier(k: int, s: float, tol: float) -> float:
    half = 2.0 ** (k - 1)
    n = _fourier_terms(s, half, tol)
    l = np.arange(1, n + 1, 2, dtype=np.float64)  # sinc(l/2) vanishes for even l
    g = np.exp(-0.5 * (math.pi * s * l / half) ** 2)
    return 0.5 - float(np.sum(g * np.sinc(l / 2.0 ** k) * np.sinc(l / 2.0)))


def _bitflip_spatial(k: int, s: float, tol: float) -> float:
    period = 2.0 ** k
    half_width = 2.0 ** (k - 2)
    j = _spatial_cells(s, period, np.zeros(1), half_width + 0.5, tol)
    centers = j * period
    correct = _smoothed_cdf(centers + half_width, s) - _smoothed_cdf(centers - half_width, s)
    return 1.0 - float(np.sum(correct))


def bitflip_probability(k: int, model, tol: float = DEFAULT_TOL) -> float:
    """Probability that bit ``k`` predicted from ``y_hat`` and the true lower bits is wrong.

    ``model`` is an :class:`ErrorModel` or directly the normalized error ``s``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    s = _as_s(model)
    fourier_n = _fourier_terms(s, 2.0 ** (k - 1), tol) if s > 0 else None
    spatial_n = 2 * (s * 9.0 / 2.0 ** k + 2)
    if fourier_n is not None and (fourier_n <= _MAX_FOURIER_TERMS and fourier_n / 2 <= 8 * spatial_n):
        p = _bitflip_fourier(k, s, tol)
    else:
        p = _bitflip_spatial(k, s, tol)
    return min(max(p, 0.0), 0.5)


def _a1_fourier(k: int, c: np.ndarray, s: float, tol: float) -> np.ndarray:
    half = 2.0 ** (k - 1)
    n = _fourier_terms(s, half, tol)
    l = np.arange(1, n + 1, dtype=np.float64)
    g = np.exp(-0.5 * (math.pi * s * l / half) ** 2) * np.sinc(l / 2.0 ** k)
    series = np.cos(np.pi * np.outer(c, l) / half) @ g
    return (1.0 + 2.0 * series) / 2.0 ** k


def _log_interval_mass(lo: np.ndarray, hi: np.ndarray, s: float) -> np.ndarray:
    """``log P(lo <= D <= hi)`` for ``D ~ N(0, s^2)``, stable far into either tail."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if s == 0:
        with np.errstate(divide="ignore"):
            return np.log(((lo <= 0) & (hi >= 0)).astype(np.float64))
    a, b = lo / s, hi / s
    # reflect so that the interval lies in the left tail or straddles zero
    flip = a > 0
    a2 = np.where(flip, -b, a)
    b2 = np.where(flip, -a, b)
    la, lb = log_ndtr(a2), log_ndtr(b2)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = lb + np.log1p(-np.exp(la - lb))
    return out


def _log_a1_spatial(k: int, c: np.ndarray, s: float, tol: float) -> np.ndarray:
    period = 2.0 ** k
    j = _spatial_cells(s, period, c, 0.5, tol)
    centers = c[:, None] + j[None, :] * period
    logs = _log_interval_mass(centers - 0.5, centers + 0.5, s)
    return np.logaddexp.reduce(logs, axis=1)


def _use_fourier(k: int, s: float, c: np.ndarray, tol: float) -> bool:
    if s == 0:
        return False
    n = _fourier_terms(s, 2.0 ** (k - 1), tol)
    spatial = 2 * ((s * 9.0 + float(np.max(np.abs(c), initial=0.0))) / 2.0 ** k + 2)
    return n <= _MAX_FOURIER_TERMS and n <= 8 * spatial


def _check_c(k: int, c: np.ndarray) -> None:
    if k < 1:
        raise ValueError("k must be >= 1")
    if np.any(c < 0) or np.any(c > 2.0 ** (k - 1)) or np.any(np.isnan(c)):
        raise ValueError(f"c must lie in [0, 2^(k-1)] = [0, {2 ** (k - 1)}]")


def a1(k: int, c, model, tol: float = DEFAULT_TOL):
    """Mass of the prediction difference over the unit cells centred at ``c + l * 2^k``.

    ``c`` is the physical distance from the predicted measurement to the centre
    of a candidate quantization cell.  ``a1(k, 2**(k-1) - c)`` is the mass over
    the cells carrying the opposite value of bit ``k``.
    """
    c_arr = np.atleast_1d(np.asarray(c, dtype=np.float64))
    _check_c(k, c_arr)
    s = _as_s(model)
    if _use_fourier(k, s, c_arr, tol):
        out = np.clip(_a1_fourier(k, c_arr, s, tol), 0.0, 1.0)
    else:
        out = np.exp(_log_a1_spatial(k, c_arr, s, tol))
    return float(out[0]) if np.ndim(c) == 0 else out


def a2(k: int, c, model, tol: float = DEFAULT_TOL):
    return a1(k, 2.0 ** (k - 1) - np.asarray(c, dtype=np.float64), model, tol)


def bit_error_likelihood(k: int, c, model, tol: float = DEFAULT_TOL):
    """Per-bit probability that the predicted bit ``k`` is wrong.

    ``c`` is the normalized distance ``2 * |y_hat - v|`` where ``v`` is the
    nearest quantization level consistent with the decoded lower bits, so that
    ``c`` spans ``[0, 2^(k-1)]`` and ``c == 2^(k-1)`` is the decision boundary
    between two consistent levels (likelihood exactly 1/2).
    """
    c_arr = np.atleast_1d(np.asarray(c, dtype=np.float64))
    _check_c(k, c_arr)
    half = 2.0 ** (k - 1)
    d = 0.5 * c_arr
    s = _as_s(model)
    if s == 0:
        out = np.where(c_arr < half, 0.0, 0.5)
    elif _use_fourier(k, s, np.concatenate([d, half - d]), tol):
        p1 = np.clip(_a1_fourier(k, d, s, tol), 0.0, None)
        p2 = np.clip(_a1_fourier(k, half - d, s, tol), 0.0, None)
        total = p1 + p2
        out = np.where(total > 0, p2 / np.where(total > 0, total, 1.0), 0.5)
    else:
        out = expit(_log_a1_spatial(k, half - d, s, tol) - _log_a1_spatial(k, d, s, tol))
    out = np.where(c_arr == half, 0.5, np.clip(out, 0.0, 0.5))
    return float(out[0]) if np.ndim(c) == 0 else out


def epsilon_x_from_epsilon_y(eps_y: float, n: int, m: int, delta: float) -> float:
    """Source-domain error from measurement-domain error for a near-isometric operator."""
    return float(delta) * math.sqrt(n / m) * float(eps_y)


class PlaneMode(IntEnum):
    SKIP = 0
    RAW = 1
    SYNDROME = 2


DEFAULT_RATES = tuple(round(0.05 * i, 2) for i in range(1, 20))


@dataclass(frozen=True)
class RatePolicy:
    available_rates: tuple = DEFAULT_RATES
    backoff: float = 0.05
    # planes below this flip probability are not sent; at m = 4000 the expected
    # number of uncorrected bits per skipped plane stays below 0.04
    cutoff_skip: float = 1e-5
    # smallest usable rate; BP at m = 4000 fails on the planes that back off to 0.05-0.15
    cutoff_raw: float = 0.2

    def __post_init__(self):
        rates = tuple(float(r) for r in self.available_rates)
        object.__setattr__(self, "available_rates", rates)
        if not rates or any(not 0 < r < 1 for r in rates):
            raise ValueError("rates must lie in (0, 1)")
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ValueError("rates must be strictly increasing")
        if len(rates) > 63:
            raise ValueError("at most 63 rates fit the 6-bit rate index")
        if self.backoff < 0:
            raise ValueError("backoff must be >= 0")

    def rate_index(self, rate: float) -> int:
        """1-based index of ``rate``; 0 is reserved for 'no code'."""
        for i, r in enumerate(self.available_rates):
            if abs(r - rate) < 1e-9:
                return i + 1
        raise KeyError(rate)

    def rate_at(self, index: int) -> float:
        return self.available_rates[index - 1]

    def select_rate(self, p: float) -> float | None:
        """Back-off rate for crossover ``p``; None when no database rate is usable."""
        capacity = bsc_capacity(p)
        under = [r for r in self.available_rates if r <= capacity + 1e-12]
        if not under:
            return None
        target = max(under) - self.backoff
        usable = [r for r in self.available_rates if r <= target + 1e-9]
        if not usable or max(usable) < self.cutoff_raw - 1e-12:
            return None
        return max(usable)


@dataclass(frozen=True)
class PlaneDecision:
    mode: PlaneMode
    p: float
    rate: float | None = None


@dataclass(frozen=True)
class BitplanePlan:
    """Transmission decision for planes ``k = 1..B`` (``entries[k-1]``)."""

    entries: tuple = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[PlaneDecision]:
        return iter(self.entries)

    def __getitem__(self, i) -> PlaneDecision:
        return self.entries[i]

    def entry(self, k: int) -> PlaneDecision:
        return self.entries[k - 1]

    @property
    def modes(self) -> list[PlaneMode]:
        return [e.mode for e in self.entries]

    def count(self, mode: PlaneMode) -> int:
        return sum(e.mode == mode for e in self.entries)


def plan_bitplanes(model, B: int, policy: RatePolicy | None = None, tol: float = DEFAULT_TOL) -> BitplanePlan:
    """Decide SKIP / RAW / SYNDROME (with rate) for each bitplane."""
    if B < 1:
        raise ValueError("B must be >= 1")
    policy = policy or RatePolicy()
    entries = []
    skipping = False
    for k in range(1, B + 1):
        p = bitflip_probability(k, model, tol)
        if skipping or p < policy.cutoff_skip:
            skipping = True
            entries.append(PlaneDecision(PlaneMode.SKIP, p))
            continue
        rate = policy.select_rate(p)
        if rate is None:
            entries.append(PlaneDecision(PlaneMode.RAW, p))
        else:
            entries.append(PlaneDecision(PlaneMode.SYNDROME, p, rate))
    return BitplanePlan(tuple(entries))


def planes_to_code(model, B: int, cutoff: float, tol: float = DEFAULT_TOL) -> int:
    """Number of planes whose flip probability is at least ``cutoff``."""
    return sum(bitflip_probability(k, model, tol) >= cutoff for k in range(1, B + 1))

