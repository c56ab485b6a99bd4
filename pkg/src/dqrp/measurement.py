"""Random projections, subtractive-dither measurement, quantization and bitplanes.

The production operator is a subsampled Walsh-Hadamard transform of a randomly
permuted signal (no random sign flips), scaled by ``1/sqrt(n)`` so that its rows
are orthonormal.  A dense Gaussian operator is kept for validating the flip
probability formulas, which are derived for i.i.d. Gaussian rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

SRHT = "srht"
GAUSSIAN = "gaussian"

# Version of the seed -> operator/dither mapping, written into every block
# header.  Bump when the generator or the draw order changes.
PRNG_VERSION = 1


class QuantizerSaturation(ValueError):
    """A measurement fell outside the representable offset-binary range."""


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def fwht(x: np.ndarray) -> np.ndarray:
    """Unnormalized fast Walsh-Hadamard transform along the last axis (natural order)."""
    x = np.array(x, dtype=np.float64, copy=True)
    n = x.shape[-1]
    if not is_power_of_two(n):
        raise ValueError(f"WHT length must be a power of two, got {n}")
    lead = x.shape[:-1]
    h = 1
    while h < n:
        v = x.reshape(lead + (n // (2 * h), 2, h))
        a = v[..., 0, :].copy()
        b = v[..., 1, :]
        v[..., 0, :] += b
        v[..., 1, :] = a - b
        h *= 2
    return x


@dataclass(frozen=True, eq=False)
class MeasurementOperator:
    """Seed-reproducible measurement operator ``A`` (m x n)."""

    kind: str
    n: int
    m: int
    seed: int
    sigma: float
    permutation: Optional[np.ndarray] = field(default=None, repr=False)
    row_subset: Optional[np.ndarray] = field(default=None, repr=False)
    dense_matrix: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def spectral_norm(self) -> float:
        """Largest singular value of ``A``."""
        if self.kind == SRHT:
            return 1.0
        return float(np.linalg.norm(self.dense_matrix, 2))

    def matrix(self) -> np.ndarray:
        """Dense ``m x n`` matrix (for tests and small problems only)."""
        if self.kind == GAUSSIAN:
            return self.dense_matrix.copy()
        return apply(self, np.eye(self.n)).T


def build_operator(kind: str, n: int, m: int, sigma: float | None = None, seed: int = 0) -> MeasurementOperator:
    """Construct a measurement operator deterministically from ``seed``.

    For ``kind="srht"`` the ``sigma`` argument is ignored: the operator has
    entries ``+-1/sqrt(n)`` and its equivalent Gaussian deviation is ``1/sqrt(n)``.
    """
    kind = kind.lower()
    if not (1 <= m <= n):
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    rng = _rng(seed)
    if kind == SRHT:
        if not is_power_of_two(n):
            raise ValueError(f"SRHT requires n to be a power of two, got {n}")
        perm = rng.permutation(n)
        rows = np.sort(rng.choice(n, size=m, replace=False))
        perm.setflags(write=False)
        rows.setflags(write=False)
        return MeasurementOperator(SRHT, n, m, int(seed), 1.0 / np.sqrt(n), perm, rows)
    if kind == GAUSSIAN:
        sigma = 1.0 if sigma is None else float(sigma)
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        a = rng.normal(0.0, sigma, size=(m, n))
        a.setflags(write=False)
        return MeasurementOperator(GAUSSIAN, n, m, int(seed), sigma, dense_matrix=a)
    raise ValueError(f"unknown operator kind {kind!r}")


def apply(op: MeasurementOperator, x: np.ndarray) -> np.ndarray:
    """Compute ``A x``; a batch of signals may be stacked along leading axes."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != op.n:
        raise ValueError(f"signal length {x.shape[-1]} != operator n={op.n}")
    if op.kind == GAUSSIAN:
        return x @ op.dense_matrix.T
    z = fwht(x[..., op.permutation])
    return z[..., op.row_subset] / np.sqrt(op.n)


def apply_adjoint(op: MeasurementOperator, y: np.ndarray) -> np.ndarray:
    """Compute ``A^T y``."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != op.m:
        raise ValueError(f"measurement length {y.shape[-1]} != operator m={op.m}")
    if op.kind == GAUSSIAN:
        return y @ op.dense_matrix
    full = np.zeros(y.shape[:-1] + (op.n,))
    full[..., op.row_subset] = y
    z = fwht(full) / np.sqrt(op.n)
    out = np.empty_like(z)
    out[..., op.permutation] = z
    return out


@dataclass(frozen=True, eq=False)
class DitherVector:
    values: np.ndarray
    seed: int

    def __len__(self) -> int:
        return len(self.values)


def make_dither(m: int, seed: int) -> DitherVector:
    """Draw ``m`` i.i.d. dither values uniform on ``[-1, 0)``."""
    values = _rng(seed).random(m) - 1.0
    values.setflags(write=False)
    return DitherVector(values, int(seed))


def measure(op: MeasurementOperator, x: np.ndarray, dither: DitherVector | np.ndarray, delta: float) -> np.ndarray:
    """Scaled, dithered measurements ``y = A x / delta + w``."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    w = dither.values if isinstance(dither, DitherVector) else np.asarray(dither, dtype=np.float64)
    if w.shape[-1] != op.m:
        raise ValueError(f"dither length {w.shape[-1]} != m={op.m}")
    return apply(op, x) / delta + w


@dataclass(frozen=True)
class QuantizerConfig:
    """``B``-bit uniform quantizer with offset-binary output.

    ``offset`` defaults to ``2**(B-1)``, so integers in ``[-2**(B-1), 2**(B-1))``
    are representable.
    """

    B: int
    delta: float = 1.0
    offset: Optional[int] = None

    def __post_init__(self):
        if self.B < 1:
            raise ValueError("B must be >= 1")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.offset is None:
            object.__setattr__(self, "offset", 1 << (self.B - 1))
        if self.offset < 0:
            raise ValueError("offset must be nonnegative")

    @property
    def levels(self) -> int:
        return 1 << self.B


def check_range(q: np.ndarray, cfg: QuantizerConfig) -> None:
    u = np.asarray(q) + cfg.offset
    if u.size and (u.min() < 0 or u.max() >= cfg.levels):
        raise QuantizerSaturation(
            f"quantized values span [{int(u.min())}, {int(u.max())}] after offset, "
            f"outside [0, {cfg.levels}) for B={cfg.B}"
        )


def quantize(y: np.ndarray, cfg: QuantizerConfig) -> np.ndarray:
    """Round to the nearest integer, ``q = floor(y + 1/2)``; saturation raises."""
    q = np.floor(np.asarray(y, dtype=np.float64) + 0.5).astype(np.int64)
    check_range(q, cfg)
    return q


@dataclass(frozen=True, eq=False)
class BitplaneMatrix:
    """``planes[k-1]`` holds bit ``k`` (k=1 is the LSB) of ``q + offset``."""

    planes: np.ndarray

    @property
    def B(self) -> int:
        return self.planes.shape[0]

    @property
    def m(self) -> int:
        return self.planes.shape[1]

    def plane(self, k: int) -> np.ndarray:
        return self.planes[k - 1]


def to_bitplanes(q: np.ndarray, cfg: QuantizerConfig) -> BitplaneMatrix:
    check_range(q, cfg)
    u = np.asarray(q, dtype=np.int64) + cfg.offset
    shifts = np.arange(cfg.B, dtype=np.int64)[:, None]
    return BitplaneMatrix(((u[None, :] >> shifts) & 1).astype(np.uint8))


def from_bitplanes(planes: BitplaneMatrix | np.ndarray, cfg: QuantizerConfig) -> np.ndarray:
    p = planes.planes if isinstance(planes, BitplaneMatrix) else np.asarray(planes)
    if p.shape[0] != cfg.B:
        raise ValueError(f"expected {cfg.B} planes, got {p.shape[0]}")
    weights = (np.int64(1) << np.arange(cfg.B, dtype=np.int64))[:, None]
    return (p.astype(np.int64) * weights).sum(axis=0) - cfg.offset
