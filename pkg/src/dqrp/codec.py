"""Per-block bitplane encoder/decoder and the block wire format.

The encoder quantizes dithered measurements, splits them into bitplanes and
sends each plane raw, as an LDPC syndrome, or not at all, according to the plan
derived from the predicted error.  The decoder rebuilds the planes from the
least significant one upwards: each plane is first predicted from the side
information ``y_hat`` and the planes already recovered, then corrected with the
syndrome using per-bit error likelihoods as BP priors.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .ldpc import CodeDatabase, decode, syndrome
from .measurement import (
    GAUSSIAN,
    PRNG_VERSION,
    SRHT,
    DitherVector,
    MeasurementOperator,
    QuantizerConfig,
    measure,
    quantize,
    to_bitplanes,
)
from .theory import (
    DEFAULT_RATES,
    BitplanePlan,
    ErrorModel,
    PlaneDecision,
    PlaneMode,
    RatePolicy,
    bit_error_likelihood,
    plan_bitplanes,
)

MAGIC = b"DQRP"
FORMAT_VERSION = 1
PRIOR_FLOOR = 1e-6

_KIND_CODES = {SRHT: 0, GAUSSIAN: 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}
# magic, version, prng version, operator kind, n, m, B, offset, operator seed,
# dither seed, delta, sigma, epsilon, number of 16-bit stats words
_HEADER = struct.Struct("<4sBBBIIBIQQddfB")
HEADER_BITS = 8 * _HEADER.size


class FormatError(ValueError):
    """Malformed or unsupported block bitstream."""


@dataclass(frozen=True)
class BlockHeader:
    n: int
    m: int
    B: int
    offset: int
    delta: float
    op_kind: str
    op_seed: int
    dither_seed: int
    sigma: float
    epsilon: float
    version: int = FORMAT_VERSION
    prng_version: int = PRNG_VERSION

    @property
    def quantizer(self) -> QuantizerConfig:
        return QuantizerConfig(self.B, self.delta, self.offset)

    @property
    def model(self) -> ErrorModel:
        return ErrorModel(self.epsilon, self.sigma, self.delta)


@dataclass(frozen=True, eq=False)
class CompressedBlock:
    """One band of one image block: header, plan, stats words and plane payloads."""

    header: BlockHeader
    plan: BitplanePlan
    payloads: tuple  # per plane: uint8 bit array, or None for SKIP
    stats_blob: bytes = b""

    def __post_init__(self):
        if len(self.plan) != self.header.B or len(self.payloads) != self.header.B:
            raise ValueError("plan and payloads must have one entry per bitplane")
        if len(self.stats_blob) % 2:
            raise ValueError("stats blob must hold whole 16-bit words")
        for k, (entry, payload) in enumerate(zip(self.plan, self.payloads), start=1):
            want = _payload_length(entry, self.header.m)
            got = 0 if payload is None else len(payload)
            if got != want:
                raise ValueError(f"plane {k}: payload has {got} bits, plan requires {want}")

    def payload_bits(self) -> int:
        return sum(0 if p is None else len(p) for p in self.payloads)

    def total_bits(self) -> int:
        return rate_accounting(self)["bits_total"]

    def to_bytes(self, rates: Sequence[float] = DEFAULT_RATES) -> bytes:
        return serialize_block(self, rates)


def _payload_length(entry: PlaneDecision, m: int) -> int:
    if entry.mode == PlaneMode.SKIP:
        return 0
    if entry.mode == PlaneMode.RAW:
        return m
    return int(round(m * (1.0 - entry.rate)))


def _rate_index(rate: float, rates: Sequence[float]) -> int:
    for i, r in enumerate(rates):
        if abs(r - rate) < 1e-9:
            return i + 1
    raise ValueError(f"rate {rate} not in the rate list")


def rate_accounting(block: CompressedBlock, n_pixels: Optional[int] = None) -> dict:
    """Exact bit budget of the serialized block.

    ``bits_total`` always equals ``8 * len(serialize_block(block))``.
    """
    header = HEADER_BITS
    plan = 8 * block.header.B
    stats = 8 * len(block.stats_blob)
    payload = block.payload_bits()
    unpadded = header + plan + stats + payload
    padding = (-unpadded) % 8
    total = unpadded + padding
    n_pixels = block.header.n if n_pixels is None else n_pixels
    return {
        "header_bits": header,
        "plan_bits": plan,
        "stats_bits": stats,
        "payload_bits": payload,
        "padding_bits": padding,
        "bits_total": total,
        "bpp_total": total / n_pixels,
        "bpp_payload": payload / n_pixels,
    }


def serialize_block(block: CompressedBlock, rates: Sequence[float] = DEFAULT_RATES) -> bytes:
    h = block.header
    head = _HEADER.pack(
        MAGIC, h.version, h.prng_version, _KIND_CODES[h.op_kind], h.n, h.m, h.B, h.offset,
        h.op_seed, h.dither_seed, h.delta, h.sigma, h.epsilon, len(block.stats_blob) // 2,
    )
    plan = bytes(
        (int(e.mode) << 6) | (_rate_index(e.rate, rates) if e.mode == PlaneMode.SYNDROME else 0)
        for e in block.plan
    )
    bits = [p for p in block.payloads if p is not None and len(p)]
    payload = np.packbits(np.concatenate(bits)).tobytes() if bits else b""
    return head + plan + block.stats_blob + payload


def parse_block(data: bytes, rates: Sequence[float] = DEFAULT_RATES) -> tuple[CompressedBlock, int]:
    """Parse one block from the start of ``data``; returns the block and bytes consumed."""
    if len(data) < _HEADER.size:
        raise FormatError("truncated block header")
    (magic, version, prng_version, kind, n, m, B, offset, op_seed, dither_seed,
     delta, sigma, epsilon, n_stats) = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError("bad block magic")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported block format version {version}")
    if prng_version != PRNG_VERSION:
        raise FormatError(f"block uses PRNG version {prng_version}, this build has {PRNG_VERSION}")
    if kind not in _KIND_NAMES:
        raise FormatError(f"unknown operator kind code {kind}")
    header = BlockHeader(n, m, B, offset, delta, _KIND_NAMES[kind], op_seed, dither_seed,
                         sigma, float(epsilon), version, prng_version)
    pos = _HEADER.size
    if len(data) < pos + B + 2 * n_stats:
        raise FormatError("truncated plan or stats")
    entries = []
    for byte in data[pos:pos + B]:
        mode = PlaneMode(byte >> 6)
        idx = byte & 0x3F
        if mode == PlaneMode.SYNDROME:
            if not 1 <= idx <= len(rates):
                raise FormatError(f"rate index {idx} out of range")
            entries.append(PlaneDecision(mode, float("nan"), rates[idx - 1]))
        else:
            entries.append(PlaneDecision(mode, float("nan")))
    pos += B
    stats = bytes(data[pos:pos + 2 * n_stats])
    pos += 2 * n_stats
    lengths = [_payload_length(e, m) for e in entries]
    n_bytes = (sum(lengths) + 7) // 8
    if len(data) < pos + n_bytes:
        raise FormatError("truncated payload")
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8, count=n_bytes, offset=pos))
    payloads, start = [], 0
    for length in lengths:
        payloads.append(bits[start:start + length].copy() if length else None)
        start += length
    block = CompressedBlock(header, BitplanePlan(tuple(entries)), tuple(payloads), stats)
    return block, pos + n_bytes


def encode_block(
    x: np.ndarray,
    op: MeasurementOperator,
    dither: DitherVector,
    cfg: QuantizerConfig,
    model: ErrorModel,
    codes: CodeDatabase,
    policy: Optional[RatePolicy] = None,
    stats_blob: bytes = b"",
) -> CompressedBlock:
    """Measure, quantize and compress one block of one band."""
    if abs(model.delta - cfg.delta) > 1e-12 * cfg.delta:
        raise ValueError("model and quantizer disagree on delta")
    policy = policy or RatePolicy(tuple(codes.rates))
    q = quantize(measure(op, x, dither, cfg.delta), cfg)
    planes = to_bitplanes(q, cfg)
    plan = plan_bitplanes(model, cfg.B, policy)
    payloads = []
    for k, entry in enumerate(plan, start=1):
        if entry.mode == PlaneMode.SKIP:
            payloads.append(None)
        elif entry.mode == PlaneMode.RAW:
            payloads.append(planes.plane(k).copy())
        else:
            payloads.append(syndrome(codes.get(entry.rate), planes.plane(k)))
    header = BlockHeader(
        n=op.n, m=op.m, B=cfg.B, offset=cfg.offset, delta=cfg.delta, op_kind=op.kind,
        op_seed=op.seed, dither_seed=dither.seed, sigma=model.sigma,
        epsilon=float(np.float32(model.epsilon)),
    )
    return CompressedBlock(header, plan, tuple(payloads), bytes(stats_blob))


@dataclass(frozen=True, eq=False)
class PlanePrediction:
    bits: np.ndarray  # predicted bit k per measurement
    levels: np.ndarray  # nearest consistent level in the offset domain
    c: np.ndarray  # normalized distance 2|u - level|, in [0, 2^(k-1)]


@dataclass
class DecoderState:
    """Recovered low-order planes plus the side-information prediction ``y_hat``."""

    y_hat: np.ndarray
    cfg: QuantizerConfig
    planes: list = field(default_factory=list)

    def __post_init__(self):
        self.y_hat = np.asarray(self.y_hat, dtype=np.float64)

    @property
    def m(self) -> int:
        return len(self.y_hat)

    @property
    def decoded(self) -> int:
        return len(self.planes)

    def low_bits(self) -> np.ndarray:
        """Integer value of the planes recovered so far."""
        r = np.zeros(self.m, dtype=np.int64)
        for j, p in enumerate(self.planes):
            r |= p.astype(np.int64) << j
        return r

    def push(self, plane: np.ndarray) -> None:
        if self.decoded >= self.cfg.B:
            raise ValueError("all bitplanes already decoded")
        plane = np.asarray(plane, dtype=np.uint8)
        if plane.shape != (self.m,):
            raise ValueError("plane length mismatch")
        self.planes.append(plane)

    def values(self) -> np.ndarray:
        """Quantized measurements ``q`` once every plane is present."""
        if self.decoded != self.cfg.B:
            raise ValueError(f"only {self.decoded} of {self.cfg.B} planes decoded")
        return self.low_bits() - self.cfg.offset


def predict_plane(state: DecoderState, k: int) -> PlanePrediction:
    """Predict plane ``k`` from ``y_hat`` and the ``k-1`` recovered planes.

    Among the levels whose low bits match the recovered planes, the one nearest
    ``y_hat`` is chosen (ties go to the smaller level).
    """
    if k != state.decoded + 1:
        raise ValueError(f"plane {k} requires exactly {k - 1} recovered planes, have {state.decoded}")
    half = 1 << (k - 1)
    u = state.y_hat + state.cfg.offset
    r = state.low_bits()
    v = r + half * np.ceil((u - r) / half - 0.5).astype(np.int64)
    v = np.clip(v, r, r + state.cfg.levels - half)
    c = np.minimum(2.0 * np.abs(u - v), float(half))
    bits = ((v >> (k - 1)) & 1).astype(np.uint8)
    return PlanePrediction(bits, v, c)


def plane_priors(pred: PlanePrediction, k: int, model: ErrorModel) -> np.ndarray:
    return np.clip(bit_error_likelihood(k, pred.c, model), PRIOR_FLOOR, 0.5)


@dataclass(frozen=True, eq=False)
class BlockDecodeResult:
    q: np.ndarray
    converged: tuple  # per plane: True/False for SYNDROME planes, None otherwise
    iterations: tuple

    @property
    def all_converged(self) -> bool:
        return all(c is not False for c in self.converged)


def decode_block(
    block: CompressedBlock,
    y_hat: np.ndarray,
    codes: Optional[CodeDatabase],
    model: Optional[ErrorModel] = None,
    max_iters: int = 100,
) -> BlockDecodeResult:
    """Recover the quantized measurements from a block and the prediction ``y_hat``."""
    h = block.header
    model = model or h.model
    state = DecoderState(y_hat, h.quantizer)
    if state.m != h.m:
        raise ValueError(f"prediction has {state.m} entries, block has m={h.m}")
    converged, iterations = [], []
    for k, (entry, payload) in enumerate(zip(block.plan, block.payloads), start=1):
        if entry.mode == PlaneMode.RAW:
            state.push(payload)
            converged.append(None)
            iterations.append(0)
            continue
        pred = predict_plane(state, k)
        if entry.mode == PlaneMode.SKIP:
            state.push(pred.bits)
            converged.append(None)
            iterations.append(0)
            continue
        if codes is None:
            raise ValueError("a code database is required for syndrome-coded planes")
        res = decode(codes.get(entry.rate), pred.bits, payload, plane_priors(pred, k, model), max_iters)
        state.push(res.bits)
        converged.append(res.converged)
        iterations.append(res.iterations)
    return BlockDecodeResult(state.values(), tuple(converged), tuple(iterations))
