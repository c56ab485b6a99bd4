"""Multispectral image layer: block tiling, per-band orchestration and metrics.

Band 0 is the reference and is available uncompressed at the decoder; bands
``1..K-1`` are coded.  Every 64x64 block is processed independently with its
own operator and dithers, all derived from the root seeds and the block
position, so a block record depends only on the pixels of that block.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .codec import CompressedBlock, decode_block, encode_block, parse_block, rate_accounting, serialize_block
from .ldpc import CodeDatabase
from .measurement import (
    SRHT,
    MeasurementOperator,
    QuantizerConfig,
    QuantizerSaturation,
    apply,
    build_operator,
    make_dither,
    measure,
    quantize,
)
from .prediction import (
    LINEAR,
    SUCCESSIVE,
    LinearSideInfo,
    SuccessiveSideInfo,
    linear_side_info,
    lmmse_predict,
    prediction_epsilon,
    successive_predict,
    successive_side_info,
)
from .reconstruction import DEFAULT_TAU, ReconConfig, compute_weights, psnr, reconstruct
from .theory import ErrorModel, PlaneMode, RatePolicy

CONTAINER_MAGIC = b"DQRC"
CONTAINER_VERSION = 1
_PREFIX = struct.Struct("<4sBI")  # magic, version, manifest length


class ContainerError(ValueError):
    """Malformed or inconsistent container."""


# ------------------------------------------------------------------- images

@dataclass(frozen=True, eq=False)
class ImageSet:
    """Co-registered bands; ``bands[0]`` is the reference."""

    bands: tuple
    bit_depth: int = 16

    def __post_init__(self):
        bands = tuple(np.asarray(b, dtype=np.float64) for b in self.bands)
        if len(bands) < 2:
            raise ValueError("need a reference band and at least one band to code")
        if any(b.ndim != 2 for b in bands):
            raise ValueError("bands must be 2D")
        if any(b.shape != bands[0].shape for b in bands):
            raise ValueError("all bands must have the same shape")
        object.__setattr__(self, "bands", bands)

    @property
    def height(self) -> int:
        return self.bands[0].shape[0]

    @property
    def width(self) -> int:
        return self.bands[0].shape[1]

    @property
    def n_bands(self) -> int:
        return len(self.bands)

    @property
    def reference(self) -> np.ndarray:
        return self.bands[0]


def pad_to_blocks(X: np.ndarray, block: int) -> np.ndarray:
    """Edge-replicate ``X`` so both sides are multiples of ``block``."""
    h, w = X.shape
    return np.pad(X, ((0, (-h) % block), (0, (-w) % block)), mode="edge")


def block_view(X: np.ndarray, block: int, r: int, c: int) -> np.ndarray:
    return X[r * block:(r + 1) * block, c * block:(c + 1) * block]


# ------------------------------------------------------------------- params

@dataclass(frozen=True)
class CodecParams:
    block: int = 64
    m: int = 4000
    B: int = 11
    deltas: tuple = (1.0,)  # one per coded band, or a single shared value
    mode: str = LINEAR
    policy: RatePolicy = RatePolicy()
    op_kind: str = SRHT
    seed_op: int = 0
    seed_dither: int = 1
    epsilon_override: Optional[float] = None  # source-domain error used for every plan

    def __post_init__(self):
        deltas = tuple(float(d) for d in np.atleast_1d(self.deltas))
        object.__setattr__(self, "deltas", deltas)
        if not deltas or any(not d > 0 for d in deltas):
            raise ValueError("every delta must be positive")
        if self.mode not in (LINEAR, SUCCESSIVE):
            raise ValueError(f"mode must be {LINEAR!r} or {SUCCESSIVE!r}")
        if not 1 <= self.m <= self.block * self.block:
            raise ValueError("need 1 <= m <= block**2")
        if not 1 <= self.B <= 31:
            raise ValueError("B must be in 1..31")
        if self.epsilon_override is not None and self.epsilon_override < 0:
            raise ValueError("epsilon override must be >= 0")

    @property
    def n(self) -> int:
        return self.block * self.block

    def delta(self, band: int) -> float:
        """Quantizer step of coded band ``band >= 1``."""
        return self.deltas[0] if len(self.deltas) == 1 else self.deltas[band - 1]

    def with_delta(self, band: int, value: float, n_coded: int) -> "CodecParams":
        d = [self.delta(k) for k in range(1, n_coded + 1)]
        d[band - 1] = float(value)
        return replace(self, deltas=tuple(d))


def _derive_seed(root: int, *path: int) -> int:
    return int(np.random.SeedSequence([int(root), *map(int, path)]).generate_state(1, np.uint64)[0])


def block_operator(params: CodecParams, r: int, c: int) -> MeasurementOperator:
    """Operator of block ``(r, c)``.

    For SRHT the seed is advanced until the constant (DC) Hadamard row is
    sampled; otherwise the block mean would lie in the null space of ``A``.
    """
    for attempt in range(1000):
        op = build_operator(params.op_kind, params.n, params.m, seed=_derive_seed(params.seed_op, r, c, attempt))
        if op.kind != SRHT or op.m == op.n or np.any(op.row_subset == 0):
            return op
    raise RuntimeError("could not draw an operator that samples the DC row")


def dc_row(op: MeasurementOperator) -> Optional[int]:
    """Position of the constant Hadamard row among the SRHT measurements, if sampled."""
    if op.kind != SRHT:
        return None
    hit = np.flatnonzero(op.row_subset == 0)
    return int(hit[0]) if hit.size else None


def block_dither(params: CodecParams, r: int, c: int, band: int):
    return make_dither(params.m, _derive_seed(params.seed_dither, r, c, band))


# ---------------------------------------------------------------- container

@dataclass
class Container:
    manifest: dict
    records: dict = field(default_factory=dict)  # (r, c, band) -> CompressedBlock

    @property
    def rates(self) -> tuple:
        return tuple(self.manifest["rates"])

    def keys(self) -> list:
        return sorted(self.records)

    def _manifest_bytes(self) -> bytes:
        man = dict(self.manifest)
        man["records"] = [[r, c, k, len(serialize_block(self.records[(r, c, k)], self.rates))] for r, c, k in self.keys()]
        return json.dumps(man, sort_keys=True, separators=(",", ":")).encode()

    def to_bytes(self) -> bytes:
        man = self._manifest_bytes()
        body = b"".join(serialize_block(self.records[key], self.rates) for key in self.keys())
        return _PREFIX.pack(CONTAINER_MAGIC, CONTAINER_VERSION, len(man)) + man + body

    def framing_bits(self) -> int:
        """Bits outside the block records: container prefix and manifest."""
        return 8 * (_PREFIX.size + len(self._manifest_bytes()))

    @classmethod
    def from_bytes(cls, data: bytes) -> "Container":
        if len(data) < _PREFIX.size:
            raise ContainerError("truncated container")
        magic, version, man_len = _PREFIX.unpack_from(data, 0)
        if magic != CONTAINER_MAGIC:
            raise ContainerError("bad container magic")
        if version != CONTAINER_VERSION:
            raise ContainerError(f"unsupported container version {version}")
        pos = _PREFIX.size
        try:
            manifest = json.loads(data[pos:pos + man_len].decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ContainerError(f"corrupt manifest: {exc}") from None
        pos += man_len
        rates = tuple(manifest["rates"])
        records = {}
        for r, c, k, length in manifest.pop("records"):
            block, used = parse_block(data[pos:pos + length], rates)
            if used != length:
                raise ContainerError(f"record ({r}, {c}, {k}) length mismatch")
            records[(r, c, k)] = block
            pos += length
        if pos != len(data):
            raise ContainerError("trailing bytes after the last record")
        return cls(manifest, records)


def save_container(container: Container, path) -> None:
    Path(path).write_bytes(container.to_bytes())


def read_container(path) -> Container:
    return Container.from_bytes(Path(path).read_bytes())


# ------------------------------------------------------------------ encoder

def _params_from_manifest(man: dict) -> CodecParams:
    pol = man["policy"]
    return CodecParams(
        block=man["block"], m=man["m"], B=man["B"], deltas=tuple(man["deltas"]), mode=man["mode"],
        policy=RatePolicy(tuple(man["rates"]), pol["backoff"], pol["cutoff_skip"], pol["cutoff_raw"]),
        op_kind=man["op_kind"], seed_op=man["seed_op"], seed_dither=man["seed_dither"],
        epsilon_override=man.get("epsilon_override"),
    )


def _manifest(images: ImageSet, params: CodecParams) -> dict:
    K = images.n_bands
    return {
        "format": "dqrp-container",
        "height": images.height,
        "width": images.width,
        "bit_depth": images.bit_depth,
        "n_bands": K,
        "block": params.block,
        "m": params.m,
        "B": params.B,
        "deltas": [params.delta(k) for k in range(1, K)],
        "mode": params.mode,
        "op_kind": params.op_kind,
        "seed_op": params.seed_op,
        "seed_dither": params.seed_dither,
        "rates": list(params.policy.available_rates),
        "policy": {
            "backoff": params.policy.backoff,
            "cutoff_skip": params.policy.cutoff_skip,
            "cutoff_raw": params.policy.cutoff_raw,
        },
        "epsilon_override": params.epsilon_override,
    }


def encode_blocks(
    blocks: Sequence[np.ndarray],
    op: MeasurementOperator,
    dithers: Sequence,
    params: CodecParams,
    codes: CodeDatabase,
) -> list:
    """Encode one block position: ``blocks[0]`` is the reference, the rest are coded.

    Returns one :class:`CompressedBlock` per coded band.  In successive mode
    the prediction of band ``k`` uses the true quantized measurements of the
    earlier bands, which is what the decoder holds after correct decoding.
    """
    x0 = np.ravel(blocks[0])
    K = len(blocks)
    out = []
    if params.mode == LINEAR:
        for k in range(1, K):
            xk = np.ravel(blocks[k])
            info, eps = linear_side_info(x0, xk)
            out.append(_encode_one(xk, op, dithers[k - 1], params, k, eps, info.to_blob(), codes))
        return out

    y_tilde = [apply(op, x0)] + [apply(op, np.ravel(blocks[k])) / params.delta(k) for k in range(1, K)]
    dc = dc_row(op)
    infos, decoded = [], []
    for k in range(1, K):
        infos.append(successive_side_info(y_tilde, k, k < K - 1, dc, infos, decoded))
        y_hat = successive_predict(y_tilde[0], decoded, infos, k, dc)
        eps_y = float(np.linalg.norm(y_hat - y_tilde[k]))
        eps = prediction_epsilon(eps_y, op.n, op.m, params.delta(k))
        xk = np.ravel(blocks[k])
        blk = _encode_one(xk, op, dithers[k - 1], params, k, eps, infos[-1].to_blob(), codes)
        out.append(blk)
        w = dithers[k - 1].values
        decoded.append(quantize(measure(op, xk, w, params.delta(k)), blk.header.quantizer) - w)
    return out


def _encode_one(x, op, dither, params, band, eps, blob, codes):
    delta = params.delta(band)
    if params.epsilon_override is not None:
        eps = params.epsilon_override
    cfg = QuantizerConfig(params.B, delta)
    model = ErrorModel(eps, op.sigma, delta)
    return encode_block(x, op, dither, cfg, model, codes, params.policy, blob)


def encode_image(images: ImageSet, params: CodecParams, codes: CodeDatabase) -> Container:
    """Compress bands ``1..K-1`` of ``images`` against the reference band."""
    if codes.m != params.m:
        raise ValueError(f"code database has m={codes.m}, params need m={params.m}")
    K = images.n_bands
    if len(params.deltas) not in (1, K - 1):
        raise ValueError(f"need 1 or {K - 1} deltas, got {len(params.deltas)}")
    padded = [pad_to_blocks(b, params.block) for b in images.bands]
    rows, cols = padded[0].shape[0] // params.block, padded[0].shape[1] // params.block
    container = Container(_manifest(images, params))
    for r in range(rows):
        for c in range(cols):
            op = block_operator(params, r, c)
            dithers = [block_dither(params, r, c, k) for k in range(1, K)]
            blocks = [block_view(P, params.block, r, c) for P in padded]
            try:
                coded = encode_blocks(blocks, op, dithers, params, codes)
            except QuantizerSaturation as exc:
                raise QuantizerSaturation(f"block ({r}, {c}): {exc}") from None
            for k, blk in enumerate(coded, start=1):
                container.records[(r, c, k)] = blk
    return container


# ------------------------------------------------------------------ decoder

@dataclass
class DecodeReport:
    bands: list  # reconstructed coded bands (index 0 is band 1), unpadded
    predictions: list  # prediction-only images, unpadded
    q_tilde: dict  # (r, c, band) -> recovered quantized measurements
    nonconverged_planes: int
    psnr: Optional[list] = None
    prediction_psnr: Optional[list] = None
    ber: Optional[list] = None  # bit error rate of q_tilde per band

    @property
    def all_converged(self) -> bool:
        return self.nonconverged_planes == 0


def _affine_fit(x0: np.ndarray, y_scaled: np.ndarray, op: MeasurementOperator) -> np.ndarray:
    """Pixel-domain ``g x0 + c`` whose measurements best match ``y_scaled = A x``."""
    basis = np.stack([apply(op, x0), apply(op, np.ones_like(x0))], axis=1)
    (g, c), *_ = np.linalg.lstsq(basis, y_scaled, rcond=None)
    return g * x0 + c


def decode_blocks(
    x0_block: np.ndarray,
    records: Sequence[CompressedBlock],
    op: MeasurementOperator,
    dithers: Sequence,
    mode: str,
    codes: Optional[CodeDatabase],
    recon: Optional[ReconConfig] = ReconConfig(),
    tau: float = DEFAULT_TAU,
):
    """Decode every coded band of one block position in band order.

    Returns ``(reconstructions, predictions, q_tilde list, nonconverged)``.
    With ``recon=None`` the reconstruction step is skipped.
    """
    shape = np.shape(x0_block)
    x0 = np.ravel(x0_block).astype(np.float64)
    weights = compute_weights(x0_block, tau)
    y0 = apply(op, x0)
    dc = dc_row(op)
    recs, preds, qs, infos, decoded = [], [], [], [], []
    bad = 0
    K = len(records) + 1
    for k, blk in enumerate(records, start=1):
        delta = blk.header.delta
        w = dithers[k - 1].values
        if mode == LINEAR:
            info = LinearSideInfo.from_blob(blk.stats_blob)
            x_hat = lmmse_predict(x0, info.mu, info.cov0)
            y_hat = apply(op, x_hat) / delta + w
        else:
            infos.append(SuccessiveSideInfo.from_blob(blk.stats_blob, k, k < K - 1))
            y_pred = successive_predict(y0, decoded[: k - 1], infos, k, dc)
            y_hat = y_pred + w
            x_hat = _affine_fit(x0, delta * y_pred, op)
        res = decode_block(blk, y_hat, codes)
        bad += sum(1 for ok in res.converged if ok is False)
        q = res.q
        decoded.append(q - w)
        qs.append(q)
        preds.append(x_hat.reshape(shape))
        if recon is None:
            recs.append(x_hat.reshape(shape))
            continue
        init = x_hat if mode == LINEAR else _affine_fit(x0, delta * (q - w), op)
        rr = reconstruct(q, op, dithers[k - 1], delta, weights, recon, x_init=init)
        recs.append(rr.x)
    return recs, preds, qs, bad


def _check_container(container: Container, reference: np.ndarray) -> CodecParams:
    man = container.manifest
    if tuple(np.shape(reference)) != (man["height"], man["width"]):
        raise ValueError("reference band shape does not match the container")
    params = _params_from_manifest(man)
    rows = -(-man["height"] // params.block)
    cols = -(-man["width"] // params.block)
    want = {(r, c, k) for r in range(rows) for c in range(cols) for k in range(1, man["n_bands"])}
    if set(container.records) != want:
        raise ContainerError("container is missing block records")
    return params


def _bit_errors(a: np.ndarray, b: np.ndarray, B: int) -> int:
    return int(sum(np.count_nonzero(((a ^ b) >> j) & 1) for j in range(B)))


def decode_image(
    container: Container,
    reference: np.ndarray,
    codes: Optional[CodeDatabase],
    recon: Optional[ReconConfig] = ReconConfig(),
    tau: float = DEFAULT_TAU,
    truth: Optional[ImageSet] = None,
) -> DecodeReport:
    """Recover the coded bands from a container and the reference band."""
    params = _check_container(container, reference)
    man = container.manifest
    if codes is not None and codes.m != params.m:
        raise ValueError(f"code database has m={codes.m}, container needs m={params.m}")
    if codes is None and any(e.mode == PlaneMode.SYNDROME for blk in container.records.values() for e in blk.plan):
        raise ValueError("container has syndrome-coded planes; a code database is required")
    K, bs = man["n_bands"], params.block
    ref = pad_to_blocks(np.asarray(reference, dtype=np.float64), bs)
    rows, cols = ref.shape[0] // bs, ref.shape[1] // bs
    out = [np.zeros_like(ref) for _ in range(1, K)]
    pred = [np.zeros_like(ref) for _ in range(1, K)]
    q_tilde, bad = {}, 0
    truth_pad = None if truth is None else [pad_to_blocks(b, bs) for b in truth.bands]
    bit_err = np.zeros(K - 1)
    bit_tot = np.zeros(K - 1)
    for r in range(rows):
        for c in range(cols):
            op = block_operator(params, r, c)
            dithers = [block_dither(params, r, c, k) for k in range(1, K)]
            records = [container.records[(r, c, k)] for k in range(1, K)]
            recs, preds, qs, nb = decode_blocks(block_view(ref, bs, r, c), records, op, dithers, params.mode, codes, recon, tau)
            bad += nb
            for k in range(1, K):
                block_view(out[k - 1], bs, r, c)[...] = recs[k - 1]
                block_view(pred[k - 1], bs, r, c)[...] = preds[k - 1]
                q_tilde[(r, c, k)] = qs[k - 1]
                if truth_pad is not None:
                    hdr = records[k - 1].header
                    xk = np.ravel(block_view(truth_pad[k], bs, r, c))
                    q_true = quantize(measure(op, xk, dithers[k - 1], hdr.delta), hdr.quantizer)
                    bit_err[k - 1] += _bit_errors(q_true + hdr.offset, qs[k - 1] + hdr.offset, hdr.B)
                    bit_tot[k - 1] += hdr.B * hdr.m
    h, w = man["height"], man["width"]
    report = DecodeReport([o[:h, :w] for o in out], [p[:h, :w] for p in pred], q_tilde, bad)
    if truth is not None:
        report.psnr = [psnr(truth.bands[k], report.bands[k - 1]) for k in range(1, K)]
        report.prediction_psnr = [psnr(truth.bands[k], report.predictions[k - 1]) for k in range(1, K)]
        report.ber = list(bit_err / bit_tot)
    return report


# ------------------------------------------------------------------ metrics

def metrics_report(container: Container, decoded: Optional[DecodeReport] = None, originals: Optional[ImageSet] = None) -> dict:
    """Rate table of a container, plus quality columns when images are given.

    Per-band bpp counts only the plane payloads of that band; the stats
    parameters form the separate overhead column.  ``overall_bpp`` is
    ``(payload + stats) / (coded bands * pixels)``.  Block headers, plan bytes,
    padding and the manifest are reported as ``framing_bits``; ``total_bits``
    is the exact serialized size of the container.
    """
    man = container.manifest
    K = man["n_bands"]
    px = man["height"] * man["width"]
    payload = np.zeros(K - 1, dtype=np.int64)
    stats = header = 0
    for (r, c, k), blk in container.records.items():
        acc = rate_accounting(blk)
        payload[k - 1] += acc["payload_bits"]
        stats += acc["stats_bits"]
        header += acc["header_bits"] + acc["plan_bits"] + acc["padding_bits"]
    framing = header + container.framing_bits()
    total = int(payload.sum()) + stats + framing
    rep = {
        "bands": list(range(1, K)),
        "payload_bits": payload.tolist(),
        "bpp": (payload / px).tolist(),
        "overhead_bits": stats,
        "overhead_bpp": stats / ((K - 1) * px),
        "overall_bpp": (int(payload.sum()) + stats) / ((K - 1) * px),
        "framing_bits": framing,
        "total_bits": total,
        "total_bpp": total / ((K - 1) * px),
    }
    if decoded is not None:
        if decoded.psnr is None and originals is not None:
            decoded.psnr = [psnr(originals.bands[k], decoded.bands[k - 1]) for k in range(1, K)]
            decoded.prediction_psnr = [psnr(originals.bands[k], decoded.predictions[k - 1]) for k in range(1, K)]
        rep["psnr"] = decoded.psnr
        rep["prediction_psnr"] = decoded.prediction_psnr
        rep["ber"] = decoded.ber
        rep["nonconverged_planes"] = decoded.nonconverged_planes
    return rep


def format_report(rep: dict, names: Optional[Sequence[str]] = None) -> str:
    """Plain-text table with one row per coded band."""
    names = names or [f"band{k}" for k in rep["bands"]]
    cols = ["band", "bpp", "psnr_db", "pred_psnr_db", "ber"]
    lines = ["  ".join(f"{c:>12}" for c in cols)]
    for i, name in enumerate(names):
        cells = [name, f"{rep['bpp'][i]:.4f}"]
        for key in ("psnr", "prediction_psnr"):
            v = rep.get(key)
            cells.append("-" if v is None else f"{v[i]:.2f}")
        ber = rep.get("ber")
        cells.append("-" if ber is None else f"{ber[i]:.2e}")
        lines.append("  ".join(f"{c:>12}" for c in cells))
    lines.append(f"overhead_bpp {rep['overhead_bpp']:.5f}  overall_bpp {rep['overall_bpp']:.5f}  total_bpp {rep['total_bpp']:.5f}")
    return "\n".join(lines)


def tune_delta(
    images: ImageSet,
    params: CodecParams,
    codes: CodeDatabase,
    band: int,
    target_bpp: float,
    tol: float = 0.02,
    lo: float = 1e-3,
    hi: float = 1e4,
    max_steps: int = 60,
) -> tuple[float, float]:
    """Bisect ``delta`` of ``band`` (log scale) until its bpp is within ``tol`` of the target.

    Saturating steps count as too fine.  Returns ``(delta, bpp)`` of the best
    step found.
    """
    K = images.n_bands

    def bpp_at(d):
        try:
            cont = encode_image(images, params.with_delta(band, d, K - 1), codes)
        except QuantizerSaturation:
            return math.inf
        return metrics_report(cont)["bpp"][band - 1]

    best = (hi, bpp_at(hi))
    a, b = math.log(lo), math.log(hi)
    for _ in range(max_steps):
        mid = math.exp(0.5 * (a + b))
        rate = bpp_at(mid)
        if abs(rate - target_bpp) < abs(best[1] - target_bpp):
            best = (mid, rate)
        if abs(rate - target_bpp) <= tol:
            return mid, rate
        if rate > target_bpp:
            a = math.log(mid)
        else:
            b = math.log(mid)
    return best


# ---------------------------------------------------------------------- I/O

def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM with 8- or 16-bit samples."""
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    pos += 1
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w).astype(np.float64)


def write_pgm(path, X: np.ndarray, maxval: int = 65535) -> None:
    X = np.clip(np.rint(np.asarray(X, dtype=np.float64)), 0, maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    h, w = X.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode() + X.astype(dtype).tobytes())


def read_flat(path) -> ImageSet:
    """Band-sequential raw samples described by a ``<path>.json`` sidecar."""
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    h, w, nb = meta["height"], meta["width"], meta["bands"]
    dtype = np.dtype(meta.get("dtype", "<u2"))
    data = np.fromfile(path, dtype=dtype)
    if data.size != h * w * nb:
        raise ValueError(f"{path}: expected {h * w * nb} samples, found {data.size}")
    bands = data.reshape(nb, h, w).astype(np.float64)
    return ImageSet(tuple(bands), int(meta.get("bit_depth", 8 * dtype.itemsize)))


def write_flat(path, bands: Sequence[np.ndarray], bit_depth: int = 16, dtype: str = "<u2") -> None:
    path = Path(path)
    arr = np.stack([np.asarray(b, dtype=np.float64) for b in bands])
    info = np.iinfo(np.dtype(dtype)) if np.dtype(dtype).kind in "ui" else None
    if info is not None:
        arr = np.clip(np.rint(arr), info.min, info.max)
    arr.astype(dtype).tofile(path)
    meta = {"height": arr.shape[1], "width": arr.shape[2], "bands": arr.shape[0], "dtype": dtype, "bit_depth": bit_depth}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=1))


def load_images(paths: Sequence) -> ImageSet:
    """One flat multi-band file, or one PGM per band (reference first)."""
    paths = [Path(p) for p in paths]
    if len(paths) == 1:
        return read_flat(paths[0])
    return ImageSet(tuple(read_pgm(p) for p in paths))
