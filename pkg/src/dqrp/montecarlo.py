"""Monte Carlo check of the bitplane error model on the real measurement chain.

Each trial draws an operator, a signal ``x``, a dither and a prediction error
direction; the prediction ``x_hat = x - e`` with ``||e|| = s * delta / sigma``
is measured with the same operator and dither, and every plane of ``q`` is
predicted by :func:`dqrp.codec.predict_plane` from the true lower planes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import DecoderState, predict_plane
from .measurement import QuantizerConfig, build_operator, make_dither, measure, quantize, to_bitplanes
from .theory import bit_error_likelihood, bitflip_probability


@dataclass(frozen=True, eq=False)
class PlaneSamples:
    """Flip indicators and normalized distances ``c`` for one ``(k, s)`` pair."""

    k: int
    s: float
    flips: np.ndarray
    c: np.ndarray

    @property
    def rate(self) -> float:
        return float(self.flips.mean())


def simulate(
    kind: str,
    s_values,
    ks,
    trials: int,
    n: int = 256,
    m: int = 256,
    delta: float = 1.0,
    B: int = 16,
    seed: int = 0,
) -> dict:
    """Return ``{(k, s): PlaneSamples}`` with ``trials * m`` samples each.

    All ``s`` values share the drawn operators, signals and error directions.
    """
    ks = sorted(set(int(k) for k in ks))
    s_values = [float(s) for s in s_values]
    if not ks or ks[0] < 1 or ks[-1] > B:
        raise ValueError(f"planes must lie in 1..{B}")
    cfg = QuantizerConfig(B, delta)
    root = np.random.SeedSequence(seed)
    flips = {(k, s): [] for k in ks for s in s_values}
    cs = {(k, s): [] for k in ks for s in s_values}
    for child in root.spawn(trials):
        op_seed, dither_seed, sig_seed = (int(v) for v in child.generate_state(3))
        op = build_operator(kind, n, m, sigma=1.0 / np.sqrt(n), seed=op_seed)
        w = make_dither(m, dither_seed)
        rng = np.random.default_rng(sig_seed)
        x = rng.normal(0.0, 100.0 * delta, n)
        d = rng.normal(size=n)
        d /= np.linalg.norm(d)
        q = quantize(measure(op, x, w, delta), cfg)
        planes = to_bitplanes(q, cfg).planes
        for s in s_values:
            y_hat = measure(op, x - (s * delta / op.sigma) * d, w, delta)
            state = DecoderState(y_hat, cfg)
            for k in range(1, ks[-1] + 1):
                if k in ks:
                    pred = predict_plane(state, k)
                    flips[(k, s)].append(pred.bits != planes[k - 1])
                    cs[(k, s)].append(pred.c)
                state.push(planes[k - 1])
    return {
        key: PlaneSamples(key[0], key[1], np.concatenate(flips[key]), np.concatenate(cs[key])) for key in flips
    }


def flip_rate_rows(kind: str, s_values, ks, min_bits: int, n: int = 256, m: int = 256, seed: int = 0) -> list:
    """Rows ``(k, s, theory, empirical, bits)`` with at least ``min_bits`` per row."""
    trials = -(-int(min_bits) // m)
    sim = simulate(kind, s_values, ks, trials, n, m, seed=seed)
    rows = []
    for (k, s), smp in sorted(sim.items()):
        rows.append((k, s, bitflip_probability(k, s), smp.rate, smp.flips.size))
    return rows


def likelihood_rows(samples: PlaneSamples, n_buckets: int = 20) -> list:
    """Rows ``(c_lo, c_hi, count, theory, empirical)`` bucketing ``c`` over ``[0, 2^(k-1)]``.

    ``theory`` averages the conditional flip likelihood over the samples in
    the bucket, so it is the exact expectation the empirical rate estimates.
    """
    edges = np.linspace(0.0, 2.0 ** (samples.k - 1), n_buckets + 1)
    idx = np.clip(np.searchsorted(edges, samples.c, side="right") - 1, 0, n_buckets - 1)
    chunk = 1 << 20
    lk = np.concatenate(
        [bit_error_likelihood(samples.k, samples.c[i:i + chunk], samples.s) for i in range(0, samples.c.size, chunk)]
    )
    rows = []
    for b in range(n_buckets):
        sel = idx == b
        count = int(sel.sum())
        theory = float(lk[sel].mean()) if count else float("nan")
        emp = float(samples.flips[sel].mean()) if count else float("nan")
        rows.append((float(edges[b]), float(edges[b + 1]), count, theory, emp))
    return rows
