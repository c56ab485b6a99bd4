"""Command-line front end.

Subcommands::

    codes generate   build and store the LDPC code database
    synth            write a synthetic correlated scene as PGM files
    encode           compress bands 1..K-1 of an image set
    decode           recover the coded bands from a container and the reference
    analyze          theory curves and Monte Carlo checks as CSV

Exit status is 0 on success, 2 when an argument or input fails validation and
3 when decoding finished but some syndrome plane did not converge.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np

from . import ldpc
from .measurement import GAUSSIAN, SRHT
from .montecarlo import flip_rate_rows
from .pipeline import (
    CodecParams,
    decode_image,
    encode_image,
    format_report,
    load_images,
    metrics_report,
    read_container,
    read_flat,
    read_pgm,
    save_container,
    write_pgm,
)
from .prediction import LINEAR, SUCCESSIVE
from .reconstruction import DEFAULT_LAMBDA, DEFAULT_TAU, ReconConfig
from .synthetic import piecewise_scene
from .theory import DEFAULT_RATES, RatePolicy, bit_error_likelihood, bitflip_probability, planes_to_code

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NONCONVERGED = 3

_DEFAULT_POLICY = RatePolicy()


class CliError(ValueError):
    """Invalid argument combination detected after parsing."""


# ------------------------------------------------------------ arg types

def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0 or not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _nonneg_float(text: str) -> float:
    v = float(text)
    if not v >= 0 or not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {text}")
    return v


def _probability(text: str) -> float:
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"expected a value in (0, 1), got {text}")
    return v


def _float_list(text: str) -> list:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _int_list(text: str) -> list:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


# --------------------------------------------------------------- parser

def _codec_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("codec")
    g.add_argument("--blocks", type=_positive_int, default=64, help="block side length (default 64)")
    g.add_argument("--measurements", type=_positive_int, default=4000, help="measurements per block (default 4000)")
    g.add_argument("--bits", type=_positive_int, default=11, help="quantizer bit depth B (default 11)")
    g.add_argument("--delta", type=_positive_float, action="append",
                   help="quantizer step; give once for all bands or once per coded band")
    g.add_argument("--mode", choices=(LINEAR, SUCCESSIVE), default=LINEAR)
    g.add_argument("--operator", choices=(SRHT, GAUSSIAN), default=SRHT)
    g.add_argument("--cutoff", type=_probability, default=_DEFAULT_POLICY.cutoff_skip,
                   help="flip probability below which planes are skipped")
    g.add_argument("--raw-cutoff", type=_probability, default=_DEFAULT_POLICY.cutoff_raw,
                   help="smallest usable code rate; lower rates send the plane raw")
    g.add_argument("--backoff", type=_nonneg_float, default=_DEFAULT_POLICY.backoff)
    g.add_argument("--epsilon", type=_nonneg_float, default=None,
                   help="override the estimated prediction error (source-domain norm)")
    g.add_argument("--seed-op", type=int, default=0)
    g.add_argument("--seed-dither", type=int, default=1)


def _recon_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("reconstruction")
    g.add_argument("--lambda", dest="lam", type=_positive_float, default=DEFAULT_LAMBDA)
    g.add_argument("--tau", type=_nonneg_float, default=DEFAULT_TAU)
    g.add_argument("--max-iters", type=_positive_int, default=500)
    g.add_argument("--no-recon", action="store_true", help="output the requantized prediction only")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dqrp", description="Distributed multispectral image coding from quantized random projections.")
    sub = parser.add_subparsers(dest="command", required=True)

    codes = sub.add_parser("codes", help="LDPC code database")
    codes_sub = codes.add_subparsers(dest="action", required=True)
    gen = codes_sub.add_parser("generate", help="build and save the code database")
    gen.add_argument("--measurements", type=_positive_int, default=4000)
    gen.add_argument("--rates", type=_float_list, default=list(DEFAULT_RATES), help="comma-separated code rates")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--profile", choices=("irregular", "regular"), default="irregular")
    gen.add_argument("--out", required=True)

    syn = sub.add_parser("synth", help="write a synthetic 4-band scene as PGM files")
    syn.add_argument("--height", type=_positive_int, default=128)
    syn.add_argument("--width", type=_positive_int, default=128)
    syn.add_argument("--noise", type=_nonneg_float, default=1.0)
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--out-prefix", required=True)

    enc = sub.add_parser("encode", help="compress an image set")
    enc.add_argument("inputs", nargs="+", help="one PGM per band (reference first) or one flat file")
    enc.add_argument("--codes", help="code database file")
    enc.add_argument("--out", required=True, help="container file")
    _codec_flags(enc)

    dec = sub.add_parser("decode", help="decode a container")
    dec.add_argument("container")
    dec.add_argument("--reference", required=True, help="reference band (PGM, or flat file whose first band is used)")
    dec.add_argument("--codes", help="code database file")
    dec.add_argument("--out-prefix", required=True, help="decoded bands go to <prefix>_band<k>.pgm")
    dec.add_argument("--truth", nargs="+", help="original image set, to report PSNR and bit error rate")
    _recon_flags(dec)

    ana = sub.add_parser("analyze", help="theory and Monte Carlo tables as CSV")
    ana.add_argument("kind", choices=("pk_curves", "lk_curves", "planes_to_code", "montecarlo"))
    ana.add_argument("--out", help="CSV file (default: stdout)")
    ana.add_argument("--k", type=_int_list, default=None, help="bitplanes, comma-separated")
    ana.add_argument("--s", type=_float_list, default=None, help="normalized errors eps*sigma/delta, comma-separated")
    ana.add_argument("--s-min", type=_positive_float, default=0.1)
    ana.add_argument("--s-max", type=_positive_float, default=10.0)
    ana.add_argument("--points", type=_positive_int, default=25)
    ana.add_argument("--bits", type=_positive_int, default=11)
    ana.add_argument("--cutoffs", type=_float_list, default=[1e-2, 1e-3, 1e-4])
    ana.add_argument("--eps-sigma", type=_positive_float, default=100.0, help="eps*sigma for the planes_to_code sweep")
    ana.add_argument("--delta-min", type=_positive_float, default=1.0)
    ana.add_argument("--delta-max", type=_positive_float, default=1000.0)
    ana.add_argument("--operator", choices=(SRHT, GAUSSIAN), default=GAUSSIAN)
    ana.add_argument("--measurements", type=_positive_int, default=256)
    ana.add_argument("--trials", type=_positive_int, default=1000)
    ana.add_argument("--seed", type=int, default=0)
    return parser


# ------------------------------------------------------------- commands

def _read_codes(path, required: bool):
    if path is None:
        if required:
            raise CliError("a code database is required (--codes); create one with 'dqrp codes generate'")
        return None
    return ldpc.read_database(path)


def codec_params(args) -> CodecParams:
    policy = RatePolicy(DEFAULT_RATES, args.backoff, args.cutoff, args.raw_cutoff)
    return CodecParams(
        block=args.blocks, m=args.measurements, B=args.bits, deltas=tuple(args.delta or (1.0,)),
        mode=args.mode, policy=policy, op_kind=args.operator, seed_op=args.seed_op,
        seed_dither=args.seed_dither, epsilon_override=args.epsilon,
    )


def cmd_codes_generate(args) -> int:
    db = ldpc.build_database(args.measurements, tuple(args.rates), seed=args.seed, profile=args.profile)
    ldpc.save_database(db, args.out)
    print(f"wrote {len(db.rates)} codes at m={db.m} to {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    img = piecewise_scene(args.height, args.width, seed=args.seed, noise=args.noise)
    for k, band in enumerate(img.bands):
        write_pgm(f"{args.out_prefix}_band{k}.pgm", band, maxval=255)
    print(f"wrote {img.n_bands} bands of {img.height}x{img.width} to {args.out_prefix}_band*.pgm")
    return EXIT_OK


def cmd_encode(args) -> int:
    params = codec_params(args)
    images = load_images(args.inputs)
    if args.delta and len(args.delta) not in (1, images.n_bands - 1):
        raise CliError(f"--delta given {len(args.delta)} times; expected 1 or {images.n_bands - 1}")
    codes = _read_codes(args.codes, required=True)
    container = encode_image(images, params, codes)
    save_container(container, args.out)
    print(format_report(metrics_report(container)))
    return EXIT_OK


def _reference(path) -> np.ndarray:
    path = Path(path)
    if Path(str(path) + ".json").exists():
        return read_flat(path).reference
    return read_pgm(path)


def cmd_decode(args) -> int:
    container = read_container(args.container)
    reference = _reference(args.reference)
    codes = _read_codes(args.codes, required=False)
    truth = load_images(args.truth) if args.truth else None
    recon = None if args.no_recon else ReconConfig(lam=args.lam, max_iters=args.max_iters)
    report = decode_image(container, reference, codes, recon, args.tau, truth)
    maxval = (1 << int(container.manifest.get("bit_depth", 16))) - 1
    for k, band in enumerate(report.bands, start=1):
        write_pgm(f"{args.out_prefix}_band{k}.pgm", band, maxval=maxval)
    print(format_report(metrics_report(container, report, truth)))
    if not report.all_converged:
        print(f"warning: {report.nonconverged_planes} syndrome plane(s) did not converge", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def _s_grid(args) -> list:
    if args.s:
        return args.s
    if args.s_min > args.s_max:
        raise CliError("--s-min must not exceed --s-max")
    return [float(v) for v in np.geomspace(args.s_min, args.s_max, args.points)]


def analysis_rows(args) -> tuple:
    """Header and rows of the requested analysis table."""
    if args.kind == "pk_curves":
        ks = args.k or list(range(1, 7))
        rows = [(k, s, bitflip_probability(k, s)) for k in ks for s in _s_grid(args)]
        return ("k", "eps_sigma_over_delta", "p_k"), rows
    if args.kind == "lk_curves":
        ks = args.k or [3]
        rows = []
        for k in ks:
            c = np.linspace(0.0, 2.0 ** (k - 1), args.points)
            for s in args.s or [0.5, 1.0, 2.0]:
                rows += [(k, s, float(ci), float(li)) for ci, li in zip(c, bit_error_likelihood(k, c, s))]
        return ("k", "eps_sigma_over_delta", "c", "l_k"), rows
    if args.kind == "planes_to_code":
        deltas = np.geomspace(args.delta_min, args.delta_max, args.points)
        rows = []
        for cut in args.cutoffs:
            for d in deltas:
                s = args.eps_sigma / d
                rows.append((cut, float(d), s, planes_to_code(s, args.bits, cut)))
        return ("cutoff", "delta", "eps_sigma_over_delta", "planes_to_code"), rows
    ks = args.k or [1, 2, 3, 4, 5]
    s_values = args.s or [0.25, 0.5, 1.0, 2.0, 4.0]
    m = args.measurements
    n = 1 << max(0, math.ceil(math.log2(m)))
    rows = flip_rate_rows(args.operator, s_values, ks, args.trials * m, n=n, m=m, seed=args.seed)
    rows = [r + (args.trials,) for r in rows]
    return ("k", "eps_sigma_over_delta", "p_k_theory", "p_k_empirical", "bits", "trials"), rows


def cmd_analyze(args) -> int:
    header, rows = analysis_rows(args)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else int(v) for v in row])
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "codes":
        handler = cmd_codes_generate
    else:
        handler = {"synth": cmd_synth, "encode": cmd_encode, "decode": cmd_decode, "analyze": cmd_analyze}[args.command]
    try:
        return handler(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"dqrp: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
