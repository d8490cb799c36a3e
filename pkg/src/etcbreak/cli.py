"""Command line entry point: ``etcbreak <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

from . import attacks
from .cipher import Key, WMap, cipher_grid, decrypt, encrypt
from .codec import CodecProfile, OsnProfile, encode_jpeg, jpeg_roundtrip, osn_channel
from .compat import accuracy_curve
from .evaluation import (
    largest_component, load_corpus, neighbor_comparison, run_info, w_accuracy,
)
from .imgcore import InvalidInputError, read_image, write_image


def int_list(text):
    return [int(v) for v in str(text).replace(" ", "").split(",") if v]


def read_config(path):
    """``key = value`` lines; ``#`` starts a comment."""
    cfg = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise InvalidInputError(f"bad config line: {raw!r}")
        cfg[key.strip().replace("-", "_")] = value.strip()
    return cfg


def _save(path, img, quality=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if quality is not None or path.suffix.lower() in (".jpg", ".jpeg"):
        path.write_bytes(encode_jpeg(img, CodecProfile(quality or 95)))
    else:
        write_image(path, img)


def _report(path, fields):
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in fields.items()))


def _emit(fields):
    print(json.dumps(dict(fields, **run_info())))


def _key(args):
    if args.key is None:
        raise InvalidInputError("--key k1,k2,k3 is required")
    return Key.parse(args.key)


# --------------------------------------------------------------------------
# commands

def cmd_keygen(args):
    print(Key.generate(args.seed))


def cmd_encrypt(args):
    key = _key(args)
    cipher, wmap = encrypt(read_image(args.input), key, args.scheme, args.block)
    _save(args.out, cipher, args.quality)
    _emit({"out": str(args.out), "scheme": args.scheme, "blocks": wmap.n})
    if args.wmap:
        wmap.meta.update(run_info())
        Path(args.wmap).write_text(wmap.to_text())


def cmd_decrypt(args):
    key = _key(args)
    _save(args.out, decrypt(read_image(args.input), key, args.scheme, args.block))


def cmd_simulate_osn(args):
    out = osn_channel(read_image(args.input), OsnProfile(args.quality, args.smoothing))
    _save(args.out, out)
    _emit({"out": str(args.out), "quality": args.quality, "smoothing": args.smoothing})


def cmd_gen_corpus(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(load_corpus(args.source, args.count, args.size, args.seed)):
        write_image(out / f"img{i:03d}.png", img)


def cmd_coa(args):
    ciphers = [read_image(p) for p in args.inputs]
    t0 = time.time()
    res = attacks.coa(ciphers, args.metric, args.scheme, args.block, args.top_k)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, plane in enumerate(res.images["planes"][:3]):
        write_image(out / f"fragment{i}.png", plane)
    if "composite" in res.images:
        write_image(out / "composite.png", res.images["composite"])
    (out / "assembly.txt").write_text(res.assembly.to_text(color=args.scheme == "etc"))
    fields = {"attack": "coa", "scheme": args.scheme, "metric": args.metric, "m": len(ciphers),
              "fragments": len(res.assembly.fragments), "seconds": round(time.time() - t0, 1)}
    if res.assembly.diagnostic:
        fields["diagnostic"] = res.assembly.diagnostic
    if args.truth:
        truth = WMap.from_text(Path(args.truth).read_text())
        fields["nc"] = neighbor_comparison(res.assembly, truth, res.grid)
        fields["lc"] = largest_component(res.assembly, truth, res.grid)
    fields.update(run_info())
    _report(out / "report.txt", fields)
    print(json.dumps(fields))


def cmd_kpa(args):
    codec = CodecProfile(args.quality) if args.quality else None
    est = attacks.kpa_exact(read_image(args.plain), read_image(args.cipher), args.block, codec)
    _write_estimate(args, est)


def cmd_kpa_sim(args):
    est = attacks.kpa_similarity(read_image(args.plain), read_image(args.cipher), args.scheme, args.block)
    _write_estimate(args, est)


def _write_estimate(args, est):
    est.meta.update(run_info())
    Path(args.out).write_text(est.to_text())
    fields = {"determined": int((est.dest >= 0).sum()), "blocks": est.n}
    if args.truth:
        truth = WMap.from_text(Path(args.truth).read_text())
        fields["accuracy"] = w_accuracy(est, truth)
    _emit(fields)


def cmd_cpa_build(args):
    codec = CodecProfile(args.quality) if args.quality else None
    if args.refine:
        img = attacks.cpa_refine(read_image(args.refine), codec, args.seed)
    else:
        img = attacks.cpa_construct(args.width, args.height, codec, args.seed)
    write_image(args.out, img)
    _emit({"out": str(args.out), "distinct": attacks.variants_distinct(img, codec, args.block)})


SWEEP_FIELDS = ["scheme", "metric", "quality", "m", "seed", "accuracy", "nc", "lc", "codec", "fingerprint"]


def sweep_rows(scheme, metric, qualities, ms, seeds, corpus="synthetic", size=256, block=8):
    """Rows of ``(scheme, metric, quality, m, seed, accuracy, nc, lc)`` over a grid of settings."""
    info = run_info()
    if not ms:
        return
    for seed in seeds:
        images = load_corpus(corpus, max(ms), size, seed)
        key = Key.generate(seed)
        for q in qualities:
            ciphers = []
            truth = None
            for img in images:
                c, truth = encrypt(img, key, scheme, block)
                ciphers.append(jpeg_roundtrip(c, CodecProfile(q)) if q < 101 else c)
            grid = cipher_grid(ciphers[0].shape, scheme, block)
            puzzle = "etc" if scheme == "etc" else "type1"
            curve = accuracy_curve(ciphers, truth, grid, metric, puzzle,
                                   16 if scheme == "etc" else block, ms, ignore_color=scheme == "etc")
            for m in ms:
                res = attacks.coa(ciphers[:m], metric, scheme, block)
                yield {"scheme": scheme, "metric": metric, "quality": q, "m": m, "seed": seed,
                       "accuracy": round(curve[m], 6),
                       "nc": round(neighbor_comparison(res.assembly, truth, grid), 6),
                       "lc": round(largest_component(res.assembly, truth, grid), 6), **info}


def cmd_sweep(args):
    rows = sweep_rows(args.scheme, args.metric, int_list(args.quality), int_list(args.ms),
                      int_list(args.seeds), args.corpus, args.size, args.block)
    out = open(args.out, "w", newline="") if args.out != "-" else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=SWEEP_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
            out.flush()
    finally:
        if out is not sys.stdout:
            out.close()


# --------------------------------------------------------------------------
# parser

def _common(p, quality=None):
    p.add_argument("--scheme", choices=("etcs", "etc"), default="etcs")
    p.add_argument("--block", type=int, default=8)
    p.add_argument("--key", default=None, help="k1,k2,k3")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quality", type=int, default=quality)


def build_parser():
    parser = argparse.ArgumentParser(prog="etcbreak", description=__doc__)
    parser.add_argument("--config", default=None, help="key=value defaults file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="print a random key")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_keygen)

    for name, func in (("encrypt", cmd_encrypt), ("decrypt", cmd_decrypt)):
        p = sub.add_parser(name)
        p.add_argument("input")
        p.add_argument("--out", required=True)
        _common(p)
        if name == "encrypt":
            p.add_argument("--wmap", default=None, help="write the ground-truth map here")
        p.set_defaults(func=func)

    p = sub.add_parser("simulate-osn", help="decode, optionally smooth, re-encode")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--quality", type=int, default=71)
    p.add_argument("--smoothing", type=int, default=0)
    p.set_defaults(func=cmd_simulate_osn)

    p = sub.add_parser("gen-corpus", help="write test images")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--source", default="synthetic", help="synthetic, photos or a directory")
    p.set_defaults(func=cmd_gen_corpus)

    attack = sub.add_parser("attack").add_subparsers(dest="attack", required=True)
    p = attack.add_parser("coa", help="ciphertext-only: assemble blocks from ciphers sharing a key")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--metric", choices=("ssd", "mgc", "emgc"), default="mgc")
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--truth", default=None, help="ground-truth map for scoring")
    _common(p)
    p.set_defaults(func=cmd_coa)

    for name, func in (("kpa", cmd_kpa), ("kpa-sim", cmd_kpa_sim)):
        p = attack.add_parser(name, help="known plaintext: recover W")
        p.add_argument("--plain", required=True)
        p.add_argument("--cipher", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--truth", default=None)
        _common(p)
        p.set_defaults(func=func)

    p = attack.add_parser("cpa-build", help="chosen plaintext: build a collision-free plain image")
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--refine", default=None, help="perturb this image instead of drawing noise")
    _common(p, quality=95)
    p.set_defaults(func=cmd_cpa_build)

    ev = sub.add_parser("eval").add_subparsers(dest="eval", required=True)
    p = ev.add_parser("sweep", help="accuracy, Nc and Lc over qualities, M and seeds as CSV")
    p.add_argument("--metric", choices=("ssd", "mgc", "emgc"), default="mgc")
    p.add_argument("--quality", default="95", help="comma list; 101 = no compression")
    p.add_argument("--ms", default="1,4,8,16", help="comma list of cipher counts")
    p.add_argument("--seeds", default="0", help="comma list")
    p.add_argument("--corpus", default="synthetic")
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--scheme", choices=("etcs", "etc"), default="etcs")
    p.add_argument("--block", type=int, default=8)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_sweep)
    return parser


def _leaf_parser(parser, argv):
    """The subparser that will handle ``argv`` (so config defaults land where they are used)."""
    node = parser
    for tok in argv:
        actions = [a for a in node._actions if isinstance(a, argparse._SubParsersAction)]
        if not actions or tok not in actions[0].choices:
            continue
        node = actions[0].choices[tok]
    return node


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    known = parser.parse_known_args(argv)[0] if "--config" in argv else None
    if known is not None and known.config:
        _leaf_parser(parser, argv).set_defaults(**read_config(known.config))
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except InvalidInputError as exc:
        parser.exit(2, f"etcbreak: error: {exc}\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
