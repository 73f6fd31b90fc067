"""Command-line entry point: ``ctss-toon <command> [flags]``.

Commands: edges, sample-patches, train, infer, fid, make-synthetic.
Failures print a single ``error: <command>: <kind>: <message>`` line to stderr.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np
import torch

from . import ctss, fid, synthetic, trainer
from .imagecore import load_png, save_png
from .nets import make_embedder

log = logging.getLogger("ctss_toon")

DEFAULTS = ctss.CtssConfig()


class CommandError(RuntimeError):
    pass


def _png_inputs(path: str) -> list[Path]:
    p = Path(path)
    if p.is_file():
        return [p]
    if p.is_dir():
        files = sorted(f for f in p.iterdir() if f.suffix.lower() == ".png")
        if not files:
            raise CommandError(f"no PNG files in {p}")
        return files
    raise CommandError(f"input not found: {p}")


def cmd_edges(args) -> int:
    cfg = ctss.CtssConfig(d=args.d, n=args.n, gf_radius=args.gf_radius, gf_eps=args.gf_eps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failures = 0
    for f in _png_inputs(args.input):
        try:
            edges = ctss.refined_edges(load_png(f), cfg)
            save_png(edges, out / f"{f.stem}_edges.png")
        except Exception as exc:  # keep going through the batch
            failures += 1
            print(f"error: edges: {f}: {exc}", file=sys.stderr)
    return 1 if failures else 0


def cmd_sample_patches(args) -> int:
    files = _png_inputs(args.input)
    images = [load_png(f) for f in files]
    if len({tuple(im.shape) for im in images}) != 1:
        raise CommandError("all input images must share one size")
    batch = torch.cat(images)
    cfg = ctss.CtssConfig(
        d=args.d, n=args.n, patch_size=args.patch_size, stride_min=args.stride_min,
        stride_max=args.stride_max, k=args.k, gf_radius=args.gf_radius, gf_eps=args.gf_eps,
    )
    stride = args.stride if args.stride is not None else cfg.draw_stride(np.random.default_rng(args.seed))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        patches = ctss.sample(batch, cfg, stride)
    for w in caught:
        print(f"warning: sample-patches: {w.message}", file=sys.stderr)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for rank, p in enumerate(patches):
        save_png(p.pixels, out / f"{rank}_{p.source_index}_{p.row}_{p.col}.png")
    (out / "manifest.csv").write_text(patches.manifest())
    print(f"stride {stride}: wrote {len(patches)} patches to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = trainer.TrainConfig.from_file(args.config)
    if args.seed is not None:
        cfg = trainer.TrainConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    photos = trainer.DatasetHandle(args.photos, cfg.image_size, stream=0)
    cartoons = trainer.DatasetHandle(args.cartoons, cfg.image_size, stream=1)
    final = trainer.fit(photos, cartoons, cfg, args.out, resume=args.resume, max_steps=args.max_steps)
    print(f"finished at step {final.step}; checkpoint {Path(args.out) / 'final.ctss'}")
    return 0


def cmd_infer(args) -> int:
    ckpt = trainer.load_checkpoint(args.checkpoint)
    gen = trainer.generator_from_checkpoint(ckpt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = _png_inputs(args.input)
    for f in files:
        save_png(trainer.infer(load_png(f), gen, args.saturation), out / f"{f.stem}_cartoon.png")
    print(f"wrote {len(files)} images to {out}")
    return 0


def cmd_fid(args) -> int:
    embedder = make_embedder(args.embedder, seed=args.seed)
    sets = []
    for d in (args.set_a, args.set_b):
        files = _png_inputs(d)
        if len(files) < 2:
            raise CommandError(f"{d}: FID needs at least 2 images per set")
        sets.append([load_png(f) for f in files])
    print(f"{fid.fid(sets[0], sets[1], embedder):.6f}")
    return 0


def cmd_make_synthetic(args) -> int:
    paths = synthetic.write_dataset(args.out, args.kind, args.count, args.size, args.seed)
    print(f"wrote {len(paths)} {args.kind} images to {args.out}")
    return 0


def _add_ctss_flags(p: argparse.ArgumentParser):
    p.add_argument("--d", type=float, default=DEFAULTS.d, help="high-pass threshold")
    p.add_argument("--n", type=float, default=DEFAULTS.n, help="high-pass sharpness exponent")
    p.add_argument("--gf-radius", type=int, default=DEFAULTS.gf_radius)
    p.add_argument("--gf-eps", type=float, default=DEFAULTS.gf_eps)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctss-toon", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("edges", help="dump refined edge maps as grayscale PNGs")
    p.add_argument("input", help="PNG file or directory")
    p.add_argument("--out", required=True)
    _add_ctss_flags(p)
    p.set_defaults(func=cmd_edges)

    p = sub.add_parser("sample-patches", help="write the top-K edge-salient patches and a manifest")
    p.add_argument("input", help="PNG file or directory (one mini-batch)")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=DEFAULTS.k)
    p.add_argument("--patch-size", type=int, default=DEFAULTS.patch_size)
    p.add_argument("--stride", type=int, default=None, help="fixed stride; drawn from [stride-min, stride-max] if omitted")
    p.add_argument("--stride-min", type=int, default=DEFAULTS.stride_min)
    p.add_argument("--stride-max", type=int, default=DEFAULTS.stride_max)
    p.add_argument("--seed", type=int, default=0)
    _add_ctss_flags(p)
    p.set_defaults(func=cmd_sample_patches)

    p = sub.add_parser("train", help="pretrain and adversarially train from a YAML config")
    p.add_argument("--config", required=True)
    p.add_argument("--photos", required=True)
    p.add_argument("--cartoons", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--max-steps", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="cartoonize PNGs with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--saturation", type=float, default=1.4)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("fid", help="Frechet distance between two PNG folders")
    p.add_argument("set_a")
    p.add_argument("set_b")
    p.add_argument("--embedder", default="test-random", help="'test-random' or 'weights:<path.npz>'")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fid)

    p = sub.add_parser("make-synthetic", help="generate a toy photo or cartoon dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--kind", choices=("photo", "cartoon"), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_synthetic)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    threads = os.environ.get("CTSS_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))
    try:
        return args.func(args)
    except Exception as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {args.command}: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
