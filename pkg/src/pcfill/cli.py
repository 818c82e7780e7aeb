"""Command line entry points.

Subcommands: gen-data, train, eval, complete, verify. Exit codes follow the
usual convention: 0 on success, 1 on an operational failure (unreadable
inputs, failed verification, aborted training), 2 on usage errors.

Kernel parallelism is controlled by the CSDN_THREADS environment variable;
CSDN_NO_NUMBA=1 forces the pure-numpy kernel backend.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import checkpoint as ckpt
from . import config as config_mod
from . import geometry, network, train, verify
from .config import ConfigError
from .data import dataset, render, shapes
from .geometry import GeometryError

_FAILURES = (ConfigError, GeometryError, dataset.DataError,
             render.RenderError, shapes.ShapeError, train.TrainError,
             ckpt.CheckpointError)

# CLI flag dest -> config field
_CONFIG_FLAGS = {
    "variant": "variant",
    "epochs": "epochs",
    "seed": "seed",
    "batch_size": "batch_size",
    "lr": "learning_rate",
    "lr_decay": "lr_decay",
    "lr_decay_epochs": "lr_decay_epochs",
    "alpha_ramp_iters": "alpha_ramp_iters",
    "precision": "precision",
    "points": "n_points",
    "image_size": "image_size",
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pcfill",
        description="cross-modal point cloud completion pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("root", help="dataset output directory")
    g.add_argument("--per-category", type=int, required=True,
                   help="training objects per category")
    g.add_argument("--eval-per-category", type=int, default=0)
    g.add_argument("--points", type=int, default=512,
                   help="points per cloud (gt and partial)")
    g.add_argument("--image-size", type=int, default=64)
    g.add_argument("--views", type=int, default=render.VIEW_COUNT)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--force", action="store_true",
                   help="replace an existing dataset root")
    g.add_argument("--quiet", action="store_true")

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--data", required=True, help="dataset root")
    t.add_argument("--out", required=True, help="run directory for artifacts")
    t.add_argument("--preset", choices=sorted(config_mod.PRESETS))
    t.add_argument("--config", help="key = value config file")
    t.add_argument("--variant", choices=config_mod.VARIANTS)
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--lr-decay", type=float)
    t.add_argument("--lr-decay-epochs", type=int)
    t.add_argument("--alpha-ramp-iters", type=int)
    t.add_argument("--precision", type=int, choices=(32, 64))
    t.add_argument("--points", type=int)
    t.add_argument("--image-size", type=int)
    t.add_argument("--deterministic", action="store_true",
                   help="single-threaded kernels for bit-stable runs")
    t.add_argument("--resume", action="store_true",
                   help="continue from <out>/checkpoint.bin")
    t.add_argument("--checkpoint-every", type=int, default=1, metavar="EPOCHS")
    t.add_argument("--log-every", type=int, default=10, metavar="STEPS")
    t.add_argument("--quiet", action="store_true")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="eval", choices=dataset.SPLITS)
    e.add_argument("--limit", type=int, help="evaluate only the first N records")
    e.add_argument("--report", help="write a per-record CSV here")
    e.add_argument("--per-view-std", action="store_true",
                   help="also print the std of per-record metrics")
    e.add_argument("--quiet", action="store_true")

    c = sub.add_parser("complete", help="complete one partial cloud")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--partial", required=True, help="partial cloud .xyz")
    c.add_argument("--image", help=".img view (required unless the model "
                                   "was trained without images)")
    c.add_argument("--camera", help="camera .txt for the view")
    c.add_argument("--out", required=True, help="completed cloud .xyz")
    c.add_argument("--emit-coarse", metavar="PATH",
                   help="also write the pre-refinement cloud")

    v = sub.add_parser("verify", help="run the built-in self checks")
    v.add_argument("--quiet", action="store_true")
    return parser


def _progress(args):
    if getattr(args, "quiet", False):
        return None
    return lambda msg: print(msg, flush=True)


def cmd_gen_data(args):
    meta, records = dataset.generate_dataset(
        args.root, per_category=args.per_category,
        eval_per_category=args.eval_per_category, n_points=args.points,
        image_size=args.image_size, n_views=args.views, seed=args.seed,
        force=args.force, progress=_progress(args))
    print(f"wrote {len(records)} records under {args.root} "
          f"(seed {args.seed}, {meta['n_views']} views)")
    return 0


def cmd_train(args):
    overrides = {field: getattr(args, dest)
                 for dest, field in _CONFIG_FLAGS.items()
                 if getattr(args, dest) is not None}
    if args.deterministic:
        overrides["deterministic"] = True
    cfg = config_mod.make_config(args.preset, args.config, overrides)
    _, iterations = train.run_training(
        cfg, args.data, args.out, resume=args.resume,
        checkpoint_every=args.checkpoint_every, log_every=args.log_every,
        progress=_progress(args))
    print(f"trained {iterations} iterations; artifacts in {args.out} "
          f"(config {config_mod.config_hash(cfg)})")
    return 0


def cmd_eval(args):
    cfg, params = train.load_model(args.checkpoint)
    ds = dataset.Dataset(args.data, args.split)
    rows, summary = train.evaluate(cfg, params, ds, limit=args.limit,
                                   progress=_progress(args))
    if args.report:
        _write_report(args.report, cfg, args, rows, summary)
    print(f"evaluated {summary['count']} records of split '{args.split}'")
    print(f"cd_coarse {summary['cd_coarse']:.6g}  cd_out "
          f"{summary['cd_out']:.6g}  fscore {summary['fscore']:.4g}")
    if args.per_view_std:
        for key in ("cd_coarse", "cd_out", "fscore"):
            std = float(np.std([r[key] for r in rows]))
            print(f"{key}_std {std:.6g}")
    return 0


def _write_report(path, cfg, args, rows, summary):
    with open(path, "w") as fh:
        fh.write("# evaluation report\n")
        fh.write(f"# version = {__version__}, config_hash = "
                 f"{config_mod.config_hash(cfg)}, checkpoint = "
                 f"{args.checkpoint}, split = {args.split}\n")
        fh.write("category,object,view,cd_coarse,cd_out,fscore\n")
        for r in rows:
            fh.write(f"{r['category']},{r['object']},{r['view']},"
                     f"{r['cd_coarse']:.8g},{r['cd_out']:.8g},"
                     f"{r['fscore']:.6g}\n")
        fh.write(f"# summary count={summary['count']} "
                 f"cd_coarse={summary['cd_coarse']:.8g} "
                 f"cd_out={summary['cd_out']:.8g} "
                 f"fscore={summary['fscore']:.6g}\n")


def cmd_complete(args):
    cfg, params = train.load_model(args.checkpoint)
    partial = dataset.read_xyz(args.partial)
    image = camera = None
    if network.uses_image(cfg):
        if not args.image or not args.camera:
            raise ConfigError(
                "this model conditions on an image: --image and --camera "
                "are required")
        image = dataset.read_img(args.image)
        camera = dataset.read_camera(args.camera)
    coarse, out = network.forward(params, cfg, partial, image, camera)
    header = (f"completed cloud, version = {__version__}, config_hash = "
              f"{config_mod.config_hash(cfg)}, variant = {cfg.variant}\n"
              f"source = {args.partial}")
    dataset.write_xyz(args.out, out.data, comment=header)
    if args.emit_coarse:
        dataset.write_xyz(args.emit_coarse, coarse.data,
                          comment=header + "\nstage = coarse")
    print(f"wrote {out.data.shape[0]} points to {args.out}")
    return 0


def cmd_verify(args):
    printer = (lambda msg: None) if args.quiet else print
    ok = verify.run_verify(printer)
    print("verify: all checks passed" if ok else "verify: FAILED")
    return 0 if ok else 1


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "complete": cmd_complete,
    "verify": cmd_verify,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except _FAILURES as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
