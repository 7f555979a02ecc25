"""Command line interface: train, evaluate, predict, rasterize-scene, graph-stats, plot."""
from __future__ import annotations

import os

# training and evaluation are single-threaded so results are bitwise reproducible
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

from . import harness as H  # noqa: E402
from .checkpoint import CheckpointFormatError  # noqa: E402
from .dataset import ConfigurationError, ParseError, parse_scene  # noqa: E402
from .plotting import plot_dump  # noqa: E402
from .scene import RasterFormatError, rasterize_text, save_raster  # noqa: E402

EXPECTED_ERRORS = (ConfigurationError, ParseError, CheckpointFormatError, RasterFormatError,
                   H.TrainingError, OSError, ValueError)


def _write(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _train_config(args) -> H.TrainConfig:
    cfg = H.load_config(args.config)
    kw = dict(H.VARIANTS[args.variant]) if args.variant else {}
    if args.held_out:
        kw["held_out"] = args.held_out
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.epochs is not None:
        kw["epochs"] = args.epochs
    if args.merge:
        kw["merge_mode"] = args.merge
    for flag, key, value in (("no_scene", "use_scene", False), ("no_sg", "use_sg", False),
                             ("no_vae", "use_vae", False), ("teacher_forcing", "teacher_forcing", True),
                             ("prior_sampling", "prior_sampling", True),
                             ("gcn_self_loop", "gcn_self_loop", True)):
        if getattr(args, flag):
            kw[key] = value
    cfg = cfg.replace(**kw)
    if not cfg.held_out:
        raise ConfigurationError("no held-out scene given (--held-out or held_out in the config)")
    return cfg


def cmd_train(args) -> int:
    cfg = _train_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    split = H.prepare_split(cfg)
    result = H.train(cfg, split, log_every=args.log_every)
    H.write_train_log(result.log, out / "train_log.csv")
    (out / "config.txt").write_text(H.dump_config(cfg))
    meta = H.checkpoint_meta(cfg, split.norm, {"best_epoch": result.best_epoch})
    H.save_model(out / "model.ckpt", result.model, meta, result.best_state)
    print(f"trained {len(result.log)} epochs on {len(split.train)} windows; "
          f"best epoch {result.best_epoch}; checkpoint {out / 'model.ckpt'}")
    return 0


def _eval_inputs(args):
    model, meta = H.load_model(args.checkpoint)
    cfg = H.load_config(args.config)
    trained = meta.get("train_config", {})
    scene = args.scene or trained.get("held_out") or cfg.held_out
    if not scene:
        raise ConfigurationError("no test scene (--scene, checkpoint or config held_out)")
    cfg = cfg.replace(held_out=scene, raster_size=model.config.raster_size,
                      gcn_self_loop=model.config.gcn_self_loop)
    data = H.held_out_set(cfg, H.norm_from_meta(meta["norm"]))
    return model, data, scene


def cmd_evaluate(args) -> int:
    model, data, scene = _eval_inputs(args)
    reports = [H.evaluate_set(model, data, k, args.seed, args.deterministic, scene) for k in args.k]
    _write(H.metrics_csv(reports), args.out)
    return 0


def cmd_predict(args) -> int:
    model, data, _ = _eval_inputs(args)
    preds = H.predict_set(model, data, args.k[0], args.seed, args.deterministic)
    _write(H.predictions_csv(data, preds), args.out)
    return 0


def cmd_rasterize(args) -> int:
    raster = rasterize_text(Path(args.labels).read_text(), args.meters_per_cell, tuple(args.origin))
    save_raster(raster, args.out)
    print(f"wrote {args.out}: {raster.grid.shape[0]}x{raster.grid.shape[1]}x{raster.grid.shape[2]}")
    return 0


def cmd_graph_stats(args) -> int:
    if args.manifest:
        entries = H.load_manifest(args.manifest)
        scenes = {n: parse_scene(e.annotations) for n, e in entries.items()}
    else:
        scenes = {Path(p).stem: parse_scene(p) for p in args.annotations}
    if not scenes:
        raise ConfigurationError("give --manifest or annotation files")
    _write(H.graph_stats_csv(scenes), args.out)
    return 0


def cmd_plot(args) -> int:
    for path in plot_dump(args.dump, args.out_dir):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sgsg", description="Star-graph scene-gated trajectory forecasting.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one leave-one-out split")
    t.add_argument("--config", required=True)
    t.add_argument("--held-out")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--variant", choices=sorted(H.VARIANTS), help="ablation preset; later flags override it")
    t.add_argument("--merge", choices=("gating", "add", "concat"))
    t.add_argument("--no-scene", action="store_true")
    t.add_argument("--no-sg", action="store_true")
    t.add_argument("--no-vae", action="store_true")
    t.add_argument("--teacher-forcing", action="store_true")
    t.add_argument("--prior-sampling", action="store_true")
    t.add_argument("--gcn-self-loop", action="store_true")
    t.add_argument("--log-every", type=int, default=0)
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=cmd_train)

    for name, func, help_ in (("evaluate", cmd_evaluate, "best-of-K metrics CSV"),
                              ("predict", cmd_predict, "per-window sample dump CSV")):
        e = sub.add_parser(name, help=help_)
        e.add_argument("--checkpoint", required=True)
        e.add_argument("--config", required=True)
        e.add_argument("--k", type=int, choices=(1, 20, 100), nargs="+", default=[20])
        e.add_argument("--seed", type=int, default=0)
        e.add_argument("--deterministic", action="store_true", help="use z = mu")
        e.add_argument("--scene", help="test scene (default: the checkpoint's held-out scene)")
        e.add_argument("--out")
        e.set_defaults(func=func)

    r = sub.add_parser("rasterize-scene", help="label grid text -> raster file")
    r.add_argument("--labels", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--meters-per-cell", type=float, default=1.0)
    r.add_argument("--origin", type=float, nargs=2, default=(0.0, 0.0), metavar=("X", "Y"))
    r.set_defaults(func=cmd_rasterize)

    g = sub.add_parser("graph-stats", help="star vs complete edge counts per timestep")
    g.add_argument("--manifest")
    g.add_argument("annotations", nargs="*")
    g.add_argument("--out")
    g.set_defaults(func=cmd_graph_stats)

    pl = sub.add_parser("plot", help="one SVG per scene from a predict dump")
    pl.add_argument("--dump", required=True)
    pl.add_argument("--out-dir", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except EXPECTED_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
