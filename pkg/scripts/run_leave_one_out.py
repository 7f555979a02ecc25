"""Train and evaluate every leave-one-scene-out split; prints a metrics table.

    python scripts/run_leave_one_out.py --config config.txt --out runs/loo
"""
import argparse
import logging
from pathlib import Path

from sgsg.harness import load_config, load_scenes, metrics_csv, run_leave_one_out


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="directory for checkpoints and metrics.csv")
    p.add_argument("--k", type=int, nargs="+", default=[1, 20])
    p.add_argument("--epochs", type=int)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = load_config(args.config)
    if args.epochs is not None:
        cfg = cfg.replace(epochs=args.epochs)
    scenes = load_scenes(cfg.manifest, cfg.raster_size)
    reports = run_leave_one_out(cfg, scenes, args.out, tuple(args.k))
    text = metrics_csv(reports)
    Path(args.out, "metrics.csv").write_text(text)
    print(text, end="")
    for k in args.k:
        rs = [r for r in reports if r.k == k]
        print(f"K={k:3d} mean ADE {sum(r.ade for r in rs) / len(rs):.3f} m  "
              f"FDE {sum(r.fde for r in rs) / len(rs):.3f} m")


if __name__ == "__main__":
    main()
