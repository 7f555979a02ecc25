"""Train every ablation variant on one held-out scene and tabulate K=1/K=20 ADE.

    python scripts/run_ablation.py --config config.txt --held-out ZARA1 --out runs/ablation
"""
import argparse
import logging
from pathlib import Path

from sgsg.harness import (VARIANTS, checkpoint_meta, evaluate_set, load_config, metrics_csv,
                          prepare_split, save_model, train)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", required=True)
    p.add_argument("--held-out", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--variants", nargs="+", default=sorted(VARIANTS), choices=sorted(VARIANTS))
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    base = load_config(args.config).replace(held_out=args.held_out)
    if args.epochs is not None:
        base = base.replace(epochs=args.epochs)
    rows = []
    for name in args.variants:
        cfg = base.replace(**VARIANTS[name])
        split = prepare_split(cfg)
        res = train(cfg, split)
        res.model.params.load_state_dict(res.best_state)
        save_model(out / f"{name}.ckpt", res.model, checkpoint_meta(cfg, split.norm))
        reports = [evaluate_set(res.model, split.test, k, cfg.seed, k == 1, name) for k in (1, 20)]
        (out / f"{name}.csv").write_text(metrics_csv(reports))
        rows.append((name, reports[0].ade, reports[1].ade, reports[1].fde))
    print(f"{'variant':>8} {'ADE@1':>8} {'ADE@20':>8} {'FDE@20':>8}")
    for name, a1, a20, f20 in rows:
        print(f"{name:>8} {a1:8.3f} {a20:8.3f} {f20:8.3f}")


if __name__ == "__main__":
    main()
