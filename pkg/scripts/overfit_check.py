"""Fit 32 hand-made tracks and report the training ADE per 50 epochs.

    python scripts/overfit_check.py --epochs 500 --lr 0.003
"""
import argparse

import numpy as np

from sgsg.dataset import fit_norm
from sgsg.harness import SceneData, Split, TrainConfig, assemble, blank_raster, scene_samples, train
from sgsg.synthetic import overfit_tracks


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.003)
    p.add_argument("--kld-weight", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    scene = SceneData("FIX", overfit_tracks(32, seed=0), blank_raster(64))
    windows, graphs = scene_samples(scene)
    norm = fit_norm(windows)
    data = assemble(windows, graphs, {"FIX": scene.raster}, {"FIX": norm})
    cfg = TrainConfig(epochs=args.epochs, batch_size=16, lr=args.lr, kld_weight=args.kld_weight,
                      seed=args.seed, val_fraction=0.0, patience=0)
    res = train(cfg, Split(data, None, None, norm, ["FIX"], "FIX"))
    for row in res.log[::50] + res.log[-1:]:
        print(f"epoch {row['epoch']:4d} train loss {row['train_loss']:.5f}")
    pred = res.model.sample(data.batch, None)[:, 0]
    print(f"final train ADE (normalized) {np.linalg.norm(pred - data.batch.gt, axis=-1).mean():.4f}")
    print(f"loss regressions in first 10 epochs: {res.regressions(10)}")


if __name__ == "__main__":
    main()
