"""Displacement metrics and the constant-velocity reference predictor."""
from __future__ import annotations

import numpy as np


def _check(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground truth {gt.shape}")
    return pred, gt


def ade(pred, gt) -> float:
    """Mean Euclidean distance over the prediction steps."""
    pred, gt = _check(pred, gt)
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def fde(pred, gt) -> float:
    pred, gt = _check(pred, gt)
    return float(np.linalg.norm(pred[-1] - gt[-1]))


def best_of_k(preds, gt) -> tuple[float, float]:
    """(minADE, minFDE) over K samples, each minimised on its own."""
    preds = np.asarray(preds, dtype=np.float64)
    if preds.ndim != 3 or len(preds) == 0:
        raise ValueError("best_of_k needs a non-empty [K, T, 2] sample array")
    gt = np.asarray(gt, dtype=np.float64)
    if preds.shape[1:] != gt.shape:
        raise ValueError(f"sample shape {preds.shape[1:]} != ground truth {gt.shape}")
    d = np.linalg.norm(preds - gt[None], axis=-1)
    return float(d.mean(axis=1).min()), float(d[:, -1].min())


def constant_velocity_baseline(obs, t_pred: int = 12) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    v = obs[-1] - obs[-2]
    return obs[-1] + np.arange(1, t_pred + 1)[:, None] * v
