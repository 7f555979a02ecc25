"""Central finite-difference oracle shared by the gradient tests."""
import numpy as np

from sgsg.tensor import Tape


def numeric_grad(f, arr: np.ndarray, idx, h: float = 1e-5) -> float:
    old = arr[idx]
    arr[idx] = old + h
    fp = f()
    arr[idx] = old - h
    fm = f()
    arr[idx] = old
    return (fp - fm) / (2 * h)


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative error, so near-zero entries don't dominate."""
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def check_tensors(loss_fn, tensors: dict, h: float = 1e-5, max_entries: int | None = None,
                  rng=None) -> dict[str, float]:
    """Compare tape gradients of loss_fn() against central differences.

    loss_fn builds the scalar loss from the tensors (float64) each call.
    With max_entries, a subset of coordinates per tensor is checked (the
    largest analytic entries plus random ones) together with one random
    unit-direction derivative over the whole tensor.
    """
    for t in tensors.values():
        t.grad = None
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    value = lambda: float(loss_fn().data)  # noqa: E731
    errs = {}
    rng = rng or np.random.default_rng(0)
    for name, t in tensors.items():
        g = np.zeros_like(t.data) if t.grad is None else t.grad
        n = t.data.size
        if max_entries is None or n <= max_entries:
            idxs = list(np.ndindex(t.shape))
        else:
            # half the largest analytic entries, half random ones
            top = np.argsort(-np.abs(g).ravel(), kind="stable")[:max_entries // 2]
            rest = np.setdiff1d(np.arange(n), top)
            flat = np.concatenate([top, rng.choice(rest, max_entries - len(top), replace=False)])
            idxs = [np.unravel_index(i, t.shape) for i in flat]
        num = np.array([numeric_grad(value, t.data, i, h) for i in idxs])
        ana = np.array([g[i] for i in idxs])
        err = rel_error(ana, num)
        if max_entries is not None and n > max_entries:
            v = rng.standard_normal(t.shape)
            v /= np.linalg.norm(v)  # unit step keeps the probe clear of ReLU kinks
            base = t.data.copy()
            t.data = base + h * v
            fp = value()
            t.data = base - h * v
            fm = value()
            t.data = base
            # |g.v| <= |g| for unit v, so |g| is the natural scale of the probe
            scale = max(np.linalg.norm(g), 1e-12)
            err = max(err, abs((g * v).sum() - (fp - fm) / (2 * h)) / scale)
        errs[name] = err
    return errs
