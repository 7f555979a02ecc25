"""Synthetic crowds and scenes in the ETH/UCY annotation format.

Pedestrians follow waypoint routes through walkable corridors with a
social-force model (goal attraction, pedestrian and obstacle repulsion),
integrated at 0.1 s and annotated every 10th frame (0.4 s), which is the
ETH/UCY convention.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import RawAnnotation
from .scene import SceneRaster, one_hot, save_raster

FRAME_STRIDE = 10
SIM_DT = 0.1
SUBSTEPS = 4  # simulation steps per annotated frame
SIZE = 64
MPC = 0.25  # meters per cell -> 16 m square scenes
MAX_AGE = 40.0  # seconds; stuck walkers are removed


@dataclass
class Layout:
    name: str
    labels: np.ndarray                  # [SIZE, SIZE] class ids
    routes: list[list[tuple[float, float]]]
    weights: list[float]
    rate: float                         # spawns per second
    speed: tuple[float, float] = (1.1, 1.5)
    jitter: float = 0.8
    groups: float = 0.2                 # probability a spawn is a pair

    def obstacles(self) -> np.ndarray:
        rc = np.argwhere(self.labels == 1)
        return (rc[:, ::-1] + 0.5) * MPC  # cell centres as (x, y)


def _block(lbl, x0, y0, x1, y1, cls=1):
    c0, c1 = int(x0 / MPC), int(x1 / MPC)
    r0, r1 = int(y0 / MPC), int(y1 / MPC)
    lbl[r0:r1, c0:c1] = cls


def layouts() -> dict[str, Layout]:
    out = {}

    lbl = np.zeros((SIZE, SIZE), int)
    _block(lbl, 0, 0, 4.5, 16)
    _block(lbl, 11.5, 0, 16, 16, cls=2)
    _block(lbl, 11.5, 6, 16, 9)
    out["ETH"] = Layout("ETH", lbl,
                        [[(8, 0.2), (8, 15.8)], [(8, 15.8), (8, 0.2)],
                         [(7, 0.2), (9, 8), (13.5, 10.5), (15.8, 11)],
                         [(15.8, 4.5), (10, 4), (7.5, 15.8)]],
                        [0.4, 0.4, 0.1, 0.1], rate=0.22)

    lbl = np.zeros((SIZE, SIZE), int)
    _block(lbl, 0, 11, 16, 16)
    _block(lbl, 5, 5, 8, 6.5)
    _block(lbl, 0, 0, 16, 2.5, cls=2)
    out["HOTEL"] = Layout("HOTEL", lbl,
                          [[(0.2, 8), (15.8, 8)], [(15.8, 8), (0.2, 8)],
                           [(0.2, 4), (15.8, 4)], [(15.8, 4.5), (0.2, 4)],
                           [(10, 10.5), (10, 7.5), (0.2, 7.5)]],
                          [0.3, 0.3, 0.15, 0.15, 0.1], rate=0.2, speed=(0.9, 1.3))

    lbl = np.zeros((SIZE, SIZE), int)
    _block(lbl, 10.5, 2.5, 12.5, 4.5)
    _block(lbl, 0, 0, 2, 2)
    _block(lbl, 14, 14, 16, 16)
    out["UNIV"] = Layout("UNIV", lbl,
                         [[(0.2, 8), (15.8, 8)], [(15.8, 8), (0.2, 8)],
                          [(8, 0.2), (8, 15.8)], [(8, 15.8), (8, 0.2)],
                          [(0.2, 4), (5, 5), (11, 11), (15.8, 12)],
                          [(15.8, 4), (11, 5), (5, 11), (0.2, 12)],
                          [(4, 15.8), (4, 0.2)], [(12, 0.2), (12, 15.8)]],
                         [0.15] * 4 + [0.1] * 4, rate=0.5, speed=(0.7, 1.2), groups=0.35)

    for name, door, car in (("ZARA1", 9.0, 4.0), ("ZARA2", 6.0, 10.0)):
        lbl = np.zeros((SIZE, SIZE), int)
        _block(lbl, 0, 12, 16, 16)
        _block(lbl, door - 1, 12, door + 1, 16, cls=0)
        _block(lbl, 0, 0, 16, 3, cls=2)
        _block(lbl, car, 3, car + 3.5, 4.5)
        out[name] = Layout(name, lbl,
                           [[(0.2, 8), (15.8, 8.5)], [(15.8, 7.5), (0.2, 7)],
                            [(0.2, 9.5), (door, 9.5), (door, 15.8)],
                            [(door, 15.8), (door, 9), (15.8, 8.5)],
                            [(door, 15.8), (door, 9), (0.2, 7.5)],
                            [(15.8, 5.5), (0.2, 5.5)]],
                           [0.3, 0.3, 0.1, 0.1, 0.1, 0.1], rate=0.22)
    return out


@dataclass
class _Ped:
    pid: int
    pos: np.ndarray
    vel: np.ndarray
    speed: float
    route: list[np.ndarray]
    born: int = 0
    leg: int = 1


def simulate(layout: Layout, duration: float = 600.0, seed: int = 0,
             start_frame: int = 0) -> list[RawAnnotation]:
    rng = np.random.default_rng(seed)
    obst = layout.obstacles()
    peds: list[_Ped] = []
    rows: list[RawAnnotation] = []
    next_id = 1
    n_steps = int(duration / SIM_DT)
    w = np.asarray(layout.weights) / np.sum(layout.weights)
    for step in range(n_steps):
        frame = start_frame + (step // SUBSTEPS) * FRAME_STRIDE
        if rng.random() < layout.rate * SIM_DT:
            route = layout.routes[rng.choice(len(layout.routes), p=w)]
            offset = rng.normal(0, layout.jitter / 2, 2)
            members = 2 if rng.random() < layout.groups else 1
            speed = rng.uniform(*layout.speed)
            for k in range(members):
                pts = [np.asarray(p, float) + offset + (k * 0.7 * np.array([0.6, 0.6]))
                       for p in route]
                pts = [np.clip(p, 0.1, 15.9) for p in pts]
                d = pts[1] - pts[0]
                v0 = speed * d / (np.linalg.norm(d) + 1e-9)
                peds.append(_Ped(next_id, pts[0].copy(), v0, speed, pts, step))
                next_id += 1
        if not peds:
            continue
        P = np.array([p.pos for p in peds])
        V = np.array([p.vel for p in peds])
        F = np.zeros_like(P)
        for i, p in enumerate(peds):
            tgt = p.route[p.leg]
            d = tgt - p.pos
            dist = np.linalg.norm(d)
            desired = p.speed * d / (dist + 1e-9)
            F[i] += (desired - V[i]) / 0.5
        diff = P[:, None] - P[None]
        dist = np.linalg.norm(diff, axis=-1) + np.eye(len(P)) * 1e6
        mag = 2.0 * np.exp((0.6 - dist) / 0.3)
        mag[dist > 3.0] = 0.0
        F += (mag[..., None] * diff / dist[..., None]).sum(axis=1)
        if len(obst):
            od = P[:, None] - obst[None]
            on = np.linalg.norm(od, axis=-1)
            om = 3.0 * np.exp((0.2 - on) / 0.2)
            om[on > 1.0] = 0.0
            F += (om[..., None] * od / (on[..., None] + 1e-9)).sum(axis=1)
        F += rng.normal(0, 0.15, F.shape)
        V = V + SIM_DT * F
        sp = np.linalg.norm(V, axis=-1, keepdims=True)
        V = np.where(sp > 2.0, V * 2.0 / sp, V)
        P = P + SIM_DT * V
        alive = []
        for i, p in enumerate(peds):
            p.pos, p.vel = P[i], V[i]
            if np.linalg.norm(p.route[p.leg] - p.pos) < 0.6:
                p.leg += 1
            inside = np.all((p.pos > 0) & (p.pos < 16))
            too_old = (step - p.born) * SIM_DT > MAX_AGE
            if p.leg >= len(p.route) or not inside or too_old:
                continue
            if step % SUBSTEPS == 0:
                rows.append(RawAnnotation(frame, p.pid, round(float(p.pos[0]), 3),
                                          round(float(p.pos[1]), 3)))
            alive.append(p)
        peds = alive
    return rows


def scene_raster(layout: Layout) -> SceneRaster:
    return SceneRaster(one_hot(layout.labels), MPC, (0.0, 0.0))


def write_annotations(rows: list[RawAnnotation], path) -> None:
    rows = sorted(rows, key=lambda a: (a.frame_id, a.ped_id))
    with open(path, "w") as fh:
        for a in rows:
            fh.write(f"{a.frame_id}\t{a.ped_id}\t{a.x:.3f}\t{a.y:.3f}\n")


def write_label_grid(layout: Layout, path) -> None:
    Path(path).write_text("\n".join("".join(str(v) for v in row) for row in layout.labels) + "\n")


def make_dataset(out_dir, duration: float = 600.0, seed: int = 0) -> Path:
    """Write five scenes (annotations, label grid, raster) plus a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for k, (name, lay) in enumerate(layouts().items()):
        rows = simulate(lay, duration, seed=seed * 100 + k)
        write_annotations(rows, out / f"{name.lower()}.txt")
        write_label_grid(lay, out / f"{name.lower()}_labels.txt")
        save_raster(scene_raster(lay), out / f"{name.lower()}.raster")
        lines.append(f"{name} {name.lower()}.txt {name.lower()}.raster")
    manifest = out / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


# --- small fixtures ---------------------------------------------------------

def crowd(n: int, steps: int = 20, seed: int = 0, stride: int = FRAME_STRIDE) -> list[RawAnnotation]:
    """n pedestrians random-walking, all present at every one of `steps` frames."""
    rng = np.random.default_rng(seed)
    pos = rng.uniform(0, 10, (n, 2))
    rows = []
    for t in range(steps):
        pos = pos + rng.normal(0, 0.1, pos.shape)
        rows.extend(RawAnnotation(t * stride, i + 1, float(pos[i, 0]), float(pos[i, 1]))
                    for i in range(n))
    return rows


def overfit_tracks(n: int = 32, seed: int = 0, length: int = 20) -> list[RawAnnotation]:
    """n single-window tracks: half straight lines, half with one 90 degree turn.

    Each track gets its own time slot, so nobody has neighbours.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n):
        start = rng.uniform(2, 14, 2)
        ang = rng.uniform(0, 2 * np.pi)
        speed = rng.uniform(0.3, 0.6)  # meters per annotated step
        v = speed * np.array([np.cos(ang), np.sin(ang)])
        turn_at = rng.integers(2, 8) if i % 2 else length
        sign = 1 if rng.random() < 0.5 else -1
        p = start.copy()
        for t in range(length):
            rows.append(RawAnnotation((i * (length + 5) + t) * FRAME_STRIDE, i + 1,
                                      float(p[0]), float(p[1])))
            if t + 1 == turn_at:
                v = sign * np.array([-v[1], v[0]])
            p = p + v
    return rows
