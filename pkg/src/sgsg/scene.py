"""Semantic scene rasters, the small scene CNN and feature merging."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import Tensor

MAGIC = b"SGSGRAST"
_HEADER = struct.Struct("<8s3I3d")
CLASSES = ("walkable", "obstacle", "other")
MERGE_MODES = ("gating", "add", "concat")


class RasterFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SceneRaster:
    """One-hot class grid [C, H, W]; cell (r, c) covers world
    x in origin_x + c*m .. +m and y in origin_y + r*m .. +m."""
    grid: np.ndarray
    meters_per_cell: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        validate_one_hot(self.grid)

    @property
    def shape(self):
        return self.grid.shape

    def labels(self) -> np.ndarray:
        return self.grid.argmax(axis=0)

    def class_at(self, xy) -> int:
        m = self.meters_per_cell
        c = int(np.floor((xy[0] - self.origin[0]) / m))
        r = int(np.floor((xy[1] - self.origin[1]) / m))
        _, H, W = self.grid.shape
        if not (0 <= r < H and 0 <= c < W):
            raise IndexError(f"point {xy} outside raster")
        return int(self.labels()[r, c])


def validate_one_hot(grid: np.ndarray) -> None:
    if grid.ndim != 3 or min(grid.shape) < 1:
        raise RasterFormatError(f"raster grid must be [C,H,W], got {grid.shape}")
    if not np.all((grid == 0) | (grid == 1)):
        raise RasterFormatError("raster values must be 0 or 1")
    sums = grid.sum(axis=0)
    if not np.all(sums == 1):
        r, c = np.argwhere(sums != 1)[0]
        raise RasterFormatError(f"cell ({r},{c}) sums to {sums[r, c]:g}, expected one-hot")


def one_hot(labels: np.ndarray, channels: int = len(CLASSES)) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= channels:
        raise RasterFormatError(f"class labels must lie in 0..{channels - 1}")
    return (np.arange(channels)[:, None, None] == labels[None]).astype(np.float32)


def save_raster(raster: SceneRaster, path) -> None:
    C, H, W = raster.grid.shape
    head = _HEADER.pack(MAGIC, C, H, W, float(raster.meters_per_cell), *map(float, raster.origin))
    Path(path).write_bytes(head + raster.grid.astype("<f4").tobytes())


def load_raster(path) -> SceneRaster:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise RasterFormatError(f"{path}: truncated header")
    magic, C, H, W, mpc, ox, oy = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise RasterFormatError(f"{path}: bad magic {magic!r}")
    n = C * H * W
    if n == 0 or len(buf) != _HEADER.size + 4 * n:
        raise RasterFormatError(f"{path}: payload size does not match shape {C}x{H}x{W}")
    if not mpc > 0:
        raise RasterFormatError(f"{path}: meters_per_cell must be positive")
    grid = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(C, H, W).astype(np.float32)
    return SceneRaster(grid, mpc, (ox, oy))


def rasterize_text(text: str, meters_per_cell: float = 1.0, origin=(0.0, 0.0),
                   channels: int = len(CLASSES)) -> SceneRaster:
    """Text line i becomes raster row i; each character is a class digit."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise RasterFormatError("empty label grid")
    if len({len(ln) for ln in lines}) != 1:
        raise RasterFormatError("label grid rows have unequal length")
    try:
        labels = np.array([[int(ch) for ch in ln] for ln in lines])
    except ValueError:
        raise RasterFormatError("label grid must contain only class digits") from None
    return SceneRaster(one_hot(labels, channels), meters_per_cell, tuple(origin))


def rotate_raster(r: SceneRaster) -> SceneRaster:
    """Rotate the raster with the world by 90 degrees, (x, y) -> (-y, x)."""
    _, H, W = r.grid.shape
    m = r.meters_per_cell
    grid = np.ascontiguousarray(np.rot90(r.grid, k=-1, axes=(1, 2)))
    origin = (-(r.origin[1] + H * m), r.origin[0])
    return SceneRaster(grid, m, origin)


def resample_raster(r: SceneRaster, size: int) -> SceneRaster:
    """Nearest-neighbour resample to size x size cells covering the same extent
    along the longer side."""
    C, H, W = r.grid.shape
    if H == W == size:
        return r
    extent = max(H, W) * r.meters_per_cell
    m = extent / size
    centers = (np.arange(size) + 0.5) * m
    rows = np.minimum((centers / r.meters_per_cell).astype(int), H - 1)
    cols = np.minimum((centers / r.meters_per_cell).astype(int), W - 1)
    grid = r.grid[:, rows][:, :, cols]
    return SceneRaster(np.ascontiguousarray(grid), m, r.origin)


# --- encoder ---------------------------------------------------------------

def cnn_dims(channels: int, size: int, pool: int = 4) -> int:
    side = size // pool // pool
    if side < 1:
        raise ValueError(f"raster size {size} too small for two {pool}x pooling stages")
    return 16 * side * side


def encode_scene(rasters: Tensor, params, pool: int = 4) -> Tensor:
    """[R, C, H, W] one-hot rasters -> [R, 32] scene logits s."""
    x = T.conv2d(rasters, params["scene.conv1.K"], params["scene.conv1.b"], padding=1)
    x = T.avg_pool2d(T.relu(x), pool)
    x = T.conv2d(x, params["scene.conv2.K"], params["scene.conv2.b"], padding=1)
    x = T.avg_pool2d(T.relu(x), pool)
    x = T.reshape(x, (x.shape[0], -1))
    return T.affine(x, params["scene.fc.W"], params["scene.fc.b"])


def gate(s: Tensor, g: Tensor, mode: str = "gating", proj=None) -> Tensor:
    """Merge a scene feature s with a social feature g.

    gating: sigmoid(s) * g; add: s + g; concat: W [s; g] + b back to 32-d.
    """
    if mode == "gating":
        return T.mul(T.sigmoid(s), g)
    if mode == "add":
        return T.add(s, g)
    if mode == "concat":
        if proj is None:
            raise ValueError("concat merge needs a projection (W, b)")
        return T.affine(T.concat([s, g], axis=-1), *proj)
    raise ValueError(f"unknown merge mode {mode!r}; choose from {MERGE_MODES}")
