"""ETH/UCY-style annotation parsing, windowing, normalisation and splits."""
from __future__ import annotations

import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

T_OBS = 8
T_PRED = 12
SCENES = ("ETH", "HOTEL", "UNIV", "ZARA1", "ZARA2")


class ParseError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class RawAnnotation:
    frame_id: int
    ped_id: int
    x: float
    y: float


@dataclass(frozen=True)
class TrajWindow:
    scene_id: str
    poi_id: int
    start_frame: int
    obs: np.ndarray  # [T_OBS, 2] meters
    gt: np.ndarray   # [T_PRED, 2] meters
    stride: int = 1

    @property
    def frames(self) -> np.ndarray:
        n = len(self.obs) + len(self.gt)
        return self.start_frame + self.stride * np.arange(n)

    @property
    def obs_frames(self) -> np.ndarray:
        return self.frames[:len(self.obs)]


@dataclass(frozen=True)
class NormParams:
    lo: np.ndarray  # per-axis min
    hi: np.ndarray  # per-axis max

    def __post_init__(self):
        if not np.all(self.hi > self.lo):
            raise ConfigurationError(f"degenerate normalisation bounds {self.lo} .. {self.hi}")


# --- parsing ---------------------------------------------------------------

def parse_rows(path) -> list[RawAnnotation]:
    rows = []
    seen = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 columns, got {len(parts)}")
            try:
                frame, ped = int(float(parts[0])), int(float(parts[1]))
                x, y = float(parts[2]), float(parts[3])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: malformed row {line.strip()!r}") from None
            if not (np.isfinite(x) and np.isfinite(y)):
                raise ParseError(f"{path}:{lineno}: non-finite coordinate")
            if (frame, ped) in seen:
                raise ParseError(f"{path}:{lineno}: duplicate (frame {frame}, ped {ped})")
            seen.add((frame, ped))
            rows.append(RawAnnotation(frame, ped, x, y))
    return rows


def detect_stride(annotations: list[RawAnnotation]) -> int:
    """Modal gap between consecutive frames of the same pedestrian."""
    gaps: Counter[int] = Counter()
    last: dict[int, int] = {}
    for a in sorted(annotations, key=lambda a: (a.ped_id, a.frame_id)):
        if a.ped_id in last:
            gaps[a.frame_id - last[a.ped_id]] += 1
        last[a.ped_id] = a.frame_id
    if not gaps:
        return 1
    # ties go to the smaller gap
    return min(gaps, key=lambda g: (-gaps[g], g))


def parse_scene(path) -> list[RawAnnotation]:
    """Read an annotation file and drop rows that are off the modal stride.

    Rows are returned sorted by (ped_id, frame_id).
    """
    rows = parse_rows(path)
    if not rows:
        return []
    stride = detect_stride(rows)
    base = min(a.frame_id for a in rows)
    kept = [a for a in rows if (a.frame_id - base) % stride == 0]
    if len(kept) != len(rows):
        warnings.warn(f"{path}: dropped {len(rows) - len(kept)} rows off the "
                      f"{stride}-frame annotation stride", stacklevel=2)
    return sorted(kept, key=lambda a: (a.ped_id, a.frame_id))


# --- windows and neighbours -------------------------------------------------

def tracks(annotations: list[RawAnnotation], stride: int) -> list[list[RawAnnotation]]:
    """Split into maximal runs of consecutive frames per pedestrian."""
    out = []
    by_ped: dict[int, list[RawAnnotation]] = defaultdict(list)
    for a in annotations:
        by_ped[a.ped_id].append(a)
    for ped in sorted(by_ped):
        run: list[RawAnnotation] = []
        for a in sorted(by_ped[ped], key=lambda a: a.frame_id):
            if run and a.frame_id - run[-1].frame_id != stride:
                out.append(run)
                run = []
            run.append(a)
        if run:
            out.append(run)
    return out


def build_windows(annotations: list[RawAnnotation], scene_id: str = "",
                  t_obs: int = T_OBS, t_pred: int = T_PRED,
                  stride: int | None = None) -> list[TrajWindow]:
    if stride is None:
        stride = detect_stride(annotations)
    n = t_obs + t_pred
    windows = []
    for run in tracks(annotations, stride):
        pts = np.array([(a.x, a.y) for a in run], dtype=np.float64)
        for s in range(len(run) - n + 1):
            windows.append(TrajWindow(scene_id, run[0].ped_id, run[s].frame_id,
                                      pts[s:s + t_obs].copy(), pts[s + t_obs:s + n].copy(),
                                      stride))
    return windows


class NeighborIndex:
    """(scene, frame) -> {ped_id: (x, y)}; immutable once built."""

    def __init__(self):
        self._index: dict[tuple[str, int], dict[int, tuple[float, float]]] = {}

    @classmethod
    def build(cls, scenes: dict[str, list[RawAnnotation]]) -> "NeighborIndex":
        idx = cls()
        for scene, anns in scenes.items():
            for a in anns:
                idx._index.setdefault((scene, a.frame_id), {})[a.ped_id] = (a.x, a.y)
        return idx

    def at(self, scene: str, frame: int) -> dict[int, tuple[float, float]]:
        return self._index.get((scene, frame), {})

    def keys(self):
        return self._index.keys()

    def __len__(self):
        return sum(len(v) for v in self._index.values())


def neighbors_at(index: NeighborIndex, scene: str, frame: int, poi: int
                 ) -> list[tuple[int, tuple[float, float]]]:
    """Everyone annotated at the frame except the POI, ascending ped_id."""
    return [(p, pos) for p, pos in sorted(index.at(scene, frame).items()) if p != poi]


# --- normalisation ----------------------------------------------------------

def fit_norm(windows: list[TrajWindow], observed_only: bool = False) -> NormParams:
    """Per-axis bounds; observed_only skips the future steps (for test scenes)."""
    if not windows:
        raise ConfigurationError("cannot fit normalisation on an empty training set")
    pts = np.concatenate([w.obs if observed_only else np.concatenate([w.obs, w.gt])
                          for w in windows])
    return NormParams(pts.min(axis=0), pts.max(axis=0))


def normalize(p, norm: NormParams) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return 2.0 * (p - norm.lo) / (norm.hi - norm.lo) - 1.0


def denormalize(q, norm: NormParams) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return (q + 1.0) * 0.5 * (norm.hi - norm.lo) + norm.lo


# --- augmentation -----------------------------------------------------------

def rotate90(p) -> np.ndarray:
    """(x, y) -> (-y, x) about the origin; exact on floats."""
    p = np.asarray(p, dtype=np.float64)
    out = np.empty_like(p)
    out[..., 0] = -p[..., 1]
    out[..., 1] = p[..., 0]
    return out


def rotated_scene_id(scene_id: str, turns: int) -> str:
    base, _, k = scene_id.partition("@rot")
    total = ((int(k) // 90 if k else 0) + turns) % 4
    return base if total == 0 else f"{base}@rot{90 * total}"


def rotate_window(w: TrajWindow, turns: int = 1) -> TrajWindow:
    obs, gt = w.obs, w.gt
    for _ in range(turns % 4):
        obs, gt = rotate90(obs), rotate90(gt)
    return replace(w, scene_id=rotated_scene_id(w.scene_id, turns), obs=obs, gt=gt)


def rotate90_augment(windows: list[TrajWindow], scene_rasters: dict | None = None,
                     copies: int = 1):
    """Return rotated copies (90, 180, ... degrees) of windows and rasters.

    Only the copies are returned; callers append them to the originals.
    """
    from .scene import rotate_raster  # scene imports dataset

    new_windows: list[TrajWindow] = []
    new_rasters = {}
    for k in range(1, copies + 1):
        new_windows.extend(rotate_window(w, k) for w in windows)
        for sid, r in (scene_rasters or {}).items():
            rr = r
            for _ in range(k):
                rr = rotate_raster(rr)
            new_rasters[rotated_scene_id(sid, k)] = rr
    return new_windows, new_rasters


def rotate_annotations(anns: list[RawAnnotation], turns: int = 1) -> list[RawAnnotation]:
    out = []
    for a in anns:
        x, y = a.x, a.y
        for _ in range(turns % 4):
            x, y = -y, x
        out.append(RawAnnotation(a.frame_id, a.ped_id, x, y))
    return out


# --- splits -----------------------------------------------------------------

def leave_one_out_split(scenes, held_out: str) -> tuple[list[str], str]:
    scenes = list(scenes)
    if held_out not in scenes:
        raise ConfigurationError(f"unknown held-out scene {held_out!r}; have {scenes}")
    train = [s for s in scenes if s != held_out]
    if not train:
        raise ConfigurationError("leave-one-out split leaves no training scenes")
    return train, held_out


@dataclass(frozen=True)
class ManifestEntry:
    name: str
    annotations: Path
    raster: Path | None


def load_manifest(path) -> dict[str, ManifestEntry]:
    """Lines of `NAME annotation_path [raster_path]`, paths relative to the file."""
    path = Path(path)
    out: dict[str, ManifestEntry] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        parts = line.split("#", 1)[0].split()
        if not parts:
            continue
        if len(parts) not in (2, 3):
            raise ConfigurationError(f"{path}:{lineno}: expected NAME ANNOTATIONS [RASTER]")
        name = parts[0]
        if name in out:
            raise ConfigurationError(f"{path}:{lineno}: duplicate scene {name}")
        ann = (path.parent / parts[1]).resolve()
        ras = (path.parent / parts[2]).resolve() if len(parts) == 3 else None
        out[name] = ManifestEntry(name, ann, ras)
    return out
