"""Training, evaluation, leave-one-out orchestration and cost accounting."""
from __future__ import annotations

import csv
import dataclasses
import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .dataset import (ConfigurationError, NeighborIndex, NormParams, RawAnnotation,
                      TrajWindow, build_windows, denormalize, detect_stride, fit_norm,
                      leave_one_out_split, load_manifest, normalize, parse_scene,
                      rotate90_augment, rotate_window)
from .metrics import best_of_k, constant_velocity_baseline
from .model import LATENT_DIM, Batch, ModelConfig, SGSGModel
from .params import AdamState, adam_step
from .scene import SceneRaster, load_raster, one_hot, resample_raster
from .social_graph import (StarGraphSeq, build_star_graph_seq, complete_edge_count,
                           neighbor_means, star_edge_count)
from .tensor import Tape

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 128
    epochs: int = 200
    seed: int = 0
    kld_weight: float = 1.0
    merge_mode: str = "gating"
    use_sg: bool = True
    use_vae: bool = True
    use_scene: bool = True
    held_out: str = ""
    manifest: str = ""
    val_fraction: float = 0.1
    patience: int = 20
    max_train_windows: int = 0  # 0 = no cap
    rotation_copies: int = 1
    norm_per_scene: bool = False
    gcn_self_loop: bool = False
    tie_embedding: bool = True
    teacher_forcing: bool = False
    prior_sampling: bool = False
    raster_size: int = 64

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigurationError("lr must be positive")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be non-negative")
        if not 0 <= self.val_fraction < 1:
            raise ConfigurationError("val_fraction must lie in [0, 1)")
        if not 0 <= self.rotation_copies <= 3:
            raise ConfigurationError("rotation_copies must be 0..3")
        try:
            self.model_config()
        except ValueError as e:
            raise ConfigurationError(str(e)) from None

    def model_config(self) -> ModelConfig:
        return ModelConfig(use_sg=self.use_sg, use_scene=self.use_scene, use_vae=self.use_vae,
                           merge_mode=self.merge_mode, gcn_self_loop=self.gcn_self_loop,
                           tie_embedding=self.tie_embedding, teacher_forcing=self.teacher_forcing,
                           prior_sampling=self.prior_sampling, raster_size=self.raster_size)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


# ablation variants as TrainConfig overrides
VARIANTS = {
    "full": dict(use_sg=True, use_vae=True, use_scene=True, merge_mode="gating"),
    "v1": dict(use_sg=True, use_vae=False, use_scene=False),
    "v2": dict(use_sg=False, use_vae=False, use_scene=True),
    "v3": dict(use_sg=False, use_vae=True, use_scene=True),
    "v4": dict(use_sg=True, use_vae=True, use_scene=False),
    "v5": dict(use_sg=True, use_vae=False, use_scene=True, merge_mode="gating"),
    "alpha": dict(use_sg=True, use_vae=True, use_scene=True, merge_mode="add"),
    "beta": dict(use_sg=True, use_vae=True, use_scene=True, merge_mode="concat"),
}


def _coerce(value: str, typ):
    if typ in (bool, "bool"):
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if typ in (int, "int"):
        return int(value)
    if typ in (float, "float"):
        return float(value)
    return value.strip()


def parse_config(text: str, base_dir: Path | None = None) -> TrainConfig:
    """Flat `key = value` lines; '#' starts a comment; unknown keys are errors."""
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    kw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigurationError(f"config line {lineno}: unknown key {key!r}")
        try:
            kw[key] = _coerce(value, types[key])
        except ValueError as e:
            raise ConfigurationError(f"config line {lineno}: {e}") from None
    if base_dir is not None and kw.get("manifest"):
        kw["manifest"] = str((base_dir / kw["manifest"]).resolve())
    return TrainConfig(**kw)


def load_config(path) -> TrainConfig:
    path = Path(path)
    return parse_config(path.read_text(), path.parent)


def dump_config(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in dataclasses.asdict(cfg).items())


# --- data -------------------------------------------------------------------

@dataclass
class SceneData:
    name: str
    annotations: list[RawAnnotation]
    raster: SceneRaster

    @property
    def stride(self) -> int:
        return detect_stride(self.annotations)


def blank_raster(size: int) -> SceneRaster:
    return SceneRaster(one_hot(np.zeros((size, size), int)), 1.0, (0.0, 0.0))


def load_scenes(manifest_path, raster_size: int = 64, names=None) -> dict[str, SceneData]:
    entries = load_manifest(manifest_path)
    out = {}
    for name, e in entries.items():
        if names is not None and name not in names:
            continue
        anns = parse_scene(e.annotations)
        raster = load_raster(e.raster) if e.raster else blank_raster(raster_size)
        out[name] = SceneData(name, anns, resample_raster(raster, raster_size))
    return out


@dataclass
class WindowSet:
    """Windows with their star graphs, normalised into model-ready arrays."""
    windows: list[TrajWindow]
    graphs: list[StarGraphSeq]
    batch: Batch
    norm_lo: np.ndarray  # [N, 2] per-window normalisation bounds
    norm_hi: np.ndarray

    def __len__(self):
        return len(self.windows)

    def subset(self, idx) -> "WindowSet":
        idx = np.asarray(idx, dtype=int)
        return WindowSet([self.windows[i] for i in idx], [self.graphs[i] for i in idx],
                         self.batch.subset(idx), self.norm_lo[idx], self.norm_hi[idx])

    def to_meters(self, q: np.ndarray, idx=None) -> np.ndarray:
        """Denormalise [N, ..., 2] predictions row-wise."""
        lo = self.norm_lo if idx is None else self.norm_lo[idx]
        hi = self.norm_hi if idx is None else self.norm_hi[idx]
        shape = (len(lo),) + (1,) * (q.ndim - 2) + (2,)
        return (q + 1.0) * 0.5 * (hi - lo).reshape(shape) + lo.reshape(shape)


def scene_samples(scene: SceneData) -> tuple[list[TrajWindow], list[StarGraphSeq]]:
    windows = build_windows(scene.annotations, scene.name, stride=scene.stride)
    index = NeighborIndex.build({scene.name: scene.annotations})
    return windows, [build_star_graph_seq(w, index) for w in windows]


def assemble(windows, graphs, rasters: dict[str, SceneRaster], norms: dict[str, NormParams],
             self_loop: bool = False) -> WindowSet:
    if not windows:
        raise ConfigurationError("no windows to assemble")
    order = sorted(rasters)
    ridx = {sid: i for i, sid in enumerate(order)}
    normed = [g.normalized(norms[w.scene_id]) for w, g in zip(windows, graphs)]
    means, mask = neighbor_means(normed, self_loop)
    obs = np.stack([normalize(w.obs, norms[w.scene_id]) for w in windows])
    gt = np.stack([normalize(w.gt, norms[w.scene_id]) for w in windows])
    batch = Batch(obs, gt, means, mask, np.array([ridx[w.scene_id] for w in windows]),
                  np.stack([rasters[s].grid for s in order]).astype(np.float32))
    lo = np.stack([norms[w.scene_id].lo for w in windows])
    hi = np.stack([norms[w.scene_id].hi for w in windows])
    return WindowSet(list(windows), list(graphs), batch, lo, hi)


@dataclass
class Split:
    train: WindowSet
    val: WindowSet | None
    test: WindowSet | None
    norm: NormParams | dict[str, NormParams]
    train_scenes: list[str]
    test_scene: str


def _fit_norms(windows, per_scene: bool) -> tuple[dict, NormParams | dict]:
    if not per_scene:
        n = fit_norm(windows)
        return _AllScenes(n), n
    by: dict[str, list] = {}
    for w in windows:
        by.setdefault(w.scene_id, []).append(w)
    d = {s: fit_norm(ws) for s, ws in by.items()}
    return d, d


class _AllScenes(dict):
    def __init__(self, norm):
        super().__init__()
        self.norm = norm

    def __missing__(self, key):
        return self.norm


def prepare_split(cfg: TrainConfig, scenes: dict[str, SceneData] | None = None) -> Split:
    if scenes is None:
        if not cfg.manifest:
            raise ConfigurationError("config has no manifest")
        scenes = load_scenes(cfg.manifest, cfg.raster_size)
    train_names, test_name = leave_one_out_split(sorted(scenes), cfg.held_out)
    rng = np.random.default_rng(cfg.seed)

    windows, graphs = [], []
    for name in train_names:
        w, g = scene_samples(scenes[name])
        windows += w
        graphs += g
    if not windows:
        raise ConfigurationError("training scenes yield no windows")
    if cfg.max_train_windows and len(windows) > cfg.max_train_windows:
        keep = np.sort(rng.choice(len(windows), cfg.max_train_windows, replace=False))
        windows = [windows[i] for i in keep]
        graphs = [graphs[i] for i in keep]

    rasters = {n: scenes[n].raster for n in train_names}
    if cfg.rotation_copies:
        rw, rr = rotate90_augment(windows, rasters, cfg.rotation_copies)
        rg = [g.rotated(k) for k in range(1, cfg.rotation_copies + 1) for g in graphs]
        windows, graphs = windows + rw, graphs + rg
        rasters.update(rr)

    perm = rng.permutation(len(windows))
    n_val = int(round(cfg.val_fraction * len(windows)))
    val_idx, train_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    if len(train_idx) == 0:
        raise ConfigurationError("empty training set after validation split")

    fit_on = [windows[i] for i in train_idx]
    norms, norm = _fit_norms(fit_on, cfg.norm_per_scene)
    if cfg.norm_per_scene:
        # validation windows come from training scenes; make sure every id has bounds
        for i in val_idx:
            sid = windows[i].scene_id
            if sid not in norms:
                norms[sid] = fit_norm([w for w in windows if w.scene_id == sid])

    full = assemble(windows, graphs, rasters, norms, cfg.gcn_self_loop)
    train = full.subset(train_idx)
    val = full.subset(val_idx) if n_val else None

    tw, tg = scene_samples(scenes[test_name])
    test = None
    if tw:
        tnorms = norms
        if cfg.norm_per_scene:
            tnorms = dict(norms)
            tnorms[test_name] = fit_norm(tw, observed_only=True)
        test = assemble(tw, tg, {test_name: scenes[test_name].raster}, tnorms, cfg.gcn_self_loop)
    return Split(train, val, test, norm, train_names, test_name)


def norm_to_meta(norm) -> dict:
    if isinstance(norm, NormParams):
        return {"lo": norm.lo.tolist(), "hi": norm.hi.tolist()}
    return {k: {"lo": v.lo.tolist(), "hi": v.hi.tolist()} for k, v in sorted(norm.items())}


def norm_from_meta(meta: dict):
    if "lo" in meta:
        return NormParams(np.array(meta["lo"]), np.array(meta["hi"]))
    return {k: NormParams(np.array(v["lo"]), np.array(v["hi"])) for k, v in meta.items()}


def held_out_set(cfg: TrainConfig, norm, scenes: dict[str, SceneData] | None = None,
             scene: str | None = None) -> WindowSet:
    """Test windows of the held-out scene, normalised with training bounds.

    With per-scene bounds, an unseen scene is fit on its observed steps only.
    """
    scene = scene or cfg.held_out
    if scenes is None:
        scenes = load_scenes(cfg.manifest, cfg.raster_size, names={scene})
    if scene not in scenes:
        raise ConfigurationError(f"unknown scene {scene!r}")
    tw, tg = scene_samples(scenes[scene])
    if not tw:
        raise ConfigurationError(f"scene {scene} has no test windows")
    if isinstance(norm, NormParams):
        norms = _AllScenes(norm)
    else:
        norms = dict(norm)
        norms.setdefault(scene, fit_norm(tw, observed_only=True))
    return assemble(tw, tg, {scene: scenes[scene].raster}, norms, cfg.gcn_self_loop)


# --- training ---------------------------------------------------------------

@dataclass
class TrainResult:
    model: SGSGModel
    best_state: dict[str, np.ndarray]
    log: list[dict] = field(default_factory=list)
    best_epoch: int = 0

    def regressions(self, first: int = 10) -> list[int]:
        """Epochs (among the first `first`) whose train loss rose or was not finite."""
        losses = [r["train_loss"] for r in self.log[:first]]
        bad = [i + 1 for i, v in enumerate(losses) if not np.isfinite(v)]
        bad += [i + 2 for i in range(len(losses) - 1) if losses[i + 1] > losses[i]]
        return sorted(set(bad))


def checkpoint_meta(cfg: TrainConfig, norm, extra: dict | None = None) -> dict:
    meta = {"model": cfg.model_config().to_dict(), "norm": norm_to_meta(norm),
            "train_config": dataclasses.asdict(cfg)}
    meta.update(extra or {})
    return meta


def save_model(path, model: SGSGModel, meta: dict, state: dict | None = None) -> None:
    checkpoint.save(path, state or model.params.state_dict(), meta)


def load_model(path) -> tuple[SGSGModel, dict]:
    tensors, meta = checkpoint.load(path)
    try:
        mcfg = ModelConfig.from_dict(meta["model"])
    except (KeyError, TypeError, ValueError) as e:
        raise checkpoint.CheckpointFormatError(f"checkpoint lacks a valid model config: {e}") from None
    model = SGSGModel(mcfg)
    try:
        model.params.load_state_dict(tensors)
    except (KeyError, ValueError) as e:
        raise checkpoint.CheckpointFormatError(str(e)) from None
    return model, meta


def train(cfg: TrainConfig, split: Split, log_every: int = 0) -> TrainResult:
    """Mini-batch Adam on the training windows; keeps the best-validation state."""
    data = split.train
    if len(data) == 0:
        raise TrainingError("empty training set")
    model = SGSGModel(cfg.model_config(), seed=cfg.seed)
    opt = AdamState(lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 1])
    result = TrainResult(model, model.params.state_dict())
    best = np.inf
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(data))
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            ids = order[start:start + cfg.batch_size]
            batch = data.batch.subset(ids)
            eps = rng.standard_normal((len(ids), LATENT_DIM)) if cfg.use_vae else None
            model.params.zero_grad()
            with Tape() as tape:
                loss = model.loss(batch, eps, cfg.kld_weight)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}; "
                                    f"batch window ids {sorted(ids.tolist())}")
            tape.backward(loss)
            adam_step(model.params, opt)
            total += value * len(ids)
            count += len(ids)
        row = {"epoch": epoch, "train_loss": total / count}
        if split.val is not None and len(split.val):
            row["val_ade"] = evaluate_set(model, split.val, k=1, seed=0, deterministic=True).ade
            score = row["val_ade"]
        else:
            row["val_ade"] = float("nan")
            score = row["train_loss"]
        result.log.append(row)
        if log_every and epoch % log_every == 0:
            log.info("epoch %d loss %.5f val_ade %.4f", epoch, row["train_loss"], row["val_ade"])
        if score < best:
            best, stale = score, 0
            result.best_state = model.params.state_dict()
            result.best_epoch = epoch
        else:
            stale += 1
            if cfg.patience and stale >= cfg.patience:
                break
    return result


def write_train_log(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_ade"])
        for r in rows:
            w.writerow([r["epoch"], repr(float(r["train_loss"])), repr(float(r["val_ade"]))])


# --- evaluation -------------------------------------------------------------

@dataclass
class MetricsReport:
    scene: str
    k: int
    ade: float
    fde: float
    baseline_ade: float
    baseline_fde: float
    n_windows: int
    wall_time: float = 0.0
    per_window: np.ndarray | None = None  # [N, 2] (minADE, minFDE)

    CSV_HEADER = "scene,k,ade_m,fde_m,baseline_ade_m,baseline_fde_m,n_windows"

    def csv_row(self) -> str:
        return (f"{self.scene},{self.k},{self.ade:.6f},{self.fde:.6f},"
                f"{self.baseline_ade:.6f},{self.baseline_fde:.6f},{self.n_windows}")


def window_eps(seed: int, index: int, k: int) -> np.ndarray:
    """Noise for one window; draws are nested, so the first k' rows never
    depend on k, and independent of evaluation order."""
    return np.random.default_rng([seed, index]).standard_normal((k, LATENT_DIM))


def predict_set(model: SGSGModel, data: WindowSet, k: int, seed: int,
                deterministic: bool = False, chunk: int = 256) -> np.ndarray:
    """[N, K, 12, 2] predictions in meters."""
    if k < 1:
        raise ValueError("k must be at least 1")
    out = []
    for start in range(0, len(data), chunk):
        ids = np.arange(start, min(start + chunk, len(data)))
        batch = data.batch.subset(ids)
        if deterministic or not model.config.use_vae:
            eps = None if k == 1 else np.zeros((len(ids), k, LATENT_DIM))
        else:
            eps = np.stack([window_eps(seed, int(i), k) for i in ids])
        pred = model.sample(batch, eps)
        out.append(data.to_meters(pred.astype(np.float64), ids))
    return np.concatenate(out)


def evaluate_set(model: SGSGModel, data: WindowSet, k: int = 20, seed: int = 0,
                 deterministic: bool = False, scene: str = "") -> MetricsReport:
    if len(data) == 0:
        raise ConfigurationError("no test windows")
    t0 = time.perf_counter()
    preds = predict_set(model, data, k, seed, deterministic)
    per = np.array([best_of_k(p, w.gt) for p, w in zip(preds, data.windows)])
    base = np.array([best_of_k(constant_velocity_baseline(w.obs, len(w.gt))[None], w.gt)
                     for w in data.windows])
    return MetricsReport(scene or data.windows[0].scene_id, k, float(per[:, 0].mean()),
                         float(per[:, 1].mean()), float(base[:, 0].mean()),
                         float(base[:, 1].mean()), len(data), time.perf_counter() - t0, per)


def metrics_csv(reports: list[MetricsReport]) -> str:
    return MetricsReport.CSV_HEADER + "\n" + "".join(r.csv_row() + "\n" for r in reports)


def predictions_csv(data: WindowSet, preds: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scene", "window", "poi_id", "start_frame", "kind", "sample", "step", "x", "y"])
    for i, (win, p) in enumerate(zip(data.windows, preds)):
        head = [win.scene_id, i, win.poi_id, win.start_frame]
        for t, (x, y) in enumerate(win.obs):
            w.writerow(head + ["obs", -1, t, f"{x:.4f}", f"{y:.4f}"])
        for t, (x, y) in enumerate(win.gt):
            w.writerow(head + ["gt", -1, t, f"{x:.4f}", f"{y:.4f}"])
        for k, traj in enumerate(p):
            for t, (x, y) in enumerate(traj):
                w.writerow(head + ["pred", k, t, f"{x:.4f}", f"{y:.4f}"])
    return buf.getvalue()


# --- cost accounting --------------------------------------------------------

@dataclass
class CostReport:
    """Per-scene message totals: one POI's star graph vs the complete graph."""
    star_messages: dict[str, int]
    complete_messages: dict[str, int]
    param_counts: dict[str, int]

    def ratio(self, scene: str) -> float:
        c = self.complete_messages[scene]
        return self.star_messages[scene] / c if c else float("nan")


def graph_stats_rows(scene: str, annotations: list[RawAnnotation]) -> list[tuple]:
    counts: dict[int, int] = {}
    for a in annotations:
        counts[a.frame_id] = counts.get(a.frame_id, 0) + 1
    return [(scene, f, n, star_edge_count(n), complete_edge_count(n))
            for f, n in sorted(counts.items())]


def graph_stats_csv(scenes: dict[str, list[RawAnnotation]]) -> str:
    lines = ["scene,timestep,N,star_edges,complete_edges"]
    for name in sorted(scenes):
        lines += [",".join(map(str, r)) for r in graph_stats_rows(name, scenes[name])]
    return "\n".join(lines) + "\n"


def cost_report(scenes: dict[str, list[RawAnnotation]],
                model_config: ModelConfig | None = None) -> CostReport:
    star, comp = {}, {}
    for name, anns in scenes.items():
        rows = graph_stats_rows(name, anns)
        star[name] = sum(r[3] for r in rows)
        comp[name] = sum(r[4] for r in rows)
    params = SGSGModel(model_config or ModelConfig()).module_param_counts()
    return CostReport(star, comp, params)


# --- leave-one-out driver ---------------------------------------------------

def run_leave_one_out(cfg: TrainConfig, scenes: dict[str, SceneData], out_dir=None,
                      ks=(1, 20)) -> list[MetricsReport]:
    reports = []
    for held in sorted(scenes):
        c = cfg.replace(held_out=held)
        split = prepare_split(c, scenes)
        res = train(c, split)
        res.model.params.load_state_dict(res.best_state)
        for k in ks:
            reports.append(evaluate_set(res.model, split.test, k, c.seed, deterministic=(k == 1)))
        if out_dir:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            save_model(Path(out_dir) / f"{held}.ckpt", res.model, checkpoint_meta(c, split.norm))
    return reports
