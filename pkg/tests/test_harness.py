import numpy as np
import pytest

from sgsg import checkpoint
from sgsg.dataset import ConfigurationError, NormParams, fit_norm
from sgsg.harness import (CostReport, MetricsReport, Split, TrainConfig, TrainingError, assemble,
                          checkpoint_meta, cost_report, dump_config, evaluate_set, graph_stats_csv,
                          load_model, metrics_csv, norm_from_meta, norm_to_meta, parse_config,
                          predict_set, predictions_csv, prepare_split, run_leave_one_out,
                          save_model, scene_samples, held_out_set, train, window_eps)
from sgsg.model import SGSGModel
from sgsg.synthetic import crowd


# --- config -------------------------------------------------------------------------

def test_parse_config(tmp_path):
    cfg = parse_config("lr = 0.01  # faster\n\nuse_vae = false\nheld_out = ETH\nmanifest = m.txt\n",
                       tmp_path)
    assert cfg.lr == 0.01 and cfg.use_vae is False and cfg.held_out == "ETH"
    assert cfg.manifest == str((tmp_path / "m.txt").resolve())
    assert parse_config(dump_config(cfg)) == cfg


@pytest.mark.parametrize("text", ["bogus = 1", "lr 0.1", "lr = fast", "use_vae = maybe",
                                  "lr = 0", "batch_size = 0", "use_sg = false\nuse_scene = false",
                                  "merge_mode = mul"])
def test_bad_configs(text):
    with pytest.raises(ConfigurationError):
        parse_config(text)


# --- splits ---------------------------------------------------------------------------

def test_prepare_split(toy_scenes, small_cfg):
    split = prepare_split(small_cfg, toy_scenes)
    assert split.test_scene == "ZARA1" and "ZARA1" not in split.train_scenes
    n_orig = sum(len(scene_samples(toy_scenes[s])[0]) for s in split.train_scenes)
    assert len(split.train) + len(split.val) == 2 * n_orig
    assert len(split.val) == round(0.1 * 2 * n_orig)
    assert any(w.scene_id.endswith("@rot90") for w in split.train.windows)
    assert {w.scene_id for w in split.test.windows} == {"ZARA1"}
    # normalisation comes from training windows only
    pts = np.concatenate([np.concatenate([w.obs, w.gt]) for w in split.train.windows])
    assert np.array_equal(split.norm.lo, pts.min(axis=0)) and np.array_equal(split.norm.hi, pts.max(axis=0))


def test_split_is_seeded(toy_scenes, small_cfg):
    a, b = prepare_split(small_cfg, toy_scenes), prepare_split(small_cfg, toy_scenes)
    assert [w.start_frame for w in a.val.windows] == [w.start_frame for w in b.val.windows]
    c = prepare_split(small_cfg.replace(seed=99), toy_scenes)
    assert [w.start_frame for w in a.val.windows] != [w.start_frame for w in c.val.windows]


def test_window_cap(toy_scenes, small_cfg):
    split = prepare_split(small_cfg.replace(max_train_windows=10, rotation_copies=0, val_fraction=0.0),
                          toy_scenes)
    assert len(split.train) == 10 and split.val is None


def test_per_scene_norm(toy_scenes, small_cfg):
    split = prepare_split(small_cfg.replace(norm_per_scene=True), toy_scenes)
    assert isinstance(split.norm, dict) and "ETH" in split.norm
    assert norm_from_meta(norm_to_meta(split.norm)).keys() == split.norm.keys()
    # the held-out scene's bounds never see its future steps
    tw, _ = scene_samples(toy_scenes["ZARA1"])
    want = fit_norm(tw, observed_only=True)
    assert np.array_equal(split.test.norm_lo[0], want.lo) and np.array_equal(split.test.norm_hi[0], want.hi)
    obs = np.concatenate([w.obs for w in tw])
    assert np.array_equal(want.lo, obs.min(axis=0))


def test_unknown_held_out(toy_scenes, small_cfg):
    with pytest.raises(ConfigurationError):
        prepare_split(small_cfg.replace(held_out="ZARA3"), toy_scenes)


# --- training ---------------------------------------------------------------------------

def test_zero_epochs_keeps_initial_state(toy_scenes, small_cfg):
    cfg = small_cfg.replace(epochs=0)
    res = train(cfg, prepare_split(cfg, toy_scenes))
    init = SGSGModel(cfg.model_config(), seed=cfg.seed).params.state_dict()
    assert res.log == [] and all(np.array_equal(init[k], v) for k, v in res.best_state.items())


def test_training_is_deterministic(toy_scenes, small_cfg):
    split = prepare_split(small_cfg, toy_scenes)
    a, b = train(small_cfg, split), train(small_cfg, split)
    assert checkpoint.dumps(a.best_state) == checkpoint.dumps(b.best_state)
    assert [r["train_loss"] for r in a.log] == [r["train_loss"] for r in b.log]


def test_training_reduces_loss(toy_scenes, small_cfg):
    cfg = small_cfg.replace(epochs=6, lr=0.005)
    res = train(cfg, prepare_split(cfg, toy_scenes))
    assert res.log[-1]["train_loss"] < res.log[0]["train_loss"]
    assert all(np.isfinite(r["val_ade"]) for r in res.log)


def test_non_finite_loss_aborts_with_batch_ids(toy_scenes, small_cfg):
    split = prepare_split(small_cfg, toy_scenes)
    split.train.batch.obs[3, 0, 0] = np.nan
    with pytest.raises(TrainingError, match="batch window ids"):
        train(small_cfg, split)


def test_early_stopping(toy_scenes, small_cfg):
    cfg = small_cfg.replace(epochs=50, patience=1, lr=0.05)
    res = train(cfg, prepare_split(cfg, toy_scenes))
    assert len(res.log) < 50


def test_regression_flags():
    from sgsg.harness import TrainResult
    r = TrainResult(None, {}, [{"train_loss": v} for v in (3, 2, 2.5, 1, float("nan"))])
    assert r.regressions() == [3, 5]


# --- evaluation -------------------------------------------------------------------------

def _trained(toy_scenes, cfg):
    split = prepare_split(cfg, toy_scenes)
    res = train(cfg, split)
    res.model.params.load_state_dict(res.best_state)
    return res.model, split


def test_window_eps_nested_and_order_free():
    assert np.array_equal(window_eps(7, 3, 20)[:1], window_eps(7, 3, 1))
    assert not np.array_equal(window_eps(7, 3, 1), window_eps(7, 4, 1))


def test_first_sample_does_not_depend_on_k(toy_scenes, small_cfg):
    model, split = _trained(toy_scenes, small_cfg)
    p1 = predict_set(model, split.test, 1, seed=3)
    p20 = predict_set(model, split.test, 20, seed=3)
    assert np.array_equal(p20[:, :1], p1)


def test_evaluation_reports(toy_scenes, small_cfg):
    model, split = _trained(toy_scenes, small_cfg)
    r1 = evaluate_set(model, split.test, 1, seed=7, deterministic=True)
    r20 = evaluate_set(model, split.test, 20, seed=7)
    assert r20.ade <= evaluate_set(model, split.test, 1, seed=7).ade
    assert np.all(r20.per_window[:, 0] <= evaluate_set(model, split.test, 1, seed=7).per_window[:, 0])
    assert r1.n_windows == len(split.test) and r1.baseline_ade == r20.baseline_ade
    csv = metrics_csv([r1, r20])
    assert csv.splitlines()[0] == MetricsReport.CSV_HEADER and len(csv.splitlines()) == 3
    # repeat runs are bitwise equal; other chunkings only differ by float32 rounding
    a = predict_set(model, split.test, 5, seed=1)
    assert np.array_equal(a, predict_set(model, split.test, 5, seed=1))
    assert np.allclose(a, predict_set(model, split.test, 5, seed=1, chunk=3), atol=1e-4, rtol=0)


def test_perfect_oracle_scores_zero(toy_scenes, small_cfg):
    model, split = _trained(toy_scenes, small_cfg)
    data = split.test

    class Oracle:
        config = model.config

        def sample(self, batch, eps):
            k = 1 if eps is None else eps.shape[1]
            return np.repeat(batch.gt[:, None], k, axis=1)

    r = evaluate_set(Oracle(), data, 20, seed=0)
    assert r.ade < 1e-9 and r.fde < 1e-9


def test_rotation_consistency(toy_scenes, small_cfg):
    """Rotating both the model's training data and the test data leaves ADE unchanged
    when the rotated model is the exact conjugate of the original."""
    model, split = _trained(toy_scenes, small_cfg)
    data = split.test
    preds = predict_set(model, data, 1, 0, deterministic=True)
    from sgsg.dataset import rotate90, rotate_window
    from sgsg.metrics import best_of_k
    rot_windows = [rotate_window(w) for w in data.windows]
    base = np.mean([best_of_k(p, w.gt)[0] for p, w in zip(preds, data.windows)])
    rot = np.mean([best_of_k(rotate90(p), w.gt)[0] for p, w in zip(preds, rot_windows)])
    assert abs(base - rot) < 1e-6


def test_predictions_csv(toy_scenes, small_cfg):
    model, split = _trained(toy_scenes, small_cfg)
    sub = split.test.subset([0, 1])
    text = predictions_csv(sub, predict_set(model, sub, 3, seed=0))
    lines = text.splitlines()
    assert lines[0] == "scene,window,poi_id,start_frame,kind,sample,step,x,y"
    assert len(lines) == 1 + 2 * (8 + 12 + 3 * 12)


def test_test_set_uses_training_norm(toy_scenes, small_cfg):
    split = prepare_split(small_cfg, toy_scenes)
    data = held_out_set(small_cfg, split.norm, toy_scenes)
    assert np.array_equal(data.batch.obs, split.test.batch.obs)
    with pytest.raises(ConfigurationError):
        held_out_set(small_cfg, split.norm, toy_scenes, scene="NOPE")


# --- checkpoints --------------------------------------------------------------------------

def test_checkpoint_roundtrip_bitwise(tmp_path, toy_scenes, small_cfg):
    model, split = _trained(toy_scenes, small_cfg)
    meta = checkpoint_meta(small_cfg, split.norm)
    save_model(tmp_path / "a.ckpt", model, meta)
    loaded, meta2 = load_model(tmp_path / "a.ckpt")
    save_model(tmp_path / "b.ckpt", loaded, meta2)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert loaded.config == model.config
    p1 = predict_set(model, split.test, 2, seed=3)
    assert np.array_equal(p1, predict_set(loaded, split.test, 2, seed=3))


@pytest.mark.parametrize("cut", [0, 5, 11, 40, -1])
def test_truncated_checkpoint_is_format_error(tmp_path, cut):
    m = SGSGModel()
    buf = checkpoint.dumps(m.params.state_dict(), {"model": m.config.to_dict()})
    path = tmp_path / "t.ckpt"
    path.write_bytes(buf[:cut])
    with pytest.raises(checkpoint.CheckpointFormatError):
        load_model(path)


def test_checkpoint_version_and_meta_errors(tmp_path):
    buf = checkpoint.dumps({"a": np.zeros(2)})
    with pytest.raises(checkpoint.CheckpointFormatError, match="trailing"):
        checkpoint.loads(buf + b"x")
    bad = buf.replace(b'"version":1', b'"version":9')
    with pytest.raises(checkpoint.CheckpointFormatError, match="version"):
        checkpoint.loads(bad)
    path = tmp_path / "nometa.ckpt"
    path.write_bytes(buf)
    with pytest.raises(checkpoint.CheckpointFormatError):
        load_model(path)


# --- cost accounting ------------------------------------------------------------------------

@pytest.mark.parametrize("n", [3, 10, 50])
def test_star_vs_complete_ratio(n):
    rep = cost_report({"C": crowd(n, steps=10, seed=n)})
    assert isinstance(rep, CostReport)
    assert rep.star_messages["C"] < rep.complete_messages["C"]
    assert abs(rep.ratio("C") - 2 / n) <= 0.05 * 2 / n
    assert rep.param_counts["scene"] > 0


def test_graph_stats_csv():
    text = graph_stats_csv({"S": crowd(5, steps=2)})
    assert text.splitlines() == ["scene,timestep,N,star_edges,complete_edges", "S,0,5,4,10", "S,10,5,4,10"]


def test_leave_one_out_driver(tmp_path, toy_scenes, small_cfg):
    scenes = {k: toy_scenes[k] for k in ("ETH", "HOTEL")}
    reports = run_leave_one_out(small_cfg.replace(epochs=1), scenes, tmp_path, ks=(1,))
    assert [r.scene for r in reports] == ["ETH", "HOTEL"]
    assert (tmp_path / "ETH.ckpt").exists()


def test_assemble_rejects_empty():
    with pytest.raises(ConfigurationError):
        assemble([], [], {}, {})


def test_split_dataclass_fields(toy_scenes, small_cfg):
    split = prepare_split(small_cfg, toy_scenes)
    assert isinstance(split, Split) and isinstance(split.norm, NormParams)
