import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sgsg.harness import SceneData, TrainConfig, blank_raster  # noqa: E402
from sgsg.scene import SceneRaster, one_hot  # noqa: E402
from sgsg.dataset import RawAnnotation  # noqa: E402


def line_track(ped, start, vel, n, frame0=0, stride=10):
    return [RawAnnotation(frame0 + stride * t, ped, start[0] + vel[0] * t, start[1] + vel[1] * t)
            for t in range(n)]


def two_ped_set(raster_size=16):
    """Two pedestrians walking past each other, normalised into a WindowSet."""
    from sgsg.dataset import fit_norm
    from sgsg.harness import assemble, scene_samples

    rows = line_track(1, (0.0, 1.0), (0.4, 0.05), 20) + line_track(2, (8.0, 0.0), (-0.35, 0.1), 20)
    labels = np.zeros((raster_size, raster_size), int)
    labels[2:5, 3:9] = 1
    labels[-3:] = 2
    scene = SceneData("TOY", rows, SceneRaster(one_hot(labels), 0.75, (-2.0, -2.0)))
    w, g = scene_samples(scene)
    return assemble(w, g, {"TOY": scene.raster}, {"TOY": fit_norm(w)})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_scenes():
    """Five small scenes of crossing walkers sharing frames."""
    out = {}
    for k, name in enumerate(("ETH", "HOTEL", "UNIV", "ZARA1", "ZARA2")):
        r = np.random.default_rng(k)
        rows = []
        for p in range(6):
            start = r.uniform(0, 10, 2)
            vel = r.uniform(-0.5, 0.5, 2)
            rows += line_track(p + 1, start, vel, 24, frame0=10 * int(r.integers(0, 4)))
        labels = np.zeros((16, 16), int)
        labels[4 + k:8 + k, 3:6] = 1
        out[name] = SceneData(name, sorted(rows, key=lambda a: (a.ped_id, a.frame_id)),
                              SceneRaster(one_hot(labels), 1.0, (0.0, 0.0)))
    return out


@pytest.fixture
def small_cfg():
    return TrainConfig(epochs=2, batch_size=8, raster_size=16, held_out="ZARA1", seed=3,
                       val_fraction=0.1, patience=0)


__all__ = ["line_track", "two_ped_set", "blank_raster"]


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Five short synthetic scenes on disk plus a fast training config."""
    from sgsg.synthetic import make_dataset

    root = tmp_path_factory.mktemp("data")
    manifest = make_dataset(root, duration=90.0, seed=2)
    cfg = root / "config.txt"
    cfg.write_text(f"manifest = {manifest.name}\nepochs = 1\nbatch_size = 16\n"
                   "max_train_windows = 40\nraster_size = 16\npatience = 0\n")
    return cfg
