import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import line_track
from sgsg.dataset import (ConfigurationError, NeighborIndex, NormParams, ParseError, RawAnnotation,
                          build_windows, denormalize, detect_stride, fit_norm, leave_one_out_split,
                          load_manifest, neighbors_at, normalize, parse_rows, parse_scene,
                          rotate90, rotate90_augment, rotate_annotations, rotate_window)


def write(tmp_path, text, name="scene.txt"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_parse_two_rows_and_stride(tmp_path):
    anns = parse_scene(write(tmp_path, "0 1 0.0 0.0\n10 1 1.0 0.0\n"))
    assert anns == [RawAnnotation(0, 1, 0.0, 0.0), RawAnnotation(10, 1, 1.0, 0.0)]
    assert detect_stride(anns) == 10


def test_parse_empty_file(tmp_path):
    assert parse_scene(write(tmp_path, "")) == []


def test_parse_malformed_row_reports_line(tmp_path):
    with pytest.raises(ParseError, match=":2:"):
        parse_rows(write(tmp_path, "0 1 0 0\n10 2 abc 3\n"))


def test_parse_duplicate_and_column_errors(tmp_path):
    with pytest.raises(ParseError, match="duplicate"):
        parse_rows(write(tmp_path, "0 1 0 0\n0 1 1 1\n"))
    with pytest.raises(ParseError, match="4 columns"):
        parse_rows(write(tmp_path, "0 1 0\n"))


def test_off_stride_rows_dropped_with_warning(tmp_path):
    text = "".join(f"{f} 1 {f / 10} 0\n" for f in range(0, 100, 10)) + "13 1 5 5\n"
    with pytest.warns(UserWarning, match="dropped 1"):
        anns = parse_scene(write(tmp_path, text))
    assert all(a.frame_id % 10 == 0 for a in anns) and len(anns) == 10


def test_tabs_and_float_frames_accepted(tmp_path):
    anns = parse_scene(write(tmp_path, "0.0\t1.0\t1.5\t2.5\n"))
    assert anns == [RawAnnotation(0, 1, 1.5, 2.5)]


@pytest.mark.parametrize("length,expected", [(20, 1), (25, 6), (19, 0)])
def test_window_counts(length, expected):
    assert len(build_windows(line_track(1, (0, 0), (1, 0), length))) == expected


@given(st.lists(st.integers(1, 40), min_size=1, max_size=6))
def test_window_count_formula(lengths):
    rows = []
    for i, n in enumerate(lengths):
        rows += line_track(i + 1, (i, 0), (0, 1), n)
    assert len(build_windows(rows, stride=10)) == sum(max(0, n - 19) for n in lengths)


def test_gap_splits_track():
    rows = line_track(1, (0, 0), (1, 0), 20) + line_track(1, (0, 0), (1, 0), 20, frame0=400)
    ws = build_windows(rows)
    assert len(ws) == 2 and ws[1].start_frame == 400


def test_window_contents():
    w = build_windows(line_track(4, (1, 2), (0.5, 0), 20, frame0=30), "S")[0]
    assert (w.scene_id, w.poi_id, w.start_frame) == ("S", 4, 30)
    assert w.obs.shape == (8, 2) and w.gt.shape == (12, 2)
    assert w.gt[-1].tolist() == [1 + 0.5 * 19, 2]
    assert w.obs_frames.tolist() == list(range(30, 110, 10))


def test_normalize_examples():
    n = NormParams(np.array([0.0, 0.0]), np.array([10.0, 10.0]))
    assert normalize([5, 0], n).tolist() == [0.0, -1.0]
    assert abs(denormalize(normalize([3.7, 3.7], n), n)[0] - 3.7) < 1e-9


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=2),
       st.lists(st.floats(-1e4, 1e4), min_size=2, max_size=2))
def test_normalize_roundtrip_outside_bounds(lo, p):
    n = NormParams(np.array(lo), np.array(lo) + 7.5)
    assert np.allclose(denormalize(normalize(p, n), n), p, atol=1e-9, rtol=0)


def test_degenerate_norm_rejected():
    with pytest.raises(ConfigurationError):
        NormParams(np.array([1.0, 0.0]), np.array([1.0, 2.0]))
    with pytest.raises(ConfigurationError):
        fit_norm([])


def test_rotation_examples():
    assert rotate90([1, 2]).tolist() == [-2, 1]
    assert rotate90([0, 0]).tolist() == [0, 0]


@given(st.integers(0, 1000))
def test_four_rotations_are_identity(seed):
    w = build_windows(line_track(1, np.random.default_rng(seed).normal(size=2), (0.3, -0.1), 20))[0]
    r = w
    for _ in range(4):
        r = rotate_window(r)
    assert np.array_equal(r.obs, w.obs) and np.array_equal(r.gt, w.gt) and r.scene_id == w.scene_id


def test_augmentation_doubles_dataset(toy_scenes):
    ws = build_windows(toy_scenes["ETH"].annotations, "ETH")
    extra, rasters = rotate90_augment(ws, {"ETH": toy_scenes["ETH"].raster})
    assert len(ws) + len(extra) == 2 * len(ws)
    assert set(rasters) == {"ETH@rot90"}
    assert extra[0].scene_id == "ETH@rot90"


def test_rotate_annotations_matches_window_rotation():
    rows = line_track(1, (1, 2), (0.4, 0.1), 20)
    a = build_windows(rotate_annotations(rows))[0]
    b = rotate_window(build_windows(rows)[0])
    assert np.array_equal(a.obs, b.obs) and np.array_equal(a.gt, b.gt)


def test_leave_one_out():
    scenes = ["ETH", "HOTEL", "UNIV", "ZARA1", "ZARA2"]
    train, test = leave_one_out_split(scenes, "ETH")
    assert len(train) == 4 and test == "ETH"
    with pytest.raises(ConfigurationError):
        leave_one_out_split(scenes, "ZARA3")
    with pytest.raises(ConfigurationError):
        leave_one_out_split(["ETH"], "ETH")


def _index(rows):
    return NeighborIndex.build({"S": rows})


def test_neighbors_examples():
    rows = [RawAnnotation(0, p, float(p), 0.0) for p in (1, 2, 3)] + [RawAnnotation(10, 1, 0, 0)]
    idx = _index(rows)
    assert [p for p, _ in neighbors_at(idx, "S", 0, 1)] == [2, 3]
    assert neighbors_at(idx, "S", 10, 1) == []


def test_absent_pedestrian_excluded():
    rows = line_track(1, (0, 0), (1, 0), 6) + line_track(2, (0, 1), (1, 0), 8)
    idx = _index(rows)
    assert neighbors_at(idx, "S", 60, 2) == []
    assert [p for p, _ in neighbors_at(idx, "S", 50, 2)] == [1]


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(1, 6)), max_size=30, unique=True))
def test_neighbor_symmetry(pairs):
    rows = [RawAnnotation(10 * f, p, 0.0, 0.0) for f, p in pairs]
    idx = _index(rows)
    for f, a in pairs:
        for g, b in pairs:
            if f == g and a != b:
                in_a = b in [p for p, _ in neighbors_at(idx, "S", 10 * f, a)]
                in_b = a in [p for p, _ in neighbors_at(idx, "S", 10 * f, b)]
                assert in_a and in_b


def test_manifest(tmp_path):
    write(tmp_path, "0 1 0 0\n", "a.txt")
    m = write(tmp_path, "# scenes\nETH a.txt eth.raster\nHOTEL a.txt\n", "manifest.txt")
    entries = load_manifest(m)
    assert entries["ETH"].raster == (tmp_path / "eth.raster").resolve()
    assert entries["HOTEL"].raster is None
    with pytest.raises(ConfigurationError):
        load_manifest(write(tmp_path, "ETH\n", "bad.txt"))
    with pytest.raises(ConfigurationError, match="duplicate"):
        load_manifest(write(tmp_path, "ETH a.txt\nETH a.txt\n", "dup.txt"))


def test_parse_scene_is_sorted(tmp_path):
    p = write(tmp_path, "10 2 0 0\n0 2 0 0\n0 1 0 0\n")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        anns = parse_scene(p)
    assert [(a.ped_id, a.frame_id) for a in anns] == [(1, 0), (2, 0), (2, 10)]
