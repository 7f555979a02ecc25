"""Dynamic star graphs around each POI, the graph convolution and social LSTM."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .dataset import NeighborIndex, NormParams, TrajWindow, neighbors_at, normalize, rotate90
from .tensor import Tensor


@dataclass(frozen=True)
class StarGraphSeq:
    """Neighbours of one POI at each observation step.

    Edges only join the POI to each co-present pedestrian; there are no
    neighbour-neighbour edges, so step t has ``len(neighbor_ids[t])`` edges.
    """
    poi_id: int
    poi_pos: np.ndarray                 # [T_obs, 2]
    neighbor_ids: tuple[np.ndarray, ...]  # per step, ascending
    neighbor_pos: tuple[np.ndarray, ...]  # per step, [n_t, 2]

    def __post_init__(self):
        if not (len(self.poi_pos) == len(self.neighbor_ids) == len(self.neighbor_pos)):
            raise ValueError("StarGraphSeq: per-step lists must all have T_obs entries")
        for ids in self.neighbor_ids:
            if self.poi_id in ids:
                raise ValueError("StarGraphSeq: POI listed as its own neighbour")

    @property
    def steps(self) -> int:
        return len(self.poi_pos)

    def edge_counts(self) -> list[int]:
        return [len(ids) for ids in self.neighbor_ids]

    def map_points(self, fn) -> "StarGraphSeq":
        return StarGraphSeq(self.poi_id, fn(self.poi_pos), self.neighbor_ids,
                            tuple(fn(p) if len(p) else p for p in self.neighbor_pos))

    def normalized(self, norm: NormParams) -> "StarGraphSeq":
        return self.map_points(lambda p: normalize(p, norm))

    def rotated(self, turns: int = 1) -> "StarGraphSeq":
        seq = self
        for _ in range(turns % 4):
            seq = seq.map_points(rotate90)
        return seq


def build_star_graph_seq(window: TrajWindow, index: NeighborIndex) -> StarGraphSeq:
    scene = window.scene_id
    ids, pos = [], []
    for f in window.obs_frames:
        nb = neighbors_at(index, scene, int(f), window.poi_id)
        ids.append(np.array([p for p, _ in nb], dtype=np.int64))
        pos.append(np.array([xy for _, xy in nb], dtype=np.float64).reshape(-1, 2))
    return StarGraphSeq(window.poi_id, window.obs.copy(), tuple(ids), tuple(pos))


def star_edge_count(n: int) -> int:
    """Edges in one POI's star graph when n pedestrians are present."""
    return max(n - 1, 0)


def complete_edge_count(n: int) -> int:
    return n * (n - 1) // 2


def neighbor_means(seqs: list[StarGraphSeq], self_loop: bool = False
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Mean neighbour position per (sequence, step) and a non-empty mask.

    The graph convolution is linear before its bias and ReLU, so averaging
    positions first and applying W once equals averaging W·x_j.  Neighbours
    are summed in ascending ped_id order.
    """
    B, steps = len(seqs), seqs[0].steps
    means = np.zeros((B, steps, 2))
    mask = np.zeros((B, steps))
    for b, s in enumerate(seqs):
        for t in range(steps):
            order = np.argsort(s.neighbor_ids[t], kind="stable")
            pts = s.neighbor_pos[t][order]
            if self_loop:
                pts = np.concatenate([pts, s.poi_pos[t:t + 1]])
            if len(pts):
                acc = np.zeros(2)
                for p in pts:
                    acc = acc + p
                means[b, t] = acc / len(pts)
                mask[b, t] = 1.0
    return means, mask


@dataclass
class GcnLayer:
    W: Tensor  # [d_out, 2]
    b: Tensor  # [d_out]


def gcn_apply(means: Tensor, mask: Tensor, layer: GcnLayer) -> Tensor:
    """a = ReLU(b + mean_j W x_j); an empty neighbourhood gives ReLU(b)."""
    agg = T.affine(means, layer.W)
    return T.relu(T.add(layer.b, T.mul(agg, mask)))


def gcn_forward(seq: StarGraphSeq, layer: GcnLayer, self_loop: bool = False) -> Tensor:
    """Per-step embeddings [T_obs, d_out] for one star-graph sequence."""
    dtype = layer.W.dtype
    means, mask = neighbor_means([seq], self_loop)
    a = gcn_apply(Tensor(means[0], dtype=dtype), Tensor(mask[0][:, None], dtype=dtype), layer)
    return a


def social_encode(embeddings: list[Tensor], W_ih: Tensor, W_hh: Tensor, b: Tensor) -> Tensor:
    """Final hidden state of the social LSTM over per-step graph embeddings."""
    h, _ = T.lstm_sequence(embeddings, W_ih, W_hh, b)
    return h
