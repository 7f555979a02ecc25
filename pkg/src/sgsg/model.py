"""The SGSG network: trajectory encoder, social/scene features, VAE, decoder."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .params import ParamStore, add_conv, add_linear, add_lstm
from .scene import MERGE_MODES, cnn_dims, encode_scene, gate
from .social_graph import GcnLayer, gcn_apply
from .tensor import Tensor

EMB_DIM = 32
ENC_DIM = 32
SG_DIM = 32
LATENT_DIM = 8
DEC_DIM = 64


@dataclass(frozen=True)
class ModelConfig:
    use_sg: bool = True
    use_scene: bool = True
    use_vae: bool = True
    merge_mode: str = "gating"
    gcn_self_loop: bool = False
    tie_embedding: bool = True
    teacher_forcing: bool = False
    prior_sampling: bool = False
    raster_channels: int = 3
    raster_size: int = 64
    t_obs: int = 8
    t_pred: int = 12
    gamma_min: float = -60.0
    gamma_max: float = 10.0

    def __post_init__(self):
        if self.merge_mode not in MERGE_MODES:
            raise ValueError(f"unknown merge mode {self.merge_mode!r}")
        if self.use_vae and not (self.use_sg or self.use_scene):
            raise ValueError("the VAE needs the social graph or scene module enabled")
        if SG_DIM + ENC_DIM != DEC_DIM:
            raise ValueError("decoder hidden size must equal feature + encoder sizes")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class Batch:
    """Normalised model inputs for B windows."""
    obs: np.ndarray         # [B, T_obs, 2]
    gt: np.ndarray          # [B, T_pred, 2]
    nb_mean: np.ndarray     # [B, T_obs, 2]
    nb_mask: np.ndarray     # [B, T_obs]
    raster_idx: np.ndarray  # [B] rows of `rasters`
    rasters: np.ndarray     # [R, C, H, W]

    def __len__(self):
        return len(self.obs)

    def subset(self, idx) -> "Batch":
        idx = np.asarray(idx)
        used, inv = np.unique(self.raster_idx[idx], return_inverse=True)
        return Batch(self.obs[idx], self.gt[idx], self.nb_mean[idx], self.nb_mask[idx],
                     inv.reshape(-1), self.rasters[used])


def kld(mu: Tensor, gamma: Tensor) -> Tensor:
    """KL(N(mu, exp(gamma)) || N(0, I)) per row, summed over latent dims."""
    # (e^g - 1 - g) + mu^2, each part non-negative even after rounding
    terms = T.add(T.sub(T.expm1(gamma), gamma), T.square(mu))
    return T.mul(T.sum_axis(terms, -1), 0.5)


def sample_latent(mu: Tensor, gamma: Tensor, eps) -> Tensor:
    """Reparameterised z = mu + exp(gamma / 2) * eps; eps carries no gradient."""
    sigma = T.exp(T.mul(gamma, 0.5))
    return T.add(mu, T.mul(sigma, Tensor(eps, dtype=mu.dtype)))


def prediction_loss(pred: Tensor, gt) -> Tensor:
    """Squared L2 error summed over steps and axes, per row."""
    diff = T.sub(pred, Tensor(gt, dtype=pred.dtype))
    return T.sum_axis(T.sum_axis(T.square(diff), -1), -1)


class SGSGModel:
    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        self.config = config or ModelConfig()
        self.params = ParamStore()
        rng = np.random.default_rng(seed)
        c = self.config
        p = self.params
        add_linear(p, rng, "emb", 2, EMB_DIM)
        add_lstm(p, rng, "enc", EMB_DIM, ENC_DIM)
        if c.use_sg:
            add_linear(p, rng, "gcn", 2, SG_DIM)
            add_lstm(p, rng, "sg", SG_DIM, SG_DIM)
        if c.use_scene:
            add_conv(p, rng, "scene.conv1", c.raster_channels, 8, 3)
            add_conv(p, rng, "scene.conv2", 8, 16, 3)
            add_linear(p, rng, "scene.fc", cnn_dims(c.raster_channels, c.raster_size), SG_DIM)
        if c.use_sg and c.use_scene and c.merge_mode == "concat":
            add_linear(p, rng, "merge", 2 * SG_DIM, SG_DIM)
        if c.use_vae:
            add_linear(p, rng, "venc", SG_DIM, 2 * LATENT_DIM)
            add_linear(p, rng, "vdec", LATENT_DIM, SG_DIM)
        if not c.tie_embedding:
            add_linear(p, rng, "emb_dec", 2, EMB_DIM)
        add_lstm(p, rng, "dec", EMB_DIM, DEC_DIM)
        add_linear(p, rng, "out", DEC_DIM, 2)

    # -- pieces ---------------------------------------------------------------

    def _lstm(self, name):
        p = self.params
        return p[f"{name}.W_ih"], p[f"{name}.W_hh"], p[f"{name}.b"]

    def embed(self, pts: Tensor, decoder: bool = False) -> Tensor:
        name = "emb_dec" if decoder and not self.config.tie_embedding else "emb"
        return T.relu(T.affine(pts, self.params[f"{name}.W"], self.params[f"{name}.b"]))

    def _t(self, arr) -> Tensor:
        return Tensor(arr, dtype=self.params["emb.W"].dtype)

    def encode_history(self, obs) -> Tensor:
        """[B, T_obs, 2] normalised points -> final encoder hidden [B, 32]."""
        obs = self._t(obs)
        steps = [self.embed(obs[:, t]) for t in range(obs.shape[1])]
        h, _ = T.lstm_sequence(steps, *self._lstm("enc"))
        return h

    def social_feature(self, nb_mean, nb_mask) -> Tensor:
        layer = GcnLayer(self.params["gcn.W"], self.params["gcn.b"])
        a = gcn_apply(self._t(nb_mean), self._t(np.asarray(nb_mask)[..., None]), layer)
        steps = [a[:, t] for t in range(a.shape[1])]
        g, _ = T.lstm_sequence(steps, *self._lstm("sg"))
        return g

    def scene_feature(self, rasters, raster_idx) -> Tensor:
        s = encode_scene(self._t(rasters), self.params)
        return T.gather_rows(s, raster_idx)

    def merged_feature(self, batch: Batch) -> Tensor:
        """The (scene-gated) social feature fed to the VAE or decoder."""
        c = self.config
        g = self.social_feature(batch.nb_mean, batch.nb_mask) if c.use_sg else None
        s = self.scene_feature(batch.rasters, batch.raster_idx) if c.use_scene else None
        if g is not None and s is not None:
            proj = (self.params["merge.W"], self.params["merge.b"]) if c.merge_mode == "concat" else None
            return gate(s, g, c.merge_mode, proj)
        if g is not None:
            return g
        if s is not None:
            return s
        return self._t(np.zeros((len(batch), SG_DIM)))

    def vae_encode(self, G: Tensor) -> tuple[Tensor, Tensor]:
        out = T.affine(G, self.params["venc.W"], self.params["venc.b"])
        mu = out[..., :LATENT_DIM]
        gamma = T.clamp(out[..., LATENT_DIM:], self.config.gamma_min, self.config.gamma_max)
        return mu, gamma

    def vae_decode(self, z: Tensor) -> Tensor:
        return T.relu(T.affine(z, self.params["vdec.W"], self.params["vdec.b"]))

    def decode_trajectory(self, g_hat: Tensor, h: Tensor, last_obs, gt=None) -> Tensor:
        """Roll the decoder for T_pred steps from state g_hat ++ h.

        With ``gt`` given and teacher forcing on, ground truth feeds the next
        step instead of the prediction.
        """
        hid = T.concat([g_hat, h], axis=-1)
        if hid.shape[-1] != DEC_DIM:
            raise ValueError(f"decoder state has {hid.shape[-1]} dims, expected {DEC_DIM}")
        cell = self._t(np.zeros(hid.shape))
        W_ih, W_hh, b = self._lstm("dec")
        W_o, b_o = self.params["out.W"], self.params["out.b"]
        x = self.embed(self._t(last_obs), decoder=True)
        preds = []
        for t in range(self.config.t_pred):
            hid, cell = T.lstm_cell(x, hid, cell, W_ih, W_hh, b)
            p = T.affine(hid, W_o, b_o)
            preds.append(p)
            nxt = self._t(gt[..., t, :]) if (gt is not None and self.config.teacher_forcing) else p
            x = self.embed(nxt, decoder=True)
        return T.stack(preds, axis=-2)

    # -- full passes ------------------------------------------------------------

    def forward(self, batch: Batch, eps=None, train: bool = False):
        """One trajectory per window.  Returns (pred [B,12,2], mu, gamma);
        mu/gamma are None without the VAE.  eps=None means z = mu."""
        h = self.encode_history(batch.obs)
        G = self.merged_feature(batch)
        mu = gamma = None
        g_hat = G
        if self.config.use_vae:
            mu, gamma = self.vae_encode(G)
            if eps is None:
                z = mu
            elif self.config.prior_sampling and not train:
                z = self._t(eps)
            else:
                z = sample_latent(mu, gamma, eps)
            g_hat = self.vae_decode(z)
        pred = self.decode_trajectory(g_hat, h, batch.obs[:, -1], batch.gt if train else None)
        return pred, mu, gamma

    def loss(self, batch: Batch, eps=None, kld_weight: float = 1.0) -> Tensor:
        """Batch mean of squared-L2 trajectory error plus weighted KLD."""
        pred, mu, gamma = self.forward(batch, eps, train=True)
        per = prediction_loss(pred, batch.gt)
        if mu is not None and kld_weight:
            per = T.add(per, T.mul(kld(mu, gamma), kld_weight))
        return T.mean_all(per)

    def sample(self, batch: Batch, eps: np.ndarray | None) -> np.ndarray:
        """K trajectories per window from eps [B, K, 8]; returns [B, K, 12, 2].

        eps=None gives the single deterministic trajectory z = mu.
        """
        if eps is None or not self.config.use_vae:
            K = 1 if eps is None else eps.shape[1]
            pred, _, _ = self.forward(batch, None)
            return np.repeat(pred.data[:, None], K, axis=1)
        h = self.encode_history(batch.obs)
        G = self.merged_feature(batch)
        # one decoder pass per sample column keeps sample k bitwise independent of K
        mu, gamma = self.vae_encode(G)
        out = []
        for k in range(eps.shape[1]):
            z = self._t(eps[:, k]) if self.config.prior_sampling else sample_latent(mu, gamma, eps[:, k])
            out.append(self.decode_trajectory(self.vae_decode(z), h, batch.obs[:, -1]).data)
        return np.stack(out, axis=1)

    def latent_stats(self, batch: Batch):
        if not self.config.use_vae:
            return None, None
        mu, gamma = self.vae_encode(self.merged_feature(batch))
        return mu.data, gamma.data

    def module_param_counts(self) -> dict[str, int]:
        groups = {
            "trajectory_encoder": ("emb.", "enc."),
            "social_graph": ("gcn.", "sg."),
            "scene": ("scene.", "merge."),
            "vae": ("venc.", "vdec."),
            "decoder": ("emb_dec.", "dec.", "out."),
        }
        return {k: sum(self.params.count(pre) for pre in v) for k, v in groups.items()}
