"""Desk-scale diffusion box detector.

Training corrupts padded ground-truth boxes to a random step and learns to
recover them; inference starts from Gaussian boxes and refines them with a
few deterministic DDIM hops.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from ..nn import MLP, Linear, Module
from ..tensor import Tensor, bmm, concat
from .boxes import BoxSet
from .diffusion import as_rng, corrupt_boxes, cosine_alpha_bar, ddim_pairs, from_signal
from .loss import LossWeights, set_loss_batch


@dataclass
class DetectorConfig:
    image_size: int = 64
    patch_size: int = 8
    channels: int = 3
    embed_dim: int = 64
    hidden_dim: int = 128
    n_proposals: int = 50
    diffusion_steps: int = 1000
    sampling_steps: int = 4
    signal_scale: float = 2.0
    n_classes: int = 4
    score_threshold: float = 0.05
    max_detections: int = 300
    time_dim: int = 16
    backbone_bias: bool = True
    lambda_cls: float = 2.0
    lambda_l1: float = 5.0
    lambda_giou: float = 2.0
    background_weight: float = 0.1

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValueError("image_size must be divisible by patch_size")
        if not 1 <= self.sampling_steps <= self.diffusion_steps:
            raise ValueError("need 1 <= sampling_steps <= diffusion_steps")
        if self.n_proposals < 1 or self.n_classes < 1:
            raise ValueError("n_proposals and n_classes must be positive")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_cls, self.lambda_l1, self.lambda_giou, self.background_weight)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """(B, H, W, C) -> (B, G*G, patch*patch*C), patches in row-major grid order."""
    B, H, W, C = images.shape
    g = H // patch
    x = images.reshape(B, g, patch, g, patch, C).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(B, g * g, patch * patch * C)


def time_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


# 2x2 sample grid at the quadrant centres of a box
_SAMPLE_OFFSETS = np.array([[-0.25, -0.25], [0.25, -0.25], [-0.25, 0.25], [0.25, 0.25]])


def sampling_matrix(boxes: np.ndarray, grid: int) -> np.ndarray:
    """Bilinear weights (B, 4N, G*G) mapping grid features to 4 samples per box."""
    B, N, _ = boxes.shape
    pts = boxes[:, :, None, :2] + _SAMPLE_OFFSETS[None, None] * boxes[:, :, None, 2:]
    g = np.clip(pts * grid - 0.5, 0.0, grid - 1.0).reshape(B, 4 * N, 2)
    x0 = np.floor(g[..., 0]).astype(np.int64)
    y0 = np.floor(g[..., 1]).astype(np.int64)
    x1 = np.minimum(x0 + 1, grid - 1)
    y1 = np.minimum(y0 + 1, grid - 1)
    wx = g[..., 0] - x0
    wy = g[..., 1] - y0
    M = np.zeros((B, 4 * N, grid * grid), dtype=np.float64)
    b = np.arange(B)[:, None]
    r = np.arange(4 * N)[None, :]
    for yy, xx, wt in ((y0, x0, (1 - wx) * (1 - wy)), (y0, x1, wx * (1 - wy)),
                       (y1, x0, (1 - wx) * wy), (y1, x1, wx * wy)):
        np.add.at(M, (np.broadcast_to(b, yy.shape), np.broadcast_to(r, yy.shape), yy * grid + xx), wt)
    return M


class Backbone(Module):
    """Patch flattening, linear projection, then a 2-layer ReLU MLP."""

    def __init__(self, cfg: DetectorConfig, rng: np.random.Generator):
        self.patch = cfg.patch_size
        d_patch = cfg.patch_size ** 2 * cfg.channels
        self.proj = Linear(d_patch, cfg.embed_dim, rng, bias=cfg.backbone_bias)
        self.mlp = MLP([cfg.embed_dim, cfg.embed_dim, cfg.embed_dim], rng, bias=cfg.backbone_bias)

    def __call__(self, images: np.ndarray) -> Tensor:
        """(B, H, W, C) -> features (B, G*G, D)."""
        patches = patchify(np.asarray(images), self.patch)
        B, P, F = patches.shape
        h = self.proj(Tensor(patches.reshape(B * P, F))).relu()
        out = self.mlp(h)
        return out.reshape(B, P, out.shape[1])


class Head(Module):
    def __init__(self, cfg: DetectorConfig, rng: np.random.Generator):
        d_in = 4 * cfg.embed_dim + 4 + cfg.time_dim
        H = cfg.hidden_dim
        self.trunk = MLP([d_in, H, H], rng, final_relu=True)
        self.cls_branch = MLP([H, H], rng, final_relu=True)
        self.reg_branch = MLP([H, H], rng, final_relu=True)
        self.cls_logits = Linear(H, cfg.n_classes + 1, rng)
        self.box_delta = Linear(H, 4, zero=True)

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor]:
        h = self.trunk(x)
        return self.cls_logits(self.cls_branch(h)), self.box_delta(self.reg_branch(h))


class Detector(Module):
    def __init__(self, cfg: DetectorConfig | None = None, seed: int = 0):
        self.cfg = cfg or DetectorConfig()
        rng = np.random.default_rng(seed)
        self.backbone = Backbone(self.cfg, rng)
        self.head = Head(self.cfg, rng)
        self.alpha_bar = cosine_alpha_bar(self.cfg.diffusion_steps)
        self.assign_names()

    def _check_images(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images, dtype=np.float32)
        if images.ndim == 3:
            images = images[None]
        c = self.cfg
        if images.shape[1:] != (c.image_size, c.image_size, c.channels):
            raise ValueError(f"expected images of shape (*, {c.image_size}, {c.image_size}, "
                             f"{c.channels}), got {images.shape}")
        return images

    def backbone_forward(self, image: np.ndarray) -> Tensor:
        """One image (H, W, C) -> feature grid (G, G, D)."""
        feats = self.backbone(self._check_images(image))
        g = self.cfg.grid
        return feats.reshape(g, g, self.cfg.embed_dim)

    def denoise_step(self, feats: Tensor, x_t: np.ndarray, t) -> tuple[Tensor, Tensor]:
        """Predict clean signal-space boxes and class logits from noisy proposals.

        ``feats`` is (B, G*G, D), ``x_t`` is (B, N, 4) in signal space, ``t`` holds one
        step per image. Returns tensors of shape (B*N, 4) and (B*N, n_classes + 1).
        """
        c = self.cfg
        x_t = np.asarray(x_t, dtype=np.float64)
        if not np.isfinite(x_t).all():
            raise FloatingPointError("non-finite proposal boxes")
        B, N, _ = x_t.shape
        s = c.signal_scale
        xc = np.clip(x_t, -s, s)
        boxes = from_signal(xc, s)
        M = sampling_matrix(boxes, c.grid)
        pooled = bmm(Tensor(M), feats).reshape(B * N, 4 * c.embed_dim)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1), (B,))
        temb = np.repeat(time_embedding(t, c.time_dim), N, axis=0)
        x = concat([pooled, Tensor(xc.reshape(B * N, 4) / s), Tensor(temb)], axis=1)
        logits, delta = self.head(x)
        return delta + xc.reshape(B * N, 4), logits

    def signal_to_boxes(self, signal: Tensor) -> Tensor:
        return (signal * (1.0 / self.cfg.signal_scale) + 1.0) * 0.5

    def training_loss(self, images: np.ndarray, gts: list[BoxSet], rng) -> tuple[Tensor, dict]:
        """Corrupt each image's boxes to a random step and score the recovery."""
        c = self.cfg
        rng = as_rng(rng)
        images = self._check_images(images)
        B = len(images)
        ts = rng.integers(0, c.diffusion_steps + 1, size=B)
        x_t = np.stack([
            corrupt_boxes(gt.boxes, int(t), rng, c.n_proposals, c.diffusion_steps,
                          c.signal_scale, self.alpha_bar)[1]
            for gt, t in zip(gts, ts)
        ])
        feats = self.backbone(images)
        signal, logits = self.denoise_step(feats, x_t, ts)
        return set_loss_batch(self.signal_to_boxes(signal), logits, gts, c.n_proposals,
                              c.loss_weights)

    def sample(self, image: np.ndarray, seed) -> tuple[np.ndarray, np.ndarray]:
        """Run DDIM refinement from Gaussian boxes; returns final boxes and logits."""
        c = self.cfg
        rng = as_rng(seed)
        s = c.signal_scale
        feats = self.backbone(self._check_images(image))
        x = rng.standard_normal((1, c.n_proposals, 4))
        x0 = logits = None
        for t, t_next in ddim_pairs(c.diffusion_steps, c.sampling_steps):
            signal, logit_t = self.denoise_step(feats, x, t)
            x0 = np.clip(signal.data.astype(np.float64).reshape(1, -1, 4), -s, s)
            logits = logit_t.data
            a, a_next = self.alpha_bar[t], self.alpha_bar[t_next]
            eps = (x - np.sqrt(a) * x0) / np.sqrt(max(1.0 - a, 1e-12))
            x = np.sqrt(a_next) * x0 + np.sqrt(1.0 - a_next) * eps
        return from_signal(x0[0], s), logits

    def infer(self, image: np.ndarray, seed=0) -> BoxSet:
        """Detections for one image, score-sorted and capped at ``max_detections``."""
        c = self.cfg
        boxes, logits = self.sample(image, seed)
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        probs = (e / e.sum(axis=1, keepdims=True))[:, :c.n_classes]
        box_idx, cls_idx = np.nonzero(probs >= c.score_threshold)
        scores = probs[box_idx, cls_idx]
        order = np.argsort(-scores, kind="stable")[:c.max_detections]
        return BoxSet(boxes[box_idx[order]], cls_idx[order], scores[order])
