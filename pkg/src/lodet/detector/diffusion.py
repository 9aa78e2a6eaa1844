"""Forward noising of boxes and the DDIM time grid."""
from __future__ import annotations

import numpy as np

from .boxes import clamp_boxes


def cosine_alpha_bar(T: int, s: float = 0.008) -> np.ndarray:
    """Cumulative signal fraction for t = 0..T; alpha_bar[0] == 1, alpha_bar[T] ~ 0."""
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((t / T) + s) / (1 + s) * np.pi / 2) ** 2
    return np.clip(f / f[0], 0.0, 1.0)


def to_signal(boxes: np.ndarray, scale: float) -> np.ndarray:
    return (np.asarray(boxes, dtype=np.float64) * 2.0 - 1.0) * scale


def from_signal(x: np.ndarray, scale: float) -> np.ndarray:
    """Clip signal to [-scale, scale] and map back to normalized boxes."""
    x = np.clip(x, -scale, scale)
    return clamp_boxes((x / scale + 1.0) / 2.0)


def random_boxes(rng: np.random.Generator, n: int) -> np.ndarray:
    centers = rng.uniform(0.0, 1.0, size=(n, 2))
    sizes = rng.uniform(0.05, 0.5, size=(n, 2))
    return np.concatenate([centers, sizes], axis=1)


def pad_boxes(gt: np.ndarray, n_prop: int, rng: np.random.Generator) -> np.ndarray:
    """Tile ground truth cyclically, fill the remainder with uniform random boxes."""
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 4)
    n = len(gt)
    if n > n_prop:
        raise ValueError(f"{n} ground-truth boxes exceed {n_prop} proposals")
    if n == 0:
        return random_boxes(rng, n_prop)
    reps = n_prop // n
    tiled = np.tile(gt, (reps, 1))
    if len(tiled) < n_prop:
        tiled = np.concatenate([tiled, random_boxes(rng, n_prop - len(tiled))])
    return tiled


def as_rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def corrupt_boxes(gt: np.ndarray, t: int, seed, n_prop: int, T: int, scale: float,
                  alpha_bar: np.ndarray | None = None):
    """Noise padded ground truth to step ``t``.

    Returns (noisy normalized boxes, noisy signal x_t, padded clean boxes).
    """
    if not 0 <= t <= T:
        raise ValueError(f"t={t} outside [0, {T}]")
    rng = as_rng(seed)
    ab = cosine_alpha_bar(T) if alpha_bar is None else alpha_bar
    x0_boxes = pad_boxes(gt, n_prop, rng)
    x0 = to_signal(x0_boxes, scale)
    eps = rng.standard_normal(x0.shape)
    x_t = np.sqrt(ab[t]) * x0 + np.sqrt(1.0 - ab[t]) * eps
    return from_signal(x_t, scale), x_t, x0_boxes


def ddim_pairs(T: int, steps: int) -> list[tuple[int, int]]:
    """(t, t_next) pairs walking from T down to 0 in ``steps`` hops."""
    if not 1 <= steps <= T:
        raise ValueError("sampling steps must lie in [1, T]")
    times = np.linspace(T, 0, steps + 1).round().astype(int).tolist()
    return list(zip(times[:-1], times[1:]))
