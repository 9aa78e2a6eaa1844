"""Low-rank adapters for ``Linear`` layers.

An adapted layer computes ``W x + b + (alpha / r) * B (A x)`` with ``W`` and ``b``
frozen. ``B`` starts at zero, so injection leaves the model function unchanged.
"""
from __future__ import annotations

import fnmatch
from dataclasses import dataclass

import numpy as np

from . import checkpoint
from .nn import Linear, Module
from .tensor import Parameter, Tensor

DEFAULT_SELECTOR = "head.trunk.*,head.cls_branch.*,head.reg_branch.*"


class AdapterConfigError(ValueError):
    pass


class RankError(AdapterConfigError):
    pass


class MergeStateError(RuntimeError):
    pass


@dataclass(frozen=True)
class AdapterConfig:
    rank: int = 4
    alpha: float | None = None  # None -> alpha = rank
    selector: str = DEFAULT_SELECTOR
    init_scale: float = 0.02

    def __post_init__(self):
        if self.rank < 1:
            raise RankError(f"rank must be >= 1, got {self.rank}")
        if self.alpha is not None and self.alpha <= 0:
            raise AdapterConfigError("alpha must be positive")

    @property
    def scaling(self) -> float:
        alpha = float(self.rank) if self.alpha is None else self.alpha
        return alpha / self.rank

    @property
    def effective_alpha(self) -> float:
        return float(self.rank) if self.alpha is None else float(self.alpha)

    def matches(self, path: str) -> bool:
        return any(fnmatch.fnmatchcase(path, pat.strip()) for pat in self.selector.split(","))


class LoraLinear(Module):
    """Wraps a ``Linear``; the base weight and bias are frozen on construction."""

    def __init__(self, base: Linear, rank: int, alpha: float, A: np.ndarray | None = None,
                 rng: np.random.Generator | None = None, init_scale: float = 0.02):
        if rank > min(base.d_in, base.d_out):
            raise RankError(f"rank {rank} exceeds min(d_in={base.d_in}, d_out={base.d_out})")
        self.base = base
        self.rank = rank
        self.alpha = alpha
        self.scaling = alpha / rank
        self.d_in, self.d_out = base.d_in, base.d_out
        if A is None:
            rng = rng or np.random.default_rng(0)
            A = rng.normal(0.0, init_scale, size=(rank, base.d_in))
        self.lora_A = Parameter(A)
        self.lora_B = Parameter(np.zeros((base.d_out, rank), dtype=np.float32))
        self.merged = False
        base.weight.trainable = False
        if base.bias is not None:
            base.bias.trainable = False

    def __call__(self, x: Tensor) -> Tensor:
        y = self.base(x)
        if self.merged:
            return y
        delta = (x @ self.lora_A.T) @ self.lora_B.T
        return y + delta * self.scaling

    def delta_weight(self) -> np.ndarray:
        return (self.scaling * (self.lora_B.data.astype(np.float64) @ self.lora_A.data)).astype(np.float32)

    def merge(self) -> np.ndarray:
        """Fold the adapter into the base weight and return the merged weight."""
        if self.merged:
            raise MergeStateError("adapter already merged")
        self.base.weight.data = self.base.weight.data + self.delta_weight()
        self.merged = True
        return self.base.weight.data

    def unmerge(self) -> np.ndarray:
        if not self.merged:
            raise MergeStateError("adapter is not merged")
        self.base.weight.data = self.base.weight.data - self.delta_weight()
        self.merged = False
        return self.base.weight.data


def _linear_slots(model: Module):
    """Yield (parent, attribute key, index, path) for every plain Linear in the tree."""
    for path, mod in model.named_modules():
        for key, val in list(vars(mod).items()):
            if isinstance(val, Linear):
                yield mod, key, None, f"{path}.{key}" if path else key
            elif isinstance(val, list):
                for i, item in enumerate(val):
                    if isinstance(item, Linear):
                        yield mod, key, i, f"{path}.{key}.{i}" if path else f"{key}.{i}"


def inject(model: Module, cfg: AdapterConfig, seed: int = 0) -> dict[str, LoraLinear]:
    """Wrap every selector-matched Linear in place and freeze everything else.

    Returns the adapters keyed by layer path.
    """
    targets = [slot for slot in _linear_slots(model) if cfg.matches(slot[3])]
    if not targets:
        raise AdapterConfigError(f"selector {cfg.selector!r} matches no linear layer")
    for parent, key, idx, path in targets:
        layer = getattr(parent, key) if idx is None else getattr(parent, key)[idx]
        if cfg.rank > min(layer.d_in, layer.d_out):
            raise RankError(f"rank {cfg.rank} exceeds min(d_in, d_out) = "
                            f"{min(layer.d_in, layer.d_out)} for layer {path}")
    model.freeze()
    rng = np.random.default_rng(seed)
    adapters = {}
    for parent, key, idx, path in targets:
        layer = getattr(parent, key) if idx is None else getattr(parent, key)[idx]
        ad = LoraLinear(layer, cfg.rank, cfg.effective_alpha, rng=rng, init_scale=cfg.init_scale)
        if idx is None:
            setattr(parent, key, ad)
        else:
            getattr(parent, key)[idx] = ad
        adapters[path] = ad
    model.assign_names()
    return adapters


def adapters_of(model: Module) -> dict[str, LoraLinear]:
    return {path: m for path, m in model.named_modules() if isinstance(m, LoraLinear)}


def merge_all(model: Module) -> None:
    for ad in adapters_of(model).values():
        ad.merge()


def unmerge_all(model: Module) -> None:
    for ad in adapters_of(model).values():
        ad.unmerge()


def trainable_count(model: Module) -> dict[str, int]:
    params = model.parameters()
    return {
        "trainable": int(sum(p.size for p in params if p.trainable)),
        "total": int(sum(p.size for p in params)),
    }


def budget_report(d_in: int, d_out: int, ranks) -> list[dict]:
    """Adapter size vs. full layer size for each rank (break-even where ratio >= 1)."""
    full = d_in * d_out
    rows = []
    for r in ranks:
        n = r * (d_in + d_out)
        rows.append({"rank": r, "adapter": n, "full": full, "ratio": n / full,
                     "break_even": n >= full})
    return rows


# -- adapter-only checkpoints ------------------------------------------------------

def adapter_state(model: Module) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in model.named_parameters()
            if name.endswith(".lora_A") or name.endswith(".lora_B")}


def save_adapters(path, model: Module, cfg: AdapterConfig) -> None:
    # floats go in as repr strings; scalar records are f32 and would not round-trip
    meta = {"rank": float(cfg.rank), "alpha": repr(cfg.effective_alpha),
            "selector": cfg.selector, "init_scale": repr(float(cfg.init_scale))}
    checkpoint.save(path, adapter_state(model), meta)


def load_adapters(path, model: Module) -> AdapterConfig:
    """Inject adapters described by an adapter-only checkpoint and load their factors."""
    tensors, meta = checkpoint.load(path)
    cfg = AdapterConfig(rank=int(meta["rank"]), alpha=float(meta["alpha"]),
                        selector=str(meta["selector"]),
                        init_scale=float(meta.get("init_scale", 0.02)))
    if not adapters_of(model):
        inject(model, cfg)
    model.load_state_dict(tensors, strict=False)
    return cfg
