"""Experiment plan: the strategy x shots x rank x seed grid and its settings."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from ..data import DatasetIndex, SynthConfig, load_dataset, source_profile, synth_generate, target_profile
from ..detector import DetectorConfig

STRATEGIES = ("baseline_ft", "lora_direct", "lora_after_ft")
RESULTS_ENV = "LODET_RESULTS_DIR"


class PlanError(ValueError):
    pass


@dataclass
class PretrainSettings:
    steps: int = 8000
    lr: float = 1e-3
    batch_size: int = 8
    eval_every: int = 500
    seed: int = 0


@dataclass
class ExperimentPlan:
    strategies: tuple[str, ...] = STRATEGIES
    shots: tuple[int, ...] = (1, 5, 10, 50)
    ranks: tuple[int, ...] = (4, 8, 32, 128)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    epochs: int = 300
    stage2_epochs: int | None = None  # None -> reuse epochs
    eval_interval: int = 10
    lr: float = 1e-3
    adapter_lr: float | None = None  # None -> same as lr
    weight_decay: float = 1e-4
    batch_size: int = 4
    lora_alpha: float | None = None  # None -> alpha = rank
    lora_selector: str | None = None  # None -> default head selector
    lora_init_scale: float = 0.02
    dataset_name: str = "synth-aerial"
    source: dict = field(default_factory=lambda: {"synth": source_profile().to_dict()})
    target: dict = field(default_factory=lambda: {"synth": target_profile().to_dict()})
    val_fraction: float = 0.2
    test_fraction: float = 0.2
    split_seed: int = 0
    eval_seed: int = 0
    detector: dict = field(default_factory=lambda: DetectorConfig().to_dict())
    pretrain: PretrainSettings = field(default_factory=PretrainSettings)

    def __post_init__(self):
        for name in ("strategies", "shots", "ranks", "seeds"):
            setattr(self, name, tuple(getattr(self, name)))
        if isinstance(self.pretrain, dict):
            self.pretrain = PretrainSettings(**self.pretrain)
        bad = [s for s in self.strategies if s not in STRATEGIES]
        if bad:
            raise PlanError(f"unknown strategies {bad}; choose from {STRATEGIES}")
        if not self.seeds:
            raise PlanError("seeds must be non-empty")
        if any(k < 1 for k in self.shots):
            raise PlanError("shots must be positive")
        if any(r < 1 for r in self.ranks):
            raise PlanError("ranks must be positive")
        if self.epochs < 1 or self.eval_interval < 1:
            raise PlanError("epochs and eval_interval must be positive")

    @property
    def detector_config(self) -> DetectorConfig:
        return DetectorConfig.from_dict(self.detector)

    @property
    def stage2(self) -> int:
        return self.epochs if self.stage2_epochs is None else self.stage2_epochs

    @property
    def lr_adapter(self) -> float:
        return self.lr if self.adapter_lr is None else self.adapter_lr

    def columns(self) -> list[str]:
        cols = []
        if "baseline_ft" in self.strategies:
            cols.append("baseline")
        if "lora_direct" in self.strategies:
            cols += [f"lora@{r}" for r in self.ranks]
        if "lora_after_ft" in self.strategies:
            cols += [f"lora_after_ft@{r}" for r in self.ranks]
        return cols

    def cells(self) -> list[tuple[str, int, int | None, int]]:
        """(strategy, shots, rank, seed) in dependency-safe order (baselines first)."""
        out = []
        for strategy in STRATEGIES:
            if strategy not in self.strategies:
                continue
            ranks = [None] if strategy == "baseline_ft" else list(self.ranks)
            for k in self.shots:
                for r in ranks:
                    for s in self.seeds:
                        out.append((strategy, k, r, s))
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        for name in ("strategies", "shots", "ranks", "seeds"):
            d[name] = list(d[name])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise PlanError(f"unknown plan keys: {unknown}")
        return cls(**d)


def load_plan(path: str | os.PathLike | None = None, **overrides) -> ExperimentPlan:
    """Read a YAML/JSON plan (JSON is valid YAML) and apply non-None overrides."""
    d: dict = {}
    if path is not None:
        d = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(d, dict):
            raise PlanError(f"{path}: plan must be a mapping")
    d.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentPlan.from_dict(d)


def results_root(default: str | os.PathLike = "results") -> Path:
    return Path(os.environ.get(RESULTS_ENV) or default)


def resolve_dataset(ref: dict) -> DatasetIndex:
    """``{"synth": {...}}`` generates in memory; ``{"coco_dir": path}`` loads from disk."""
    if "synth" in ref:
        return synth_generate(SynthConfig.from_dict(ref["synth"]))
    if "coco_dir" in ref:
        return load_dataset(ref["coco_dir"])
    raise PlanError(f"dataset reference needs 'synth' or 'coco_dir': {ref}")
