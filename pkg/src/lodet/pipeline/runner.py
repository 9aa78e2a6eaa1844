"""Pretraining and the three adaptation strategies, one grid cell at a time."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .. import checkpoint
from ..data import DatasetIndex, EpisodeSpec, sample_k_shot, split
from ..detector import Detector, DetectorConfig
from ..eval import EvalResult, detections_to_records, evaluate
from ..lora import AdapterConfig, DEFAULT_SELECTOR, adapters_of, inject, save_adapters, trainable_count
from ..optim import AdamW
from ..tensor import backward
from .plan import STRATEGIES, ExperimentPlan, resolve_dataset

log = logging.getLogger(__name__)


class DependencyError(RuntimeError):
    pass


@dataclass(frozen=True)
class Domains:
    source_train: DatasetIndex
    source_val: DatasetIndex
    pool: DatasetIndex  # target images available to k-shot episodes
    val: DatasetIndex
    test: DatasetIndex


def _domains_key(plan: ExperimentPlan) -> str:
    keys = ("source", "target", "val_fraction", "test_fraction", "split_seed")
    return json.dumps({k: plan.to_dict()[k] for k in keys}, sort_keys=True)


@lru_cache(maxsize=4)
def _build_domains(key: str) -> Domains:
    d = json.loads(key)
    src = split(resolve_dataset(d["source"]), d["val_fraction"], d["split_seed"])
    tgt = resolve_dataset(d["target"])
    outer = split(tgt, d["test_fraction"], d["split_seed"])
    inner = split(outer["train"], d["val_fraction"] / (1.0 - d["test_fraction"]), d["split_seed"] + 1)
    return Domains(src["train"], src["val"], inner["train"], inner["val"], outer["val"])


def build_domains(plan: ExperimentPlan) -> Domains:
    """Source train/val and target pool/val/test; the target val and test sets are fixed per dataset."""
    return _build_domains(_domains_key(plan))


def _stack(ds: DatasetIndex):
    ids = ds.image_ids
    return np.stack([ds.pixels_for(i) for i in ids]), [ds.boxset(i) for i in ids]


def detect(model: Detector, ds: DatasetIndex, seed: int) -> dict:
    return {i: model.infer(ds.pixels_for(i), seed) for i in ds.image_ids}


def evaluate_model(model: Detector, ds: DatasetIndex, seed: int) -> EvalResult:
    dets = detect(model, ds, seed)
    gts = {i: ds.boxset(i) for i in ds.image_ids}
    return evaluate(dets, gts, list(range(model.cfg.n_classes)), 0.5, model.cfg.max_detections)


def probe_loss(model: Detector, ds: DatasetIndex, seed: int, repeats: int = 4,
               batch_size: int = 8) -> float:
    """Training loss on ``ds`` under a fixed noise draw, for before/after comparisons."""
    images, gts = _stack(ds)
    rng = np.random.default_rng(seed)
    total, n = 0.0, 0
    for _ in range(repeats):
        for lo in range(0, len(images), batch_size):
            loss, _ = model.training_loss(images[lo:lo + batch_size], gts[lo:lo + batch_size], rng)
            total += float(loss.data) * len(gts[lo:lo + batch_size])
            n += len(gts[lo:lo + batch_size])
    return total / n


def select_checkpoint(trace) -> int:
    """Index of the best validation score; ties go to the earliest entry."""
    values = [float(v) for v in trace]
    if not values:
        raise ValueError("cannot select a checkpoint from an empty trace")
    return int(np.argmax(values))


def fit(model: Detector, ds: DatasetIndex, epochs: int, lr: float, weight_decay: float,
        batch_size: int, rng: np.random.Generator, val: DatasetIndex, eval_interval: int,
        eval_seed: int):
    """Epoch loop; evaluates on ``val`` every ``eval_interval`` epochs and keeps the best state."""
    images, gts = _stack(ds)
    opt = AdamW(model.parameters(), lr=lr, weight_decay=weight_decay)
    trace, states = [], []
    running, steps = 0.0, 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(images))
        for lo in range(0, len(order), batch_size):
            b = order[lo:lo + batch_size]
            loss, _ = model.training_loss(images[b], [gts[i] for i in b], rng)
            opt.zero_grad()
            backward(loss)
            opt.step()
            running += float(loss.data)
            steps += 1
        if epoch % eval_interval == 0:
            v = evaluate_model(model, val, eval_seed).map50
            trace.append({"epoch": epoch, "val_map50": v, "train_loss": running / max(steps, 1)})
            running, steps = 0.0, 0
            best = select_checkpoint([t["val_map50"] for t in trace])
            if best == len(trace) - 1:
                states = [model.state_dict()]
            log.debug("epoch %d val %.4f", epoch, v)
    return trace, (states[0] if states else model.state_dict())


def _write_trace(path: Path, trace: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "val_map50", "train_loss"])
        for t in trace:
            w.writerow([t["epoch"], repr(float(t["val_map50"])), repr(float(t["train_loss"]))])


def save_model(path: Path, model: Detector) -> None:
    checkpoint.save(path, model.state_dict(), {"detector": json.dumps(model.cfg.to_dict(), sort_keys=True)})


def load_model(path: Path, cfg: DetectorConfig | None = None) -> Detector:
    tensors, meta = checkpoint.load(path)
    if cfg is None:
        cfg = DetectorConfig.from_dict(json.loads(meta["detector"]))
    model = Detector(cfg)
    model.load_state_dict(tensors)
    return model


def cell_name(strategy: str, shots: int, rank: int | None, seed: int) -> str:
    if strategy == "baseline_ft":
        return f"baseline_ft-k{shots}-s{seed}"
    return f"{strategy}-k{shots}-r{rank}-s{seed}"


# -- pretraining ---------------------------------------------------------------------

def pretrain(plan: ExperimentPlan, root: Path) -> dict:
    """Train on the synthetic source domain; keeps the best validation checkpoint."""
    cfg = plan.detector_config
    settings = plan.pretrain
    dom = build_domains(plan)
    images, gts = _stack(dom.source_train)
    model = Detector(cfg, seed=settings.seed)
    opt = AdamW(model.parameters(), lr=settings.lr, weight_decay=plan.weight_decay)
    rng = np.random.default_rng(settings.seed)
    start = time.perf_counter()
    trace, best_state, best = [], model.state_dict(), -1.0
    bs = min(settings.batch_size, len(images))
    for step in range(1, settings.steps + 1):
        b = rng.choice(len(images), bs, replace=False)
        loss, _ = model.training_loss(images[b], [gts[i] for i in b], rng)
        opt.zero_grad()
        backward(loss)
        opt.step()
        if step % settings.eval_every == 0 or step == settings.steps:
            v = evaluate_model(model, dom.source_val, plan.eval_seed).map50
            trace.append({"step": step, "val_map50": v, "loss": float(loss.data)})
            log.info("pretrain step %d loss %.3f val mAP50 %.3f", step, float(loss.data), v)
            if v > best:
                best, best_state = v, model.state_dict()
    model.load_state_dict(best_state)
    out = Path(root) / "pretrain"
    out.mkdir(parents=True, exist_ok=True)
    save_model(out / "model.ldck", model)
    summary = {
        "val_map50": best,
        "target_val_map50": evaluate_model(model, dom.val, plan.eval_seed).map50,
        "steps": settings.steps,
        "elapsed_s": time.perf_counter() - start,
        "trace": trace,
        "detector": cfg.to_dict(),
    }
    (out / "pretrain.json").write_text(json.dumps(summary, indent=1))
    return summary


# -- strategy cells -------------------------------------------------------------------

def _adapter_config(plan: ExperimentPlan, rank: int) -> AdapterConfig:
    return AdapterConfig(rank=rank, alpha=plan.lora_alpha,
                         selector=plan.lora_selector or DEFAULT_SELECTOR,
                         init_scale=plan.lora_init_scale)


def run_cell(plan: ExperimentPlan, strategy: str, shots: int, rank: int | None, seed: int,
             root: Path) -> dict:
    """Run one (strategy, shots, rank, seed) cell and write its artefacts under ``root``."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if strategy != "baseline_ft" and rank is None:
        raise ValueError(f"{strategy} needs a rank")
    root = Path(root)
    pre = root / "pretrain" / "model.ldck"
    if not pre.exists():
        raise DependencyError(f"no pretrained checkpoint at {pre}; run `lodet pretrain` first")
    cfg = plan.detector_config
    dom = build_domains(plan)
    episode = sample_k_shot(dom.pool, EpisodeSpec(shots, seed))
    rng = np.random.default_rng([seed, shots, rank or 0, STRATEGIES.index(strategy)])

    if strategy == "lora_after_ft":
        base_ckpt = root / cell_name("baseline_ft", shots, None, seed) / "best.ldck"
        if not base_ckpt.exists():
            raise DependencyError(f"lora_after_ft needs the baseline run for k={shots}, "
                                  f"seed={seed} ({base_ckpt} missing)")
        model = load_model(base_ckpt, cfg)
    else:
        model = load_model(pre, cfg)

    acfg = None
    if strategy == "baseline_ft":
        model.unfreeze()
        epochs, lr = plan.epochs, plan.lr
    else:
        acfg = _adapter_config(plan, rank)
        inject(model, acfg, seed=seed)
        epochs = plan.epochs if strategy == "lora_direct" else plan.stage2
        lr = plan.lr_adapter
    frozen_before = {n: p.data.copy() for n, p in model.named_parameters() if not p.trainable}
    counts = trainable_count(model)

    start = time.perf_counter()
    initial_val = evaluate_model(model, dom.val, plan.eval_seed).map50
    initial_test = evaluate_model(model, dom.test, plan.eval_seed).map50
    stage_loss = probe_loss(model, episode, seed)
    initial_loss = stage_loss
    if strategy == "lora_after_ft":
        # the strategy spans both stages, so its starting point is the pretrained model
        initial_loss = probe_loss(load_model(pre, cfg), episode, seed)
    trace, best_state = fit(model, episode, epochs, lr, plan.weight_decay, plan.batch_size, rng,
                            dom.val, plan.eval_interval, plan.eval_seed)
    final_loss = probe_loss(model, episode, seed)
    last_state = model.state_dict()
    test_last = evaluate_model(model, dom.test, plan.eval_seed).map50
    best_idx = select_checkpoint([t["val_map50"] for t in trace]) if trace else None
    model.load_state_dict(best_state)
    dets = detect(model, dom.test, plan.eval_seed)
    gts = {i: dom.test.boxset(i) for i in dom.test.image_ids}
    test_best = evaluate(dets, gts, list(range(cfg.n_classes)), 0.5, cfg.max_detections).map50
    frozen_unchanged = all(np.array_equal(arr, dict(model.named_parameters())[n].data)
                           for n, arr in frozen_before.items())

    out = root / cell_name(strategy, shots, rank, seed)
    out.mkdir(parents=True, exist_ok=True)
    save_model(out / "best.ldck", model)
    checkpoint.save(out / "last.ldck", last_state)
    if acfg is not None:
        save_adapters(out / "adapters.ldck", model, acfg)
    _write_trace(out / "trace.csv", trace)
    (out / "test_detections.json").write_text(json.dumps(detections_to_records(dets, dom.test)))
    result = {
        "dataset": plan.dataset_name,
        "strategy": strategy,
        "shots": shots,
        "rank": rank,
        "seed": seed,
        "epochs": epochs,
        "episode_images": episode.image_ids,
        "trainable": counts["trainable"],
        "total": counts["total"],
        "adapted_layers": sorted(adapters_of(model)),
        "initial_val_map50": initial_val,
        "initial_test_map50": initial_test,
        "initial_train_loss": initial_loss,
        "stage_initial_train_loss": stage_loss,
        "final_train_loss": final_loss,
        "best_index": best_idx,
        "best_epoch": trace[best_idx]["epoch"] if trace else None,
        "best_checkpoint": "best.ldck",
        "best_val_map50": trace[best_idx]["val_map50"] if trace else None,
        "test_map50": test_best,
        "test_map50_last": test_last,
        "frozen_unchanged": frozen_unchanged,
        "elapsed_s": time.perf_counter() - start,
    }
    (out / "result.json").write_text(json.dumps(result, indent=1))
    return result


def run_grid(plan: ExperimentPlan, root: Path, skip_done: bool = True) -> list[dict]:
    results = []
    for strategy, shots, rank, seed in plan.cells():
        done = Path(root) / cell_name(strategy, shots, rank, seed) / "result.json"
        if skip_done and done.exists():
            results.append(json.loads(done.read_text()))
            continue
        log.info("running %s", cell_name(strategy, shots, rank, seed))
        results.append(run_cell(plan, strategy, shots, rank, seed, root))
    return results
