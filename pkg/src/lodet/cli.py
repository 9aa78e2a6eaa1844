"""Command-line entry point: ``lodet pretrain | run | grid | aggregate | report | ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .data import load_coco_json, save_dataset, source_profile, synth_generate, target_profile
from .eval import evaluate_records
from .pipeline import (DependencyError, IncompleteGridError, PlanError, aggregate, load_plan,
                       load_runs, pretrain, render_report, results_root, run_cell, run_grid,
                       trend_check)
from .pipeline.table import ResultTable


def _plan(args):
    overrides = {}
    if getattr(args, "epochs", None) is not None:
        overrides["epochs"] = args.epochs
    return load_plan(args.config, **overrides)


def _root(args) -> Path:
    return results_root(args.results_dir) if args.results_dir else results_root()


def cmd_pretrain(args) -> int:
    plan = _plan(args)
    if args.steps is not None:
        plan.pretrain.steps = args.steps
    summary = pretrain(plan, _root(args))
    print(f"pretrain: source val mAP50 {summary['val_map50']:.4f}, "
          f"target val mAP50 {summary['target_val_map50']:.4f} "
          f"({summary['elapsed_s']:.0f}s)")
    return 0


def cmd_run(args) -> int:
    plan = _plan(args)
    rank = None if args.strategy == "baseline_ft" else args.rank
    res = run_cell(plan, args.strategy, args.shots, rank, args.seed, _root(args))
    print(f"{res['strategy']} k={res['shots']} rank={res['rank']} seed={res['seed']}: "
          f"test mAP50 {res['test_map50']:.4f} (best epoch {res['best_epoch']}), "
          f"trainable {res['trainable']}/{res['total']}")
    return 0


def cmd_grid(args) -> int:
    plan = _plan(args)
    root = _root(args)
    if not (root / "pretrain" / "model.ldck").exists():
        pretrain(plan, root)
    run_grid(plan, root, skip_done=not args.force)
    return cmd_aggregate(args)


def cmd_aggregate(args) -> int:
    plan = _plan(args)
    root = _root(args)
    table = aggregate(load_runs(root), plan, allow_partial=args.allow_partial)
    (root / "table.csv").write_text(table.to_csv())
    (root / "table.md").write_text(table.to_markdown())
    print(table.to_markdown())
    return 0


def cmd_report(args) -> int:
    plan = _plan(args)
    root = _root(args)
    path = root / "table.csv"
    if not path.exists():
        print(f"{path} not found; run `lodet aggregate` first", file=sys.stderr)
        return 2
    table = ResultTable.from_csv(path.read_text())
    trend = trend_check(table, plan)
    text = render_report(table, trend)
    (root / "report.md").write_text(text)
    (root / "trend.json").write_text(json.dumps(trend, indent=1, default=str))
    print(text)
    return 0


def cmd_synth(args) -> int:
    make = source_profile if args.profile == "source" else target_profile
    overrides = {"n_images": args.n_images} if args.n_images else {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    ds = synth_generate(make(**overrides))
    path = save_dataset(ds, args.out)
    print(f"wrote {len(ds.images)} images, {len(ds.annotations)} annotations to {path}")
    return 0


def cmd_evaluate(args) -> int:
    ds = load_coco_json(Path(args.gt).read_bytes())
    records = json.loads(Path(args.dets).read_text())
    res = evaluate_records(records, ds, args.iou, args.max_dets)
    print(res.to_json())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lodet", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML/JSON experiment plan")
        sp.add_argument("--results-dir", help="output root (default: $LODET_RESULTS_DIR or ./results)")

    sp = sub.add_parser("pretrain", help="train the detector on the synthetic source domain")
    common(sp)
    sp.add_argument("--steps", type=int)
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("run", help="run one strategy cell")
    common(sp)
    sp.add_argument("--strategy", required=True, choices=["baseline_ft", "lora_direct", "lora_after_ft"])
    sp.add_argument("--shots", type=int, required=True)
    sp.add_argument("--rank", type=int, default=4)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("grid", help="pretrain if needed, run every plan cell, aggregate")
    common(sp)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--force", action="store_true", help="rerun cells that already have results")
    sp.add_argument("--allow-partial", action="store_true")
    sp.set_defaults(func=cmd_grid)

    sp = sub.add_parser("aggregate", help="fold run results into table.csv / table.md")
    common(sp)
    sp.add_argument("--allow-partial", action="store_true")
    sp.set_defaults(func=cmd_aggregate)

    sp = sub.add_parser("report", help="render report.md with the low-shot trend check")
    common(sp)
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("synth", help="write a synthetic dataset as COCO JSON + PPM")
    sp.add_argument("--profile", choices=["source", "target"], default="source")
    sp.add_argument("--n-images", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("evaluate", help="mAP@0.5 of COCO-results detections")
    sp.add_argument("--gt", required=True, help="COCO annotations JSON")
    sp.add_argument("--dets", required=True, help="COCO results JSON array")
    sp.add_argument("--iou", type=float, default=0.5)
    sp.add_argument("--max-dets", type=int, default=300)
    sp.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DependencyError, IncompleteGridError, PlanError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
