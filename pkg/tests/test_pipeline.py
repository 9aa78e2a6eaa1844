import json

import numpy as np
import pytest

from lodet import checkpoint
from lodet.cli import main
from lodet.pipeline import (DependencyError, IncompleteGridError, PlanError, aggregate, load_plan,
                            pretrain, run_cell, run_grid)
from lodet.pipeline.plan import ExperimentPlan
from lodet.pipeline.runner import cell_name, select_checkpoint
from lodet.pipeline.table import ResultTable, summarize, trend_check


def test_select_checkpoint_examples():
    assert select_checkpoint([0.1, 0.3, 0.2]) == 1
    assert select_checkpoint([0.1, 0.2, 0.3]) == 2
    assert select_checkpoint([0.2, 0.3, 0.3]) == 1
    with pytest.raises(ValueError):
        select_checkpoint([])


def test_summarize():
    assert summarize([0.4] * 5) == (0.4, 0.0)
    m, s = summarize([1, 2, 3, 4, 5])
    assert m == 3.0 and s == pytest.approx(np.std([1, 2, 3, 4, 5], ddof=1))


def _fake_runs(plan, value=lambda strategy, k, r, s: s + 1.0):
    return [{"strategy": st, "shots": k, "rank": r, "seed": s, "test_map50": value(st, k, r, s)}
            for st, k, r, s in plan.cells()]


def test_aggregate_mean_std_and_best():
    plan = ExperimentPlan(shots=(1,), ranks=(4,), seeds=(1, 2, 3, 4, 5))
    bump = {"baseline_ft": 0.0, "lora_direct": 0.5, "lora_after_ft": 0.25}
    table = aggregate(_fake_runs(plan, lambda st, k, r, s: s + bump[st]), plan)
    base = table.cells[("synth-aerial", 1, "baseline")]
    assert base.values == (1.0, 2.0, 3.0, 4.0, 5.0) and base.mean == 3.0
    assert [c for c in plan.columns() if table.cells[("synth-aerial", 1, c)].best] == ["lora@4"]
    flat = aggregate(_fake_runs(plan, lambda *a: 0.7), plan)
    assert flat.cells[("synth-aerial", 1, "lora@4")].std == 0.0


def test_aggregate_incomplete_grid():
    plan = ExperimentPlan(shots=(1,), ranks=(4,), seeds=(0, 1))
    runs = _fake_runs(plan)[:-1]
    with pytest.raises(IncompleteGridError) as info:
        aggregate(runs, plan)
    assert info.value.missing == ["lora_after_ft/k=1/r=4/seed=1"]
    partial = aggregate(runs, plan, allow_partial=True)
    assert partial.cells[("synth-aerial", 1, "lora_after_ft@4")].missing == 1
    assert "(1 missing)" in partial.to_markdown()


def test_csv_round_trip_exact():
    plan = ExperimentPlan(shots=(1, 5), ranks=(4, 8), seeds=(0, 1, 2))
    rng = np.random.default_rng(0)
    table = aggregate(_fake_runs(plan, lambda *a: float(rng.uniform())), plan)
    text = table.to_csv()
    back = ResultTable.from_csv(text)
    assert back == table
    assert back.to_csv() == text


def test_trend_check_reports_margin():
    plan = ExperimentPlan(shots=(1,), ranks=(4,), seeds=(0,))
    vals = {"baseline_ft": 0.1, "lora_direct": 0.2, "lora_after_ft": 0.3}
    trend = trend_check(aggregate(_fake_runs(plan, lambda st, *a: vals[st]), plan), plan)
    assert trend["holds"] and trend["margin"] == pytest.approx(0.1)


def test_plan_loading(tmp_path):
    p = tmp_path / "p.yaml"
    p.write_text("shots: [5]\nranks: [8]\nepochs: 20\n")
    plan = load_plan(p, epochs=30)
    assert plan.shots == (5,) and plan.epochs == 30 and plan.stage2 == 30
    assert plan.cells()[0][0] == "baseline_ft"
    p.write_text("shot: [5]\n")
    with pytest.raises(PlanError, match="unknown"):
        load_plan(p)
    with pytest.raises(PlanError):
        ExperimentPlan(seeds=())


def test_defaults_match_protocol():
    plan = ExperimentPlan()
    assert plan.shots == (1, 5, 10, 50) and plan.ranks == (4, 8, 32, 128)
    assert len(plan.seeds) == 5 and plan.epochs == 300 and plan.eval_interval == 10


def test_missing_pretrain_is_dependency_error(tmp_path, tiny_plan_path):
    plan = load_plan(tiny_plan_path)
    with pytest.raises(DependencyError, match="pretrain"):
        run_cell(plan, "lora_direct", 1, 4, 0, tmp_path)
    assert main(["run", "--config", str(tiny_plan_path), "--results-dir", str(tmp_path),
                 "--strategy", "baseline_ft", "--shots", "1"]) == 2


# -- tiny end-to-end grid -------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_grid(tmp_path_factory, tiny_plan_path):
    root = tmp_path_factory.mktemp("results")
    plan = load_plan(tiny_plan_path)
    summary = pretrain(plan, root)
    with pytest.raises(DependencyError, match="baseline"):
        run_cell(plan, "lora_after_ft", 1, 4, 0, root)
    runs = run_grid(plan, root)
    return plan, root, summary, {cell_name(r["strategy"], r["shots"], r["rank"], r["seed"]): r
                                 for r in runs}


def test_baseline_trains_everything(tiny_grid):
    plan, root, _, runs = tiny_grid
    r = runs["baseline_ft-k1-s0"]
    assert r["trainable"] == r["total"]
    trace = (root / "baseline_ft-k1-s0" / "trace.csv").read_text().splitlines()
    assert len(trace) - 1 == plan.epochs // plan.eval_interval


def test_lora_direct_starts_at_pretrained_model(tiny_grid):
    _, _, summary, runs = tiny_grid
    r = runs["lora_direct-k1-r4-s0"]
    assert r["initial_val_map50"] == summary["target_val_map50"]
    assert r["trainable"] / r["total"] < 0.10
    assert r["frozen_unchanged"]


def test_lora_after_ft_starts_at_selected_checkpoint(tiny_grid):
    _, root, _, runs = tiny_grid
    for s in (0, 1):
        after, base = runs[f"lora_after_ft-k1-r4-s{s}"], runs[f"baseline_ft-k1-s{s}"]
        assert after["initial_test_map50"] == base["test_map50"]
        assert after["frozen_unchanged"]


def test_stage_two_keeps_stage_one_weights(tiny_grid):
    _, root, _, _ = tiny_grid
    stage1, _ = checkpoint.load(root / "baseline_ft-k1-s0" / "best.ldck")
    stage2, _ = checkpoint.load(root / "lora_after_ft-k1-r4-s0" / "best.ldck")
    for name, arr in stage2.items():
        if ".lora_" in name:
            continue
        assert arr.tobytes() == stage1[name.replace(".base.", ".")].tobytes(), name


def test_baseline_changes_base_weights(tiny_grid):
    _, root, _, _ = tiny_grid
    pre, _ = checkpoint.load(root / "pretrain" / "model.ldck")
    ft, _ = checkpoint.load(root / "baseline_ft-k1-s0" / "last.ldck")
    assert any(pre[n].tobytes() != ft[n].tobytes() for n in pre)


def test_cell_artefacts(tiny_grid):
    _, root, _, _ = tiny_grid
    cell = root / "lora_direct-k1-r4-s1"
    for name in ("best.ldck", "last.ldck", "adapters.ldck", "trace.csv", "result.json",
                 "test_detections.json"):
        assert (cell / name).exists(), name
    _, meta = checkpoint.load(cell / "adapters.ldck")
    assert meta["rank"] == 4.0


def test_cli_aggregate_report_reproducible(tiny_grid, tiny_plan_path, tmp_path):
    plan, root, _, _ = tiny_grid
    args = ["--config", str(tiny_plan_path), "--results-dir", str(root)]
    assert main(["aggregate", *args]) == 0
    first = (root / "table.csv").read_bytes()
    assert main(["report", *args]) == 0
    trend = json.loads((root / "trend.json").read_text())
    assert trend["evaluated"] and "holds" in trend
    # a fresh run of the same plan in a new directory gives the same bytes
    other = tmp_path / "again"
    assert main(["grid", "--config", str(tiny_plan_path), "--results-dir", str(other)]) == 0
    assert (other / "table.csv").read_bytes() == first


def test_cli_synth_and_evaluate(tmp_path, capsys):
    assert main(["synth", "--profile", "target", "--n-images", "3", "--out", str(tmp_path / "d")]) == 0
    gt = tmp_path / "d" / "annotations.json"
    doc = json.loads(gt.read_text())
    recs = [{"image_id": a["image_id"], "category_id": a["category_id"], "bbox": a["bbox"],
             "score": 1.0} for a in doc["annotations"]]
    (tmp_path / "dets.json").write_text(json.dumps(recs))
    capsys.readouterr()
    assert main(["evaluate", "--gt", str(gt), "--dets", str(tmp_path / "dets.json")]) == 0
    assert json.loads(capsys.readouterr().out)["map50"] == 1.0
