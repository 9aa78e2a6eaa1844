"""Seed-averaged result tables (shots by strategy and rank), plus the low-shot trend check."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .plan import ExperimentPlan


class IncompleteGridError(ValueError):
    def __init__(self, missing: list[str]):
        super().__init__("incomplete grid, missing cells: " + ", ".join(missing))
        self.missing = missing


@dataclass
class Cell:
    values: tuple[float, ...]
    mean: float
    std: float
    best: bool = False
    missing: int = 0


def summarize(values) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    values = [float(v) for v in values]
    n = len(values)
    m = math.fsum(values) / n
    if n < 2:
        return m, 0.0
    return m, math.sqrt(math.fsum((v - m) ** 2 for v in values) / (n - 1))


@dataclass
class ResultTable:
    columns: list[str]
    rows: list[tuple[str, int]]
    cells: dict[tuple[str, int, str], Cell] = field(default_factory=dict)

    def mark_best(self) -> None:
        for ds, k in self.rows:
            present = [self.cells[(ds, k, c)] for c in self.columns if (ds, k, c) in self.cells
                       and self.cells[(ds, k, c)].values]
            if not present:
                continue
            top = max(c.mean for c in present)
            for c in present:
                c.best = c.mean == top

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dataset", "shots", "column", "n", "mean", "std", "best", "missing", "values"])
        for ds, k in self.rows:
            for col in self.columns:
                cell = self.cells.get((ds, k, col))
                if cell is None:
                    continue
                w.writerow([ds, k, col, len(cell.values), repr(cell.mean), repr(cell.std),
                            int(cell.best), cell.missing, ";".join(repr(v) for v in cell.values)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ResultTable":
        rows, columns, cells = [], [], {}
        for rec in csv.DictReader(io.StringIO(text)):
            key = (rec["dataset"], int(rec["shots"]))
            if key not in rows:
                rows.append(key)
            if rec["column"] not in columns:
                columns.append(rec["column"])
            values = tuple(float(v) for v in rec["values"].split(";") if v)
            cells[(key[0], key[1], rec["column"])] = Cell(
                values, float(rec["mean"]), float(rec["std"]), bool(int(rec["best"])),
                int(rec["missing"]))
        return cls(columns, rows, cells)

    def to_markdown(self) -> str:
        """mAP50 in percent, best cell per row in bold, missing cells as n/a."""
        head = "| Dataset | Shots | " + " | ".join(self.columns) + " |"
        sep = "|" + "---|" * (len(self.columns) + 2)
        lines = [head, sep]
        for ds, k in self.rows:
            out = []
            for col in self.columns:
                cell = self.cells.get((ds, k, col))
                if cell is None or not cell.values:
                    out.append("n/a")
                    continue
                txt = f"{100 * cell.mean:.2f} ± {100 * cell.std:.2f}"
                if cell.missing:
                    txt += f" ({cell.missing} missing)"
                out.append(f"**{txt}**" if cell.best else txt)
            lines.append(f"| {ds} | {k} | " + " | ".join(out) + " |")
        return "\n".join(lines) + "\n"


def _column(strategy: str, rank) -> str:
    if strategy == "baseline_ft":
        return "baseline"
    return f"lora@{rank}" if strategy == "lora_direct" else f"lora_after_ft@{rank}"


def aggregate(runs: list[dict], plan: ExperimentPlan, allow_partial: bool = False) -> ResultTable:
    """Fold per-seed run results into (dataset, shots) x column cells."""
    index = {(r["strategy"], r["shots"], r.get("rank"), r["seed"]): r for r in runs}
    ds = plan.dataset_name
    table = ResultTable(plan.columns(), [(ds, k) for k in plan.shots])
    grouped: dict[tuple, list] = {}
    missing = []
    for strategy, k, rank, seed in plan.cells():
        key = (ds, k, _column(strategy, rank))
        grouped.setdefault(key, [])
        run = index.get((strategy, k, rank, seed))
        if run is None:
            missing.append(f"{strategy}/k={k}/r={rank}/seed={seed}")
            grouped[key].append(None)
        else:
            grouped[key].append(float(run["test_map50"]))
    if missing and not allow_partial:
        raise IncompleteGridError(missing)
    for key, vals in grouped.items():
        got = [v for v in vals if v is not None]
        if got:
            m, s = summarize(got)
        else:
            m, s = float("nan"), float("nan")
        table.cells[key] = Cell(tuple(got), m, s, missing=len(vals) - len(got))
    table.mark_best()
    return table


def load_runs(root: Path) -> list[dict]:
    runs = []
    for path in sorted(Path(root).glob("*/result.json")):
        runs.append(json.loads(path.read_text()))
    return runs


def trend_check(table: ResultTable, plan: ExperimentPlan, shots: int | None = None) -> dict:
    """Does LoRA-after-FT match or beat direct LoRA at the lowest shot count?

    Reported, never raised: compares the mean over ranks and each rank separately.
    """
    k = min(plan.shots) if shots is None else shots
    ds = plan.dataset_name
    per_rank = {}
    for r in plan.ranks:
        a = table.cells.get((ds, k, f"lora_after_ft@{r}"))
        d = table.cells.get((ds, k, f"lora@{r}"))
        if a is None or d is None or not a.values or not d.values:
            continue
        per_rank[r] = {"lora_after_ft": a.mean, "lora_direct": d.mean, "margin": a.mean - d.mean,
                       "holds": a.mean >= d.mean}
    if not per_rank:
        return {"shots": k, "evaluated": False}
    after = math.fsum(v["lora_after_ft"] for v in per_rank.values()) / len(per_rank)
    direct = math.fsum(v["lora_direct"] for v in per_rank.values()) / len(per_rank)
    base = table.cells.get((ds, k, "baseline"))
    return {
        "shots": k,
        "evaluated": True,
        "lora_after_ft_mean": after,
        "lora_direct_mean": direct,
        "margin": after - direct,
        "holds": after >= direct,
        "per_rank": per_rank,
        "baseline": base.mean if base and base.values else None,
    }


def render_report(table: ResultTable, trend: dict) -> str:
    lines = ["# Results (mAP@0.5, %, mean ± std over seeds)", "", table.to_markdown(), "",
             "## Low-shot trend: LoRA after fine-tuning vs direct LoRA", ""]
    if not trend.get("evaluated"):
        lines.append(f"Not evaluated: no LoRA cells at k={trend['shots']}.")
        return "\n".join(lines) + "\n"
    verdict = "HOLDS" if trend["holds"] else "DOES NOT HOLD"
    lines.append(f"k={trend['shots']}: lora_after_ft {100 * trend['lora_after_ft_mean']:.2f} vs "
                 f"lora_direct {100 * trend['lora_direct_mean']:.2f} "
                 f"(margin {100 * trend['margin']:+.2f} points) -> ordering {verdict}")
    if trend.get("baseline") is not None:
        lines.append(f"baseline at k={trend['shots']}: {100 * trend['baseline']:.2f}")
    lines.append("")
    lines.append("| rank | lora_after_ft | lora_direct | margin | holds |")
    lines.append("|---|---|---|---|---|")
    for r, v in trend["per_rank"].items():
        lines.append(f"| {r} | {100 * v['lora_after_ft']:.2f} | {100 * v['lora_direct']:.2f} | "
                     f"{100 * v['margin']:+.2f} | {'yes' if v['holds'] else 'no'} |")
    return "\n".join(lines) + "\n"
