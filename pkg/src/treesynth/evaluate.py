"""Evaluation protocol: solve fraction versus node-expansion budget.

Each instance is solved once per seed; the report aggregates the fraction
of instances solved within each budget on a fixed grid, with mean and
standard deviation across seeds.  Reports carry no timing so reruns are
byte-identical.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

from .search import SearchResult

DEFAULT_BUDGET_GRID = (1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000)


def budget_grid(max_budget: int) -> list[int]:
    grid = [b for b in DEFAULT_BUDGET_GRID if b <= max_budget]
    if not grid or grid[-1] != max_budget:
        grid.append(max_budget)
    return grid


def solve_curve(results: list[SearchResult], grid: list[int]) -> list[float]:
    n = len(results)
    points = []
    for b in grid:
        solved = sum(1 for r in results if r.solved_at is not None and r.solved_at <= b)
        points.append(solved / n if n else 0.0)
    return points


def aggregate_report(
    env_name: str,
    per_seed_results: dict[int, list[SearchResult]],
    max_budget: int,
    config: dict | None = None,
) -> dict:
    grid = budget_grid(max_budget)
    per_seed_curves = {seed: solve_curve(rs, grid) for seed, rs in per_seed_results.items()}
    seeds = sorted(per_seed_curves)
    mean = []
    std = []
    for i in range(len(grid)):
        vals = [per_seed_curves[s][i] for s in seeds]
        m = sum(vals) / len(vals)
        mean.append(m)
        std.append(math.sqrt(sum((v - m) ** 2 for v in vals) / len(vals)))
    return {
        "env": env_name,
        "config": config or {},
        "n_instances": len(next(iter(per_seed_results.values()))) if per_seed_results else 0,
        "seeds": seeds,
        "budgets": grid,
        "mean": [round(v, 6) for v in mean],
        "std": [round(v, 6) for v in std],
        "per_seed": {str(s): [round(v, 6) for v in per_seed_curves[s]] for s in seeds},
    }


def write_report(report: dict, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    lines = ["budget,mean,std"]
    for b, m, s in zip(report["budgets"], report["mean"], report["std"]):
        lines.append(f"{b},{m},{s}")
    (out / "curves.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
