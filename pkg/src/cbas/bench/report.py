"""Aggregate tables recomputed from per-run trajectory CSVs alone."""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np

from .records import (
    AGGREGATE_COLUMNS,
    PERCENTILES,
    SPEC_1D_COLUMNS,
    TABLE_COLUMNS,
    TRAJECTORY_1D_COLUMNS,
    TRAJECTORY_COLUMNS,
    read_rows,
    write_rows,
)

_TRAJECTORY_HEADERS = (TRAJECTORY_COLUMNS, TRAJECTORY_1D_COLUMNS, SPEC_1D_COLUMNS)


def _header(path: Path) -> tuple:
    with open(path) as fh:
        return tuple(fh.readline().rstrip("\n").split(","))


def trajectory_files(directory) -> list[Path]:
    """Per-run trajectory CSVs under ``directory/runs``, sorted by name."""
    runs = Path(directory) / "runs"
    if not runs.is_dir():
        return []
    return [p for p in sorted(runs.glob("*.csv")) if _header(p) in _TRAJECTORY_HEADERS]


def summarize_run(rows: list[dict]) -> dict:
    """One aggregate row: truth percentiles averaged over iterations and at the last iteration."""
    if not rows:
        raise ValueError("empty trajectory")
    first, last = rows[0], rows[-1]
    out = {k: first[k] for k in ("run_id", "scenario", "method", "oracle", "seed", "Q")}
    out["n_iterations"] = len(rows)
    out["n_samples"] = int(sum(r["n_samples"] for r in rows))
    for p in PERCENTILES:
        out[f"mean_truth_p{p}"] = float(np.mean([r[f"truth_p{p}"] for r in rows]))
        out[f"final_truth_p{p}"] = float(last[f"truth_p{p}"])
    return out


def summarize_table(run_rows: list[dict]) -> list[dict]:
    """Average the per-run aggregates over seeds within each (method, oracle, Q) cell."""
    groups = defaultdict(list)
    for r in run_rows:
        groups[(r["scenario"], r["method"], r["oracle"], r["Q"])].append(r)
    table = []
    for (scenario, method, oracle, q), members in groups.items():
        row = {"scenario": scenario, "method": method, "oracle": oracle, "Q": q, "n_runs": len(members)}
        for p in PERCENTILES:
            for kind in ("mean", "final"):
                key = f"{kind}_truth_p{p}"
                row[key] = float(np.mean([m[key] for m in members]))
        table.append(row)
    return table


def is_ordered(row: dict, prefix: str = "mean") -> bool:
    """Ground truth non-decreasing in oracle percentile (no inversion)."""
    vals = [row[f"{prefix}_truth_p{p}"] for p in PERCENTILES]
    return all(a <= b for a, b in zip(vals, vals[1:]))


def relative_spread(values) -> float:
    """Largest pairwise ``|a - b| / max(|a|, |b|)``: ``(max - min) / max |v|`` for same-sign values."""
    v = np.asarray(values, dtype=float)
    worst = 0.0
    for i in range(v.size):
        for j in range(i + 1, v.size):
            scale = max(abs(v[i]), abs(v[j]))
            if scale > 0:
                worst = max(worst, abs(v[i] - v[j]) / scale)
    return worst


def aggregate_directory(directory) -> tuple[list[dict], list[dict]]:
    run_rows = [summarize_run(read_rows(p)) for p in trajectory_files(directory)]
    return run_rows, summarize_table(run_rows)


def write_aggregate(directory) -> list[Path]:
    """Write ``aggregate.csv`` (one row per run) and ``table.csv`` (one row per cell)."""
    directory = Path(directory)
    run_rows, table = aggregate_directory(directory)
    agg, tab = directory / "aggregate.csv", directory / "table.csv"
    write_rows(agg, AGGREGATE_COLUMNS, run_rows)
    write_rows(tab, TABLE_COLUMNS, table)
    return [agg, tab]


def scenario_directories(root) -> list[Path]:
    """``root`` itself if it holds runs, otherwise each immediate subdirectory that does."""
    root = Path(root)
    if (root / "runs").is_dir():
        return [root]
    return [d for d in sorted(root.iterdir()) if d.is_dir() and (d / "runs").is_dir()]


def format_table(table: list[dict]) -> str:
    head = ["method", "oracle", "Q", "runs"] + [f"p{p}" for p in PERCENTILES] + ["ordered"]
    lines = ["  ".join(f"{h:>8}" for h in head)]
    for row in sorted(table, key=lambda r: (r["oracle"], r["Q"], r["method"])):
        cells = [row["method"], row["oracle"], f"{row['Q']:g}", str(row["n_runs"])]
        cells += [f"{row[f'mean_truth_p{p}']:.4f}" for p in PERCENTILES]
        cells.append("yes" if is_ordered(row) else "no")
        lines.append("  ".join(f"{c:>8}" for c in cells))
    return "\n".join(lines)
