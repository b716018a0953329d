"""Per-iteration percentile summaries and the CSV schema they are written under."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..core import nearest_rank_percentile

PERCENTILES = (50, 80, 95, 100)

BASE_COLUMNS = ("run_id", "scenario", "method", "oracle", "seed", "Q", "t", "gamma", "ess", "n_samples")
SUMMARY_COLUMNS = tuple(f"oracle_p{p}" for p in PERCENTILES) + tuple(f"truth_p{p}" for p in PERCENTILES)

# sequence scenarios
TRAJECTORY_COLUMNS = BASE_COLUMNS + SUMMARY_COLUMNS
# 1D scenarios also carry the Gaussian search parameters and both KL directions
TRAJECTORY_1D_COLUMNS = BASE_COLUMNS + ("search_mean", "search_var") + SUMMARY_COLUMNS + (
    "kl_target_search", "kl_search_target")

# specification runs have no target density, hence no KL columns
SPEC_1D_COLUMNS = BASE_COLUMNS + ("search_mean", "search_var") + SUMMARY_COLUMNS
FINAL_BATCH_COLUMNS = ("run_id", "x", "oracle_mean", "y0", "gamma", "inside")
GRID_1D_COLUMNS = ("x", "ground_truth", "prior", "oracle_mean_partial", "target_partial",
                   "oracle_mean_full", "target_full")
# one row per run: the per-iteration truth_p* columns averaged over iterations, plus the final iteration
AGGREGATE_COLUMNS = ("run_id", "scenario", "method", "oracle", "seed", "Q", "n_iterations", "n_samples") + tuple(
    f"mean_truth_p{p}" for p in PERCENTILES) + tuple(f"final_truth_p{p}" for p in PERCENTILES)
# one row per (method, oracle, Q) cell: the run aggregates averaged over seeds
TABLE_COLUMNS = ("scenario", "method", "oracle", "Q", "n_runs") + tuple(
    f"{k}_truth_p{p}" for p in PERCENTILES for k in ("mean", "final"))

STRING_COLUMNS = frozenset({"run_id", "scenario", "method", "oracle"})
INT_COLUMNS = frozenset({"seed", "t", "n_samples", "n_iterations", "inside", "n_runs"})
SCHEMAS = {"trajectory": TRAJECTORY_COLUMNS, "trajectory_1d": TRAJECTORY_1D_COLUMNS,
           "specification_1d": SPEC_1D_COLUMNS, "final_batch": FINAL_BATCH_COLUMNS,
           "grid_1d": GRID_1D_COLUMNS, "aggregate": AGGREGATE_COLUMNS,
           "table": TABLE_COLUMNS}


@dataclass(frozen=True)
class PercentileSummary:
    """Oracle-mean percentiles of one batch and the mean ground truth of the samples at or above each."""

    oracle: tuple
    truth: tuple

    def as_row(self) -> dict:
        row = {f"oracle_p{p}": v for p, v in zip(PERCENTILES, self.oracle)}
        row.update({f"truth_p{p}": v for p, v in zip(PERCENTILES, self.truth)})
        return row


def percentile_summary(oracle_means, truth) -> PercentileSummary:
    means = np.asarray(oracle_means, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if means.shape != truth.shape:
        raise ValueError("oracle means and ground truth must align")
    thresholds, above = [], []
    for p in PERCENTILES:
        thr = nearest_rank_percentile(means, p / 100)
        thresholds.append(thr)
        above.append(float(truth[means >= thr].mean()))
    return PercentileSummary(tuple(thresholds), tuple(above))


def format_cell(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    # repr round-trips doubles exactly, so reruns compare byte for byte
    return repr(float(value))


def write_rows(path, columns, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_cell(row[c]) for c in columns])


def read_rows(path) -> list[dict]:
    """Parse an emitted CSV back into typed rows."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        out = []
        for raw in reader:
            row = {}
            for k, v in raw.items():
                if k in STRING_COLUMNS:
                    row[k] = v
                elif k in INT_COLUMNS:
                    row[k] = int(v)
                else:
                    row[k] = float(v)
            out.append(row)
    return out


def validate_csv(path) -> list[str]:
    """Schema problems in an emitted CSV; an empty list means the file is valid."""
    problems = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return ["empty file"]
        if tuple(header) not in SCHEMAS.values():
            return [f"unknown header {header}"]
        for lineno, cells in enumerate(reader, start=2):
            if len(cells) != len(header):
                problems.append(f"line {lineno}: expected {len(header)} cells, got {len(cells)}")
                continue
            for name, cell in zip(header, cells):
                if name in STRING_COLUMNS:
                    if not cell:
                        problems.append(f"line {lineno}: empty {name}")
                    continue
                try:
                    value = int(cell) if name in INT_COLUMNS else float(cell)
                except ValueError:
                    problems.append(f"line {lineno}: {name}={cell!r} is not numeric")
                    continue
                if isinstance(value, float) and not math.isfinite(value):
                    problems.append(f"line {lineno}: {name} is not finite")
    return problems
