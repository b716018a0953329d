"""The named experiments: problem construction, method dispatch and artifact emission."""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm

from ..baselines import run_cem_pi, run_dbas, run_fb, run_rwr
from ..core import Maximize, Specify
from ..engine import CbASConfig, RunResult, run_cbas
from ..models import DiagonalGaussianModel, ProductCategoricalModel, categorical_fit_weighted
from ..oracle import (
    EnsembleOracle,
    GroundTruth1D,
    GroundTruthSequence,
    TrainingSet,
    train_oracle_1d,
    train_sequence_oracle,
    truncated_training_set,
)
from ..reference import grid_mode, kl_grid_log, quadrature_conditional, trapezoid
from .config import ExperimentConfig, derive_seed
from .records import (
    FINAL_BATCH_COLUMNS,
    GRID_1D_COLUMNS,
    SPEC_1D_COLUMNS,
    TRAJECTORY_1D_COLUMNS,
    TRAJECTORY_COLUMNS,
    percentile_summary,
    write_rows,
)

# half-width of the quadrature grid, in prior standard deviations
GRID_HALF_WIDTH = 10.0


@dataclass(eq=False)
class RunArtifact:
    run_id: str
    method: str
    oracle: str
    seed: int
    Q: float
    status: str
    rows: list
    result: RunResult
    path: Path


@dataclass(eq=False)
class ScenarioArtifacts:
    scenario: str
    config: ExperimentConfig
    out_dir: Path
    runs: list = field(default_factory=list)
    files: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)
    seconds: float = 0.0

    def run(self, run_id: str) -> RunArtifact:
        for r in self.runs:
            if r.run_id == run_id:
                return r
        raise KeyError(run_id)


def _master_seed(config: ExperimentConfig, rng: np.random.Generator | None) -> int:
    # an explicit generator, when passed, replaces the configured master seed
    return int(rng.integers(0, 2 ** 63)) if rng is not None else int(config.master_seed)


def _write_json(path: Path, doc) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _base_row(run_id, scenario, method, oracle, seed, Q, rec) -> dict:
    return {"run_id": run_id, "scenario": scenario, "method": method, "oracle": oracle, "seed": seed,
            "Q": Q, "t": rec.t, "gamma": rec.gamma[0], "ess": rec.ess, "n_samples": rec.samples.shape[0]}


# ---------------------------------------------------------------------------
# 1D problems
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Problem1D:
    ground_truth: GroundTruth1D
    prior: DiagonalGaussianModel
    oracles: dict                 # "partial" / "full" -> PolynomialOracle
    domain_grid: np.ndarray       # where the target threshold and oracle argmax are taken
    grid: np.ndarray              # quadrature grid for the target conditional and KL

    def threshold(self, oracle_id: str) -> float:
        return float(self.oracles[oracle_id].predictive_mean(self.domain_grid).max())

    def oracle_argmax(self, oracle_id: str) -> float:
        means = self.oracles[oracle_id].predictive_mean(self.domain_grid)
        return float(self.domain_grid[int(np.argmax(means))])

    def prior_density(self, x) -> np.ndarray:
        return norm(self.prior.mean[0], math.sqrt(self.prior.variance[0])).pdf(x)

    def target(self, oracle_id: str) -> np.ndarray:
        """Quadrature target conditional ``p(x | S)`` on :attr:`grid`."""
        oracle = self.oracles[oracle_id]
        return quadrature_conditional(self.prior_density, oracle.survival(self.grid, self.threshold(oracle_id)),
                                      self.grid)

    def log_target(self, oracle_id: str) -> np.ndarray:
        """Log of :meth:`target`, computed in log space so far tails stay finite."""
        oracle = self.oracles[oracle_id]
        lp = (norm(self.prior.mean[0], math.sqrt(self.prior.variance[0])).logpdf(self.grid)
              + oracle.log_survival(self.grid, self.threshold(oracle_id)))
        top = lp.max()
        return lp - top - math.log(trapezoid(np.exp(lp - top), self.grid))


def build_problem_1d(config: ExperimentConfig, master_seed: int) -> Problem1D:
    """Two-bump ground truth with one oracle trained on part of the domain and one on all of it.

    The full-domain oracle sees the partial data plus extra points on the
    rest of the domain at the same density.
    """
    ls, oc, pc = config.landscape_1d, config.oracle_1d, config.prior_1d
    gt = GroundTruth1D(tuple(ls.centers), tuple(ls.widths), tuple(ls.heights))
    rng = np.random.default_rng(derive_seed(master_seed, "data-1d"))
    lo, hi = ls.domain
    plo, phi = oc.partial_domain
    noise_sd = math.sqrt(oc.noise_variance)
    n = oc.n_partial
    xp = rng.uniform(plo, phi, n)
    yp = gt(xp) + noise_sd * rng.standard_normal(n)
    m = int(round(n * ((hi - lo) - (phi - plo)) / (phi - plo)))
    xe = _outside_uniform(rng, m, (lo, hi), (plo, phi))
    ye = gt(xe) + noise_sd * rng.standard_normal(m)
    partial = train_oracle_1d(xp, yp, oc.degree_partial, oc.holdout_fraction, rng=rng)
    full = train_oracle_1d(np.concatenate([xp, xe]), np.concatenate([yp, ye]), oc.degree_full,
                           oc.holdout_fraction, rng=rng)
    prior = DiagonalGaussianModel(np.array([pc.mean]), np.array([pc.sd ** 2]))
    domain_grid = np.linspace(lo, hi, ls.grid_points)
    grid = np.linspace(pc.mean - GRID_HALF_WIDTH * pc.sd, pc.mean + GRID_HALF_WIDTH * pc.sd, ls.grid_points)
    return Problem1D(gt, prior, {"partial": partial, "full": full}, domain_grid, grid)


def _outside_uniform(rng, m: int, domain, inner) -> np.ndarray:
    """Uniform draws on ``domain`` with the ``inner`` interval cut out."""
    lo, hi = domain
    plo, phi = inner
    left = plo - lo
    u = rng.uniform(0.0, left + (hi - phi), m)
    return np.where(u < left, lo + u, phi + (u - left))


def _kl_pair(log_target: np.ndarray, model: DiagonalGaussianModel, grid: np.ndarray) -> tuple[float, float]:
    log_q = model.log_density(grid[:, None])
    return kl_grid_log(log_target, log_q, grid), kl_grid_log(log_q, log_target, grid)


def scenario_illustrative_1d(config: ExperimentConfig, rng: np.random.Generator | None = None,
                             out_dir=None) -> ScenarioArtifacts:
    """CbAS with a Gaussian search model against partial- and full-domain oracles.

    Each trajectory row ``t`` describes the search model that drew the
    iteration-``t`` samples, so row 1 is the prior.
    """
    start = time.perf_counter()
    master = _master_seed(config, rng)
    name = "illustrative-1d"
    out = Path(out_dir if out_dir is not None else config.out_dir) / name
    problem = build_problem_1d(config, master)
    arts = ScenarioArtifacts(name, config, out)
    grid = problem.grid
    gt_grid = problem.ground_truth(grid)
    grid_cols = {"x": grid, "ground_truth": gt_grid, "prior": problem.prior_density(grid)}
    cb_cfg = CbASConfig(Q=config.Q, M=config.M, max_iterations=config.iterations)
    diagnostics = {}
    for oracle_id, oracle in problem.oracles.items():
        target = problem.target(oracle_id)
        log_target = problem.log_target(oracle_id)
        gamma_star = problem.threshold(oracle_id)
        grid_cols[f"oracle_mean_{oracle_id}"] = oracle.predictive_mean(grid)
        grid_cols[f"target_{oracle_id}"] = target
        mode = grid_mode(target, grid)
        argmax = problem.oracle_argmax(oracle_id)
        diagnostics[oracle_id] = {
            "threshold": gamma_star, "noise_variance": oracle.noise_variance,
            "target_mode": mode, "oracle_argmax": argmax,
            "truth_at_mode": float(problem.ground_truth(np.array([mode]))[0]),
            "truth_at_oracle_argmax": float(problem.ground_truth(np.array([argmax]))[0]),
        }
        _write_json(out / "oracles" / f"{oracle_id}.json", oracle.to_dict())
        for seed in config.seeds:
            run_id = f"cbas-{oracle_id}-s{seed}"
            run_rng = np.random.default_rng(derive_seed(master, "cbas", oracle_id, seed))
            result = run_cbas(problem.prior, problem.prior, oracle, Maximize(), cb_cfg, run_rng,
                              target=Maximize(gamma_star))
            rows = []
            for rec in result.records:
                row = _base_row(run_id, name, "cbas", oracle_id, seed, config.Q, rec)
                row["search_mean"] = float(rec.model.mean[0])
                row["search_var"] = float(rec.model.variance[0])
                row.update(percentile_summary(rec.scores, problem.ground_truth(rec.samples)).as_row())
                row["kl_target_search"], row["kl_search_target"] = _kl_pair(log_target, rec.model, grid)
                rows.append(row)
            path = out / "runs" / f"{run_id}.csv"
            write_rows(path, TRAJECTORY_1D_COLUMNS, rows)
            _write_json(out / "runs" / f"{run_id}.model.json", result.final_model.to_dict())
            arts.runs.append(RunArtifact(run_id, "cbas", oracle_id, seed, config.Q, result.status, rows,
                                         result, path))
            arts.files.append(path)
    grid_path = out / "grid.csv"
    write_rows(grid_path, GRID_1D_COLUMNS, [dict(zip(grid_cols, vals)) for vals in zip(*grid_cols.values())])
    arts.files.append(grid_path)
    _write_json(out / "ground_truth.json", problem.ground_truth.to_dict())
    _write_json(out / "config.json", config.to_dict())
    arts.extras = {"problem": problem, "diagnostics": diagnostics,
                   "global_argmax": float(problem.domain_grid[int(np.argmax(problem.ground_truth(
                       problem.domain_grid)))])}
    _write_json(out / "diagnostics.json", {**diagnostics, "global_argmax": arts.extras["global_argmax"]})
    arts.seconds = time.perf_counter() - start
    return arts


def scenario_specification_1d(config: ExperimentConfig, rng: np.random.Generator | None = None,
                              out_dir=None) -> ScenarioArtifacts:
    """CbAS toward a specified property value ``y0`` with the full-domain 1D oracle."""
    start = time.perf_counter()
    master = _master_seed(config, rng)
    name = "specification-1d"
    out = Path(out_dir if out_dir is not None else config.out_dir) / name
    problem = build_problem_1d(config, master)
    oracle = problem.oracles["full"]
    spec = config.specification
    y0 = float(oracle.predictive_mean(np.array([spec.anchor_x]))[0])
    cb_cfg = CbASConfig(Q=spec.Q, M=config.M, max_iterations=config.iterations)
    arts = ScenarioArtifacts(name, config, out, extras={"y0": y0})
    for seed in config.seeds:
        run_id = f"cbas-full-s{seed}"
        run_rng = np.random.default_rng(derive_seed(master, "cbas-spec", "full", seed))
        result = run_cbas(problem.prior, problem.prior, oracle, Specify(y0), cb_cfg, run_rng)
        rows = []
        for rec in result.records:
            row = _base_row(run_id, name, "cbas", "full", seed, spec.Q, rec)
            row["search_mean"] = float(rec.model.mean[0])
            row["search_var"] = float(rec.model.variance[0])
            row.update(percentile_summary(rec.scores, problem.ground_truth(rec.samples)).as_row())
            rows.append(row)
        path = out / "runs" / f"{run_id}.csv"
        write_rows(path, SPEC_1D_COLUMNS, rows)
        last = result.records[-1]
        batch = [{"run_id": run_id, "x": float(x), "oracle_mean": float(mu), "y0": y0,
                  "gamma": last.gamma[0], "inside": int(abs(mu - y0) <= last.gamma[0])}
                 for x, mu in zip(last.samples[:, 0], last.scores)]
        batch_path = out / "runs" / f"{run_id}.final_batch.csv"
        write_rows(batch_path, FINAL_BATCH_COLUMNS, batch)
        _write_json(out / "runs" / f"{run_id}.model.json", result.final_model.to_dict())
        arts.runs.append(RunArtifact(run_id, "cbas", "full", seed, spec.Q, result.status, rows, result, path))
        arts.files.extend([path, batch_path])
    _write_json(out / "config.json", config.to_dict())
    arts.seconds = time.perf_counter() - start
    return arts


# ---------------------------------------------------------------------------
# Sequence problems
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SequenceProblem:
    landscape: GroundTruthSequence
    data: TrainingSet
    prior: ProductCategoricalModel
    oracles: dict                 # "ens<k>" -> EnsembleOracle


def build_sequence_problem(config: ExperimentConfig, master_seed: int, ensemble_sizes=None) -> SequenceProblem:
    ls, d = config.landscape, config.data
    landscape = GroundTruthSequence.random(
        derive_seed(master_seed, "landscape"), ls.length, ls.alphabet_size, constant=ls.constant,
        site_sd=ls.site_sd, epistasis=ls.epistasis, pair_sd=ls.pair_sd, mutation_rate=ls.mutation_rate,
        diminishing=ls.diminishing)
    data = truncated_training_set(landscape, d.pool_size, d.truncation_percentile, d.training_size,
                                  d.label_noise_sd, np.random.default_rng(derive_seed(master_seed, "training")))
    prior = categorical_fit_weighted(data.x, np.ones(len(data.x)), ls.alphabet_size, d.prior_smoothing)
    sizes = d.ensemble_sizes if ensemble_sizes is None else ensemble_sizes
    oracles = {f"ens{k}": train_sequence_oracle(data.x, data.y, ls.alphabet_size, k,
                                                np.random.default_rng(derive_seed(master_seed, "oracle", k)))
               for k in sizes}
    return SequenceProblem(landscape, data, prior, oracles)


def run_sequence_method(method: str, problem: SequenceProblem, oracle: EnsembleOracle, cb_cfg: CbASConfig,
                        rng: np.random.Generator, smoothing: float = 0.0) -> RunResult:
    """Every method starts from the prior and refits the same product-categorical family.

    ``smoothing`` is a pseudo-count per symbol relative to a batch of unit-weight
    samples: weights are rescaled to sum to the batch size before the fit, so
    its strength does not depend on the raw weight scale.
    """
    a = problem.prior.alphabet_size

    def fit(x, w):
        w = np.asarray(w, dtype=float)
        total = w.sum()
        if total > 0:
            w = w * (len(w) / total)
        return categorical_fit_weighted(x, w, a, smoothing)

    def refit(model, x, w):
        return fit(x, w)

    prior = problem.prior
    if method == "cbas":
        return run_cbas(prior, prior, oracle, Maximize(), cb_cfg, rng, refit=refit)
    if method == "dbas":
        return run_dbas(prior, oracle, Maximize(), cb_cfg, rng, refit=refit)
    if method == "rwr":
        return run_rwr(prior, oracle, Maximize(), cb_cfg, rng, refit=refit)
    if method == "cem-pi":
        return run_cem_pi(prior, oracle, Maximize(), cb_cfg, rng, refit=refit)
    if method == "fb":
        return run_fb(prior, problem.data.x, oracle, cb_cfg, rng, fit)
    raise ValueError(f"unknown method {method!r}")


def _sequence_rows(run_id, scenario, method, oracle_id, seed, Q, result, landscape) -> list:
    rows = []
    for rec in result.records:
        row = _base_row(run_id, scenario, method, oracle_id, seed, Q, rec)
        row.update(percentile_summary(rec.scores, landscape(rec.samples)).as_row())
        rows.append(row)
    return rows


def _run_sequence_cell(arts, problem, name, method, oracle_id, seed, Q, cb_cfg, master, smoothing, tag=None):
    label = oracle_id if tag is None else f"{oracle_id}-{tag}"
    run_id = f"{method}-{label}-s{seed}"
    run_rng = np.random.default_rng(derive_seed(master, method, label, seed))
    result = run_sequence_method(method, problem, problem.oracles[oracle_id], cb_cfg, run_rng, smoothing)
    rows = _sequence_rows(run_id, name, method, oracle_id, seed, Q, result, problem.landscape)
    path = arts.out_dir / "runs" / f"{run_id}.csv"
    write_rows(path, TRAJECTORY_COLUMNS, rows)
    _write_json(arts.out_dir / "runs" / f"{run_id}.model.json", result.final_model.to_dict())
    arts.runs.append(RunArtifact(run_id, method, oracle_id, seed, Q, result.status, rows, result, path))
    arts.files.append(path)


def _sequence_metadata(arts, problem, config):
    out = arts.out_dir
    _write_json(out / "config.json", config.to_dict())
    _write_json(out / "landscape.json", problem.landscape.to_dict())
    _write_json(out / "prior.json", problem.prior.to_dict())
    for oracle_id, oracle in problem.oracles.items():
        _write_json(out / "oracles" / f"{oracle_id}.json", oracle.to_dict())


def scenario_sequence_design(config: ExperimentConfig, rng: np.random.Generator | None = None,
                             out_dir=None) -> ScenarioArtifacts:
    """Every method against every oracle ensemble size, for each seed, under the shared budget."""
    from .report import write_aggregate

    start = time.perf_counter()
    master = _master_seed(config, rng)
    name = "sequence-design"
    out = Path(out_dir if out_dir is not None else config.out_dir) / name
    problem = build_sequence_problem(config, master)
    arts = ScenarioArtifacts(name, config, out, extras={"problem": problem})
    cb_cfg = CbASConfig(Q=config.Q, M=config.M, sequence_budget=config.budget)
    for oracle_id in problem.oracles:
        for seed in config.seeds:
            for method in config.methods:
                _run_sequence_cell(arts, problem, name, method, oracle_id, seed, config.Q, cb_cfg, master,
                                   config.data.search_smoothing)
    _sequence_metadata(arts, problem, config)
    arts.files.extend(write_aggregate(out))
    arts.seconds = time.perf_counter() - start
    return arts


def scenario_q_sweep(config: ExperimentConfig, rng: np.random.Generator | None = None,
                     out_dir=None) -> ScenarioArtifacts:
    """CbAS at each quantile in ``q_values`` on the ensemble-of-one oracle."""
    from .report import write_aggregate

    start = time.perf_counter()
    master = _master_seed(config, rng)
    name = "q-sweep"
    out = Path(out_dir if out_dir is not None else config.out_dir) / name
    problem = build_sequence_problem(config, master, ensemble_sizes=(1,))
    arts = ScenarioArtifacts(name, config, out, extras={"problem": problem})
    for q in config.q_values:
        cb_cfg = CbASConfig(Q=q, M=config.M, sequence_budget=config.budget)
        for seed in config.seeds:
            _run_sequence_cell(arts, problem, name, "cbas", "ens1", seed, q, cb_cfg, master,
                               config.data.search_smoothing, tag=f"q{q:g}")
    _sequence_metadata(arts, problem, config)
    arts.files.extend(write_aggregate(out))
    arts.seconds = time.perf_counter() - start
    return arts


SCENARIO_FUNCTIONS = {
    "illustrative-1d": scenario_illustrative_1d,
    "sequence-design": scenario_sequence_design,
    "q-sweep": scenario_q_sweep,
    "specification-1d": scenario_specification_1d,
}


def run_scenario(config: ExperimentConfig, out_dir=None) -> ScenarioArtifacts:
    return SCENARIO_FUNCTIONS[config.scenario](config, out_dir=out_dir)
