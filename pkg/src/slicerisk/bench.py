"""
Randomized benchmark of the risk estimator against the brute-force oracle.

Every trial draws a fresh slice-load mixture, simulates what an operator
would observe, runs the estimator and scores its risk curve against the
stratified Monte-Carlo oracle. Trial seeds are derived from the master seed
by trial index, so results do not depend on execution order or on the
number of worker threads.
"""

from __future__ import annotations

import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .estimate import PipelineConfig, PipelineError, empirical_risk, run_pipeline
from .queue import BirthDeathRates
from .simulate import (DEFAULT_MEAN_RANGE, DEFAULT_STD_RANGE, RiskCurve, observe,
                       random_scenario, true_overload_risk)

__all__ = [
    "BenchConfig",
    "TrialResult",
    "BenchmarkResult",
    "DegenerateTruthError",
    "TRUTH_FLOOR",
    "MAX_FAILURE_FRACTION",
    "SWEEP_AXES",
    "error_rate",
    "abs_rms_error",
    "run_trial",
    "run_benchmark",
    "sensitivity_sweep",
    "summarize",
    "sweep_csv",
]

log = logging.getLogger(__name__)

TRUTH_FLOOR = 1e-4
MAX_FAILURE_FRACTION = 0.05
SWEEP_AXES = ("component_count", "mean_scale", "std_scale")


class DegenerateTruthError(ValueError):
    """Every point of the true risk curve lies below the relative-error floor."""


@dataclass(frozen=True)
class BenchConfig:
    trials: int = 100
    n_obs: int = 5000
    k_components: int = 5
    mean_range: tuple[float, float] = DEFAULT_MEAN_RANGE
    std_range: tuple[float, float] = DEFAULT_STD_RANGE
    lambda_: float = 5.0
    eta: float = 1.0
    n_max: int = 10
    r_max: float = 5.0
    threshold_grid: tuple[float, ...] | None = None
    master_seed: int = 0
    oracle_samples: int = 1_000_000
    trace_horizon: float | None = None
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.n_obs < 1:
            raise ValueError("n_obs must be >= 1")
        if self.k_components < 1:
            raise ValueError("k_components must be >= 1")
        if self.r_max <= 0:
            raise ValueError("r_max must be > 0")
        if self.oracle_samples < 1:
            raise ValueError("oracle_samples must be >= 1")
        object.__setattr__(self, "mean_range", tuple(map(float, self.mean_range)))
        object.__setattr__(self, "std_range", tuple(map(float, self.std_range)))
        if self.threshold_grid is not None:
            grid = tuple(map(float, self.threshold_grid))
            if not grid or any(b < a for a, b in zip(grid, grid[1:])):
                raise ValueError("threshold_grid must be nonempty and sorted")
            object.__setattr__(self, "threshold_grid", grid)
        BirthDeathRates(self.lambda_, self.eta, self.n_max)

    @property
    def rates(self) -> BirthDeathRates:
        return BirthDeathRates(self.lambda_, self.eta, self.n_max)

    @property
    def thresholds(self) -> np.ndarray:
        if self.threshold_grid is not None:
            return np.array(self.threshold_grid)
        return np.linspace(0.5 * self.r_max, 1.5 * self.r_max, 41)

    @classmethod
    def from_dict(cls, data: dict | None) -> "BenchConfig":
        data = dict(data or {})
        if "lambda" in data:
            data["lambda_"] = data.pop("lambda")
        grid = data.get("threshold_grid")
        if isinstance(grid, dict):
            data["threshold_grid"] = tuple(
                np.linspace(float(grid["lo"]), float(grid["hi"]), int(grid["steps"])).tolist())
        if "pipeline" in data:
            data["pipeline"] = PipelineConfig.from_dict(data["pipeline"])
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown bench config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["lambda"] = out.pop("lambda_")
        out["pipeline"] = self.pipeline.to_dict()
        out["mean_range"] = list(self.mean_range)
        out["std_range"] = list(self.std_range)
        if self.threshold_grid is not None:
            out["threshold_grid"] = list(self.threshold_grid)
        return out


@dataclass(frozen=True)
class TrialResult:
    trial: int
    k_true: int
    thresholds: np.ndarray = field(repr=False)
    true_risks: np.ndarray = field(repr=False)
    estimated_risks: np.ndarray | None = field(default=None, repr=False)
    error_rate: float = math.nan
    abs_rms_error: float = math.nan
    empirical_error_rate: float = math.nan
    k_hat: int = 0
    lambda_hat: float = math.nan
    eta_hat: float = math.nan
    failure: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.failure)


@dataclass
class BenchmarkResult:
    config: BenchConfig
    trials: list[TrialResult]
    summary: dict

    @property
    def too_many_failures(self) -> bool:
        return self.summary["n_failed"] > MAX_FAILURE_FRACTION * self.summary["n_trials"]

    def trials_csv(self) -> str:
        buf = io.StringIO()
        buf.write("trial,error_rate,abs_rms_error,empirical_error_rate,"
                  "k_true,k_hat,lambda_hat,eta_hat,failed,failure\n")
        for t in self.trials:
            failure = t.failure.replace(",", ";").replace("\n", " ")
            buf.write(f"{t.trial},{t.error_rate!r},{t.abs_rms_error!r},{t.empirical_error_rate!r},"
                      f"{t.k_true},{t.k_hat},{t.lambda_hat!r},{t.eta_hat!r},"
                      f"{int(t.failed)},{failure}\n")
        return buf.getvalue()

    def risks_csv(self) -> str:
        buf = io.StringIO()
        buf.write("trial,threshold,p_overload,p_overload_estimated\n")
        for t in self.trials:
            est = t.estimated_risks if t.estimated_risks is not None else [math.nan] * len(t.thresholds)
            for th, p, q in zip(t.thresholds.tolist(), t.true_risks.tolist(), list(est)):
                buf.write(f"{t.trial},{th!r},{p!r},{float(q)!r}\n")
        return buf.getvalue()

    def histogram_csv(self, bins: int = 20) -> str:
        errs = np.array([t.error_rate for t in self.trials if not t.failed])
        buf = io.StringIO()
        buf.write("bin_lo,bin_hi,count\n")
        if errs.size:
            counts, edges = np.histogram(errs, bins=bins)
            for lo, hi, c in zip(edges[:-1].tolist(), edges[1:].tolist(), counts.tolist()):
                buf.write(f"{lo!r},{hi!r},{c}\n")
        return buf.getvalue()

    def summary_json(self) -> str:
        return json.dumps(self.summary, indent=2, sort_keys=True) + "\n"


def _relative_mask(estimated: RiskCurve, truth: RiskCurve) -> np.ndarray:
    if estimated.thresholds.shape != truth.thresholds.shape or not np.array_equal(
            estimated.thresholds, truth.thresholds):
        raise ValueError("estimated and true risk curves must share the threshold grid")
    mask = truth.risks >= TRUTH_FLOOR
    if not mask.any():
        raise DegenerateTruthError(
            f"degenerate truth curve: no threshold has true risk >= {TRUTH_FLOOR:g}")
    return mask


def error_rate(estimated: RiskCurve, truth: RiskCurve) -> float:
    """Root-mean-square relative error over grid points where the true risk is at least 1e-4."""
    mask = _relative_mask(estimated, truth)
    rel = (estimated.risks[mask] - truth.risks[mask]) / truth.risks[mask]
    return float(np.sqrt(np.mean(rel ** 2)))


def abs_rms_error(estimated: RiskCurve, truth: RiskCurve) -> float:
    """Plain root-mean-square difference over the whole grid."""
    _relative_mask(estimated, truth)
    return float(np.sqrt(np.mean((estimated.risks - truth.risks) ** 2)))


def _trial_rngs(master_seed: int, trial: int):
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(trial),))
    return np.random.default_rng(seq).spawn(4)


def run_trial(config: BenchConfig, trial: int) -> TrialResult:
    """One randomized scenario, scored against the oracle.

    Estimator failures and degenerate oracle curves come back as failed
    results rather than exceptions.
    """
    scen_rng, obs_rng, pipe_rng, oracle_rng = _trial_rngs(config.master_seed, trial)
    thresholds = config.thresholds
    spec = random_scenario(scen_rng, config.k_components, config.mean_range, config.std_range,
                           config.rates, config.r_max)
    truth = true_overload_risk(spec, thresholds, config.oracle_samples, oracle_rng)
    base = dict(trial=trial, k_true=config.k_components, thresholds=thresholds,
                true_risks=truth.risks)
    try:
        obs = observe(spec, config.n_obs, config.trace_horizon, obs_rng)
        model, curve = run_pipeline(obs, config.n_max, thresholds, config.pipeline, pipe_rng)
    except PipelineError as exc:
        log.warning("trial %d failed in %s: %s", trial, exc.stage, exc)
        return TrialResult(**base, failure=str(exc))
    fitted = dict(estimated_risks=curve.risks, k_hat=model.k_hat,
                  lambda_hat=model.lambda_hat, eta_hat=model.eta_hat)
    try:
        err = error_rate(curve, truth)
    except DegenerateTruthError as exc:
        return TrialResult(**base, **fitted, failure=str(exc))
    return TrialResult(**base, **fitted, error_rate=err,
                       abs_rms_error=abs_rms_error(curve, truth),
                       empirical_error_rate=error_rate(empirical_risk(model, thresholds), truth))


def summarize(trials: list[TrialResult]) -> dict:
    errs = np.array([t.error_rate for t in trials if not t.failed])
    emp = np.array([t.empirical_error_rate for t in trials if not t.failed])
    out = {"n_trials": len(trials), "n_failed": int(sum(t.failed for t in trials))}
    if errs.size:
        q = np.quantile(errs, [0.05, 0.25, 0.5, 0.75, 0.95])
        out.update(mean=float(errs.mean()), median=float(q[2]), min=float(errs.min()),
                   max=float(errs.max()), q05=float(q[0]), q25=float(q[1]), q75=float(q[3]),
                   q95=float(q[4]), empirical_median=float(np.median(emp)))
    return out


def run_benchmark(config: BenchConfig, threads: int = 1) -> BenchmarkResult:
    """Run ``config.trials`` trials; ``threads`` changes speed only."""
    indices = range(config.trials)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trials = list(pool.map(lambda i: run_trial(config, i), indices))
    else:
        trials = [run_trial(config, i) for i in indices]
    return BenchmarkResult(config, trials, summarize(trials))


def _substitute(config: BenchConfig, axis: str, value: float) -> BenchConfig:
    if axis == "component_count":
        if int(value) != value or value < 1:
            raise ValueError(f"component_count must be a positive integer, got {value}")
        return replace(config, k_components=int(value))
    if value <= 0:
        raise ValueError(f"{axis} must be > 0, got {value}")
    if axis == "mean_scale":
        lo, hi = config.mean_range
        return replace(config, mean_range=(lo * value, hi * value))
    if axis == "std_scale":
        lo, hi = config.std_range
        return replace(config, std_range=(lo * value, hi * value))
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


def sensitivity_sweep(config: BenchConfig, axis: str, values, threads: int = 1
                      ) -> list[tuple[float, BenchmarkResult]]:
    """Re-run the benchmark with one parameter substituted per value.

    ``component_count`` replaces the number of mixture components,
    ``mean_scale`` multiplies both ends of the mean range and ``std_scale``
    both ends of the std range. All cells reuse the same trial seeds, so
    differences between cells are paired.
    """
    cells = [(float(v), _substitute(config, axis, float(v))) for v in values]
    return [(v, run_benchmark(cfg, threads)) for v, cfg in cells]


def sweep_csv(axis: str, cells: list[tuple[float, BenchmarkResult]]) -> str:
    buf = io.StringIO()
    buf.write("axis_value,trial,error_rate\n")
    for value, result in cells:
        for t in result.trials:
            buf.write(f"{value!r},{t.trial},{t.error_rate!r}\n")
    return buf.getvalue()
