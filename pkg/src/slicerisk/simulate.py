"""
Ground-truth scenarios, synthetic observations and the brute-force risk oracle.
"""

from __future__ import annotations

import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import gmm
from .gmm import TruncatedMixture
from .queue import BirthDeathRates, LifecycleTrace, simulate_lifecycle, stationary_distribution

__all__ = [
    "ScenarioSpec",
    "ObservationSet",
    "RiskCurve",
    "DEFAULT_MEAN_RANGE",
    "DEFAULT_STD_RANGE",
    "STD_FLOOR",
    "random_scenario",
    "observe",
    "true_overload_risk",
    "direct_overload_risk",
]

DEFAULT_MEAN_RANGE = (0.25, 0.75)
DEFAULT_STD_RANGE = (0.0, 0.1)
STD_FLOOR = 1e-4
_BATCH = 250_000


@dataclass(frozen=True)
class ScenarioSpec:
    rates: BirthDeathRates
    slice_load: TruncatedMixture
    r_max: float

    def __post_init__(self):
        if not (math.isfinite(self.r_max) and self.r_max > 0):
            raise ValueError(f"r_max must be > 0, got {self.r_max}")

    def to_dict(self) -> dict:
        return {
            "lambda": self.rates.lambda_,
            "eta": self.rates.eta,
            "n_max": self.rates.n_max,
            "r_max": self.r_max,
            "slice_load": self.slice_load.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioSpec":
        rates = BirthDeathRates(float(data["lambda"]), float(data["eta"]), int(data["n_max"]))
        return cls(rates, TruncatedMixture.from_dict(data["slice_load"]), float(data["r_max"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ScenarioSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """What the estimator gets to see: a lifecycle trace and single-slice load samples."""

    trace: LifecycleTrace
    load_samples: np.ndarray

    def __post_init__(self):
        loads = np.asarray(self.load_samples, dtype=float)
        if loads.ndim != 1:
            raise ValueError("load_samples must be one-dimensional")
        if np.any(loads < 0) or not np.all(np.isfinite(loads)):
            raise ValueError("load samples must be finite and >= 0")
        object.__setattr__(self, "load_samples", loads)

    @property
    def n_obs(self) -> int:
        return len(self.load_samples)

    def loads_to_csv(self) -> str:
        return "load\n" + "".join(f"{v!r}\n" for v in self.load_samples.tolist())

    @staticmethod
    def loads_from_csv(text: str) -> np.ndarray:
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if lines and lines[0].strip() == "load":
            lines = lines[1:]
        return np.array([float(v) for v in lines], dtype=float)


@dataclass(frozen=True, eq=False)
class RiskCurve:
    """Overload probability over an ascending grid of capacity thresholds.

    ``stderr`` is filled in by Monte-Carlo oracles and is ``None`` for
    model-based estimates.
    """

    thresholds: np.ndarray
    risks: np.ndarray
    stderr: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=float)
        r = np.asarray(self.risks, dtype=float)
        if t.ndim != 1 or t.size == 0 or t.shape != r.shape:
            raise ValueError("thresholds and risks must be equal-length nonempty 1-d arrays")
        if np.any(np.diff(t) < 0):
            raise ValueError("thresholds must be sorted ascending")
        if np.any((r < 0) | (r > 1)):
            raise ValueError("risks must lie in [0, 1]")
        object.__setattr__(self, "thresholds", t)
        object.__setattr__(self, "risks", r)
        if self.stderr is not None:
            object.__setattr__(self, "stderr", np.asarray(self.stderr, dtype=float))

    def to_csv(self, column: str = "p_overload") -> str:
        buf = io.StringIO()
        buf.write(f"threshold,{column}\n")
        for t, r in zip(self.thresholds.tolist(), self.risks.tolist()):
            buf.write(f"{t!r},{r!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "RiskCurve":
        rows = [ln.split(",") for ln in text.splitlines()[1:] if ln.strip()]
        return cls(np.array([float(a) for a, _ in rows]), np.array([float(b) for _, b in rows]))


def random_scenario(rng: np.random.Generator, k: int = 5,
                    mean_range: tuple[float, float] = DEFAULT_MEAN_RANGE,
                    std_range: tuple[float, float] = DEFAULT_STD_RANGE,
                    rates: BirthDeathRates | None = None,
                    r_max: float = 5.0) -> ScenarioSpec:
    """Draw a random truncated-mixture slice-load law.

    Means and stds are uniform on their ranges, stds floored at ``STD_FLOOR``;
    weights are ``k`` uniforms on (0, 1] normalized to sum to one. ``rates``
    defaults to ``lambda/eta = 5`` with ``n_max = 10``.
    """
    k = int(k)
    mean_lo, mean_hi = map(float, mean_range)
    std_lo, std_hi = map(float, std_range)
    if k < 1:
        raise ValueError(f"component count must be >= 1, got {k}")
    if not (0 <= mean_lo < mean_hi):
        raise ValueError(f"invalid mean range {mean_range}")
    if not (0 <= std_lo < std_hi):
        raise ValueError(f"invalid std range {std_range}")
    if rates is None:
        rates = BirthDeathRates(5.0, 1.0, 10)

    means = rng.uniform(mean_lo, mean_hi, size=k)
    stds = np.maximum(rng.uniform(std_lo, std_hi, size=k), STD_FLOOR)
    raw = 1.0 - rng.random(k)
    weights = raw / raw.sum()
    # fsum-exact normalization; the plain division can leave a 1-ulp residue
    weights[-1] = 1.0 - math.fsum(weights[:-1])
    mixture = TruncatedMixture.from_arrays(weights, means, stds)
    return ScenarioSpec(rates, mixture, float(r_max))


def observe(spec: ScenarioSpec, n_obs: int, trace_horizon: float | None,
            rng: np.random.Generator) -> ObservationSet:
    """Draw ``n_obs`` single-slice loads and one lifecycle trace.

    The loads and the trace use separate child streams, so changing
    ``n_obs`` leaves the trace untouched. ``trace_horizon=None`` means
    ``1000 / eta``.
    """
    if int(n_obs) < 1:
        raise ValueError(f"n_obs must be >= 1, got {n_obs}")
    if trace_horizon is None:
        trace_horizon = 1000.0 / spec.rates.eta
    load_rng, trace_rng = rng.spawn(2)
    loads = gmm.sample(spec.slice_load, load_rng, int(n_obs))
    trace = simulate_lifecycle(spec.rates, float(trace_horizon), trace_rng)
    return ObservationSet(trace, loads)


def _exceedance(mixture: TruncatedMixture, n: int, thresholds: np.ndarray, samples: int,
                rng: np.random.Generator) -> np.ndarray:
    """Monte-Carlo P(sum of n slice loads > t) for every t."""
    hits = np.zeros(len(thresholds), dtype=np.int64)
    done = 0
    while done < samples:
        size = min(_BATCH, samples - done)
        total = np.zeros(size)
        for _ in range(n):
            total += gmm.sample(mixture, rng, size)
        total.sort()
        hits += size - np.searchsorted(total, thresholds, side="right")
        done += size
    return hits / samples


def true_overload_risk(spec: ScenarioSpec, thresholds, mc_samples: int,
                       rng: np.random.Generator, workers: int = 1) -> RiskCurve:
    """Ground-truth overload risk, stratified by occupancy.

    For every occupancy ``n >= 1`` the conditional exceedance is estimated
    from ``mc_samples`` sums of ``n`` slice loads, on its own child stream,
    and the strata are combined with the exact Erlang weights. The returned
    curve carries the combined Monte-Carlo standard error.
    """
    thresholds = np.asarray(thresholds, dtype=float)
    mc_samples = int(mc_samples)
    if mc_samples < 1:
        raise ValueError("mc_samples must be >= 1")
    probs = stationary_distribution(spec.rates)
    n_max = spec.rates.n_max
    streams = rng.spawn(n_max)

    def stratum(n):
        return _exceedance(spec.slice_load, n, thresholds, mc_samples, streams[n - 1])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cond = list(pool.map(stratum, range(1, n_max + 1)))
    else:
        cond = [stratum(n) for n in range(1, n_max + 1)]
    cond = np.array(cond)

    # n = 0 has zero load: it exceeds only negative thresholds
    zero_state = (thresholds < 0).astype(float)
    risks = probs[0] * zero_state + probs[1:] @ cond
    var = (probs[1:, None] ** 2 * cond * (1.0 - cond) / mc_samples).sum(axis=0)
    return RiskCurve(thresholds, np.clip(risks, 0.0, 1.0), np.sqrt(var))


def direct_overload_risk(spec: ScenarioSpec, thresholds, samples: int,
                         rng: np.random.Generator) -> RiskCurve:
    """Unstratified overload risk: draw the occupancy, then sum that many loads."""
    thresholds = np.asarray(thresholds, dtype=float)
    probs = stationary_distribution(spec.rates)
    hits = np.zeros(len(thresholds), dtype=np.int64)
    done = 0
    while done < samples:
        size = min(_BATCH, samples - done)
        counts = rng.choice(len(probs), size=size, p=probs)
        loads = gmm.sample(spec.slice_load, rng, int(counts.sum())) if counts.sum() else np.zeros(0)
        owner = np.repeat(np.arange(size), counts)
        total = np.bincount(owner, weights=loads, minlength=size)
        total.sort()
        hits += size - np.searchsorted(total, thresholds, side="right")
        done += size
    p = hits / samples
    return RiskCurve(thresholds, p, np.sqrt(p * (1.0 - p) / samples))
