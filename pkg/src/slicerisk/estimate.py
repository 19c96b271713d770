"""
Online overload-risk estimation from observed slice dynamics.

The pipeline runs in stages:

1. rate extraction from the lifecycle trace (``extract_rates``);
2. Erlang weights for the estimated rates;
3. histogram of single-slice loads, moving-average smoothing and peak
   counting to guess the number of mixture components;
4. one-dimensional K-means fit of a truncated Gaussian mixture;
5. Monte-Carlo composition of the aggregate load per occupancy, re-fitted
   as one high-order truncated mixture;
6. risk readout with the empty-system atom carried explicitly.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import gmm
from .gmm import TruncatedMixture
from .queue import BirthDeathRates, LifecycleTrace, occupancy_time, stationary_distribution
from .simulate import ObservationSet, RiskCurve

__all__ = [
    "EmpiricalPdf",
    "FittedModel",
    "PipelineConfig",
    "InsufficientTraceError",
    "PipelineError",
    "extract_rates",
    "empirical_pdf",
    "smooth",
    "detect_peaks",
    "peak_prominences",
    "fit_mixture",
    "compose_states",
    "weighted_pool",
    "refit_states",
    "compose_and_refit",
    "risk_from_model",
    "empirical_risk",
    "run_pipeline",
]

MIN_EVENTS = 10
MIN_PDF_SAMPLES = 100
MIN_BINS = 10
FIT_STD_FLOOR = 1e-4
HIST_SPAN = 1.02


class InsufficientTraceError(ValueError):
    """The lifecycle trace has too few births or deaths to estimate rates."""

    def __init__(self, kind: str, count: int, needed: int = MIN_EVENTS):
        super().__init__(f"insufficient-trace: {count} {kind} events, need at least {needed}")
        self.kind = kind
        self.count = count


class PipelineError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it and ``__cause__`` holds the original error."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage


@dataclass(frozen=True)
class PipelineConfig:
    """Tunable knobs of the estimator. Every field may be omitted from JSON."""

    n_bins: int = 100
    window: int = 5
    prominence: float = 0.05
    mc_per_state: int = 20_000
    restarts: int = 10
    max_iter: int = 300
    refit_k_cap: int | None = None
    refit: str = "stratified"

    def __post_init__(self):
        if self.n_bins < MIN_BINS:
            raise ValueError(f"n_bins must be >= {MIN_BINS}")
        if self.window < 1 or self.window % 2 == 0 or self.window > self.n_bins:
            raise ValueError("window must be odd and in [1, n_bins]")
        if not 0 < self.prominence < 1:
            raise ValueError("prominence must be in (0, 1)")
        if self.mc_per_state < 10_000:
            raise ValueError("mc_per_state must be >= 10000")
        if self.restarts < 1 or self.max_iter < 1:
            raise ValueError("restarts and max_iter must be >= 1")
        if self.refit_k_cap is not None and self.refit_k_cap < 1:
            raise ValueError("refit_k_cap must be >= 1")
        if self.refit not in ("stratified", "pooled"):
            raise ValueError(f"refit must be 'stratified' or 'pooled', got {self.refit!r}")

    @classmethod
    def from_dict(cls, data: dict | None) -> "PipelineConfig":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown pipeline config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class EmpiricalPdf:
    bin_edges: np.ndarray
    densities: np.ndarray

    @property
    def bin_width(self) -> float:
        return float(self.bin_edges[1] - self.bin_edges[0])

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def mass(self) -> float:
        return float(self.densities.sum() * self.bin_width)


@dataclass(frozen=True, eq=False)
class FittedModel:
    k_hat: int
    slice_mixture: TruncatedMixture
    lambda_hat: float
    eta_hat: float
    occupancy_probs: np.ndarray
    aggregate_mixture: TruncatedMixture | None
    state_samples: list[np.ndarray] | None = field(default=None, repr=False, compare=False)

    @property
    def n_max(self) -> int:
        return len(self.occupancy_probs) - 1

    def to_dict(self) -> dict:
        return {
            "k_hat": self.k_hat,
            "lambda_hat": self.lambda_hat,
            "eta_hat": self.eta_hat,
            "n_max": self.n_max,
            "occupancy_probs": self.occupancy_probs.tolist(),
            "slice_mixture": self.slice_mixture.to_dict(),
            "aggregate_mixture": (None if self.aggregate_mixture is None
                                  else self.aggregate_mixture.to_dict()),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "FittedModel":
        agg = data.get("aggregate_mixture")
        return cls(
            k_hat=int(data["k_hat"]),
            slice_mixture=TruncatedMixture.from_dict(data["slice_mixture"]),
            lambda_hat=float(data["lambda_hat"]),
            eta_hat=float(data["eta_hat"]),
            occupancy_probs=np.asarray(data["occupancy_probs"], dtype=float),
            aggregate_mixture=None if agg is None else TruncatedMixture.from_dict(agg),
        )


# -- feature extraction ------------------------------------------------------

def extract_rates(trace: LifecycleTrace) -> tuple[float, float]:
    """Maximum-likelihood birth and death rates of a capped birth-death path.

    Births can only happen below ``n_max``, so the birth rate is the birth
    count over the time spent below the cap. The death rate is the death
    count over the integrated occupancy ``∫ n(t) dt``.
    """
    if trace.n_births < MIN_EVENTS:
        raise InsufficientTraceError("birth", trace.n_births)
    if trace.n_deaths < MIN_EVENTS:
        raise InsufficientTraceError("death", trace.n_deaths)
    occ = occupancy_time(trace)
    unblocked = occ[:-1].sum()
    exposure = float(np.dot(np.arange(len(occ)), occ))
    return float(trace.n_births / unblocked), float(trace.n_deaths / exposure)


def empirical_pdf(samples, n_bins: int = 100) -> EmpiricalPdf:
    """Density histogram over ``[0, 1.02 * max(samples)]`` with uniform bins."""
    x = np.asarray(samples, dtype=float)
    if x.size < MIN_PDF_SAMPLES:
        raise ValueError(f"need at least {MIN_PDF_SAMPLES} samples, got {x.size}")
    if n_bins < MIN_BINS:
        raise ValueError(f"n_bins must be >= {MIN_BINS}, got {n_bins}")
    top = HIST_SPAN * float(x.max())
    if not top > 0:
        raise ValueError("samples are all zero; histogram has no width")
    edges = np.linspace(0.0, top, n_bins + 1)
    counts, _ = np.histogram(x, bins=edges)
    width = edges[1] - edges[0]
    return EmpiricalPdf(edges, counts / (counts.sum() * width))


def smooth(pdf: EmpiricalPdf, window: int = 5) -> EmpiricalPdf:
    """Centered moving average; edge bins average over the part of the window that exists."""
    n = len(pdf.densities)
    if window < 1 or window % 2 == 0 or window > n:
        raise ValueError(f"window must be odd and in [1, {n}], got {window}")
    kernel = np.ones(window)
    sums = np.convolve(pdf.densities, kernel, mode="same")
    support = np.convolve(np.ones(n), kernel, mode="same")
    dens = sums / support
    dens /= dens.sum() * pdf.bin_width
    return EmpiricalPdf(pdf.bin_edges, dens)


def _local_maxima(y: np.ndarray) -> list[int]:
    # interior maxima; a flat top counts once, at its middle
    peaks = []
    i, n = 1, len(y)
    while i < n - 1:
        if y[i - 1] < y[i]:
            j = i
            while j + 1 < n - 1 and y[j + 1] == y[i]:
                j += 1
            if y[j + 1] < y[i]:
                peaks.append((i + j) // 2)
                i = j + 1
                continue
            i = j
        i += 1
    return peaks


def peak_prominences(y) -> tuple[np.ndarray, np.ndarray]:
    """Interior local maxima of ``y`` and their topographic prominences.

    The prominence of a peak is its height above the higher of the two
    lowest points reachable on either side before meeting strictly higher
    ground (or the array edge).
    """
    y = np.asarray(y, dtype=float)
    peaks = _local_maxima(y)
    prom = np.empty(len(peaks))
    for k, p in enumerate(peaks):
        h = y[p]
        lo = p
        left_min = h
        while lo > 0 and y[lo - 1] <= h:
            lo -= 1
            left_min = min(left_min, y[lo])
        hi = p
        right_min = h
        while hi < len(y) - 1 and y[hi + 1] <= h:
            hi += 1
            right_min = min(right_min, y[hi])
        prom[k] = h - max(left_min, right_min)
    return np.array(peaks, dtype=int), prom


def detect_peaks(pdf: EmpiricalPdf, prominence_frac: float = 0.05) -> int:
    """Number of peaks with prominence at least ``prominence_frac`` of the maximum density.

    Never returns less than 1.
    """
    if not 0 < prominence_frac < 1:
        raise ValueError(f"prominence_frac must be in (0, 1), got {prominence_frac}")
    _, prom = peak_prominences(pdf.densities)
    cut = prominence_frac * float(pdf.densities.max())
    return max(int(np.count_nonzero(prom >= cut)), 1)


# -- mixture fitting ---------------------------------------------------------

def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(x.size)]]
    d2 = (x - centers[0]) ** 2
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers.append(x[rng.integers(x.size)])
        else:
            i = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            centers.append(x[min(i, x.size - 1)])
        d2 = np.minimum(d2, (x - centers[-1]) ** 2)
    return np.sort(np.array(centers))


def _lloyd(xs, csum, csum2, shift, centers, max_iter):
    """Lloyd iterations on sorted data; clusters are contiguous index ranges.

    Returns ``(cuts, sse)`` or ``None`` when a cluster drops below 2 members.
    """
    n = xs.size
    cuts = None
    for _ in range(max_iter):
        mids = 0.5 * (centers[1:] + centers[:-1])
        new_cuts = np.concatenate(([0], np.searchsorted(xs, mids, side="right"), [n]))
        sizes = np.diff(new_cuts)
        if np.any(sizes < 2):
            return None
        if cuts is not None and np.array_equal(new_cuts, cuts):
            break
        cuts = new_cuts
        centers = shift + (csum[cuts[1:]] - csum[cuts[:-1]]) / sizes
    sizes = np.diff(cuts)
    s1 = csum[cuts[1:]] - csum[cuts[:-1]]
    s2 = csum2[cuts[1:]] - csum2[cuts[:-1]]
    sse = float(np.sum(s2 - s1 * s1 / sizes))
    return cuts, sse


def fit_mixture(samples, k: int, rng: np.random.Generator, restarts: int = 10,
                max_iter: int = 300) -> TruncatedMixture:
    """Fit a truncated Gaussian mixture by one-dimensional K-means.

    Each cluster becomes one component: its sample mean, its sample standard
    deviation (floored at ``1e-4``) and its share of the data. The best of
    ``restarts`` k-means++ seedings by within-cluster sum of squares is kept.
    If every restart leaves a cluster with fewer than 2 members, ``k`` is
    lowered by one and the fit retried.
    """
    x = np.asarray(samples, dtype=float)
    k = int(k)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if x.size < 10 * k:
        raise ValueError(f"need at least {10 * k} samples for k={k}, got {x.size}")
    xs = np.sort(x)
    # shift before accumulating to keep the sums of squares well conditioned
    shift = float(xs.mean())
    csum = np.concatenate(([0.0], np.cumsum(xs - shift)))
    csum2 = np.concatenate(([0.0], np.cumsum((xs - shift) ** 2)))

    while True:
        best = None
        if k == 1:
            best = np.array([0, xs.size])
        else:
            best_sse = math.inf
            for _ in range(restarts):
                centers = _kmeanspp(xs, k, rng)
                fit = _lloyd(xs, csum, csum2, shift, centers, max_iter)
                if fit is not None and fit[1] < best_sse:
                    best, best_sse = fit
        if best is not None:
            break
        k -= 1

    clusters = [xs[a:b] for a, b in zip(best[:-1], best[1:])]
    means = np.array([c.mean() for c in clusters])
    stds = np.array([max(float(c.std(ddof=1)), FIT_STD_FLOOR) for c in clusters])
    weights = np.array([c.size for c in clusters], dtype=float) / xs.size
    weights[-1] = 1.0 - math.fsum(weights[:-1])
    return TruncatedMixture.from_arrays(weights, means, stds)


# -- composition -------------------------------------------------------------

def _check_probs(probs: np.ndarray) -> None:
    if probs.ndim != 1 or probs.size < 2 or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
        raise ValueError("occupancy_probs must be a probability vector over 0..n_max")


def compose_states(slice_mixture: TruncatedMixture, n_max: int, mc_per_state: int,
                   rng: np.random.Generator, workers: int = 1) -> list[np.ndarray]:
    """Aggregate-load samples per occupancy: entry ``n - 1`` holds sums of ``n`` slice loads.

    Every occupancy draws from its own child stream, so the result does not
    depend on ``workers``.
    """
    if int(mc_per_state) < 10_000:
        raise ValueError(f"mc_per_state must be >= 10000, got {mc_per_state}")
    size = int(mc_per_state)
    streams = rng.spawn(n_max)

    def stratum(n):
        return gmm.sample(slice_mixture, streams[n - 1], n * size).reshape(n, size).sum(axis=0)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(stratum, range(1, n_max + 1)))
    return [stratum(n) for n in range(1, n_max + 1)]


def weighted_pool(states: list[np.ndarray], occupancy_probs, rng: np.random.Generator) -> np.ndarray:
    """Resample the per-occupancy batches into one pool weighted by occupancy probability.

    The pool has as many values as all batches together; occupancy ``n``
    contributes its largest-remainder share of that total given
    ``P_n / (1 - P_0)``.
    """
    probs = np.asarray(occupancy_probs, dtype=float)
    total = sum(len(s) for s in states)
    w = probs[1:] / probs[1:].sum()
    raw = w * total
    counts = np.floor(raw).astype(int)
    short = total - int(counts.sum())
    if short:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    parts = [rng.choice(batch, size=c, replace=c > len(batch))
             for batch, c in zip(states, counts) if c]
    return np.concatenate(parts)


def _peak_fit(x: np.ndarray, config: PipelineConfig, cap: int, rng) -> TruncatedMixture:
    hist = smooth(empirical_pdf(x, config.n_bins), config.window)
    k = min(detect_peaks(hist, config.prominence), cap, max(x.size // 10, 1))
    return fit_mixture(x, k, rng, config.restarts, config.max_iter)


def refit_states(states: list[np.ndarray], occupancy_probs, rng: np.random.Generator,
                 config: PipelineConfig | None = None) -> TruncatedMixture | None:
    """Re-fit the composed aggregate load as one truncated Gaussian mixture.

    ``config.refit`` selects the route. ``"stratified"`` fits each
    occupancy's batch on its own (histogram, smoothing, peak count,
    K-means) and merges the fits with weights ``P_n / (1 - P_0)``.
    ``"pooled"`` runs the same steps once on the occupancy-weighted pool.
    Either way at most ``refit_k_cap`` (default ``2 * n_max``) components
    come from a single fit. Returns ``None`` if ``P_0 = 1``.
    """
    config = config or PipelineConfig()
    probs = np.asarray(occupancy_probs, dtype=float)
    _check_probs(probs)
    n_max = len(probs) - 1
    if len(states) != n_max:
        raise ValueError(f"expected {n_max} occupancy batches, got {len(states)}")
    busy = probs[1:].sum()
    if busy <= 0.0:
        return None
    cap = config.refit_k_cap or 2 * n_max
    if config.refit == "pooled":
        pool_rng, fit_rng = rng.spawn(2)
        return _peak_fit(weighted_pool(states, probs, pool_rng), config, cap, fit_rng)

    fit_rngs = rng.spawn(n_max)
    weights, means, stds = [], [], []
    for n in range(1, n_max + 1):
        if probs[n] <= 0.0:
            continue
        fit = _peak_fit(states[n - 1], config, cap, fit_rngs[n - 1])
        weights.append(fit.weights * (probs[n] / busy))
        means.append(fit.means)
        stds.append(fit.stds)
    w = np.concatenate(weights)
    w /= w.sum()
    w[-1] = max(1.0 - math.fsum(w[:-1]), 0.0)
    return TruncatedMixture.from_arrays(w, np.concatenate(means), np.concatenate(stds))


def compose_and_refit(slice_mixture: TruncatedMixture, occupancy_probs, mc_per_state: int,
                      rng: np.random.Generator, config: PipelineConfig | None = None,
                      workers: int = 1) -> TruncatedMixture | None:
    """Monte-Carlo composition of the aggregate load followed by ``refit_states``.

    The empty system is an atom at zero that no Gaussian mixture can
    represent; it is left to ``risk_from_model``.
    """
    probs = np.asarray(occupancy_probs, dtype=float)
    _check_probs(probs)
    state_rng, fit_rng = rng.spawn(2)
    states = compose_states(slice_mixture, len(probs) - 1, mc_per_state, state_rng, workers)
    return refit_states(states, probs, fit_rng, config)


# -- risk readout ------------------------------------------------------------

def risk_from_model(model: FittedModel, thresholds) -> RiskCurve:
    """Overload risk from the fitted aggregate law plus the empty-system atom."""
    t = np.asarray(thresholds, dtype=float)
    p0 = float(model.occupancy_probs[0])
    if model.aggregate_mixture is None:
        busy = np.zeros_like(t)
    else:
        busy = (1.0 - p0) * np.asarray(gmm.tail_prob(model.aggregate_mixture, t))
    risks = np.clip(busy + p0 * (t < 0), 0.0, 1.0)
    return RiskCurve(t, risks)


def empirical_risk(model: FittedModel, thresholds) -> RiskCurve:
    """Baseline readout: occupancy-weighted exceedance frequencies of the composed batches."""
    t = np.asarray(thresholds, dtype=float)
    probs = model.occupancy_probs
    risks = probs[0] * (t < 0)
    for n, batch in enumerate(model.state_samples or (), start=1):
        xs = np.sort(batch)
        risks = risks + probs[n] * (xs.size - np.searchsorted(xs, t, side="right")) / xs.size
    return RiskCurve(t, np.clip(risks, 0.0, 1.0))


def run_pipeline(obs: ObservationSet, n_max: int, thresholds, config: PipelineConfig | None,
                 rng: np.random.Generator, workers: int = 1) -> tuple[FittedModel, RiskCurve]:
    """Estimate the overload-risk curve from observations, end to end.

    Failures are re-raised as ``PipelineError`` tagged with the stage name.
    """
    config = config or PipelineConfig()
    fit_rng, compose_rng = rng.spawn(2)
    stage = "extract_rates"
    try:
        lambda_hat, eta_hat = extract_rates(obs.trace)
        stage = "erlang"
        probs = stationary_distribution(BirthDeathRates(lambda_hat, eta_hat, n_max))
        stage = "empirical_pdf"
        hist = empirical_pdf(obs.load_samples, config.n_bins)
        stage = "smooth"
        hist = smooth(hist, config.window)
        stage = "detect_peaks"
        k_hat = detect_peaks(hist, config.prominence)
        stage = "fit_mixture"
        slice_mixture = fit_mixture(obs.load_samples, k_hat, fit_rng, config.restarts,
                                    config.max_iter)
        stage = "compose_and_refit"
        state_rng, refit_rng = compose_rng.spawn(2)
        states = compose_states(slice_mixture, n_max, config.mc_per_state, state_rng, workers)
        aggregate = refit_states(states, probs, refit_rng, config)
        model = FittedModel(k_hat, slice_mixture, lambda_hat, eta_hat, probs, aggregate, states)
        stage = "risk"
        curve = risk_from_model(model, thresholds)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(stage, exc) from exc
    return model, curve
