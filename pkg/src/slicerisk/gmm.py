"""
Gaussian mixtures left-truncated at zero.

The truncation is applied to the mixture as a whole: the untruncated
mixture density is divided by the mixture's total mass above zero. This is
the law of a single slice's resource load and of the re-fitted aggregate
load.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import erfc

__all__ = [
    "GaussianComponent",
    "TruncatedMixture",
    "MixtureError",
    "pdf",
    "cdf",
    "sample",
    "tail_prob",
]

MIN_STD = 1e-9
_WEIGHT_TOL = 1e-9
_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)


class MixtureError(ValueError):
    """Raised for an invalid mixture specification."""


def _norm_sf(z):
    # upper tail of the standard normal, accurate far into both tails
    return 0.5 * erfc(np.asarray(z, dtype=float) / _SQRT2)


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class GaussianComponent:
    weight: float
    mean: float
    std: float

    def __post_init__(self):
        if not (math.isfinite(self.weight) and self.weight >= 0):
            raise MixtureError(f"component weight must be >= 0, got {self.weight}")
        if not math.isfinite(self.mean):
            raise MixtureError(f"component mean must be finite, got {self.mean}")
        if not (math.isfinite(self.std) and self.std >= MIN_STD):
            raise MixtureError(f"component std must be >= {MIN_STD}, got {self.std}")


@dataclass(frozen=True)
class TruncatedMixture:
    """Gaussian mixture restricted to ``[truncation, inf)`` and renormalized.

    Args:
        components: the mixture components; weights must sum to 1.
        truncation: left truncation point (always 0 in this package).
    """

    components: tuple[GaussianComponent, ...]
    truncation: float = 0.0

    def __post_init__(self):
        comps = tuple(self.components)
        object.__setattr__(self, "components", comps)
        if not comps:
            raise MixtureError("mixture needs at least one component")
        total = math.fsum(c.weight for c in comps)
        if abs(total - 1.0) > _WEIGHT_TOL:
            raise MixtureError(f"component weights sum to {total!r}, expected 1")
        if self.mass_above_truncation <= 0.0:
            raise MixtureError("mixture has no mass above the truncation point")

    @classmethod
    def from_arrays(cls, weights, means, stds, truncation=0.0, normalize=False):
        w = np.asarray(weights, dtype=float)
        if normalize:
            w = w / w.sum()
        comps = tuple(
            GaussianComponent(float(a), float(b), float(c))
            for a, b, c in zip(w, np.asarray(means, float), np.asarray(stds, float))
        )
        return cls(comps, float(truncation))

    @cached_property
    def weights(self) -> np.ndarray:
        return _frozen([c.weight for c in self.components])

    @cached_property
    def means(self) -> np.ndarray:
        return _frozen([c.mean for c in self.components])

    @cached_property
    def stds(self) -> np.ndarray:
        return _frozen([c.std for c in self.components])

    @property
    def k(self) -> int:
        return len(self.components)

    @cached_property
    def mass_above_truncation(self) -> float:
        return float(self._untruncated_sf(self.truncation))

    def _untruncated_sf(self, x):
        x = np.asarray(x, dtype=float)
        z = (x[..., None] - self.means) / self.stds
        return np.dot(_norm_sf(z), self.weights)

    def to_dict(self) -> dict:
        return {
            "truncation": self.truncation,
            "components": [
                {"weight": c.weight, "mean": c.mean, "std": c.std} for c in self.components
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TruncatedMixture":
        comps = tuple(
            GaussianComponent(float(c["weight"]), float(c["mean"]), float(c["std"]))
            for c in data["components"]
        )
        return cls(comps, float(data.get("truncation", 0.0)))


def pdf(m: TruncatedMixture, x):
    """Density of ``m`` at ``x`` (scalar or array); zero below the truncation point."""
    x = np.asarray(x, dtype=float)
    z = (x[..., None] - m.means) / m.stds
    dens = np.exp(-0.5 * z * z) / (m.stds * _SQRT2PI)
    out = np.dot(dens, m.weights) / m.mass_above_truncation
    out = np.where(x < m.truncation, 0.0, out)
    return out if out.ndim else float(out)


def tail_prob(m: TruncatedMixture, threshold):
    """P(X > threshold).

    Computed from upper-tail normal probabilities so that far-tail values keep
    full relative precision instead of collapsing to ``1 - 1``.
    """
    t = np.asarray(threshold, dtype=float)
    tt = np.maximum(t, m.truncation)
    out = np.clip(m._untruncated_sf(tt) / m.mass_above_truncation, 0.0, 1.0)
    out = np.where(t <= m.truncation, 1.0, out)
    return out if out.ndim else float(out)


def cdf(m: TruncatedMixture, x):
    """P(X <= x); exactly ``1 - tail_prob(m, x)``."""
    out = 1.0 - np.asarray(tail_prob(m, x))
    return out if out.ndim else float(out)


def sample(m: TruncatedMixture, rng: np.random.Generator, count: int) -> np.ndarray:
    """Draw ``count`` i.i.d. values from ``m`` by rejection from the untruncated mixture."""
    count = int(count)
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    cum = np.cumsum(m.weights)
    cum[-1] = 1.0
    idx = np.searchsorted(cum[:-1], rng.random(count), side="right")
    out = rng.standard_normal(count)
    out *= m.stds[idx]
    out += m.means[idx]
    rejected = np.flatnonzero(out < m.truncation)
    if rejected.size:
        out[rejected] = sample(m, rng, rejected.size)
    return out
