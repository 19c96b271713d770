"""
Slice occupancy as an Erlang loss system.

New slices arrive as a Poisson process with rate ``lambda_``, each active
slice is released after an exponential lifetime with rate ``eta``, and
arrivals that find ``n_max`` active slices are dropped.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BirthDeathRates",
    "LifecycleTrace",
    "BIRTH",
    "DEATH",
    "stationary_distribution",
    "simulate_lifecycle",
    "occupancy_time",
]

BIRTH = "birth"
DEATH = "death"
_CHUNK = 4096


@dataclass(frozen=True)
class BirthDeathRates:
    lambda_: float
    eta: float
    n_max: int

    def __post_init__(self):
        if not (math.isfinite(self.lambda_) and self.lambda_ >= 0):
            raise ValueError(f"lambda must be >= 0, got {self.lambda_}")
        if not (math.isfinite(self.eta) and self.eta > 0):
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ValueError(f"n_max must be a positive integer, got {self.n_max}")
        object.__setattr__(self, "n_max", int(self.n_max))

    @property
    def load(self) -> float:
        """Offered load ``lambda / eta`` in Erlangs."""
        return self.lambda_ / self.eta


@dataclass(frozen=True, eq=False)
class LifecycleTrace:
    """Observed slice creations and releases over ``[0, horizon]``.

    ``times``, ``kinds`` and ``occupancy`` are parallel arrays; ``occupancy``
    holds the number of active slices right after each event.
    """

    times: np.ndarray
    kinds: tuple[str, ...]
    occupancy: np.ndarray
    horizon: float
    initial_occupancy: int
    n_max: int = field(default=0)

    def __len__(self):
        return len(self.kinds)

    @property
    def n_births(self) -> int:
        return sum(1 for k in self.kinds if k == BIRTH)

    @property
    def n_deaths(self) -> int:
        return sum(1 for k in self.kinds if k == DEATH)

    def validate(self) -> None:
        """Check the trace is a well-formed capped birth-death path."""
        if any(k not in (BIRTH, DEATH) for k in self.kinds):
            raise ValueError("event kinds must be 'birth' or 'death'")
        steps = np.array([1 if k == BIRTH else -1 for k in self.kinds], dtype=int)
        expected = self.initial_occupancy + np.cumsum(steps)
        if not np.array_equal(expected, self.occupancy):
            raise ValueError("occupancy must change by exactly +1/-1 per event")
        if not (0 <= self.initial_occupancy <= self.n_max):
            raise ValueError("initial occupancy outside [0, n_max]")
        if len(self) and (self.occupancy.min() < 0 or self.occupancy.max() > self.n_max):
            raise ValueError(f"occupancy outside [0, {self.n_max}]")
        if len(self):
            if self.times[0] <= 0.0 or np.any(np.diff(self.times) <= 0.0):
                raise ValueError("event timestamps must be positive and strictly increasing")
            if self.times[-1] > self.horizon:
                raise ValueError("event after the observation horizon")

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# horizon={self.horizon!r}\n")
        buf.write(f"# initial_occupancy={self.initial_occupancy}\n")
        buf.write(f"# n_max={self.n_max}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["timestamp", "kind", "occupancy"])
        for t, kind, occ in zip(self.times, self.kinds, self.occupancy):
            writer.writerow([repr(float(t)), kind, int(occ)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "LifecycleTrace":
        meta = {}
        rows = []
        for line in text.splitlines():
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key.strip()] = value.strip()
            elif line.strip():
                rows.append(line)
        reader = csv.DictReader(rows)
        times, kinds, occ = [], [], []
        for row in reader:
            times.append(float(row["timestamp"]))
            kinds.append(row["kind"])
            occ.append(int(row["occupancy"]))
        if "initial_occupancy" in meta:
            initial = int(meta["initial_occupancy"])
        elif kinds:
            initial = occ[0] - (1 if kinds[0] == BIRTH else -1)
        else:
            initial = 0
        horizon = float(meta["horizon"]) if "horizon" in meta else (times[-1] if times else 0.0)
        n_max = int(meta["n_max"]) if "n_max" in meta else max(occ + [initial])
        return cls(np.array(times, dtype=float), tuple(kinds), np.array(occ, dtype=int),
                   horizon, initial, n_max)


def stationary_distribution(rates: BirthDeathRates) -> np.ndarray:
    """Erlang loss distribution ``P_n ∝ a^n / n!`` for ``n = 0..n_max``, ``a = lambda/eta``.

    The unnormalized weights are built by the ratio recursion
    ``w_n = w_{n-1} * a / n`` and rescaled whenever they grow large, so the
    result stays finite for offered loads far beyond ``n_max``.
    """
    a = rates.load
    w = np.empty(rates.n_max + 1)
    w[0] = 1.0
    for n in range(1, rates.n_max + 1):
        w[n] = w[n - 1] * a / n
        if w[n] > 1e250:
            w[: n + 1] /= w[n]
    return w / w.sum()


def simulate_lifecycle(rates: BirthDeathRates, horizon: float, rng: np.random.Generator,
                       start_empty: bool = False) -> LifecycleTrace:
    """Simulate the capped birth-death chain on ``[0, horizon]``.

    The initial occupancy is drawn from the stationary distribution unless
    ``start_empty`` is set.
    """
    if not (horizon > 0 and math.isfinite(horizon)):
        raise ValueError(f"horizon must be positive and finite, got {horizon}")
    lam, eta, n_max = rates.lambda_, rates.eta, rates.n_max
    if start_empty:
        n = 0
    else:
        n = int(rng.choice(n_max + 1, p=stationary_distribution(rates)))
    initial = n

    times, births, occ = [], [], []
    t = 0.0
    expo = rng.standard_exponential(_CHUNK)
    unif = rng.random(_CHUNK)
    i = 0
    while True:
        birth_rate = lam if n < n_max else 0.0
        total = birth_rate + n * eta
        if total <= 0.0:
            break
        if i == _CHUNK:
            expo = rng.standard_exponential(_CHUNK)
            unif = rng.random(_CHUNK)
            i = 0
        t += expo[i] / total
        if t > horizon:
            break
        is_birth = unif[i] * total < birth_rate
        i += 1
        n += 1 if is_birth else -1
        times.append(t)
        births.append(is_birth)
        occ.append(n)

    kinds = tuple(BIRTH if b else DEATH for b in births)
    return LifecycleTrace(np.array(times, dtype=float), kinds, np.array(occ, dtype=int),
                          float(horizon), initial, n_max)


def occupancy_time(trace: LifecycleTrace) -> np.ndarray:
    """Total time the trace spends in each occupancy state ``0..n_max``."""
    edges = np.concatenate(([0.0], trace.times, [trace.horizon]))
    states = np.concatenate(([trace.initial_occupancy], trace.occupancy))
    out = np.zeros(trace.n_max + 1)
    np.add.at(out, states, np.diff(edges))
    return out
