"""Finite two-sided orbit windows of measure-preserving base systems.

The abstract base (Omega, P, theta) is only ever seen through a window of
payloads at integer times -N..N. Shifting an orbit is a re-indexing of that
window; payloads are never re-sampled.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, WindowError
from .rng import uniform01

GOLDEN_ANGLE = (np.sqrt(5.0) - 1.0) / 2.0  # 0.6180339887...

KINDS = ("bernoulli_iid", "irrational_rotation", "product")


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def __post_init__(self):
        if not (np.isfinite(self.low) and np.isfinite(self.high)) or not self.high > self.low:
            raise ConfigurationError(f"empty or invalid interval [{self.low}, {self.high}]")

    @property
    def mean(self):
        return 0.5 * (self.low + self.high)

    @property
    def variance(self):
        return (self.high - self.low) ** 2 / 12.0

    def support(self):
        return self.low, self.high

    def from_uniform(self, u):
        return self.low + (self.high - self.low) * u


@dataclass(frozen=True)
class Categorical:
    """Finite alphabet with (unnormalised) weights."""

    values: tuple
    weights: tuple = None

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        if not values:
            raise ConfigurationError("finite alphabet must be non-empty")
        weights = self.weights
        if weights is None:
            weights = (1.0,) * len(values)
        weights = tuple(float(w) for w in weights)
        if len(weights) != len(values):
            raise ConfigurationError("alphabet and weights differ in length")
        if any(w < 0 or not np.isfinite(w) for w in weights) or sum(weights) <= 0:
            raise ConfigurationError(f"weights must be non-negative with positive sum, got {weights}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)

    @property
    def probabilities(self):
        w = np.asarray(self.weights)
        return w / w.sum()

    @property
    def mean(self):
        return float(np.dot(self.probabilities, self.values))

    @property
    def variance(self):
        v = np.asarray(self.values)
        return float(np.dot(self.probabilities, (v - self.mean) ** 2))

    def support(self):
        return min(self.values), max(self.values)

    def from_uniform(self, u):
        cdf = np.cumsum(self.probabilities)
        cdf[-1] = 1.0
        idx = np.searchsorted(cdf, u, side="right")
        return np.asarray(self.values)[np.minimum(idx, len(self.values) - 1)]


@dataclass(frozen=True)
class BaseSpec:
    """Declarative description of a base system.

    ``bernoulli_iid`` draws every payload component independently from
    ``noise_law``. ``irrational_rotation`` sets payload(t) = payload(0) +
    t * rotation_angle mod 1; the angle is taken as irrational by convention
    and is not checked. ``product`` concatenates the payloads of ``factors``.
    """

    kind: str
    noise_law: Uniform | Categorical | None = None
    rotation_angle: float | None = None
    dimension: int = 1
    factors: tuple = ()
    rotation_start: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown base kind {self.kind!r}")
        if self.kind == "bernoulli_iid":
            if self.noise_law is None:
                raise ConfigurationError("bernoulli_iid needs a noise_law")
        elif self.kind == "irrational_rotation":
            if self.rotation_angle is None or not 0.0 < self.rotation_angle < 1.0:
                raise ConfigurationError("rotation_angle must lie in (0, 1)")
        else:
            if not self.factors:
                raise ConfigurationError("product base needs at least one factor")
            object.__setattr__(self, "factors", tuple(self.factors))
            object.__setattr__(self, "dimension", sum(f.dimension for f in self.factors))
        if int(self.dimension) < 1:
            raise ConfigurationError("payload dimension must be positive")


def bernoulli(law, dimension=1):
    return BaseSpec("bernoulli_iid", noise_law=law, dimension=dimension)


def rotation(angle=GOLDEN_ANGLE, start=None, dimension=1):
    return BaseSpec("irrational_rotation", rotation_angle=angle, rotation_start=start,
                    dimension=dimension)


def product(*factors):
    return BaseSpec("product", factors=tuple(factors))


def _fill(spec: BaseSpec, times: np.ndarray, seed: int, stream: int) -> np.ndarray:
    """Payload rows at the given integer times; stream separates product factors."""
    if spec.kind == "product":
        cols = [_fill(f, times, seed, stream * 31 + i + 1) for i, f in enumerate(spec.factors)]
        return np.concatenate(cols, axis=1)
    out = np.empty((len(times), spec.dimension))
    for c in range(spec.dimension):
        if spec.kind == "bernoulli_iid":
            out[:, c] = spec.noise_law.from_uniform(uniform01(seed, times, c, stream))
        else:
            if spec.rotation_start is None:
                x0 = float(uniform01(seed, [0], c, stream + 0x5EED)[0])
            else:
                x0 = float(spec.rotation_start)
            out[:, c] = np.mod(x0 + times.astype(np.float64) * spec.rotation_angle, 1.0)
    return out


@dataclass(frozen=True, eq=False)
class BaseOrbit:
    """Payloads at times -N..N, viewed from ``origin``.

    ``payloads[i]`` is the payload at absolute time ``i - N``. Relative time
    ``k`` (as used by :meth:`payload` and :meth:`block`) means absolute time
    ``origin + k``.
    """

    spec: BaseSpec
    radius: int
    payloads: np.ndarray = field(repr=False)
    origin: int = 0
    seed: int = 0

    @property
    def dimension(self):
        return self.payloads.shape[1]

    def _check(self, lo, hi):
        need = max(abs(lo), abs(hi))
        if need > self.radius:
            raise WindowError(f"times {lo}..{hi} exceed the orbit window", required_radius=need)

    def payload(self, k=0):
        t = self.origin + k
        self._check(t, t)
        return self.payloads[t + self.radius]

    def block(self, start, n):
        """Payload rows at relative times start, ..., start + n - 1."""
        lo = self.origin + start
        hi = lo + n - 1
        if n <= 0:
            return self.payloads[:0]
        self._check(lo, hi)
        return self.payloads[lo + self.radius: hi + self.radius + 1]

    def blocks(self, starts, n):
        """(len(starts), n, dim) stack of :meth:`block` rows, gathered in one indexing step."""
        lo = self.origin + np.asarray(starts, dtype=int).reshape(-1)
        if len(lo) and n > 0:
            self._check(int(lo.min()), int(lo.max()) + n - 1)
        return self.payloads[(lo + self.radius)[:, None] + np.arange(max(n, 0))]

    def times(self):
        return np.arange(-self.radius, self.radius + 1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time_index"] + [f"p{c}" for c in range(self.dimension)])
        for t, row in zip(self.times(), self.payloads):
            w.writerow([int(t)] + [format(float(v), ".17g") for v in row])
        return buf.getvalue()

    def __eq__(self, other):
        if not isinstance(other, BaseOrbit):
            return NotImplemented
        return (self.spec == other.spec and self.radius == other.radius
                and self.origin == other.origin and self.seed == other.seed
                and np.array_equal(self.payloads, other.payloads))

    def __hash__(self):
        return hash((self.radius, self.origin, self.seed, self.payloads.tobytes()))


def sample_orbit(spec: BaseSpec, N: int, seed: int) -> BaseOrbit:
    """Sample payloads at all times -N..N; deterministic in (spec, N, seed)."""
    if int(N) < 1:
        raise ConfigurationError("window radius N must be >= 1")
    N = int(N)
    times = np.arange(-N, N + 1, dtype=np.int64)
    payloads = _fill(spec, times, seed, 0)
    payloads.setflags(write=False)
    return BaseOrbit(spec=spec, radius=N, payloads=payloads, origin=0, seed=int(seed))


def sample_ensemble(spec: BaseSpec, N: int, seeds: Sequence[int]) -> list[BaseOrbit]:
    return [sample_orbit(spec, N, s) for s in seeds]


def shift(orbit: BaseOrbit, k: int) -> BaseOrbit:
    """Realise theta^k by moving the origin; the payloads are shared."""
    new = orbit.origin + int(k)
    if abs(new) > orbit.radius:
        raise WindowError(f"shift by {k} from origin {orbit.origin} leaves the window",
                          required_radius=abs(new))
    return BaseOrbit(orbit.spec, orbit.radius, orbit.payloads, new, orbit.seed)


def evaluate_observable(f: Callable, rows: np.ndarray) -> np.ndarray:
    """Apply ``f`` to an (n, dim) payload block, returning n values.

    ``f`` receives the whole block; scalar results are broadcast and a
    trailing unit dimension is dropped.
    """
    n = len(rows)
    vals = np.asarray(f(rows), dtype=float)
    if vals.ndim == 2 and vals.shape[1] == 1:
        vals = vals[:, 0]
    return np.broadcast_to(vals, (n,))


def birkhoff_average(orbit: BaseOrbit, f: Callable, n: int) -> float:
    """(1/n) * sum_{i<n} f(payload at origin + i)."""
    if n < 1:
        raise ConfigurationError("n must be positive")
    return float(np.mean(evaluate_observable(f, orbit.block(0, n))))


def stack_blocks(orbits: Sequence[BaseOrbit], start: int, n: int) -> np.ndarray:
    """(m, n, dim) array of payload blocks from several orbits."""
    return np.stack([o.block(start, n) for o in orbits])
