"""Random circle homeomorphisms driven by the base, and grid diagnostics.

The fibre Xi is the circle [0, 1). Random closed subsets of Xi are replaced
by :class:`GridSet` occupancy vectors over a uniform partition into G cells.
"""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .base import BaseOrbit
from .errors import ConfigurationError, EmptySubsectionError


@dataclass(frozen=True, eq=False)
class DrivingSystem:
    """Forward and inverse circle maps ``g(payload, xi)``.

    Both maps are vectorised: ``payload`` has shape (B, dim) and ``xi`` shape
    (B,). ``translation`` is set for isometric drivings, where
    g(p, xi) = xi + translation(p) mod 1; it enables closed-form composition.
    """

    kind: str
    forward: Callable
    inverse: Callable
    translation: Callable | None = None
    params: dict = field(default_factory=dict)

    def __call__(self, payload, xi):
        return self.forward(np.atleast_2d(payload), np.asarray(xi, dtype=float))


def _translating(kind, amount, params):
    def fwd(p, xi):
        return np.mod(xi + amount(p), 1.0)

    def inv(p, xi):
        return np.mod(xi - amount(p), 1.0)

    return DrivingSystem(kind, fwd, inv, translation=amount, params=params)


def identity():
    return _translating("identity", lambda p: np.zeros(len(p)), {})


def quasiperiodic_shift(rho):
    rho = float(rho)
    return _translating("quasiperiodic_shift", lambda p: np.full(len(p), rho), {"rho": rho})


def random_rotation(tau=0.0, component=0):
    """xi -> xi + alpha(omega) + tau, with alpha read from a payload component."""
    tau = float(tau)
    return _translating("random_rotation", lambda p: p[:, component] + tau,
                        {"tau": tau, "component": component})


def custom(forward, inverse, translation=None, **params):
    return DrivingSystem("custom", forward, inverse, translation, params)


def circle_distance(a, b):
    d = np.abs(np.mod(np.asarray(a) - np.asarray(b), 1.0))
    return np.minimum(d, 1.0 - d)


def check_homeomorphism(driving: DrivingSystem, payloads: np.ndarray, grid: int = 1000):
    """Grid test of g(p, .) for each payload row.

    Returns ``(monotone, max_inverse_error)``: monotone is True when every
    lift increment lies in (0, 1) and the increments sum to one turn.
    """
    payloads = np.atleast_2d(payloads)
    xi = np.arange(grid) / grid
    monotone = True
    worst = 0.0
    for p in payloads:
        rows = np.broadcast_to(p, (grid, len(p)))
        image = driving.forward(rows, xi)
        inc = np.mod(np.diff(np.append(image, image[0])), 1.0)
        if np.any(inc <= 0.0) or abs(inc.sum() - 1.0) > 1e-9:
            monotone = False
        back = driving.inverse(rows, image)
        worst = max(worst, float(np.max(circle_distance(back, xi))))
    return monotone, worst


# -- random points -------------------------------------------------------------

def constant_point(value):
    value = float(value) % 1.0
    return lambda p: np.full(len(p), value)


def payload_point(component=0):
    return lambda p: np.mod(p[:, component], 1.0)


# -- grid sets -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GridSet:
    resolution: int
    occupancy: np.ndarray

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=bool)
        if occ.shape != (self.resolution,):
            raise ConfigurationError("occupancy length must equal the resolution")
        occ.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)

    @classmethod
    def from_points(cls, xi, G):
        occ = np.zeros(G, dtype=bool)
        occ[cell_index(xi, G)] = True
        return cls(G, occ)

    @classmethod
    def from_cells(cls, cells, G):
        occ = np.zeros(G, dtype=bool)
        occ[np.asarray(cells, dtype=int) % G] = True
        return cls(G, occ)

    def __eq__(self, other):
        return (isinstance(other, GridSet) and self.resolution == other.resolution
                and np.array_equal(self.occupancy, other.occupancy))

    def __or__(self, other):
        return GridSet(self.resolution, self.occupancy | other.occupancy)

    def issubset(self, other):
        return bool(np.all(~self.occupancy | other.occupancy))

    @property
    def count(self):
        return int(self.occupancy.sum())

    @property
    def fills(self):
        return bool(self.occupancy.all())

    def cells(self):
        return np.flatnonzero(self.occupancy)

    def max_gap(self):
        """Longest circular run of empty cells, in circle length."""
        occ = self.occupancy
        if not occ.any():
            return 1.0
        if occ.all():
            return 0.0
        start = int(np.flatnonzero(occ)[0])
        rolled = np.roll(~occ, -start)
        best = run = 0
        for empty in rolled:
            run = run + 1 if empty else 0
            best = max(best, run)
        return best / self.resolution

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cell_index", "occupied"])
        for i, o in enumerate(self.occupancy):
            w.writerow([i, int(o)])
        return buf.getvalue()


def cell_index(xi, G):
    return np.minimum((np.mod(np.asarray(xi, dtype=float), 1.0) * G).astype(np.int64), G - 1)


def cell_centres(G):
    return (np.arange(G) + 0.5) / G


# -- orbits of the driving -------------------------------------------------------

def drive_path(payloads: np.ndarray, driving: DrivingSystem, xi0) -> np.ndarray:
    """Points xi_0, ..., xi_n along consecutive payload rows (n = len(payloads))."""
    n = len(payloads)
    xi0 = float(xi0)
    if driving.translation is not None:
        steps = driving.translation(payloads) if n else np.zeros(0)
        return np.mod(xi0 + np.concatenate([[0.0], np.cumsum(steps)]), 1.0)
    path = np.empty(n + 1)
    path[0] = xi0
    x = np.array([xi0])
    for j in range(n):
        x = driving.forward(payloads[j:j + 1], x)
        path[j + 1] = x[0]
    return path


def drive_forward(orbit: BaseOrbit, driving: DrivingSystem, xi0, n: int) -> float:
    """g_{theta^{n-1} omega} o ... o g_omega (xi0)."""
    return float(drive_path(orbit.block(0, n), driving, xi0)[-1])


def drive_backward(orbit: BaseOrbit, driving: DrivingSystem, xi, n: int, start: int = 0):
    """Preimage of ``xi`` (array) at relative time ``start`` under n driving steps."""
    block = orbit.block(start - n, n)
    x = np.array(xi, dtype=float, copy=True)
    for j in range(n - 1, -1, -1):
        x = driving.inverse(np.broadcast_to(block[j], (x.size, block.shape[1])), x.ravel()).reshape(x.shape)
    return x


def pullback_points(orbit: BaseOrbit, driving: DrivingSystem, point: Callable,
                    burn_in: int, horizon: int):
    """xi_n(omega) = g^n_{theta^{-n} omega}(xi(theta^{-n} omega)) for burn_in <= n <= horizon.

    Returns ``(ns, values)``.
    """
    if horizon < burn_in or burn_in < 0:
        raise ConfigurationError("need 0 <= burn_in <= horizon")
    past = orbit.block(-horizon, horizon)  # rows at relative times -horizon..-1
    ns = np.arange(burn_in, horizon + 1)
    here = orbit.block(0, 1)
    # starting payload for each n is the row at -n; n = 0 uses the origin itself
    start_rows = np.concatenate([past, here])[horizon - ns]
    x = np.mod(np.asarray(point(start_rows), dtype=float), 1.0)
    if driving.translation is not None:
        amounts = driving.translation(past)[::-1]  # index j-1 <-> time -j
        suffix = np.concatenate([[0.0], np.cumsum(amounts)])
        return ns, np.mod(x + suffix[ns], 1.0)
    for j in range(horizon, 0, -1):
        active = ns >= j
        if active.any():
            row = past[horizon - j]
            x[active] = driving.forward(np.broadcast_to(row, (active.sum(), len(row))), x[active])
    return ns, x


def omega_limit(orbit: BaseOrbit, driving: DrivingSystem, point: Callable, G: int,
                burn_in: int, horizon: int) -> GridSet:
    """Cells visited by xi_n(omega) for burn_in <= n <= horizon."""
    _, xs = pullback_points(orbit, driving, point, burn_in, horizon)
    return GridSet.from_points(xs, G)


def subsection_omega_limit(orbits: Sequence[BaseOrbit], driving: DrivingSystem, point: Callable,
                           selector: Callable, G: int, horizon: int, burn_in: int = 0) -> GridSet:
    """Cells visited by the subsection orbit, restricted to pasts where ``selector`` fires.

    ``selector`` receives payload rows at time -n and returns booleans.
    """
    if isinstance(orbits, BaseOrbit):
        orbits = [orbits]
    occ = np.zeros(G, dtype=bool)
    fired = total = 0
    for orbit in orbits:
        ns, xs = pullback_points(orbit, driving, point, burn_in, horizon)
        rows = np.concatenate([orbit.block(-horizon, horizon), orbit.block(0, 1)])[horizon - ns]
        keep = np.asarray(selector(rows), dtype=bool).reshape(-1)
        occ[cell_index(xs[keep], G)] = True
        fired += int(keep.sum())
        total += len(keep)
    if fired == 0:
        raise EmptySubsectionError("selector never fired within the horizon")
    if fired < 0.01 * total:
        warnings.warn(f"selector fired on only {fired}/{total} pasts", RuntimeWarning, stacklevel=2)
    return GridSet(G, occ)


@dataclass
class MinimalityVerdict:
    fills: bool
    max_gap: float
    gaps: list


def minimality_diagnostic(orbits: Sequence[BaseOrbit], driving: DrivingSystem, trials: int,
                          G: int, horizon: int, points=None, burn_in=None) -> MinimalityVerdict:
    """Fill / gap statistics of omega-limit sets over trial orbits.

    A diagnostic only: filling every cell is evidence for, never proof of,
    random minimality.
    """
    if trials < 1:
        raise ConfigurationError("trials must be >= 1")
    if len(orbits) < trials:
        raise ConfigurationError(f"{trials} trials requested but only {len(orbits)} orbits given")
    if points is None:
        points = [constant_point(0.0), constant_point(0.5)]
    if burn_in is None:
        burn_in = horizon // 100
    gaps = []
    fills = True
    for orbit in orbits[:trials]:
        for pt in points:
            gs = omega_limit(orbit, driving, pt, G, burn_in, horizon)
            fills = fills and gs.fills
            gaps.append(gs.max_gap())
    return MinimalityVerdict(fills, max(gaps), gaps)


def _arc_overlap(start, length, lo, hi):
    """Overlap length between the arc [start, start+length) and [lo, hi) on the circle."""
    total = 0.0
    for shift in (-1.0, 0.0, 1.0):
        a, b = start + shift, start + shift + length
        total += max(0.0, min(b, hi) - max(a, lo))
    return total


def transitivity_T1_probe(orbit: BaseOrbit, driving: DrivingSystem, U: GridSet, V: GridSet,
                          horizon: int, tol: float = 1e-12):
    """Least n <= horizon with (theta x g)^n(U) meeting V in positive length, else None."""
    G = U.resolution
    if U.count == 0 or V.count == 0:
        raise ConfigurationError("U and V must be non-empty")
    lo = U.cells() / G
    hi = (U.cells() + 1) / G
    v_lo = V.cells() / V.resolution
    v_hi = (V.cells() + 1) / V.resolution
    for n in range(horizon + 1):
        if n > 0:
            row = np.broadcast_to(orbit.payload(n - 1), (len(lo), orbit.dimension))
            lo = driving.forward(row, lo)
            hi = driving.forward(row, hi)
        length = np.mod(hi - lo, 1.0)
        length[length <= tol] = 1.0  # a cell mapped onto (almost) the whole circle
        for s, L in zip(lo, length):
            for a, b in zip(v_lo, v_hi):
                if _arc_overlap(s, L, a, b) > tol:
                    return n
    return None


def weyl_sums(xi, M: int):
    """(m, |(1/n) sum_j exp(2 pi i m xi_j)|) for m = 1..M."""
    xi = np.asarray(xi, dtype=float)
    ms = np.arange(1, M + 1)
    mod = np.abs(np.exp(2j * np.pi * np.outer(ms, xi)).mean(axis=1))
    return list(zip(ms.tolist(), mod.tolist()))
