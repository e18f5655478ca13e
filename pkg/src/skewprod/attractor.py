"""Pullback approximation of invariant random compact sets and their diagnostics.

A random compact set K is stored extensionally: for every sampled base time
t and every cell of a uniform xi-grid, a finite cloud of points in R^d
approximating the fibre K(theta^t omega, xi_cell).
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import cdist, pdist

from .base import BaseOrbit
from .driving import cell_centres
from .errors import (ConfigurationError, DegenerateFibreError, DomainError,
                     OracleInapplicableError)
from .skew import SkewSystem, iterate, run_cocycle

ESCAPE = 1e100


@dataclass(frozen=True, eq=False)
class RandomSetApprox:
    """Fibre clouds ``clouds[i, c]`` (S points in R^d) at base time ``times[i]``, cell c."""

    orbit: BaseOrbit
    times: np.ndarray
    G: int
    clouds: np.ndarray  # (T, G, S, d)
    depth: int
    seed_box: tuple = ()
    norm: str = "spectral"

    @property
    def d(self):
        return self.clouds.shape[-1]

    @property
    def xi(self):
        return cell_centres(self.G)

    def time_index(self, t):
        hits = np.flatnonzero(self.times == t)
        if not len(hits):
            raise ConfigurationError(f"time {t} not in the approximation")
        return int(hits[0])

    def time_indices(self, ts):
        ts = np.asarray(ts, dtype=int).reshape(-1)
        idx = np.clip(np.searchsorted(self.times, ts), 0, len(self.times) - 1)
        missing = self.times[idx] != ts
        if np.any(missing):
            raise ConfigurationError(f"time {int(ts[missing][0])} not in the approximation")
        return idx

    def cloud(self, t, cell):
        return self.clouds[self.time_index(t), cell]

    def diameter(self):
        lo = self.clouds.min(axis=2)
        hi = self.clouds.max(axis=2)
        return float(np.max(np.linalg.norm(hi - lo, axis=-1)))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "cell_index", "point_index"] + [f"y{k}" for k in range(self.d)])
        for i, t in enumerate(self.times):
            for c in range(self.G):
                for j, pt in enumerate(self.clouds[i, c]):
                    w.writerow([int(t), c, j] + [format(float(v), ".17g") for v in pt])
        return buf.getvalue()

    def manifest(self, **extra):
        return {"grid": self.G, "depth": self.depth, "seed": self.orbit.seed,
                "times": [int(t) for t in self.times], "seed_box": [list(map(float, b)) for b in self.seed_box],
                "samples_per_cell": int(self.clouds.shape[2]), "norm": self.norm, **extra}


def _sort_cloud(cloud):
    order = np.lexsort(cloud.T[::-1])
    return cloud[order]


def _seed_points(box, samples, d):
    lo, hi = (np.asarray(b, dtype=float).reshape(d) for b in box)
    if np.any(hi < lo) or np.allclose(hi, lo) and samples > 1:
        raise ConfigurationError("empty seed box")
    if d == 1:
        return (lo + (hi - lo) * (np.arange(samples) + 0.5) / samples).reshape(samples, 1)
    u = np.random.default_rng(0).random((samples, d))
    return lo + (hi - lo) * u


def _box(seed_box, d):
    lo, hi = seed_box
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (d,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (d,))
    return tuple(lo), tuple(hi)


def pullback(system: SkewSystem, orbit: BaseOrbit, depth: int, seed_box, samples: int, G: int,
             times: Sequence[int] = (0,)) -> RandomSetApprox:
    """Images at each target time t of a seed grid started at time t - depth.

    For target cell xi_c the start point in xi is the depth-step driving
    preimage of xi_c, so every cloud lands exactly on its cell centre.
    """
    if samples < 1 or G < 1 or depth < 0:
        raise ConfigurationError("samples, G must be positive and depth non-negative")
    d = system.d
    box = _box(seed_box, d)
    seeds = _seed_points(box, samples, d)
    times = np.asarray(sorted(set(int(t) for t in times)), dtype=int)
    T = len(times)
    P = orbit.blocks(times - depth, depth)  # (T, depth, dim)
    xi = np.broadcast_to(cell_centres(G), (T, G)).copy()
    for j in range(depth - 1, -1, -1):
        rows = np.repeat(P[:, j], G, axis=0)
        xi = system.driving.inverse(rows, xi.ravel()).reshape(T, G)
    xi0 = np.repeat(xi.ravel(), samples)
    y0 = np.tile(seeds, (T * G, 1))
    with np.errstate(over="ignore", invalid="ignore"):
        _, y = iterate(system, np.repeat(P, G * samples, axis=0), xi0, y0)
    if not np.all(np.isfinite(y)) or np.any(np.abs(y) > ESCAPE):
        raise DegenerateFibreError("pullback escaped to infinity; the seed box misses the attractor")
    y = y.reshape(T * G, samples, d)
    if d == 1:
        clouds = np.sort(y, axis=1).reshape(T, G, samples, d)
    else:
        clouds = np.stack([_sort_cloud(c) for c in y]).reshape(T, G, samples, d)
    clouds.setflags(write=False)
    return RandomSetApprox(orbit, times, G, clouds, depth, box, system.norm)


@dataclass
class GraphEstimate:
    times: np.ndarray
    values: np.ndarray  # (T, G, d)
    residual: float

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.values.shape[-1]
        w.writerow(["t", "cell_index"] + [f"phi{k}" for k in range(d)])
        for i, t in enumerate(self.times):
            for c, v in enumerate(self.values[i]):
                w.writerow([int(t), c] + [format(float(x), ".17g") for x in v])
        return buf.getvalue()


def graph_estimate(K: RandomSetApprox, system: SkewSystem) -> GraphEstimate:
    """Cloud centroids as a graph, with its invariance residual."""
    return GraphEstimate(K.times, K.clouds.mean(axis=2), invariance_residual(K, system))


# -- closed-form oracle for the affine family -------------------------------------

def oracle_tail_bound(a_sup, b_sup, m):
    return a_sup ** m * b_sup / (1.0 - a_sup)


def affine_graph_oracle(orbit: BaseOrbit, driving, a, b, xi, m: int, a_sup: float,
                        b_sup: float = 1.0, t: int = 0):
    """Truncated backward series for the invariant graph of y -> a y + b.

    phi(theta^t omega, xi) = sum_{k=1..m} (prod_{j<k} a_{t-j}) b_{t-k}(xi_{-k}),
    with xi_{-k} the k-step driving preimage of xi. The neglected tail is at
    most :func:`oracle_tail_bound`.
    """
    if not a_sup < 1.0:
        raise OracleInapplicableError(f"sup|a| = {a_sup} >= 1; the series need not converge")
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    block = orbit.block(t - m, m)
    x = xi.copy()
    coeff = np.ones_like(x)
    total = np.zeros_like(x)
    for k in range(1, m + 1):
        row = np.broadcast_to(block[m - k], (len(x), block.shape[1]))
        x = driving.inverse(row, x)
        total = total + coeff * b(row, x)
        coeff = coeff * a(row)
    return total


# -- fibre geometry -------------------------------------------------------------

def _as_cloud(A):
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.shape[0] == 0:
        raise DomainError("empty cloud")
    return A


def hausdorff_distance(A, B) -> float:
    """Exact Hausdorff distance between two finite clouds."""
    A, B = _as_cloud(A), _as_cloud(B)
    D = cdist(A, B)
    return float(max(D.min(axis=1).max(), D.min(axis=0).max()))


def cluster(cloud, radius):
    """Single-linkage clusters at ``radius``; returns centroids in canonical order."""
    cloud = _as_cloud(cloud)
    if len(cloud) == 1:
        return cloud.copy()
    if cloud.shape[1] == 1:
        order = np.argsort(cloud[:, 0], kind="stable")
        s = cloud[order, 0]
        breaks = np.flatnonzero(np.diff(s) > radius) + 1
        return np.array([[g.mean()] for g in np.split(s, breaks)])
    labels = fcluster(linkage(cloud, method="single"), t=radius, criterion="distance")
    cents = np.array([cloud[labels == lab].mean(axis=0) for lab in np.unique(labels)])
    return _sort_cloud(cents)


def default_cluster_radius(K: RandomSetApprox, floor: float = 1e-6) -> float:
    """Half the smallest gap seen in a coarse pass at ``floor``, never below ``floor``."""
    seps = [_min_sep(cluster(c, floor)) for c in K.clouds.reshape(-1, *K.clouds.shape[2:])]
    finite = [s for s in seps if np.isfinite(s)]
    return max(floor, 0.5 * min(finite)) if finite else floor


def _min_sep(cents):
    return float(pdist(cents).min()) if len(cents) > 1 else np.inf


@dataclass
class CardinalityReport:
    counts: np.ndarray  # (T, G)
    n: int | str
    cluster_radius: float


def fibre_cardinality(K: RandomSetApprox, cluster_radius: float | None = None) -> CardinalityReport:
    if cluster_radius is None:
        cluster_radius = default_cluster_radius(K)
    if not cluster_radius > 0:
        raise ConfigurationError("cluster radius must be positive")
    T, G = K.clouds.shape[:2]
    counts = np.array([[len(cluster(K.clouds[i, c], cluster_radius)) for c in range(G)]
                       for i in range(T)])
    uniq = np.unique(counts)
    n = int(uniq[0]) if len(uniq) == 1 else "non-constant"
    return CardinalityReport(counts, n, cluster_radius)


def min_separation(K: RandomSetApprox, fibre, cluster_radius: float | None = None) -> float:
    """Smallest distance between cluster centroids of fibre ``(t, cell)``; inf for singletons."""
    t, cell = fibre
    if cluster_radius is None:
        cluster_radius = default_cluster_radius(K)
    return _min_sep(cluster(K.cloud(t, cell), cluster_radius))


# -- covering numbers ------------------------------------------------------------

def covering_number(cloud, eps: float, C_value: float = 0.0) -> int:
    """Number of open balls of radius eps * exp(C_value), centred at cloud points.

    In one dimension a sweep places each ball at the right-most point that
    still covers the left-most uncovered point, which is optimal. Otherwise
    balls are centred at uncovered points in canonical order (an upper bound
    within a small factor of the optimum).
    """
    if not eps > 0:
        raise ConfigurationError("eps must be positive")
    R = eps * np.exp(C_value)
    pts = _as_cloud(cloud)
    if pts.shape[1] == 1:
        s = np.sort(pts[:, 0])
        count, i, n = 0, 0, len(s)
        while i < n:
            j = np.searchsorted(s, s[i] + R, side="left") - 1  # last point with x - s[i] < R
            centre = s[j]
            i = int(np.searchsorted(s, centre + R, side="left"))
            count += 1
        return count
    pts = _sort_cloud(pts)
    covered = np.zeros(len(pts), dtype=bool)
    count = 0
    for i in range(len(pts)):
        if covered[i]:
            continue
        covered |= np.linalg.norm(pts - pts[i], axis=1) < R
        count += 1
    return count


def epsilon_ladder(r, eta, p_max):
    return [r * np.exp(-p * eta) for p in range(p_max + 1)]


def driven_cell(K: RandomSetApprox, driving, t, cells, k=1):
    """Nearest grid cell to g^k(xi_cell) along the payloads from time t."""
    xi = K.xi[np.asarray(cells)]
    block = K.orbit.block(t, k)
    for j in range(k):
        xi = driving.forward(np.broadcast_to(block[j], (len(xi), block.shape[1])), xi)
    return np.mod(np.rint(xi * K.G - 0.5).astype(int), K.G)


@dataclass
class CoveringCheck:
    max_violation: int
    order_violation: int
    tested: int


def covering_monotonicity_check(K: RandomSetApprox, system: SkewSystem, ladder, k: int = 1,
                                C_values=None) -> CoveringCheck:
    """Check N_eps(image) <= N_{e^-eta eps}(image) <= N_eps(source) over the ladder.

    ``C_values`` maps base time -> C-hat (default 0); radii at time t are
    eps * exp(C-hat(t)). ``max_violation`` is the largest
    N_eps(image fibre at t + k) - N_eps(fibre at t); ``order_violation`` the
    largest N_eps(image) - N_{e^-eta eps}(image) over consecutive rungs.
    """
    C = {} if C_values is None else dict(C_values)
    worst = order = -10**9
    tested = 0
    for t in K.times:
        if t + k not in set(K.times.tolist()):
            continue
        tgt = driven_cell(K, system.driving, int(t), np.arange(K.G), k)
        c_src, c_img = C.get(int(t), 0.0), C.get(int(t) + k, 0.0)
        for cell in range(K.G):
            src = K.cloud(t, cell)
            img = K.cloud(t + k, tgt[cell])
            counts_img = [covering_number(img, e, c_img) for e in ladder]
            for p, eps in enumerate(ladder):
                worst = max(worst, counts_img[p] - covering_number(src, eps, c_src))
                if p + 1 < len(ladder):
                    order = max(order, counts_img[p] - counts_img[p + 1])
                tested += 1
    if not tested:
        raise ConfigurationError(f"K needs times t and t + {k}")
    return CoveringCheck(int(worst), int(order), tested)


# -- continuity and invariance ----------------------------------------------------

def continuity_modulus_at(K: RandomSetApprox, t) -> float:
    """max over adjacent cells (circularly) of the Hausdorff distance between fibres."""
    clouds = K.clouds[K.time_index(t)]
    if K.G == 1:
        return 0.0
    return max(hausdorff_distance(clouds[c], clouds[(c + 1) % K.G]) for c in range(K.G))


def continuity_modulus(approximations: Sequence[RandomSetApprox], t: int = 0):
    """Moduli at successive grid refinements (e.g. G, 2G, 4G) built with identical seeds."""
    return [continuity_modulus_at(K, t) for K in approximations]


def invariance_residual(K: RandomSetApprox, system: SkewSystem) -> float:
    """max Hausdorff distance between h-images of fibres and the fibre at the driven cell."""
    times = set(K.times.tolist())
    worst = 0.0
    pairs = 0
    for t in K.times:
        if t + 1 not in times:
            continue
        i = K.time_index(t)
        p = K.orbit.block(int(t), 1)
        tgt = driven_cell(K, system.driving, int(t), np.arange(K.G), 1)
        S = K.clouds.shape[2]
        pts = K.clouds[i].reshape(-1, K.d)
        xi = np.repeat(K.xi, S)
        img = system.h(np.broadcast_to(p, (len(pts), p.shape[1])), xi, pts).reshape(K.G, S, K.d)
        for c in range(K.G):
            worst = max(worst, hausdorff_distance(img[c], K.cloud(t + 1, tgt[c])))
        pairs += 1
    if not pairs:
        raise ConfigurationError("K must contain consecutive times t, t + 1")
    return worst


def default_invariance_tol(K: RandomSetApprox) -> float:
    """Nearest-cell slack: the driven point and the nearest cell centre carry fibres that
    differ by at most half the adjacent-cell variation of a continuous fibre map."""
    return 1e-6 + 0.5 * max(continuity_modulus_at(K, t) for t in K.times)


def invariance_gate(K: RandomSetApprox, system: SkewSystem, tol: float) -> bool:
    return invariance_residual(K, system) <= tol


def extra_uniformity_check(system: SkewSystem, K, k: int, eps: float, radii, grid: int = 5):
    """Largest tested r with sup Phi_k on B_r(K) <= sup Phi_k on K + eps, else None.

    ``K`` may be a single approximation or a list over an orbit ensemble. The
    r-neighbourhood uses the max-metric on Xi x R^d and is sampled on a
    ``grid`` x ``grid`` lattice around each cloud point (lattice in xi and
    in every coordinate of y).
    """
    Ks = [K] if isinstance(K, RandomSetApprox) else list(K)
    on_set = -np.inf
    for A in Ks:
        on_set = max(on_set, _sup_phi(system, A, k, 0.0, grid))
    passing = None
    for r in sorted(radii):
        near = max(_sup_phi(system, A, k, r, grid) for A in Ks)
        if near <= on_set + eps:
            passing = r
        else:
            break
    return passing


def _sup_phi(system, K, k, r, grid):
    offsets = np.linspace(-1.0, 1.0, grid + 2)[1:-1] * r if r > 0 else np.zeros(1)
    d = K.d
    best = -np.inf
    for i, t in enumerate(K.times):
        try:
            K.orbit.block(int(t), k)
        except IndexError:
            continue
        S = K.clouds.shape[2]
        pts = K.clouds[i].reshape(-1, d)
        xi = np.repeat(K.xi, S)
        mesh = np.meshgrid(*([offsets] * (d + 1)), indexing="ij")
        deltas = np.stack([m.ravel() for m in mesh], axis=1)  # (q, d + 1)
        xi_all = np.mod((xi[:, None] + deltas[None, :, 0]).ravel(), 1.0)
        y_all = (pts[:, None, :] + deltas[None, :, 1:]).reshape(-1, d)
        P = np.broadcast_to(K.orbit.block(int(t), k), (len(xi_all), k, K.orbit.dimension))
        phi = run_cocycle(system, P, xi_all, y_all)["phi"]
        best = max(best, float(phi.max()))
    return best
