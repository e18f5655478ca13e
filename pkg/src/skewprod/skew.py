"""Double skew products T(omega, xi, y) = (theta omega, g_omega(xi), h_{omega,xi}(y)).

Derivative cocycles are accumulated in batches: a batch is a set of
(orbit, start time) pairs advanced in lock-step, so ensembles cost one numpy
call per time step rather than one per member.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .base import BaseOrbit, BaseSpec, sample_orbit, shift
from .driving import DrivingSystem
from .errors import ConfigurationError, NumericalDomainError

NORMS = ("spectral", "frobenius")
RENORM_EVERY = 32
CHUNK = 4096


@dataclass(frozen=True, eq=False)
class SkewSystem:
    """Fibre map ``h(payload, xi, y)`` with Jacobian ``jac`` on R^d.

    Vectorised shapes: payload (B, dim), xi (B,), y (B, d) -> (B, d) for
    ``h`` and (B, d, d) for ``jac``.
    """

    base: BaseSpec
    driving: DrivingSystem
    h: Callable
    jac: Callable
    d: int = 1
    name: str = "custom"
    norm: str = "spectral"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.norm not in NORMS:
            raise ConfigurationError(f"norm must be one of {NORMS}")
        if int(self.d) < 1:
            raise ConfigurationError("fibre dimension must be positive")

    def with_norm(self, norm):
        return SkewSystem(self.base, self.driving, self.h, self.jac, self.d, self.name, norm,
                          self.params)


@dataclass(frozen=True)
class CocycleResult:
    """Phi_n = log ||D_y h^n||; ``phi_n == -inf`` exactly when the product vanishes."""

    phi_n: float
    matrix_product: np.ndarray
    xi: float
    y: np.ndarray

    @property
    def is_neg_inf(self):
        return self.phi_n == -np.inf


def matrix_norm(M, kind="spectral"):
    """Batched operator 2-norm (or Frobenius norm) over the last two axes."""
    if M.shape[-1] == 1 and M.shape[-2] == 1:
        return np.abs(M[..., 0, 0])
    if kind == "frobenius":
        return np.sqrt(np.sum(M * M, axis=(-2, -1)))
    return np.linalg.norm(M, ord=2, axis=(-2, -1))


class PayloadBatch:
    """Lock-step payload access for (orbit, relative start) pairs."""

    def __init__(self, members, n):
        self.members = list(members)
        self.n = int(n)
        for orbit, start in self.members:
            orbit.block(start, self.n)  # window check up front

    def __len__(self):
        return len(self.members)

    def rows(self, j0, j1):
        return np.stack([o.block(s + j0, j1 - j0) for o, s in self.members])


class ArrayBatch:
    def __init__(self, P):
        self.P = np.asarray(P, dtype=float)
        self.n = self.P.shape[1]

    def __len__(self):
        return self.P.shape[0]

    def rows(self, j0, j1):
        return self.P[:, j0:j1]


def _as_batch(P):
    return P if hasattr(P, "rows") else ArrayBatch(P)


def _batch_states(y0, B, d):
    """Scalar, (d,), (B,) when d == 1, or (B, d) -> (B, d)."""
    y = np.asarray(y0, dtype=float)
    if y.ndim == 0:
        return np.full((B, d), float(y))
    if y.ndim == 1:
        if len(y) == d:
            return np.broadcast_to(y, (B, d)).copy()
        if d == 1 and len(y) == B:
            return y.reshape(B, 1).copy()
        raise ConfigurationError(f"cannot broadcast initial states of shape {y.shape}")
    return np.broadcast_to(y, (B, d)).copy()


def _check_finite(arr, step, what):
    if np.isnan(arr).any():
        raise NumericalDomainError(f"NaN in {what}", step=step)


def run_cocycle(system: SkewSystem, P, xi0, y0, series=False, states=False):
    """Advance a batch n steps, accumulating the fibre derivative.

    ``P`` is a (B, n, dim) payload array or a :class:`PayloadBatch`.
    Returns a dict with ``phi`` (B,) or, with ``series=True``, (B, n) holding
    Phi_1..Phi_n; the unit-norm ``direction`` and ``log_scale`` of the product;
    final ``xi`` and ``y``; and with ``states=True`` the full (B, n+1) / (B, n+1, d)
    trajectories.
    """
    batch = _as_batch(P)
    B, n, d = len(batch), batch.n, system.d
    xi = np.broadcast_to(np.asarray(xi0, dtype=float), (B,)).copy()
    y = _batch_states(y0, B, d)
    M = np.broadcast_to(np.eye(d), (B, d, d)).copy()
    log_scale = np.zeros(B)
    dead = np.zeros(B, dtype=bool)
    out = np.empty((B, n)) if series else None
    if states:
        xi_path = np.empty((B, n + 1))
        y_path = np.empty((B, n + 1, d))
        xi_path[:, 0] = xi
        y_path[:, 0] = y
    with np.errstate(divide="ignore"):
        for j0 in range(0, n, CHUNK):
            j1 = min(n, j0 + CHUNK)
            rows = batch.rows(j0, j1)
            for jj in range(j1 - j0):
                j = j0 + jj
                p = rows[:, jj]
                J = system.jac(p, xi, y)
                _check_finite(J, j, "fibre Jacobian")
                y_new = system.h(p, xi, y)
                _check_finite(y_new, j, "fibre map")
                xi = system.driving.forward(p, xi)
                y = y_new
                M = J @ M if d > 1 else J * M
                if series or (j + 1) % RENORM_EVERY == 0 or j == n - 1:
                    s = matrix_norm(M, system.norm)
                    zero = s == 0.0
                    dead |= zero
                    s = np.where(zero, 1.0, s)
                    log_scale += np.log(s)
                    M = M / s[:, None, None]
                    if series:
                        out[:, j] = np.where(dead, -np.inf, log_scale)
                if states:
                    xi_path[:, j + 1] = xi
                    y_path[:, j + 1] = y
    log_scale = np.where(dead, -np.inf, log_scale)
    res = {"phi": out if series else log_scale, "direction": M, "log_scale": log_scale,
           "xi": xi, "y": y}
    if states:
        res["xi_path"] = xi_path
        res["y_path"] = y_path
    return res


def apply_T(system: SkewSystem, orbit: BaseOrbit, state):
    """One step of T; returns the shifted orbit and the new (xi, y)."""
    xi, y = state
    p = np.atleast_2d(orbit.payload(0))
    nxt = shift(orbit, 1)
    y = np.asarray(y, dtype=float).reshape(1, system.d)
    xi_arr = np.array([float(xi)])
    y_new = system.h(p, xi_arr, y)[0]
    xi_new = float(system.driving.forward(p, xi_arr)[0])
    return nxt, (xi_new, y_new)


def cocycle(system: SkewSystem, orbit: BaseOrbit, xi0, y0, n: int) -> CocycleResult:
    """Phi_n at (orbit origin, xi0, y0) together with the derivative product."""
    res = run_cocycle(system, orbit.block(0, n)[None], xi0, y0)
    with np.errstate(over="ignore", under="ignore"):
        product = res["direction"][0] * np.exp(res["log_scale"][0])
    if res["log_scale"][0] == -np.inf:
        product = np.zeros((system.d, system.d))
    return CocycleResult(float(res["phi"][0]), product, float(res["xi"][0]), res["y"][0])


def trajectory(system: SkewSystem, orbit: BaseOrbit, xi0, y0, n: int, start: int = 0):
    """States (xi_k, y_k), k = 0..n, from relative time ``start``."""
    res = run_cocycle(system, orbit.block(start, n)[None], xi0, y0, states=True)
    return res["xi_path"][0], res["y_path"][0]


@dataclass
class LyapunovReport:
    mean: float
    stderr: float
    values: np.ndarray
    n: int
    n_neg_inf: int
    sampling: str
    norm: str

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample_id", "n", "phi_n", "lambda_hat"])
        for i, v in enumerate(self.values):
            w.writerow([i, self.n, _fmt(v * self.n), _fmt(v)])
        return buf.getvalue()


def _fmt(x):
    x = float(x)
    if x == -np.inf:
        return "-inf"
    if x == np.inf:
        return "inf"
    return format(x, ".17g")


def lyapunov_estimate(system: SkewSystem, samples: Sequence, n: int,
                      sampling: str = "seed_box") -> LyapunovReport:
    """Ensemble estimate of the maximal exponent.

    ``samples`` holds (orbit, xi0, y0) triples; every sample starts at its
    orbit's origin. ``sampling`` labels how the initial states were drawn
    ("seed_box" or "pullback").
    """
    if not samples:
        raise ConfigurationError("empty ensemble")
    batch = PayloadBatch([(o, 0) for o, _, _ in samples], n)
    xi0 = np.array([float(x) for _, x, _ in samples])
    y0 = np.array([np.broadcast_to(np.asarray(y, dtype=float), (system.d,)) for _, _, y in samples])
    phi = run_cocycle(system, batch, xi0, y0)["phi"]
    values = phi / n
    finite = np.isfinite(values)
    m = int(finite.sum())
    mean = float(values[finite].mean()) if m else -np.inf
    stderr = float(values[finite].std(ddof=1) / np.sqrt(m)) if m > 1 else 0.0
    return LyapunovReport(mean, stderr, values, n, int((~finite).sum()), sampling, system.norm)


def graph_lyapunov(system: SkewSystem, orbit: BaseOrbit, graph: Callable, n: int,
                   xi0: float = 0.0) -> float:
    """Phi_n / n started on the graph point (xi0, graph(orbit, xi0))."""
    y0 = np.asarray(graph(orbit, xi0), dtype=float).reshape(system.d)
    return cocycle(system, orbit, xi0, y0, n).phi_n / n


def clamp_subadditive(phi_values, lambda_prime: float) -> np.ndarray:
    """Phi'_n = max(n * lambda', Phi_n) for n = 1, 2, ...; -inf maps to n * lambda'."""
    if not np.isfinite(lambda_prime):
        raise ConfigurationError("lambda' must be finite")
    phi = np.asarray(phi_values, dtype=float)
    floor = lambda_prime * np.arange(1, len(phi) + 1)
    return np.maximum(floor, phi)


def subadditivity_check(system: SkewSystem, orbit: BaseOrbit, xi0, y0, pairs) -> float:
    """max over (n, m) of Phi_{n+m} - (Phi_n o T^m + Phi_m); <= 0 in exact arithmetic."""
    pairs = [(int(a), int(b)) for a, b in pairs]
    if not pairs:
        return 0.0
    total = max(a + b for a, b in pairs)
    ms = sorted({b for _, b in pairs})
    n_max = max(a for a, _ in pairs)
    xi_path, y_path = trajectory(system, orbit, xi0, y0, max(ms))
    base_series = run_cocycle(system, orbit.block(0, total)[None], xi0, y0, series=True)["phi"][0]
    batch = PayloadBatch([(orbit, m) for m in ms], n_max)
    later = run_cocycle(system, batch, xi_path[ms], y_path[ms], series=True)["phi"]
    row = {m: i for i, m in enumerate(ms)}
    worst = -np.inf
    for n, m in pairs:
        lhs = base_series[n + m - 1]
        phi_m = base_series[m - 1] if m > 0 else 0.0
        phi_n_shift = later[row[m], n - 1] if n > 0 else 0.0
        rhs = phi_n_shift + phi_m
        if lhs == -np.inf:
            v = -np.inf
        elif rhs == -np.inf:
            v = np.inf
        else:
            v = lhs - rhs
        worst = max(worst, v)
    return float(worst)


def check_jacobian(system: SkewSystem, probes: int = 1000, seed: int = 0, box=(-3.0, 3.0),
                   step: float = 1e-6, y_sampler: Callable | None = None) -> float:
    """Worst relative deviation of ``jac`` from a central finite-difference Jacobian.

    Deviations are scaled by max(|J|, 1) entrywise. ``y_sampler(u)`` maps
    uniforms in [0,1)^d to probe points, defaulting to the box.
    """
    rng = np.random.default_rng(seed)
    orbit = sample_orbit(system.base, probes, seed)
    p = orbit.payloads[:probes]
    xi = rng.random(probes)
    u = rng.random((probes, system.d))
    y = y_sampler(u) if y_sampler is not None else box[0] + (box[1] - box[0]) * u
    J = system.jac(p, xi, y)
    fd = np.empty_like(J)
    for k in range(system.d):
        hk = step * np.maximum(1.0, np.abs(y[:, k]))
        e_k = np.zeros_like(y)
        e_k[:, k] = hk
        fd[:, :, k] = (system.h(p, xi, y + e_k) - system.h(p, xi, y - e_k)) / (2 * hk[:, None])
    return float(np.max(np.abs(fd - J) / np.maximum(np.abs(J), 1.0)))


def iterate(system: SkewSystem, P: np.ndarray, xi0, y0):
    """Advance states through a (B, n, dim) payload block without derivatives."""
    P = np.asarray(P, dtype=float)
    B, n = P.shape[:2]
    xi = np.broadcast_to(np.asarray(xi0, dtype=float), (B,)).copy()
    y = _batch_states(y0, B, system.d)
    for j in range(n):
        p = P[:, j]
        y = system.h(p, xi, y)
        _check_finite(y, j, "fibre map")
        xi = system.driving.forward(p, xi)
    return xi, y
