"""Adjusted bounding variables and checks of the semiuniform estimates.

All suprema over n are truncated at ``N_max``. A supremum attained at the
boundary is reported (and warned about) instead of being silently accepted.
"""
from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .attractor import RandomSetApprox
from .base import BaseOrbit
from .errors import ConfigurationError, TruncationWarning
from .skew import SkewSystem, iterate, run_cocycle

TOL = 1e-9
NEVER = -1


def fibre_points(K: RandomSetApprox, t):
    """All (xi, y) points of K at base time t, in canonical cell/cloud order."""
    i = K.time_index(t)
    S = K.clouds.shape[2]
    return np.repeat(K.xi, S), K.clouds[i].reshape(-1, K.d)


def phi_on_points(system: SkewSystem, orbit: BaseOrbit, t: int, xi, y, n: int) -> np.ndarray:
    """Phi_1..Phi_n started at each point (xi_i, y_i) at relative time t; shape (B, n)."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    block = orbit.block(t, n)
    P = np.broadcast_to(block, (len(xi),) + block.shape)
    return run_cocycle(system, P, xi, np.asarray(y, dtype=float).reshape(len(xi), system.d),
                       series=True)["phi"]


def phi_sup_K_series(system: SkewSystem, K: RandomSetApprox, t: int, n: int) -> np.ndarray:
    """Phi^K_m(theta^t omega) = max over K(theta^t omega) of Phi_m, for m = 1..n."""
    xi, y = fibre_points(K, t)
    return phi_on_points(system, K.orbit, t, xi, y, n).max(axis=0)


def phi_sup_K(system: SkewSystem, orbit: BaseOrbit, xi, y, n: int, t: int = 0) -> float:
    """max over the cloud {(xi_i, y_i)} of Phi_n, started at relative time t."""
    return float(phi_on_points(system, orbit, t, xi, y, n)[:, -1].max())


def phi_K_table(system: SkewSystem, K: RandomSetApprox, n: int, times=None) -> np.ndarray:
    """(len(times), n) table of Phi^K_m at each requested time, batched in one pass."""
    times = K.times if times is None else np.asarray(times, dtype=int)
    idx = K.time_indices(times)
    S = K.clouds.shape[2]
    per = K.G * S
    P = np.repeat(K.orbit.blocks(times, n), per, axis=0)
    xi = np.tile(np.repeat(K.xi, S), len(times))
    y = K.clouds[idx].reshape(-1, K.d)
    phi = run_cocycle(system, P, xi, y, series=True)["phi"]
    return phi.reshape(len(times), per, n).max(axis=1)


def _lex_argmax(xi, y, vals):
    best = np.flatnonzero(vals == vals.max())
    keys = [y[best, k] for k in range(y.shape[1] - 1, -1, -1)] + [xi[best]]
    return best[np.lexsort(keys)[0]]


def argmax_on_fibre(system: SkewSystem, orbit: BaseOrbit, xi, y, n: int, t: int = 0):
    """A cloud point maximising Phi_n; ties go to the lexicographically smallest (xi, y)."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    y = np.asarray(y, dtype=float).reshape(len(xi), system.d)
    vals = phi_on_points(system, orbit, t, xi, y, n)[:, -1]
    i = _lex_argmax(xi, y, vals)
    return float(xi[i]), y[i].copy()


@dataclass
class SupResult:
    values: np.ndarray
    argmax: np.ndarray
    interior: np.ndarray

    @property
    def all_interior(self):
        return bool(np.all(self.interior))


def _sup_with_zero(partial, N_max, what):
    """sup over n = 0..N_max of partial[..., n-1] (0 at n = 0)."""
    full = np.concatenate([np.zeros(partial.shape[:-1] + (1,)), partial], axis=-1)
    arg = np.argmax(full, axis=-1)
    vals = np.take_along_axis(full, arg[..., None], axis=-1)[..., 0]
    interior = arg < N_max
    if not np.all(interior):
        warnings.warn(f"{what}: supremum attained at the truncation boundary N_max={N_max} "
                      f"for {int((~interior).sum())} entries", TruncationWarning, stacklevel=3)
    return SupResult(vals, arg, interior)


def compute_C(phi_K, lambda_prime: float, N_max: int | None = None) -> SupResult:
    """C = max_{0<=n<=N_max} (Phi^K_n - n lambda') with Phi^K_0 = 0.

    ``phi_K`` has shape (..., N) holding Phi^K_1..Phi^K_N at each base time.
    """
    phi = np.asarray(phi_K, dtype=float)
    N_max = phi.shape[-1] if N_max is None else int(N_max)
    phi = phi[..., :N_max]
    n = np.arange(1, N_max + 1)
    with np.errstate(invalid="ignore"):
        partial = np.maximum(phi, lambda_prime * n) - lambda_prime * n  # clamp keeps -inf out
    return _sup_with_zero(partial, N_max, "C")


def compute_C_hat_k(phi_k, times, k: int, lambda_prime: float, N_max: int,
                    variant: str = "nonneg") -> SupResult:
    """C-hat_k at each of ``times`` from Phi^K_k values along the orbit.

    ``phi_k`` maps base time -> Phi^K_k there. The nonneg variant sums over
    the past (times t - jk, j = 1..n); the nonpos variant over the future
    (t + jk, j = 0..n-1) and is negated.
    """
    if variant not in ("nonneg", "nonpos"):
        raise ConfigurationError("variant must be 'nonneg' or 'nonpos'")
    js = np.arange(1, N_max + 1) if variant == "nonneg" else np.arange(0, N_max)
    sign = -1 if variant == "nonneg" else 1
    try:
        vals = np.array([[phi_k[int(t) + sign * j * k] for j in js] for t in times], dtype=float)
    except KeyError as exc:
        raise ConfigurationError(f"Phi_k^K missing at time {exc.args[0]}") from None
    vals = np.where(np.isneginf(vals), k * lambda_prime, vals)  # clamp rule for -inf
    partial = np.cumsum(vals - lambda_prime * k, axis=-1)
    res = _sup_with_zero(partial, N_max, f"C-hat_{k}")
    if variant == "nonpos":
        res.values = -res.values
    return res


@dataclass
class Violation:
    seed: int
    t: int
    n: int
    excess: float


def verify_main_estimate(system: SkewSystem, Ks: Sequence[RandomSetApprox], C_values,
                         lambda_prime: float, N_max: int, tol: float = TOL) -> list[Violation]:
    """All (orbit, t, n) where some cloud point has Phi_n > C(t) + n lambda' + tol.

    ``C_values[i]`` maps base time -> C for orbit ``Ks[i]``.
    """
    out = []
    n = np.arange(1, N_max + 1)
    for K, C in zip(Ks, C_values):
        times = list(C)
        table = phi_K_table(system, K, N_max, times=times) if times else []
        for t, phi in zip(times, table):
            excess = phi - (C[t] + n * lambda_prime)
            for m in np.flatnonzero(excess > tol):
                out.append(Violation(K.orbit.seed, int(t), int(m + 1), float(excess[m])))
    return out


def verify_complement(system: SkewSystem, Ks: Sequence[RandomSetApprox], C_hat, k: int,
                      lambda_prime: float, tol: float = TOL) -> list[Violation]:
    """Violations of Phi_k(t, x) <= C-hat(t + k) - C-hat(t) + k lambda' on K(t)."""
    out = []
    for K, C in zip(Ks, C_hat):
        for t, c in C.items():
            if t + k not in C or t not in set(K.times.tolist()):
                continue
            xi, y = fibre_points(K, t)
            phi = phi_on_points(system, K.orbit, t, xi, y, k)[:, -1].max()
            excess = phi - (C[t + k] - c + k * lambda_prime)
            if excess > tol:
                out.append(Violation(K.orbit.seed, int(t), k, float(excess)))
    return out


def c_increment_violations(C, phi1_K, lambda_prime: float, tol: float = TOL):
    """Times t with C(t+1) - C(t) < min(0, lambda' - Phi^K_1(t)) - tol.

    ``C`` and ``phi1_K`` map base time -> value.
    """
    bad = []
    for t, c in C.items():
        if t + 1 in C and t in phi1_K:
            bound = min(0.0, lambda_prime - phi1_K[t])
            if C[t + 1] - c < bound - tol:
                bad.append((t, C[t + 1] - c - bound))
    return bad


@dataclass
class AdjustednessReport:
    horizons: list
    slopes: list
    adjusted: bool
    tol: float


def adjustedness_slope(C, times, horizons, origin: int = 0, tol: float = 0.01) -> AdjustednessReport:
    """max over the ensemble of |C(origin +- n)| / n for each horizon n.

    ``C`` is an (m, len(times)) array of C values of m orbits at ``times``.
    ``adjusted`` is True when the slope at the largest horizon is <= tol.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    index = {int(t): i for i, t in enumerate(times)}
    slopes = []
    for n in horizons:
        try:
            cols = [index[origin + n], index[origin - n]]
        except KeyError:
            raise ConfigurationError(f"C not available at origin +- {n}") from None
        slopes.append(float(np.max(np.abs(C[:, cols])) / n))
    horizons = list(horizons)
    return AdjustednessReport(horizons, slopes, bool(slopes[-1] <= tol), tol)


def semiuniform_entry_time(phi_K, lam: float, delta: float, lambda_prime: float | None = None):
    """Smallest n with Phi^K_m / m <= lam - delta for every m in [n, N_max]; NEVER if none.

    ``phi_K`` has shape (m, N_max): one Phi^K series per orbit.
    """
    if not delta > 0 or (lambda_prime is not None and not delta < lam - lambda_prime):
        raise ConfigurationError("need 0 < delta < lambda - lambda'")
    phi = np.atleast_2d(np.asarray(phi_K, dtype=float))
    N = phi.shape[1]
    ok = phi / np.arange(1, N + 1) <= lam - delta
    out = np.full(len(phi), NEVER)
    for i, row in enumerate(ok):
        if not row[-1]:
            continue
        bad = np.flatnonzero(~row)
        out[i] = 1 if not len(bad) else int(bad[-1]) + 2
    return out


def sup_lyap_over_K(system: SkewSystem, Ks: Sequence[RandomSetApprox], n: int, t: int = 0):
    """(1/n) ensemble mean of Phi^K_n at time t, with its standard error.

    An upper proxy for the exponents of all invariant measures carried by K.
    """
    vals = np.array([phi_K_table(system, K, n, times=[t])[0, -1] / n for K in Ks])
    stderr = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return float(vals.mean()), stderr


@dataclass
class EmpiricalMeasure:
    xi: np.ndarray
    y: np.ndarray
    weights: np.ndarray
    source_times: np.ndarray


def empirical_fibre_measure(system: SkewSystem, K: RandomSetApprox, n: int, t: int = 0,
                            n_select: int | None = None) -> EmpiricalMeasure:
    """n equally weighted points: the i-step images (i < n) of a Phi-maximising selection at t - i.

    Selections maximise Phi_{n_select} (default n) over K(theta^{t-i} omega).
    Only a finite-n approximation of a maximising measure.
    """
    n_select = n if n_select is None else n_select
    sources = np.arange(t, t - n, -1)
    per = K.G * K.clouds.shape[2]
    dim = K.orbit.dimension
    sel_xi, sel_y = np.empty(n), np.empty((n, system.d))
    chunk = max(1, 2**20 // (per * n_select * dim))
    for lo in range(0, n, chunk):
        batch = sources[lo:lo + chunk]
        xi = np.concatenate([fibre_points(K, s)[0] for s in batch])
        y = np.concatenate([fibre_points(K, s)[1] for s in batch])
        P = np.concatenate([np.broadcast_to(K.orbit.block(int(s), n_select), (per, n_select, dim))
                            for s in batch])
        vals = run_cocycle(system, P, xi, y)["phi"]
        for j in range(len(batch)):
            part = slice(j * per, (j + 1) * per)
            i = _lex_argmax(xi[part], y[part], vals[part])
            sel_xi[lo + j], sel_y[lo + j] = xi[part][i], y[part][i]
    # sweep forward from the oldest source, adding each selection as its time is reached
    xs, ys = np.empty(0), np.empty((0, system.d))
    for j in range(n - 1, -1, -1):
        if len(xs):
            p = K.orbit.block(int(sources[j]) - 1, 1)
            xs, ys = iterate(system, np.broadcast_to(p, (len(xs), 1, dim)), xs, ys)
        xs = np.append(xs, sel_xi[j])
        ys = np.vstack([ys, sel_y[j]])
    return EmpiricalMeasure(xs[::-1].copy(), ys[::-1].copy(), np.full(n, 1.0 / n), sources)


def default_lambda_prime(lam: float, sup_estimate: float) -> float:
    return 0.5 * (lam + sup_estimate)


def default_k(phi_k_means, lambda_prime: float):
    """Smallest k with mean(Phi^K_k) / k < lambda'; ``phi_k_means`` maps k -> mean."""
    for k in sorted(phi_k_means):
        if phi_k_means[k] / k < lambda_prime:
            return k
    return None


@dataclass
class SemiuniformReport:
    lam: float
    lambda_prime: float
    N_max: int
    norm: str
    C: dict = field(default_factory=dict)
    C_interior: bool = True
    C_hat: dict = field(default_factory=dict)
    k: int | None = None
    main_violations: list = field(default_factory=list)
    complement_violations: list = field(default_factory=list)
    increment_violations: list = field(default_factory=list)
    slopes: list = field(default_factory=list)
    horizons: list = field(default_factory=list)
    adjusted: bool = True
    entry_times: list = field(default_factory=list)
    sup_estimate: float | None = None

    @property
    def lambda_order_ok(self):
        return self.lambda_prime < self.lam

    @property
    def passed(self):
        return (self.C_interior and not self.main_violations and not self.complement_violations
                and not self.increment_violations and self.adjusted)

    def to_json(self):
        d = asdict(self)
        d["C"] = {str(k): v for k, v in d["C"].items()}
        d["C_hat"] = {str(k): v for k, v in d["C_hat"].items()}
        d["lambda_order_ok"] = self.lambda_order_ok
        d["passed"] = self.passed
        return json.dumps(d, indent=2, sort_keys=True, default=_jsonable)

    def series_csv(self, phi_K_rows):
        """CSV rows (seed, t, Phi^K_1.., C) from a mapping (seed, t) -> Phi^K series."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        width = max((len(v) for v in phi_K_rows.values()), default=0)
        w.writerow(["seed", "t"] + [f"phiK_{m}" for m in range(1, width + 1)] + ["C"])
        for (seed, t), series in sorted(phi_K_rows.items()):
            c = self.C.get(f"{seed}:{t}", "")
            w.writerow([seed, t] + [format(float(v), ".17g") for v in series]
                       + [format(float(c), ".17g") if c != "" else ""])
        return buf.getvalue()


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))
