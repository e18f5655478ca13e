"""Builtin model families with known analytic facts.

Every entry documents where its facts come from, so the families double as
oracles (affine, two-branch) and as a hypothesis-violating control (the
pinched system, whose attractor is a strange non-chaotic one).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import driving as drv
from .base import GOLDEN_ANGLE, Categorical, Uniform, bernoulli
from .errors import ConfigurationError
from .skew import SkewSystem, check_jacobian

JACOBIAN_TOL = 1e-6


def mean_log_uniform(lo, hi):
    """E log a for a ~ uniform[lo, hi], lo > 0 (closed form of the quadrature)."""
    f = lambda x: x * np.log(x) - x
    return (f(hi) - f(lo)) / (hi - lo)


@dataclass(frozen=True)
class ModelCatalogEntry:
    name: str
    builder: Callable
    defaults: dict
    ranges: dict
    facts: dict = field(default_factory=dict)
    description: str = ""
    probe_sampler: Callable | None = None

    def check(self, params):
        unknown = set(params) - set(self.defaults)
        if unknown:
            raise ConfigurationError(f"{self.name}: unknown parameters {sorted(unknown)}")
        merged = {**self.defaults, **params}
        for key, (lo, hi) in self.ranges.items():
            v = merged[key]
            if not (lo <= v <= hi):
                raise ConfigurationError(f"{self.name}: {key}={v} outside [{lo}, {hi}]")
        return merged


def _driving(kind, rho):
    if kind == "identity":
        return drv.identity()
    if kind == "quasiperiodic":
        return drv.quasiperiodic_shift(rho)
    raise ConfigurationError(f"unknown driving {kind!r}")


def _identity(driving="identity", rho=GOLDEN_ANGLE):
    return SkewSystem(
        base=bernoulli(Uniform(0.2, 0.6)),
        driving=_driving(driving, rho),
        h=lambda p, xi, y: y.copy(),
        jac=lambda p, xi, y: np.ones((len(y), 1, 1)),
        d=1, name="identity",
    )


def _affine(a, b, a_fn, b_fn, a_sup, b_sup, base, driving, name, params):
    def h(p, xi, y):
        return a_fn(p)[:, None] * y + b_fn(p, xi)[:, None]

    def jac(p, xi, y):
        return a_fn(p)[:, None, None] * np.ones((len(y), 1, 1))

    params = dict(params, affine={"a": a_fn, "b": b_fn, "a_sup": a_sup, "b_sup": b_sup})
    return SkewSystem(base, driving, h, jac, 1, name, params=params)


def _affine_const(a=0.5, b=1.0, driving="identity", rho=GOLDEN_ANGLE, b_mode="const"):
    if b_mode == "const":
        b_fn = lambda p, xi: np.full(len(p), b)
        b_sup = abs(b)
    else:
        b_fn = lambda p, xi: b * np.cos(2 * np.pi * np.asarray(xi))
        b_sup = abs(b)
    return _affine(a, b, lambda p: np.full(len(p), a), b_fn, abs(a), b_sup,
                   bernoulli(Categorical((0.0,))), _driving(driving, rho), "affine_const",
                   {"a": a, "b": b, "b_mode": b_mode})


def _affine_random(low=0.2, high=0.6, rho=GOLDEN_ANGLE, driving="quasiperiodic"):
    return _affine(None, None, lambda p: p[:, 0], lambda p, xi: np.cos(2 * np.pi * np.asarray(xi)),
                   max(abs(low), abs(high)), 1.0, bernoulli(Uniform(low, high)),
                   _driving(driving, rho), "affine_random", {"low": low, "high": high, "rho": rho})


def _two_branch(a_plus=0.5, a_minus=0.5, b=1.0, rho=GOLDEN_ANGLE):
    def h(p, xi, y):
        return np.where(y > 0, a_plus * y + b, np.where(y < 0, a_minus * y - b, 0.0))

    def jac(p, xi, y):
        return np.where(y >= 0, a_plus, a_minus)[:, :, None]

    return SkewSystem(bernoulli(Uniform(0.2, 0.6)), drv.quasiperiodic_shift(rho), h, jac, 1,
                      "two_branch", params={"a_plus": a_plus, "a_minus": a_minus, "b": b,
                                            "fixed_points": (b / (1 - a_plus), -b / (1 - a_minus))})


def _pinched_sna(sigma=1.5, rho=GOLDEN_ANGLE):
    def h(p, xi, y):
        return 2 * sigma * np.cos(2 * np.pi * xi)[:, None] * np.tanh(y)

    def jac(p, xi, y):
        return (2 * sigma * np.cos(2 * np.pi * xi)[:, None] / np.cosh(y) ** 2)[:, :, None]

    return SkewSystem(bernoulli(Uniform(0.2, 0.6)), drv.quasiperiodic_shift(rho), h, jac, 1,
                      "pinched_sna", params={"sigma": sigma, "rho": rho})


def _linear_2d(scale=0.6):
    """y -> A(omega) y with i.i.d. entries of A uniform in [-scale, scale]."""
    def mats(p):
        return scale * (2 * p[:, :4] - 1).reshape(-1, 2, 2)

    def h(p, xi, y):
        return np.einsum("bij,bj->bi", mats(p), y)

    def jac(p, xi, y):
        return mats(p)

    return SkewSystem(bernoulli(Uniform(0.0, 1.0), dimension=4), drv.quasiperiodic_shift(GOLDEN_ANGLE),
                      h, jac, 2, "linear_2d", params={"scale": scale})


def _two_branch_probe(u):
    # keep away from the kink at y = 0
    return np.sign(u - 0.5) * (1.0 + 2.0 * np.abs(2 * u - 1))


CATALOG = {
    e.name: e for e in [
        ModelCatalogEntry(
            "identity", _identity, {"driving": "identity", "rho": GOLDEN_ANGLE}, {},
            facts={"exponent": (0.0, "h(y) = y has unit derivative")},
            description="h(y) = y; every state is invariant"),
        ModelCatalogEntry(
            "affine_const", _affine_const,
            {"a": 0.5, "b": 1.0, "driving": "identity", "rho": GOLDEN_ANGLE, "b_mode": "const"},
            {"a": (-0.999, 0.999)},
            facts={"exponent": ("log|a|", "constant derivative a"),
                   "graph": ("b / (1 - a) for constant b", "geometric series"),
                   "cardinality": (1, "global contraction")},
            description="h = a y + b with constant a"),
        ModelCatalogEntry(
            "affine_random", _affine_random,
            {"low": 0.2, "high": 0.6, "rho": GOLDEN_ANGLE, "driving": "quasiperiodic"},
            {"low": (1e-6, 0.999), "high": (1e-6, 0.999)},
            facts={"exponent": (mean_log_uniform(0.2, 0.6),
                                "closed-form quadrature of E log a, a ~ uniform[low, high]"),
                   "graph": ("sum_k prod_{j<k} a_{-j} * cos(2 pi xi_{-k})", "backward series"),
                   "cardinality": (1, "contraction, single continuous graph"),
                   "continuous": (True, "Lipschitz series")},
            description="h = a(omega) y + cos(2 pi xi), a ~ uniform[0.2, 0.6], golden-mean driving"),
        ModelCatalogEntry(
            "two_branch", _two_branch, {"a_plus": 0.5, "a_minus": 0.5, "b": 1.0, "rho": GOLDEN_ANGLE},
            {"a_plus": (1e-6, 0.999), "a_minus": (1e-6, 0.999), "b": (1e-6, 1e6)},
            facts={"exponent": ("log max(a_plus, a_minus)", "derivative at the two fixed points"),
                   "cardinality": (2, "fixed points b/(1-a_plus) and -b/(1-a_minus)"),
                   "separation": ("b/(1-a_plus) + b/(1-a_minus)", "fixed-point arithmetic")},
            description="h = sgn(y)(a|y| + b); smooth away from y = 0 only",
            probe_sampler=_two_branch_probe),
        ModelCatalogEntry(
            "pinched_sna", _pinched_sna, {"sigma": 1.5, "rho": GOLDEN_ANGLE},
            {"sigma": (1e-6, 100.0)},
            facts={"zero_graph_exponent": ("log sigma",
                                           "log(2 sigma) + int_0^1 log|cos 2 pi xi| dxi = log sigma"),
                   "continuous": (False, "strange non-chaotic attractor for sigma > 1; "
                                         "family chosen by this package, not by the theory it checks")},
            description="h = 2 sigma cos(2 pi xi) tanh(y), golden-mean driving"),
        ModelCatalogEntry(
            "linear_2d", _linear_2d, {"scale": 0.6}, {"scale": (1e-6, 10.0)},
            facts={"subadditive": (True, "submultiplicativity of the operator norm")},
            description="y -> A(omega) y with i.i.d. uniform 2x2 entries"),
    ]
}


def list_models():
    return sorted(CATALOG)


def build(name: str, validate: bool = True, **params) -> SkewSystem:
    """Instantiate a catalog entry; the Jacobian is checked against finite differences."""
    try:
        entry = CATALOG[name]
    except KeyError:
        raise ConfigurationError(f"unknown model {name!r}; known: {list_models()}") from None
    merged = entry.check(params)
    if name == "affine_random" and not merged["low"] < merged["high"]:
        raise ConfigurationError("affine_random needs low < high")
    system = entry.builder(**merged)
    if validate:
        err = check_jacobian(system, probes=1000, y_sampler=entry.probe_sampler)
        if not err <= JACOBIAN_TOL:
            raise ConfigurationError(f"{name}: Jacobian disagrees with finite differences ({err:.3g})")
    return system
