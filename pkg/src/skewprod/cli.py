"""Batch experiment runner.

Usage::

    skewprod <subcommand> --config exp.toml [--out DIR] [--seeds 0,1,2]
                          [--threads N] [--negative-control NAME]

Every flag can also be given through the environment as ``SKEWPROD_<FLAG>``
(e.g. ``SKEWPROD_SEEDS=0,1,2``); explicit flags win. Exit codes: 0 all
contracts passed, 2 contract violation, 3 configuration error, 4 window or
resource error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import attractor as at
from . import base
from . import driving as drv
from . import models
from . import semiuniform as su
from .errors import ConfigurationError, DegenerateFibreError, TruncationWarning, WindowError
from .skew import lyapunov_estimate

log = logging.getLogger("skewprod")

SUBCOMMANDS = ("catalog", "lyapunov", "pullback", "cardinality", "continuity", "covering",
               "semiuniform", "minimality")
NEGATIVE_CONTROLS = ("corrupted_C",)
ENV_PREFIX = "SKEWPROD_"

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG, EXIT_WINDOW = 0, 2, 3, 4


@dataclass
class ExperimentConfig:
    model: str = "affine_random"
    params: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0])
    window: int = 1000
    grid: int = 16
    depth: int = 60
    samples: int = 4
    seed_box: tuple = (-10.0, 10.0)
    n: int = 1000
    lam: float = -0.9
    delta: float = 0.03
    lambda_prime: float | None = None
    N_max: int = 1000
    k: list = field(default_factory=lambda: [1])
    horizons: list = field(default_factory=list)
    r: float = 1.0
    eta: float = 0.5
    p_max: int = 6
    gate_tol: float | None = None
    driving: dict = field(default_factory=lambda: {"kind": "random_rotation", "tau": 0.37})
    trials: int = 20
    horizon: int = 100000
    selector_below: float | None = None
    weyl_M: int = 5
    out: str = "out"
    raw: dict = field(default_factory=dict)

    def validate(self):
        if self.model not in models.CATALOG:
            raise ConfigurationError(f"unknown model {self.model!r}")
        if not self.seeds:
            raise ConfigurationError("seed list must be non-empty")
        for name in ("window", "grid", "n", "N_max", "samples"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be positive")
        return self


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    model = raw.get("model", {})
    run = raw.get("run", {})
    semi = raw.get("semiuniform", {})
    cov = raw.get("covering", {})
    mini = raw.get("minimality", {})
    cfg = ExperimentConfig(raw=raw)
    cfg.model = model.get("name", cfg.model)
    cfg.params = dict(model.get("params", {}))
    if "seeds" in run:
        cfg.seeds = [int(s) for s in run["seeds"]]
    elif "seed_count" in run:
        cfg.seeds = list(range(int(run.get("seed_start", 0)), int(run.get("seed_start", 0)) + int(run["seed_count"])))
    for key in ("window", "grid", "depth", "samples", "n"):
        if key in run:
            setattr(cfg, key, int(run[key]))
    if "seed_box" in run:
        cfg.seed_box = tuple(run["seed_box"])
    cfg.lam = float(semi.get("lambda", cfg.lam))
    cfg.delta = float(semi.get("delta", cfg.delta))
    cfg.lambda_prime = semi.get("lambda_prime", cfg.lambda_prime)
    cfg.N_max = int(semi.get("N_max", cfg.N_max))
    k = semi.get("k", cfg.k)
    cfg.k = [int(x) for x in (k if isinstance(k, list) else [k])]
    cfg.horizons = [int(h) for h in semi.get("horizons", cfg.horizons)]
    cfg.r = float(cov.get("r", cfg.r))
    cfg.eta = float(cov.get("eta", cfg.eta))
    cfg.p_max = int(cov.get("p_max", cfg.p_max))
    cfg.gate_tol = cov.get("gate_tol", cfg.gate_tol)
    if "driving" in mini:
        cfg.driving = dict(mini["driving"])
    cfg.trials = int(mini.get("trials", cfg.trials))
    cfg.horizon = int(mini.get("horizon", cfg.horizon))
    cfg.selector_below = mini.get("selector_below", cfg.selector_below)
    cfg.weyl_M = int(mini.get("weyl_M", cfg.weyl_M))
    cfg.out = raw.get("output", {}).get("dir", cfg.out)
    return cfg


def _fmt(x):
    x = float(x)
    if x == -np.inf:
        return "-inf"
    if x == np.inf:
        return "inf"
    return format(x, ".17g")


class Run:
    """Collects artifacts and contract results; writes everything once at the end."""

    def __init__(self, name, cfg, out, threads, negative_control, config_bytes):
        self.name = name
        self.cfg = cfg
        self.out = Path(out)
        self.threads = max(1, int(threads))
        self.negative_control = negative_control
        self.config_hash = hashlib.sha256(config_bytes).hexdigest()
        self.files = {}
        self.violations = []
        self.summary = {}

    def map(self, fn, items):
        items = list(items)
        if self.threads == 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(self.threads) as ex:
            return list(ex.map(fn, items))

    def add(self, filename, text):
        self.files[filename] = text

    def fail(self, message):
        self.violations.append(message)

    def finish(self, norm="spectral"):
        self.out.mkdir(parents=True, exist_ok=True)
        for fname, text in sorted(self.files.items()):
            (self.out / fname).write_text(text)
        manifest = {
            "subcommand": self.name,
            "config_sha256": self.config_hash,
            "model": self.cfg.model,
            "params": self.cfg.params,
            "seeds": self.cfg.seeds,
            "norm": norm,
            "negative_control": self.negative_control,
            "files": sorted(self.files),
            "summary": self.summary,
            "violations": self.violations,
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True,
                                                           default=_jsonable))
        for v in self.violations:
            print(f"VIOLATION: {v}")
        return EXIT_VIOLATION if self.violations else EXIT_OK


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


def _system(cfg):
    return models.build(cfg.model, **cfg.params)


def _orbit(system, cfg, seed, radius=None):
    return base.sample_orbit(system.base, radius or cfg.window, seed)


# -- subcommands ------------------------------------------------------------------

def cmd_catalog(run):
    rows = []
    for name in models.list_models():
        e = models.CATALOG[name]
        rows.append({"name": name, "description": e.description, "defaults": e.defaults,
                     "facts": {k: [str(v[0]), v[1]] for k, v in e.facts.items()}})
        print(f"{name:14s} {e.description}")
    run.add("catalog.json", json.dumps(rows, indent=2, sort_keys=True, default=_jsonable))
    run.summary["models"] = len(rows)


def cmd_lyapunov(run):
    cfg = run.cfg
    system = _system(cfg)
    n = cfg.n
    m = len(cfg.seeds)
    lo, hi = cfg.seed_box
    samples = []
    for i, seed in enumerate(cfg.seeds):
        o = _orbit(system, cfg, seed, radius=max(cfg.window, n))
        samples.append((o, (i + 0.5) / m, lo + (hi - lo) * (i + 0.5) / m))
    rep = lyapunov_estimate(system, samples, n, sampling="seed_box")
    run.add("lyapunov.csv", rep.to_csv())
    run.summary.update(mean=rep.mean, stderr=rep.stderr, n=n, m=m, n_neg_inf=rep.n_neg_inf,
                       sampling=rep.sampling)
    print(f"lambda_hat = {rep.mean:.6f} +- {rep.stderr:.2g} (n={n}, m={m})")
    fact = models.CATALOG[cfg.model].facts.get("exponent")
    if fact is not None and isinstance(fact[0], float) and not cfg.params:
        if abs(rep.mean - fact[0]) > 0.02:
            run.fail(f"exponent {rep.mean:.5f} differs from {fact[0]:.5f} by more than 0.02")
    return system.norm


def _pullbacks(run, system, times=(0,), G=None):
    cfg = run.cfg
    G = G or cfg.grid
    radius = max(cfg.window, cfg.depth + max(abs(t) for t in times) + 1)

    def one(seed):
        return at.pullback(system, _orbit(system, cfg, seed, radius), cfg.depth, cfg.seed_box,
                           cfg.samples, G, times)
    return run.map(one, cfg.seeds)


def cmd_pullback(run):
    cfg = run.cfg
    system = _system(cfg)
    Ks = _pullbacks(run, system, times=(0, 1))
    aff = system.params.get("affine")
    worst = 0.0
    residuals = []
    for K in Ks:
        ge = at.graph_estimate(K, system)
        residuals.append(ge.residual)
        run.add(f"pullback_seed{K.orbit.seed}.csv", K.to_csv())
        run.add(f"graph_seed{K.orbit.seed}.csv", ge.to_csv())
        run.add(f"pullback_seed{K.orbit.seed}.json",
                json.dumps(K.manifest(residual=ge.residual), indent=2, sort_keys=True))
        if aff is not None:
            orc = at.affine_graph_oracle(K.orbit, system.driving, aff["a"], aff["b"], K.xi, 200,
                                         aff["a_sup"], aff["b_sup"])
            worst = max(worst, float(np.max(np.abs(K.clouds[0, :, :, 0] - orc[:, None]))))
    run.summary.update(max_residual=max(residuals))
    if aff is not None:
        run.summary["max_oracle_error"] = worst
        print(f"max |pullback - oracle| = {worst:.3g}")
        if worst > 1e-6:
            run.fail(f"pullback deviates from the series oracle by {worst:.3g} > 1e-6")
    return system.norm


def cmd_cardinality(run):
    cfg = run.cfg
    system = _system(cfg)
    Ks = _pullbacks(run, system)
    ns, seps = [], []
    lines = ["seed,t,cell_index,count"]
    for K in Ks:
        rep = at.fibre_cardinality(K)
        ns.append(rep.n)
        for c in range(K.G):
            lines.append(f"{K.orbit.seed},0,{c},{rep.counts[0, c]}")
        seps.append(min(at.min_separation(K, (0, c), rep.cluster_radius) for c in range(K.G)))
    run.add("cardinality.csv", "\n".join(lines) + "\n")
    run.summary.update(global_n=ns, min_separation=[_fmt(s) for s in seps])
    print(f"global n per seed: {ns}")
    fact = models.CATALOG[cfg.model].facts.get("cardinality")
    if fact is not None and any(n != fact[0] for n in ns):
        run.fail(f"cardinality {ns} differs from the analytic value {fact[0]}")
    return system.norm


def cmd_continuity(run):
    cfg = run.cfg
    system = _system(cfg)
    Gs = [cfg.grid, 2 * cfg.grid, 4 * cfg.grid]
    per_seed = []
    for seed in cfg.seeds:
        o = _orbit(system, cfg, seed, max(cfg.window, cfg.depth + 1))
        Ks = [at.pullback(system, o, cfg.depth, cfg.seed_box, cfg.samples, G) for G in Gs]
        per_seed.append(at.continuity_modulus(Ks))
    lines = ["seed," + ",".join(f"G{G}" for G in Gs)]
    lines += [f"{s}," + ",".join(_fmt(v) for v in mods) for s, mods in zip(cfg.seeds, per_seed)]
    run.add("continuity.csv", "\n".join(lines) + "\n")
    run.summary["moduli"] = per_seed
    fact = models.CATALOG[cfg.model].facts.get("continuous")
    if fact is not None:
        for mods in per_seed:
            if fact[0] and not all(a >= 1.7 * b for a, b in zip(mods, mods[1:])):
                run.fail(f"moduli {mods} do not shrink by 1.7 per refinement")
            if not fact[0] and min(mods) < 0.1:
                run.fail(f"moduli {mods} drop below 0.1 for a discontinuous model")
    return system.norm


def _lambda_prime(cfg, system, Ks):
    if cfg.lambda_prime is not None:
        return float(cfg.lambda_prime), None
    est, _ = su.sup_lyap_over_K(system, Ks, min(cfg.N_max, 200))
    return su.default_lambda_prime(cfg.lam, est), est


def cmd_covering(run):
    cfg = run.cfg
    system = _system(cfg)
    k = cfg.k[0]
    Ks = _pullbacks(run, system, times=range(0, k + 2))
    lam_p, _ = _lambda_prime(cfg, system, Ks)
    ladder = at.epsilon_ladder(cfg.r, cfg.eta, cfg.p_max)
    results = []
    for K in Ks:
        residual = at.invariance_residual(K, system)
        tol = cfg.gate_tol if cfg.gate_tol is not None else at.default_invariance_tol(K)
        gate = residual <= tol
        C = {}
        if gate:
            span = range(-cfg.N_max * k, k + 2 + cfg.N_max * k + 1)
            phi_k = _phi_k_along(system, K, k, span, cfg)
            ch = su.compute_C_hat_k(phi_k, K.times, k, lam_p, cfg.N_max, "nonpos")
            C = {int(t): float(v) for t, v in zip(K.times, ch.values)}
            chk = at.covering_monotonicity_check(K, system, ladder, k, C)
            results.append((K.orbit.seed, residual, True, chk.max_violation, chk.order_violation))
            if chk.max_violation > 0 or chk.order_violation > 0:
                run.fail(f"seed {K.orbit.seed}: covering numbers increase along the dynamics "
                         f"({chk.max_violation}, {chk.order_violation})")
        else:
            results.append((K.orbit.seed, residual, False, "", ""))
    lines = ["seed,residual,gate,max_violation,order_violation"]
    lines += [f"{s},{_fmt(r)},{int(g)},{v},{o}" for s, r, g, v, o in results]
    run.add("covering.csv", "\n".join(lines) + "\n")
    run.summary.update(lambda_prime=lam_p, ladder=ladder)
    return system.norm


def _phi_k_along(system, K_template, k, times, cfg):
    """Phi^K_k at every time in ``times``, from a pullback on the same orbit."""
    times = list(times)
    K = at.pullback(system, K_template.orbit, cfg.depth, cfg.seed_box, cfg.samples, K_template.G, times)
    vals = su.phi_K_table(system, K, k)[:, -1]
    return {int(t): float(v) for t, v in zip(K.times, vals)}


def cmd_semiuniform(run):
    cfg = run.cfg
    system = _system(cfg)
    N = cfg.N_max
    H = max(cfg.horizons) if cfg.horizons else 0
    kmax = max(cfg.k)
    times = sorted({0, 1} | {h for h in cfg.horizons} | {-h for h in cfg.horizons})
    radius = max(cfg.window, H + N + cfg.depth + N * kmax + kmax + 2)

    def one(seed):
        o = _orbit(system, cfg, seed, radius)
        return at.pullback(system, o, cfg.depth, cfg.seed_box, cfg.samples, cfg.grid, times)
    Ks = run.map(one, cfg.seeds)
    lam_p, est = _lambda_prime(cfg, system, Ks)
    rep = su.SemiuniformReport(cfg.lam, lam_p, N, system.norm, sup_estimate=est)
    if not rep.lambda_order_ok:
        log.warning("lambda' = %g is not below lambda = %g", lam_p, cfg.lam)
    C_maps, C_rows, entry_phi, rows = [], [], [], {}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", TruncationWarning)
        for K in Ks:
            tab = su.phi_K_table(system, K, N)
            res = su.compute_C(tab, lam_p)
            rep.C_interior = rep.C_interior and res.all_interior
            cmap = {int(t): float(v) for t, v in zip(K.times, res.values)}
            C_maps.append(cmap)
            C_rows.append(res.values)
            entry_phi.append(tab[list(K.times).index(0)])
            for t, row, c in zip(K.times, tab, res.values):
                rows[(K.orbit.seed, int(t))] = row
                rep.C[f"{K.orbit.seed}:{int(t)}"] = float(c)
            phi1 = {int(t): float(v) for t, v in zip(K.times, tab[:, 0])}
            rep.increment_violations += [(K.orbit.seed, t, e) for t, e in
                                         su.c_increment_violations(cmap, phi1, lam_p)]
        checked = C_maps
        if run.negative_control == "corrupted_C":
            checked = [{t: 0.5 * c - 1.0 for t, c in cm.items()} for cm in C_maps]
        rep.main_violations = [v.__dict__ for v in
                               su.verify_main_estimate(system, Ks, [{0: cm[0]} for cm in checked], lam_p, N)]
        if cfg.horizons:
            adj = su.adjustedness_slope(np.array(C_rows), Ks[0].times, cfg.horizons)
            rep.slopes, rep.horizons, rep.adjusted = adj.slopes, adj.horizons, adj.adjusted
        rep.entry_times = su.semiuniform_entry_time(np.array(entry_phi), cfg.lam, cfg.delta).tolist()
        for k in cfg.k:
            for K in Ks:
                span = range(-N * k - k, N * k + 2 * k + 1)
                phi_k = _phi_k_along(system, K, k, span, cfg)
                for variant in ("nonneg", "nonpos"):
                    ch = su.compute_C_hat_k(phi_k, [0, k], k, lam_p, N, variant)
                    rep.C_interior = rep.C_interior and ch.all_interior
                    if variant == "nonneg" and np.any(ch.values < 0):
                        run.fail(f"nonneg C-hat_{k} negative for seed {K.orbit.seed}")
                    if variant == "nonpos" and np.any(ch.values > 0):
                        run.fail(f"nonpos C-hat_{k} positive for seed {K.orbit.seed}")
                    C_hat = {0: float(ch.values[0]), k: float(ch.values[1])}
                    rep.complement_violations += [dict(v.__dict__, variant=variant) for v in
                                                  su.verify_complement(system, [K], [C_hat], k, lam_p)]
                    rep.C_hat[f"{K.orbit.seed}:{k}:{variant}"] = C_hat[0]
    for w in caught:
        log.warning("%s", w.message)
    run.add("semiuniform.json", rep.to_json())
    run.add("semiuniform_series.csv", rep.series_csv(rows))
    run.summary.update(passed=rep.passed, lambda_prime=lam_p,
                       main_violations=len(rep.main_violations),
                       complement_violations=len(rep.complement_violations))
    if rep.main_violations:
        run.fail(f"{len(rep.main_violations)} violations of Phi_n <= C + n lambda'")
    if rep.complement_violations:
        run.fail(f"{len(rep.complement_violations)} violations of the complement estimate")
    if rep.increment_violations:
        run.fail(f"{len(rep.increment_violations)} C-increment violations")
    if not rep.C_interior:
        run.fail("a supremum was attained at N_max; verdict void")
    if not rep.adjusted:
        run.fail(f"adjustedness slopes {rep.slopes} exceed {0.01}")
    print(f"semiuniform: lambda'={lam_p:.4g}, violations={len(rep.main_violations)}")
    return system.norm


def make_driving(spec: dict):
    kind = spec.get("kind", "random_rotation")
    if kind == "random_rotation":
        return drv.random_rotation(float(spec.get("tau", 0.0)))
    if kind == "identity":
        return drv.identity()
    if kind == "quasiperiodic_shift":
        return drv.quasiperiodic_shift(float(spec.get("rho", base.GOLDEN_ANGLE)))
    raise ConfigurationError(f"unknown driving kind {kind!r}")


def cmd_minimality(run):
    cfg = run.cfg
    driving = make_driving(cfg.driving)
    law = base.Uniform(0.0, 1.0)
    spec = base.bernoulli(law)
    orbits = run.map(lambda s: base.sample_orbit(spec, cfg.horizon, s), cfg.seeds[:cfg.trials])
    verdict = drv.minimality_diagnostic(orbits, driving, min(cfg.trials, len(orbits)), cfg.grid,
                                        cfg.horizon)
    gs = drv.omega_limit(orbits[0], driving, drv.constant_point(0.0), cfg.grid, cfg.horizon // 100,
                         cfg.horizon)
    run.add("omega_limit.csv", gs.to_csv())
    _, xs = drv.pullback_points(orbits[0], driving, drv.constant_point(0.0), 0, cfg.horizon)
    run.add("weyl.csv", "m,modulus\n" + "".join(f"{m},{_fmt(v)}\n" for m, v in drv.weyl_sums(xs, cfg.weyl_M)))
    run.summary.update(fills=verdict.fills, max_gap=verdict.max_gap)
    print(f"fills={verdict.fills} max_gap={verdict.max_gap:.4g}")
    if cfg.selector_below is not None:
        thr = float(cfg.selector_below)
        sub = drv.subsection_omega_limit(orbits, driving, drv.constant_point(0.0),
                                         lambda p: p[:, 0] < thr, cfg.grid, cfg.horizon)
        run.add("subsection.csv", sub.to_csv())
        run.summary["subsection_fills"] = sub.fills
    return "n/a"


COMMANDS = {name: globals()[f"cmd_{name}"] for name in SUBCOMMANDS}


def _env(name, default=None):
    return os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"), default)


def build_parser():
    p = argparse.ArgumentParser(prog="skewprod", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", default=_env("config"))
    p.add_argument("--out", default=_env("out"))
    p.add_argument("--seeds", default=_env("seeds"), help="comma-separated list")
    p.add_argument("--threads", type=int, default=int(_env("threads", "1")))
    p.add_argument("--negative-control", default=_env("negative_control"), choices=NEGATIVE_CONTROLS)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            cfg = load_config(args.config)
            config_bytes = Path(args.config).read_bytes()
        elif args.subcommand == "catalog":
            cfg, config_bytes = ExperimentConfig(), b""
        else:
            raise ConfigurationError("--config is required")
        if args.seeds:
            cfg.seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        cfg.validate()
        run = Run(args.subcommand, cfg, args.out or cfg.out, args.threads, args.negative_control,
                  config_bytes)
        norm = COMMANDS[args.subcommand](run) or "spectral"
        return run.finish(norm)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (WindowError, DegenerateFibreError, MemoryError) as exc:
        print(f"window/resource error: {exc}", file=sys.stderr)
        return EXIT_WINDOW


if __name__ == "__main__":
    sys.exit(main())
