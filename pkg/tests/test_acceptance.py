"""Acceptance criteria, one test per criterion.

Each test prints a single ``[criterion N] PASS|FAIL`` line; the lines are
repeated in the terminal summary (see conftest.py).
"""
import time
import warnings

import numpy as np
import pytest

from skewprod import attractor as at
from skewprod import base, driving as drv, models, skew
from skewprod import semiuniform as su
from skewprod.errors import TruncationWarning

from conftest import MEAN_LOG_A

RESULTS = []

EXPONENT_TARGET = -0.96148  # stated reference value; the quadrature gives -0.961519...


def record(number, ok, detail):
    line = f"[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}"
    print(line)
    RESULTS.append(line)
    assert ok, line


# -- shared 100-orbit ensemble for criteria 3 and 4 ------------------------------------

LAM, LAM_P, N_MAX = -0.9, -0.5, 1000
HORIZONS = [100, 1000, 10_000]
SEMI_TIMES = sorted({0, 1} | set(HORIZONS) | {-h for h in HORIZONS})


@pytest.fixture(scope="module")
def semi_ensemble(affine_random):
    radius = max(HORIZONS) + N_MAX + 4 * N_MAX + 100
    orbits = [base.sample_orbit(affine_random.base, radius, s) for s in range(100)]
    Ks = [at.pullback(affine_random, o, 60, (-10, 10), 2, 16, times=SEMI_TIMES) for o in orbits]
    tables = [su.phi_K_table(affine_random, K, N_MAX) for K in Ks]
    return orbits, Ks, tables


# -- 1 ------------------------------------------------------------------------------

def test_criterion_1_lyapunov_quadrature(affine_random):
    n, m = 100_000, 100
    t0 = time.perf_counter()
    samples = []
    for i in range(m):
        o = base.sample_orbit(affine_random.base, n, i)
        samples.append((o, (i + 0.5) / m, -10 + 20 * (i + 0.5) / m))
    rep = skew.lyapunov_estimate(affine_random, samples, n)
    elapsed = time.perf_counter() - t0
    ok = abs(rep.mean - EXPONENT_TARGET) <= 0.02 and abs(rep.mean - MEAN_LOG_A) <= 0.02 and elapsed < 30
    record(1, ok, f"lambda_hat={rep.mean:.5f} (target {EXPONENT_TARGET}, quadrature {MEAN_LOG_A:.6f}, "
                  f"tol 0.02), stderr={rep.stderr:.2g}, runtime {elapsed:.1f}s < 30s")


# -- 2 ------------------------------------------------------------------------------

def test_criterion_2_pullback_oracle(affine_random):
    A = affine_random.params["affine"]
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(10):
        o = base.sample_orbit(affine_random.base, 300, seed)
        K = at.pullback(affine_random, o, 60, (-10, 10), 4, 256)
        orc = at.affine_graph_oracle(o, affine_random.driving, A["a"], A["b"], K.xi, 200, A["a_sup"])
        worst = max(worst, float(np.max(np.abs(K.clouds[0, :, :, 0] - orc[:, None]))))
    elapsed = time.perf_counter() - t0
    record(2, worst <= 1e-6 and elapsed < 60,
           f"max |pullback - oracle| = {worst:.3g} <= 1e-6 over 10 seeds x 256 cells, runtime {elapsed:.1f}s < 60s")


# -- 3 ------------------------------------------------------------------------------

def test_criterion_3_main_estimate(affine_random, semi_ensemble):
    orbits, Ks, tables = semi_ensemble
    C_maps, C_rows, interior = [], [], True
    for K, tab in zip(Ks, tables):
        res = su.compute_C(tab, LAM_P)
        interior &= res.all_interior
        C_rows.append(res.values)
        C_maps.append(dict(zip(K.times.tolist(), res.values)))
    violations = su.verify_main_estimate(affine_random, Ks, C_maps, LAM_P, N_MAX)
    adj = su.adjustedness_slope(np.array(C_rows), Ks[0].times, HORIZONS)
    corrupted = [{t: c / 2 - 1 for t, c in cm.items()} for cm in C_maps]
    control = su.verify_main_estimate(affine_random, Ks[:5], corrupted[:5], LAM_P, N_MAX)
    # with lambda' closer to lambda-hat, C is non-trivial and plain halving is caught as well
    lam_tight = -0.93
    tight = [dict(zip(K.times.tolist(), su.compute_C(tab, lam_tight).values)) for K, tab in zip(Ks, tables)]
    tight_ok = su.verify_main_estimate(affine_random, Ks[:20], tight[:20], lam_tight, N_MAX)
    halved = su.verify_main_estimate(affine_random, Ks[:20], [{t: c / 2 for t, c in cm.items()}
                                                            for cm in tight[:20]], lam_tight, N_MAX)
    ok = (not violations and interior and adj.slopes[-1] <= 0.01 and len(control) >= 1
          and not tight_ok and len(halved) >= 1)
    record(3, ok, f"{len(violations)} violations over 100 orbits x {len(SEMI_TIMES)} times, "
                  f"C interior={interior}, slope(n=1e4)={adj.slopes[-1]:.3g} <= 0.01, "
                  f"corrupted-C control {len(control)} violations; lambda'={lam_tight}: "
                  f"{len(tight_ok)} violations, halved C {len(halved)} violations")


# -- 4 ------------------------------------------------------------------------------

def phi_k_along(system, orbit, k, times, G=4):
    K = at.pullback(system, orbit, 60, (-10, 10), 1, G, times=times)
    return dict(zip(K.times.tolist(), su.phi_K_table(system, K, k)[:, -1]))


def test_criterion_4_complement(affine_random, semi_ensemble):
    orbits, Ks, _ = semi_ensemble
    details, ok = [], True
    for lam_p in (LAM_P, -0.8):
        for k in (1, 4):
            total = {"nonneg": 0, "nonpos": 0}
            signs_ok, interior = True, True
            for o, K in zip(orbits, Ks):
                phik = phi_k_along(affine_random, o, k, range(-N_MAX * k - k, N_MAX * k + 2 * k + 1))
                for variant in ("nonneg", "nonpos"):
                    res = su.compute_C_hat_k(phik, [0, k], k, lam_p, N_MAX, variant)
                    interior &= res.all_interior
                    signs_ok &= bool(np.all(res.values >= 0) if variant == "nonneg" else np.all(res.values <= 0))
                    Ch = {0: float(res.values[0]), k: float(res.values[1])}
                    total[variant] += len(su.verify_complement(affine_random, [K], [Ch], k, lam_p))
            ok &= signs_ok and interior and total["nonneg"] == 0 and total["nonpos"] == 0
            details.append(f"lambda'={lam_p} k={k}: violations {total['nonneg']}/{total['nonpos']}, "
                           f"signs ok={signs_ok}")
    record(4, ok, "; ".join(details) + " (nonneg/nonpos, 100 orbits)")


# -- 5 ------------------------------------------------------------------------------

def test_criterion_5_cardinality_separation(affine_random, two_branch):
    ns_aff, ns_two, seps = [], [], []
    for seed in range(10):
        o = base.sample_orbit(affine_random.base, 200, seed)
        K = at.pullback(affine_random, o, 60, (-10, 10), 8, 64, times=range(0, 3))
        ns_aff.append(at.fibre_cardinality(K, 0.1).n)
        o2 = base.sample_orbit(two_branch.base, 200, seed)
        K2 = at.pullback(two_branch, o2, 60, (-10, 10), 8, 64, times=range(0, 3))
        rep = at.fibre_cardinality(K2, 0.1)
        ns_two.append(rep.n)
        seps += [at.min_separation(K2, (t, c), 0.1) for t in range(3) for c in range(64)]
    sep_err = max(abs(s - 4.0) for s in seps)
    ok = all(n == 1 for n in ns_aff) and all(n == 2 for n in ns_two) and sep_err <= 1e-6
    record(5, ok, f"affine_random n={sorted(set(map(str, ns_aff)))}, two_branch n={sorted(set(map(str, ns_two)))}, "
                  f"separation 4 +- {sep_err:.2g} (tol 1e-6) on 10 seeds")


# -- 6 ------------------------------------------------------------------------------

def test_criterion_6_continuity_dichotomy(affine_random, pinched):
    Gs = (64, 128, 256)
    aff_ratios, sna_mods = [], []
    for seed in range(5):
        o = base.sample_orbit(affine_random.base, 200, seed)
        mods = at.continuity_modulus([at.pullback(affine_random, o, 60, (-10, 10), 2, G) for G in Gs])
        aff_ratios += [mods[0] / mods[1], mods[1] / mods[2]]
        o2 = base.sample_orbit(pinched.base, 600, seed)
        sna_mods += at.continuity_modulus([at.pullback(pinched, o2, 500, (-3, 3), 8, G) for G in Gs])
    o = base.sample_orbit(pinched.base, 100_000, 0)
    zero = skew.graph_lyapunov(pinched, o, lambda orb, xi: np.zeros((len(np.atleast_1d(xi)), 1)), 100_000)
    ok = min(aff_ratios) >= 1.7 and abs(zero - np.log(1.5)) <= 0.02 and min(sna_mods) >= 0.1
    record(6, ok, f"affine_random min shrink ratio {min(aff_ratios):.3f} >= 1.7; pinched_sna zero-graph "
                  f"exponent {zero:.4f} (0.4055 +- 0.02), min modulus {min(sna_mods):.3f} >= 0.1 "
                  f"over G in {Gs}, 5 seeds")


# -- 7 ------------------------------------------------------------------------------

def test_criterion_7_covering_monotonicity():
    ladder = at.epsilon_ladder(1.0, 0.5, 6)
    lines, ok = [], True
    for name in models.list_models():
        s = models.build(name)
        sna = name == "pinched_sna"
        worst, gated = -10**9, 0
        for seed in range(3):
            o = base.sample_orbit(s.base, 2000, seed)
            K = at.pullback(s, o, 500 if sna else 60, (-3, 3) if sna else (-10, 10), 4, 64,
                            times=range(0, 3))
            if not at.invariance_gate(K, s, at.default_invariance_tol(K)):
                continue
            gated += 1
            C = {}
            est, _ = su.sup_lyap_over_K(s, [K], 200)
            if est < 0:
                # radii scaled by the non-positive C-hat_1 with lambda' between the exponent and 0
                phik = phi_k_along(s, o, 1, range(0, 3 + 1000))
                res = su.compute_C_hat_k(phik, [0, 1, 2], 1, est / 2, 1000, "nonpos")
                C = dict(zip([0, 1, 2], res.values))
            for Cv in ({}, C):
                chk = at.covering_monotonicity_check(K, s, ladder, 1, Cv)
                worst = max(worst, chk.max_violation, chk.order_violation)
        if gated:
            slack = 1 if s.d > 1 else 0  # exact sweep in 1-d, greedy cover otherwise
            ok &= worst <= slack
            lines.append(f"{name}={worst}")
        else:
            lines.append(f"{name}=not gated")
    record(7, ok, "max violation per model (p_max=6): " + ", ".join(lines))


# -- 8 ------------------------------------------------------------------------------

def test_criterion_8_minimality():
    spec = base.bernoulli(base.Uniform(0.0, 1.0))
    orbits = [base.sample_orbit(spec, 100_000, s) for s in range(20)]
    rot = drv.random_rotation(0.37)
    v = drv.minimality_diagnostic(orbits, rot, 20, 200, 100_000)
    ident = drv.minimality_diagnostic(orbits, drv.identity(), 20, 200, 100_000)
    with warnings.catch_warnings():
        warnings.simplefilter("error", RuntimeWarning)
        sub = drv.subsection_omega_limit(orbits, rot, drv.constant_point(0.0), lambda p: p[:, 0] < 0.4,
                                         200, 100_000)
    ok = v.max_gap <= 0.01 and ident.max_gap >= 0.99 and sub.max_gap() <= 0.01
    record(8, ok, f"rotation tau=0.37 max_gap={v.max_gap:.4g} <= 0.01; identity max_gap={ident.max_gap:.4g} "
                  f">= 0.99; subsection (payload < 0.4) max_gap={sub.max_gap():.4g} (G=200, 1e5 steps, 20 trials)")


# -- 9 ------------------------------------------------------------------------------

def test_criterion_9_structural_invariants(affine_random, rng):
    # subadditivity: d = 1 (pinched, non-linear) and d = 2 (random matrices)
    pair_rng = np.random.default_rng(9)
    pairs = [tuple(int(x) for x in pair_rng.integers(1, 200, 2)) for _ in range(1000)]
    sub = {}
    for name, y0 in (("pinched_sna", [0.3]), ("linear_2d", [1.0, 0.5])):
        s = models.build(name)
        o = base.sample_orbit(s.base, 500, 1)
        sub[name] = skew.subadditivity_check(s, o, 0.1, y0, pairs)
    # Hausdorff metric axioms
    worst_h = 0.0
    for _ in range(100):
        X, Y, Z = (rng.normal(size=(int(rng.integers(1, 30)), 2)) for _ in range(3))
        dxy = at.hausdorff_distance(X, Y)
        worst_h = max(worst_h, abs(dxy - at.hausdorff_distance(Y, X)), at.hausdorff_distance(X, X),
                      dxy - at.hausdorff_distance(X, Z) - at.hausdorff_distance(Z, Y))
    # shift group law and determinism
    spec = base.product(base.bernoulli(base.Uniform(0.2, 0.6)), base.rotation())
    o = base.sample_orbit(spec, 300, 4)
    exact = (base.shift(base.shift(o, 17), -40) == base.shift(o, -23)
             and base.shift(base.shift(o, 5), -5) == o
             and base.sample_orbit(spec, 300, 4) == o
             and np.array_equal(base.shift(o, 17).block(-50, 100), o.block(-33, 100)))
    # C-increment at every consecutive index of a 200-step stretch, 20 orbits, two lambda'
    inc_bad, tested = 0, 0
    for seed in range(20):
        orb = base.sample_orbit(affine_random.base, 1400, seed)
        K = at.pullback(affine_random, orb, 60, (-10, 10), 2, 8, times=range(0, 201))
        tab = su.phi_K_table(affine_random, K, 1000)
        phi1 = dict(zip(range(0, 201), tab[:, 0]))
        for lam_p in (-0.5, -0.93):
            C = dict(zip(range(0, 201), su.compute_C(tab, lam_p).values))
            inc_bad += len(su.c_increment_violations(C, phi1, lam_p))
            tested += 200
    ok = max(sub.values()) <= 1e-9 and worst_h <= 1e-12 and exact and inc_bad == 0
    record(9, ok, f"subadditivity max excess d=1 {sub['pinched_sna']:.2g}, d=2 {sub['linear_2d']:.2g} "
                  f"(1000 pairs, <= 1e-9); Hausdorff axioms worst {worst_h:.2g} (<= 1e-12); "
                  f"shift/determinism exact={exact}; C-increment violations {inc_bad}/{tested}")
