import numpy as np
import pytest
from scipy import integrate

from skewprod import attractor as at
from skewprod import base, models, skew
from skewprod.errors import ConfigurationError

from conftest import MEAN_LOG_A


def test_catalog_lists_builtin_families():
    names = models.list_models()
    assert len(names) >= 4
    assert {"identity", "affine_random", "two_branch", "pinched_sna"} <= set(names)


@pytest.mark.parametrize("name", models.list_models())
def test_every_entry_builds_and_passes_jacobian(name):
    s = models.build(name)
    entry = models.CATALOG[name]
    assert skew.check_jacobian(s, probes=1000, y_sampler=entry.probe_sampler) <= models.JACOBIAN_TOL
    for key, (value, note) in entry.facts.items():
        assert isinstance(note, str) and note  # every fact carries its provenance


def test_mean_log_uniform_matches_quadrature():
    quad, _ = integrate.quad(np.log, 0.2, 0.6)
    assert models.mean_log_uniform(0.2, 0.6) == pytest.approx(quad / 0.4, abs=1e-14)
    assert models.mean_log_uniform(0.2, 0.6) == pytest.approx(MEAN_LOG_A, abs=1e-14)


def test_affine_random_shape_and_exponent_fact(affine_random):
    assert affine_random.d == 1
    assert affine_random.driving.kind == "quasiperiodic_shift"
    assert models.CATALOG["affine_random"].facts["exponent"][0] == pytest.approx(-0.9615, abs=1e-4)
    assert models.CATALOG["affine_random"].facts["cardinality"][0] == 1


def test_two_branch_fixed_points(two_branch):
    o = base.sample_orbit(two_branch.base, 10, 0)
    p, m = two_branch.params["fixed_points"]
    assert (p, m) == (2.0, -2.0)
    _, (xi, y) = skew.apply_T(two_branch, o, (0.1, np.array([p])))
    assert y[0] == p
    s = models.build("two_branch", a_plus=0.5, a_minus=0.3, b=1.0)
    assert s.params["fixed_points"] == (2.0, pytest.approx(-1 / 0.7))


def test_pinched_zero_graph_exponent_identity():
    # log(2 sigma) + int_0^1 log|cos 2 pi x| dx, with the integral computed numerically
    val, _ = integrate.quad(lambda x: np.log(np.abs(np.cos(2 * np.pi * x))), 0, 1,
                            points=[0.25, 0.75], limit=200)
    assert val == pytest.approx(-np.log(2), abs=1e-8)
    assert np.log(3.0) + val == pytest.approx(np.log(1.5), abs=1e-8)


def test_affine_const_graph_fact():
    s = models.build("affine_const", a=-0.5, b=3.0)
    o = base.sample_orbit(s.base, 100, 0)
    K = at.pullback(s, o, 60, (-1, 1), 2, 2)
    assert np.allclose(K.clouds, 3.0 / 1.5, atol=1e-12)


@pytest.mark.parametrize("name,params", [
    ("affine_const", {"a": 1.5}),
    ("affine_random", {"low": 0.5, "high": 0.3}),
    ("affine_random", {"high": 1.2}),
    ("two_branch", {"a_plus": 0.0}),
    ("pinched_sna", {"colour": 1}),
    ("no_such_model", {}),
])
def test_out_of_range_parameters(name, params):
    with pytest.raises(ConfigurationError):
        models.build(name, **params)


def test_broken_jacobian_rejected():
    entry = models.CATALOG["identity"]
    good = entry.builder()
    bad = skew.SkewSystem(good.base, good.driving, good.h, lambda p, xi, y: 2 * np.ones((len(y), 1, 1)), 1)
    assert skew.check_jacobian(bad) > models.JACOBIAN_TOL


def test_linear_2d_dimensions():
    s = models.build("linear_2d")
    assert s.d == 2 and s.base.dimension == 4
    o = base.sample_orbit(s.base, 10, 0)
    r = skew.cocycle(s, o, 0.0, [1.0, 0.0], 3)
    blocks = o.block(0, 3)
    A = [0.6 * (2 * b.reshape(2, 2) - 1) for b in blocks]
    assert np.allclose(r.matrix_product, A[2] @ A[1] @ A[0])
