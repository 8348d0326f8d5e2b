import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from infxlap.exponent import constant_family, exponent_from_family
from infxlap.gadgets import (
    GFunctionParams,
    SubsolutionOnlyWarning,
    check_g_properties,
    g_eval,
    g_inverse,
    g_prime,
    monotonicity_gap_batch,
    monotonicity_inequality_gap,
    reference_solutions,
)
from infxlap.grid import make_domain
from infxlap.operator import residual_field

from conftest import unit_square

vec = st.lists(st.floats(-50, 50), min_size=3, max_size=3)


def test_gap_is_zero_for_q_two(rng):
    for _ in range(100):
        a, b = rng.normal(size=4), rng.normal(size=4)
        assert monotonicity_inequality_gap(a, b, 2.0) == pytest.approx(0.0, abs=1e-14 * (1 + np.sum((b - a) ** 2)))


def test_gap_hand_value():
    assert monotonicity_inequality_gap([0.0, 0.0], [1.0, 0.0], 4.0) == pytest.approx(0.75, abs=1e-15)


def test_gap_rejects_small_q():
    with pytest.raises(ValueError):
        monotonicity_inequality_gap([1.0], [2.0], 1.5)
    with pytest.raises(ValueError):
        monotonicity_gap_batch(np.ones((2, 2)), np.zeros((2, 2)), [2.0, 1.9])


def test_gap_zero_vector_convention():
    assert monotonicity_inequality_gap([0.0, 0.0], [0.0, 0.0], 3.0) == 0.0
    assert monotonicity_inequality_gap([0.0, 0.0], [0.0, 2.0], 3.0) == pytest.approx(8.0 - 2.0**-1 * 8.0)


@settings(max_examples=300, deadline=None)
@given(vec, vec, st.floats(2.0, 20.0))
def test_gap_nonnegative(a, b, q):
    a, b = np.array(a), np.array(b)
    gap = monotonicity_inequality_gap(a, b, q)
    scale = max(1.0, np.linalg.norm(a), np.linalg.norm(b)) ** q
    assert gap >= -1e-12 * scale


def test_batch_matches_scalar(rng):
    a = rng.normal(size=(50, 3))
    b = rng.normal(size=(50, 3))
    q = rng.uniform(2, 10, 50)
    ref = [monotonicity_inequality_gap(a[i], b[i], q[i]) for i in range(50)]
    np.testing.assert_allclose(monotonicity_gap_batch(a, b, q), ref, rtol=1e-12, atol=1e-14)


def test_g_params_validation():
    for bad in [(0.0, 1.5), (-1.0, 1.5), (1.0, 1.0), (1.0, 2.0), (1.0, 2.5)]:
        with pytest.raises(ValueError):
            GFunctionParams(*bad)


def test_g_at_zero():
    prm = GFunctionParams(2.0, 1.7)
    assert g_eval(0.0, prm) == 0.0
    assert g_prime(0.0, prm) == pytest.approx(1.7, rel=1e-15)


def test_g_identity_limit():
    prm = GFunctionParams(1.3, 1.0 + 1e-12)
    t = np.linspace(0, 10, 11)
    np.testing.assert_allclose(g_eval(t, prm), t, atol=1e-10)
    np.testing.assert_allclose(g_prime(t, prm), 1.0, atol=1e-11)


def test_g_numeric_example():
    prm = GFunctionParams(1.0, 1.5)
    direct = math.log(1 + 1.5 * (math.e - 1))
    assert g_eval(1.0, prm) == pytest.approx(direct, rel=1e-14)
    assert g_eval(1.0, prm) == pytest.approx(1.2747, abs=1e-3)


def test_g_matches_textbook_formula(rng):
    for _ in range(20):
        prm = GFunctionParams(rng.uniform(0.1, 4), rng.uniform(1.01, 1.99))
        t = rng.uniform(0, 5)
        ref = math.log1p(prm.A * math.expm1(prm.alpha * t)) / prm.alpha
        ref_p = prm.A * math.exp(prm.alpha * t) / (1 + prm.A * math.expm1(prm.alpha * t))
        assert g_eval(t, prm) == pytest.approx(ref, rel=1e-12)
        assert g_prime(t, prm) == pytest.approx(ref_p, rel=1e-12)


def test_g_large_argument_asymptotics():
    prm = GFunctionParams(50.0, 1.5)
    t = np.array([20.0, 100.0, 1e6])
    with np.errstate(over="raise"):
        vals = g_eval(t, prm)
    np.testing.assert_allclose(vals, t + math.log(1.5) / 50.0, rtol=1e-15)


def test_g_rejects_negative_t():
    with pytest.raises(ValueError):
        g_eval(-0.1, GFunctionParams(1.0, 1.5))


@settings(max_examples=60, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(1.01, 1.99), st.floats(0.0, 30.0))
def test_g_inverse_roundtrip(alpha, A, t):
    prm = GFunctionParams(alpha, A)
    assert g_inverse(g_eval(t, prm), prm) == pytest.approx(t, abs=1e-10)


def test_g_shape(rng):
    prm = GFunctionParams(1.7, 1.4)
    t = np.linspace(0.01, 8, 400)
    g, gp = g_eval(t, prm), g_prime(t, prm)
    assert np.all(np.diff(g) > 0)
    assert np.all(g > t) and np.all(gp > 1)
    assert np.all(np.diff(gp) < 0)  # g'' < 0


def test_g_properties_report():
    prm = GFunctionParams(2.0, 1.5)
    rep = check_g_properties(prm, [0.0, 0.1, 1.0, 4.0])
    assert rep.ok, rep.failures
    assert rep.limit_cases == [{"t": 0.0, "g_minus_t": 0.0, "gprime_minus_1": pytest.approx(0.5)}]
    assert rep.max_excess < (prm.A - 1) / prm.alpha


@settings(max_examples=40, deadline=None)
@given(st.floats(0.2, 8.0), st.floats(1.02, 1.98), st.lists(st.floats(0.0, 6.0), min_size=1, max_size=20))
def test_g_properties_random(alpha, A, ts):
    rep = check_g_properties(GFunctionParams(alpha, A), ts)
    assert rep.ok, rep.failures


def test_g_properties_flag_negative_samples():
    rep = check_g_properties(GFunctionParams(1.0, 1.5), [-1.0, 1.0])
    assert not rep.ok
    assert rep.failures[0]["property"] == "domain"


def test_affine_reference_has_zero_residual(bump17):
    u = reference_solutions("affine", bump17.domain, e=(0.6, 0.8))
    assert np.max(np.abs(residual_field(u, bump17).values)) < 1e-12


def test_cone_residual_is_first_order(bump):
    res, hs = [], []
    for n in (9, 17, 33, 65):
        d = unit_square(n)
        u = reference_solutions("cone", d, x0=(-0.5, -0.3))
        res.append(np.max(np.abs(residual_field(u, exponent_from_family(d, bump)).values)))
        hs.append(d.h)
    assert np.all(np.diff(res) < 0)
    assert np.polyfit(np.log(hs), np.log(res), 1)[0] >= 0.9


def test_aronsson_residual_vanishes_under_refinement():
    res = []
    for n in (9, 17, 33, 65):
        d = make_domain(n, n, 1 / (n - 1), origin=(0.5, 0.5))
        u = reference_solutions("aronsson", d)
        res.append(np.max(np.abs(residual_field(u, exponent_from_family(d, constant_family(3.0))).values)))
    assert np.all(np.diff(res) < 0)
    hs = [1 / 8, 1 / 16, 1 / 32, 1 / 64]
    assert np.polyfit(np.log(hs), np.log(res), 1)[0] >= 0.5


def test_reference_errors():
    d = unit_square(9)
    with pytest.raises(ValueError):
        reference_solutions("aronsson", d)
    with pytest.raises(ValueError):
        reference_solutions("cone", d)
    with pytest.raises(ValueError):
        reference_solutions("saddle", d)
    with pytest.warns(SubsolutionOnlyWarning):
        reference_solutions("cone", d, x0=(0.5, 0.5))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        reference_solutions("cone", d, x0=(2.0, 2.0))
