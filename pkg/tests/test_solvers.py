import numpy as np
import pytest
from scipy.linalg import solve_banded

from infxlap.exponent import affine_family, constant_family, exponent_from_family
from infxlap.gadgets import reference_solutions
from infxlap.grid import BoundaryData, GridFunction, diff_sup_norm, make_domain, sample
from infxlap.operator import residual_field
from infxlap.solvers import (
    EnergyOverflowError,
    Problem,
    Tolerances,
    default_k_schedule,
    energy,
    energy_gradient,
    harmonic_extension,
    local_step_norm,
    minimize_energy,
    solve_direct,
    solve_triple,
    solve_variational_limit,
)

from conftest import unit_square


def constant_field(d, c=2.0):
    return exponent_from_family(d, constant_family(c))


def affine_problem(d, field, e=(0.6, 0.8), **kw):
    f = BoundaryData.from_function(d, lambda x, y: e[0] * x + e[1] * y)
    return Problem(d, f, field, **kw)


# ---------------------------------------------------------------- energy


def test_energy_of_zero_is_zero(bump17):
    u = GridFunction(bump17.domain, np.zeros((17, 17)))
    assert energy(u, 1.0, bump17) == 0.0


def test_energy_of_unit_slope_quadrature():
    d = unit_square(9)
    u = sample(d, lambda x, y: x)
    assert energy(u, 1.0, constant_field(d, 2.0)) == pytest.approx(0.5, rel=1e-14)


def test_energy_sign_symmetry(bump17, rng):
    u = GridFunction(bump17.domain, rng.normal(size=(17, 17)))
    e0 = energy(u, 2.0, bump17, 0.3, 0)
    ep = energy(u, 2.0, bump17, 0.3, +1)
    em = energy(u, 2.0, bump17, 0.3, -1)
    assert ep + em == pytest.approx(2 * e0, rel=1e-13)


def test_energy_rejects_small_k(bump17):
    u = GridFunction(bump17.domain, np.zeros((17, 17)))
    with pytest.raises(ValueError):
        energy(u, 0.5, bump17)
    with pytest.raises(ValueError):
        energy(u, 1.0, bump17, sign=2)


def test_energy_overflow_is_reported():
    d = unit_square(9)
    u = sample(d, lambda x, y: 1e12 * x)
    with pytest.raises(EnergyOverflowError):
        energy(u, 32.0, constant_field(d, 2.0))


def _fd_gradient(u, k, field, eps, sign, step=1e-6):
    d = u.domain
    out = np.zeros((d.nx, d.ny))
    for i, j in d.interior_nodes:
        hi, lo = u.copy(), u.copy()
        hi.values[i, j] += step
        lo.values[i, j] -= step
        out[i, j] = (energy(hi, k, field, eps, sign) - energy(lo, k, field, eps, sign)) / (2 * step)
    return out


@pytest.mark.parametrize("sign", [-1, 0, 1])
@pytest.mark.parametrize("kp", [2.0, 5.0, 16.0])
def test_energy_gradient_matches_differences(sign, kp, bump, rng):
    d = unit_square(9)
    field = exponent_from_family(d, bump)
    k = kp / field.p_max
    if k * field.p_min < 2:
        k = 2.0 / field.p_min
    u = sample(d, lambda x, y: 0.5 * x + 0.3 * y) + GridFunction(d, 0.05 * rng.normal(size=(9, 9)))
    g = energy_gradient(u, k, field, 0.4, sign).values
    fd = _fd_gradient(u, k, field, 0.4, sign)
    m = d.interior_mask
    rel = np.max(np.abs(g[m] - fd[m])) / np.max(np.abs(fd[m]))
    assert rel < 1e-5


def test_energy_gradient_source_term(bump17, rng):
    d = bump17.domain
    u = GridFunction(d, rng.normal(size=(17, 17)))
    k, eps = 1.5, 0.3
    g0 = energy_gradient(u, k, bump17, eps, 0).values
    diff = energy_gradient(u, k, bump17, eps, +1).values - g0
    m = d.interior_mask
    # the difference cancels against the flux part, so compare at its rounding scale
    atol = 1e-13 * np.max(np.abs(g0[m]))
    np.testing.assert_allclose(diff[m], -d.h**2 * eps ** (k * bump17.p[m] - 1), rtol=1e-12, atol=atol)
    assert np.all(diff[~m] == 0)


def test_single_node_minimiser_is_stationary():
    d = make_domain(3, 3, 0.5)
    field = constant_field(d, 3.0)
    f = BoundaryData.from_function(d, lambda x, y: np.sin(3 * x) + y**2)
    u, rep = minimize_energy(Problem(d, f, field, tolerances=Tolerances(step_tol=1e-13)), 2.0)
    assert rep.converged
    g = energy_gradient(u, 2.0, field).values[1, 1]
    scale = np.max(np.abs(energy_gradient(sample(d, lambda x, y: x), 2.0, field).values))
    assert abs(g) < 1e-10 * max(scale, 1.0)


# ---------------------------------------------------------------- descent


def test_affine_data_is_minimiser(bump17):
    p = affine_problem(bump17.domain, bump17, tolerances=Tolerances(step_tol=1e-11))
    for k in (2.0 / bump17.p_min, 16.0 / bump17.p_min):
        u, rep = minimize_energy(p, k)
        assert rep.converged
        exact = sample(bump17.domain, lambda x, y: 0.6 * x + 0.8 * y)
        assert diff_sup_norm(u, exact) < 1e-9


def test_strip_quadratic_energy_is_discrete_laplace(rng):
    # on a one-row strip with k p = 2 the minimiser solves a tridiagonal system
    n = 12
    d = make_domain(n, 3, 0.1)
    field = constant_field(d, 2.0)
    vals = rng.normal(size=len(d.boundary_nodes))
    f = BoundaryData(d, vals)
    u, rep = minimize_energy(Problem(d, f, field, tolerances=Tolerances(step_tol=1e-13)), 1.0)
    assert rep.converged
    b = f.as_array()
    m = n - 2
    rhs = b[1:-1, 0] + b[1:-1, 2]
    rhs[0] += b[0, 1]
    rhs[-1] += b[-1, 1]
    ab = np.zeros((3, m))
    ab[0, 1:] = -1.0
    ab[1, :] = 4.0
    ab[2, :-1] = -1.0
    ref = solve_banded((1, 1), ab, rhs)
    np.testing.assert_allclose(u.values[1:-1, 1], ref, atol=1e-11)


def test_warm_start_at_solution_is_immediate(bump17):
    p = Problem(bump17.domain, BoundaryData.from_function(bump17.domain, lambda x, y: x * y), bump17,
                tolerances=Tolerances(step_tol=1e-10))
    k = 4.0 / bump17.p_min
    u, _ = minimize_energy(p, k)
    _, rep = minimize_energy(p, k, warm_start=u)
    assert rep.iterations <= 1


def test_energy_non_increasing(bump17):
    p = Problem(bump17.domain, BoundaryData.from_function(bump17.domain, lambda x, y: np.cos(2 * x) + y),
                bump17, tolerances=Tolerances(step_tol=1e-9))
    _, rep = minimize_energy(p, 8.0 / bump17.p_min)
    e = np.array(rep.history["energy"])
    assert np.all(np.diff(e) <= 1e-13 * np.abs(e[:-1]))


def test_minimize_energy_validates(bump17):
    p = affine_problem(bump17.domain, bump17)
    with pytest.raises(ValueError):
        minimize_energy(p, 0.1)
    with pytest.raises(ValueError):
        minimize_energy(p, 2.0, sign=3)
    with pytest.raises(ValueError):
        minimize_energy(p, 2.0, warm_start=sample(unit_square(9), lambda x, y: x))


# ---------------------------------------------------------------- limits


def test_variational_limit_affine(bump17):
    u, rep = solve_variational_limit(affine_problem(bump17.domain, bump17, tolerances=Tolerances(step_tol=1e-10)))
    assert rep.converged
    assert diff_sup_norm(u, sample(bump17.domain, lambda x, y: 0.6 * x + 0.8 * y)) < 1e-8
    assert len(rep.stages) == len(default_k_schedule(bump17.p_min))
    assert len(rep.history["cauchy"]) == len(rep.stages) - 1


def test_variational_limit_aronsson():
    d = make_domain(17, 17, 1 / 16, origin=(0.5, 0.5))
    ref = reference_solutions("aronsson", d)
    p = Problem(d, BoundaryData.from_grid_function(ref), constant_field(d, 2.0), tolerances=Tolerances(step_tol=1e-10))
    u, rep = solve_variational_limit(p)
    assert rep.converged
    assert diff_sup_norm(u, ref) <= d.h ** (2 / 3) + 1e-8


def test_signs_agree_without_source(bump17):
    f = BoundaryData.from_function(bump17.domain, lambda x, y: 0.3 * x * y + 0.2 * y)
    p = Problem(bump17.domain, f, bump17, epsilon=0.0, k_schedule=[2.0 / bump17.p_min, 4.0 / bump17.p_min],
                tolerances=Tolerances(step_tol=1e-11))
    up, _ = solve_variational_limit(p, +1)
    um, _ = solve_variational_limit(p, -1)
    assert diff_sup_norm(up, um) < 1e-9


def test_direct_affine(bump17):
    p = affine_problem(bump17.domain, bump17)
    u, rep = solve_direct(p)
    assert rep.converged and rep.residual <= p.tolerances.residual_tol
    assert diff_sup_norm(u, sample(bump17.domain, lambda x, y: 0.6 * x + 0.8 * y)) < 1e-8


def test_direct_cone_first_order(bump):
    errs, hs = [], []
    for n in (9, 17, 33):
        d = unit_square(n)
        ref = reference_solutions("cone", d, x0=(-0.5, -0.3))
        p = Problem(d, BoundaryData.from_grid_function(ref), exponent_from_family(d, bump))
        u, rep = solve_direct(p)
        assert rep.converged
        errs.append(diff_sup_norm(u, ref))
        hs.append(d.h)
    assert np.all(np.diff(errs) < 0)
    assert np.polyfit(np.log(hs), np.log(errs), 1)[0] >= 0.9


def test_direct_and_variational_agree_for_constant_p():
    d = unit_square(17)
    field = constant_field(d, 2.0)
    f = BoundaryData.from_function(d, lambda x, y: np.cos(1.5 * x) + 0.5 * y * y + 0.7 * y)
    p = Problem(d, f, field, tolerances=Tolerances(step_tol=1e-10))
    ud, rd = solve_direct(p)
    uv, rv = solve_variational_limit(p)
    assert rd.converged and rv.converged
    # the variational route stops at k p = 64; the last Cauchy step measures the truncation gap
    gap = diff_sup_norm(ud, uv)
    assert gap <= max(2 * p.tolerances.residual_tol, 5 * rv.history["cauchy"][-1])


def test_direct_residual_is_the_operator_residual(bump17):
    f = BoundaryData.from_function(bump17.domain, lambda x, y: np.sin(x) + 2 * y)
    p = Problem(bump17.domain, f, bump17)
    u, rep = solve_direct(p)
    r = np.max(np.abs(residual_field(u, bump17, rep.history["guard"]).values))
    assert r == pytest.approx(rep.residual, rel=1e-12)


def test_maximum_principle(bump17):
    f = BoundaryData.from_function(bump17.domain, lambda x, y: np.sin(6 * x) * np.cos(4 * y))
    p = Problem(bump17.domain, f, bump17)
    u, rep = solve_direct(p)
    assert rep.converged
    m = bump17.domain.active_mask
    assert f.values.min() - 1e-9 <= u.values[m].min()
    assert u.values[m].max() <= f.values.max() + 1e-9


def test_shift_invariance(bump17):
    f = BoundaryData.from_function(bump17.domain, lambda x, y: x * x - y)
    u, _ = solve_direct(Problem(bump17.domain, f, bump17))
    v, _ = solve_direct(Problem(bump17.domain, f.shifted(3.0), bump17))
    m = bump17.domain.active_mask
    np.testing.assert_allclose(v.values[m] - u.values[m], 3.0, atol=1e-8)


def test_disk_domain_solve(bump):
    d = make_domain(17, 17, 1 / 16, shape="disk")
    field = exponent_from_family(d, bump)
    u, rep = solve_direct(affine_problem(d, field))
    assert rep.converged
    m = d.active_mask
    np.testing.assert_allclose(u.values[m], (0.6 * d.x + 0.8 * d.y)[m], atol=1e-8)
    assert np.isnan(u.values[~m]).all()


def test_harmonic_extension_is_discrete_harmonic(rng):
    d = make_domain(8, 6, 0.2)
    f = BoundaryData(d, rng.normal(size=len(d.boundary_nodes)))
    v = harmonic_extension(f).values
    lap = v[2:, 1:-1] + v[:-2, 1:-1] + v[1:-1, 2:] + v[1:-1, :-2] - 4 * v[1:-1, 1:-1]
    assert np.max(np.abs(lap)) < 1e-12


# ---------------------------------------------------------------- triple


def _small_triple(eps):
    d = unit_square(9)
    field = exponent_from_family(d, constant_family(2.0))
    f = BoundaryData.from_function(d, lambda x, y: 0.02 * x + 0.01 * y)
    p = Problem(d, f, field, epsilon=eps, k_schedule=[1.0, 2.0, 4.0], tolerances=Tolerances(step_tol=1e-11))
    return p, solve_triple(p)


def test_triple_with_zero_epsilon_coincides():
    _, (um, h, up, reps) = _small_triple(0.0)
    assert diff_sup_norm(um, h) < 1e-9 and diff_sup_norm(up, h) < 1e-9
    assert set(reps) == {"minus", "zero", "plus"}


def test_triple_ordering_and_decay():
    diffs = []
    for eps in (0.4, 0.2):
        p, (um, h, up, reps) = _small_triple(eps)
        assert all(r.converged for r in reps.values())
        tol = 10 * p.tolerances.step_tol
        m = p.domain.interior_mask
        assert np.all(um.values[m] <= h.values[m] + tol)
        assert np.all(h.values[m] <= up.values[m] + tol)
        diffs.append(diff_sup_norm(up, um))
    assert diffs[1] < diffs[0]


# ---------------------------------------------------------------- problem


def test_problem_validation(bump17):
    d = bump17.domain
    f = BoundaryData.from_function(d, lambda x, y: x)
    with pytest.raises(ValueError):
        Problem(d, f, bump17, epsilon=1.0)
    with pytest.raises(ValueError):
        Problem(d, f, bump17, k_schedule=[2.0, 1.0])
    with pytest.raises(ValueError):
        Problem(d, f, bump17, k_schedule=[0.1])
    with pytest.raises(ValueError):
        Problem(d, f, bump17, scheme="spectral")
    with pytest.raises(ValueError):
        Problem(unit_square(9), f, bump17)
    p = Problem(d, f, bump17)
    assert p.tolerances.residual_tol == pytest.approx(1e-8 * (1 + f.lipschitz_constant))
    assert p.describe()["k_schedule"] == default_k_schedule(bump17.p_min)


def test_default_k_schedule():
    ks = default_k_schedule(2.0)
    assert [k * 2.0 for k in ks] == [2, 4, 8, 16, 32, 64]
    assert default_k_schedule(1.5, kp_max=8) == pytest.approx([4 / 3, 8 / 3, 16 / 3])


def test_local_step_norm_zero_at_affine(bump17):
    u = sample(bump17.domain, lambda x, y: 0.6 * x + 0.8 * y)
    assert local_step_norm(u, 4.0, bump17) < 1e-12


def _jagged_problem(**kw):
    d = unit_square(17)
    rng = np.random.default_rng(5)
    base = BoundaryData.from_function(d, lambda x, y: 0.6 * x - 0.3 * y + 0.4 * np.sin(3 * x * y))
    f = BoundaryData(d, base.values + rng.uniform(0.0, 0.3, size=base.values.size))
    field = exponent_from_family(d, affine_family((0.7, 0.4), 2.0))
    return Problem(d, f, field, tolerances=Tolerances(residual_tol=1e-10), **kw)


def test_direct_converges_on_jagged_data():
    p = _jagged_problem()
    u, rep = solve_direct(p)
    assert rep.converged
    r = residual_field(u, p.exponent, rep.history["guard"]).values
    assert np.max(np.abs(r[u.domain.interior_mask])) <= 1e-10


def test_sweeps_only_agree_with_newton_finish():
    p = _jagged_problem(omega=0.5)
    u1, r1 = solve_direct(p, newton_maxiter=0)
    u2, r2 = solve_direct(p)
    assert r1.converged and r2.converged
    assert r1.history["newton"] == []
    assert diff_sup_norm(u1, u2) < 1e-8


def test_direct_report_is_deterministic(bump17):
    f = BoundaryData.from_function(bump17.domain, lambda x, y: np.cos(x) + y)
    p = Problem(bump17.domain, f, bump17)
    a = solve_direct(p)[1].to_dict()
    b = solve_direct(p)[1].to_dict()
    assert a == b and "wall_time" not in a
