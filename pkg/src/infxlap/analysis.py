"""
Numerical checks of the qualitative estimates: comparison, the epsilon
sandwich, the logarithmic Caccioppoli bound, Harnack ratios, Lipschitz
bounds and consistency orders of the discrete operator.

All checks are read-only over their inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exponent import ExponentFamily, ExponentField, exponent_from_family
from .grid import BoundaryData, Domain, GridFunction, diff_sup_norm, make_domain
from .operator import (
    SmoothProbe,
    delta_inf_continuous,
    full_operator_discrete,
    normalized_inf_discrete,
    normalized_inf_x_continuous,
)
from .solvers import Problem, SolverError, solve_triple, solve_variational_limit

__all__ = [
    "ComparisonPreconditionError",
    "ComparisonReport",
    "check_comparison",
    "SandwichReport",
    "sandwich_experiment",
    "HarnackReport",
    "harnack_check",
    "fit_harnack_bound",
    "CutoffFunction",
    "make_cutoff",
    "CaccioppoliReport",
    "caccioppoli_check",
    "ConvergenceReport",
    "convergence_order",
    "LipschitzReport",
    "lipschitz_bound_check",
    "default_probes",
]


def _same_domain(u: GridFunction, v: GridFunction):
    if not u.domain.same_as(v.domain):
        raise ValueError("grid functions live on different domains")


# ---------------------------------------------------------------- comparison


class ComparisonPreconditionError(ValueError):
    """Boundary values are not ordered; the interior check is meaningless."""


@dataclass
class ComparisonReport:
    max_violation: float
    worst_node: tuple
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.max_violation <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "max_violation": self.max_violation,
            "worst_node": None if self.worst_node is None else list(self.worst_node),
            "tolerance": self.tolerance,
            "ok": self.ok,
        }


def check_comparison(u_sub: GridFunction, v_super: GridFunction, tol: float = 0.0,
                     boundary_tol: float = 0.0) -> ComparisonReport:
    """Largest interior excess ``max (u_sub - v_super)^+``.

    Raises :class:`ComparisonPreconditionError` when ``u_sub > v_super +
    boundary_tol`` at some boundary node.
    """
    _same_domain(u_sub, v_super)
    d = u_sub.domain
    diff = u_sub.values - v_super.values
    bnd = diff[d.boundary_mask]
    if bnd.size and np.max(bnd) > boundary_tol:
        raise ComparisonPreconditionError(
            f"boundary ordering violated by {float(np.max(bnd)):.3e}"
        )
    inner = np.where(d.interior_mask, diff, -np.inf)
    idx = np.unravel_index(int(np.argmax(inner)), inner.shape)
    worst = float(inner[idx])
    if worst <= 0.0:
        return ComparisonReport(0.0, None, tol)
    return ComparisonReport(worst, (int(idx[0]), int(idx[1])), tol)


# ---------------------------------------------------------------- sandwich


@dataclass
class SandwichReport:
    epsilons: list
    diffs: list
    lower_violations: list
    upper_violations: list
    tolerance: float
    kappa: float = None
    kappa_residual: float = None
    kappa_points: int = 0
    k: float = None
    errors: dict = field(default_factory=dict)
    converged: list = field(default_factory=list)

    @property
    def ordering_ok(self) -> bool:
        return all(
            a <= self.tolerance and b <= self.tolerance
            for a, b in zip(self.lower_violations, self.upper_violations)
        )

    @property
    def monotone(self) -> bool:
        return all(b < a for a, b in zip(self.diffs, self.diffs[1:]))

    def rows(self) -> list:
        return [
            {
                "epsilon": e,
                "diff_sup": dsup,
                "lower_violation": lo,
                "upper_violation": up,
                "kappa_fit": self.kappa,
            }
            for e, dsup, lo, up in zip(self.epsilons, self.diffs, self.lower_violations, self.upper_violations)
        ]

    def to_dict(self) -> dict:
        return {
            "epsilons": list(self.epsilons),
            "diffs": list(self.diffs),
            "lower_violations": list(self.lower_violations),
            "upper_violations": list(self.upper_violations),
            "tolerance": self.tolerance,
            "kappa": self.kappa,
            "kappa_residual": self.kappa_residual,
            "kappa_points": self.kappa_points,
            "k": self.k,
            "ordering_ok": self.ordering_ok,
            "monotone": self.monotone,
            "converged": list(self.converged),
            "errors": dict(self.errors),
        }


def _ordering_excess(a: GridFunction, b: GridFunction) -> float:
    """``max (a - b)^+`` over interior nodes."""
    m = a.domain.interior_mask
    if not m.any():
        return 0.0
    return max(0.0, float(np.max(a.values[m] - b.values[m])))


def sandwich_experiment(problem: Problem, epsilons, ordering_tol: float = None,
                        floor_factor: float = 50.0) -> SandwichReport:
    """Solve the upper and lower equations for each ``epsilon`` and fit ``kappa``.

    The plain solution ``h`` does not depend on ``epsilon`` and is computed
    once.  ``kappa`` is the least-squares slope of ``ln diff`` against
    ``ln epsilon`` over the points with ``diff > floor_factor * step_tol``;
    it is ``None`` when fewer than two such points exist.
    """
    eps = [float(e) for e in epsilons]
    if not eps:
        raise ValueError("need at least one epsilon")
    if any(not 0.0 < e < 1.0 for e in eps):
        raise ValueError("epsilons must lie in (0, 1)")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilons must be strictly decreasing")
    step_tol = problem.tolerances.step_tol
    tol = 10.0 * step_tol if ordering_tol is None else float(ordering_tol)

    h_sol = solve_variational_limit(problem.with_(epsilon=0.0), 0)
    rep = SandwichReport(eps, [], [], [], tol, k=problem.k_schedule[-1])
    for e in eps:
        try:
            um, h, up, reports = solve_triple(problem.with_(epsilon=e), h_solution=h_sol)
        except (SolverError, FloatingPointError) as exc:
            rep.errors[str(e)] = str(exc)
            rep.diffs.append(float("nan"))
            rep.lower_violations.append(float("inf"))
            rep.upper_violations.append(float("inf"))
            rep.converged.append(False)
            continue
        rep.diffs.append(diff_sup_norm(up, um))
        rep.lower_violations.append(_ordering_excess(um, h))
        rep.upper_violations.append(_ordering_excess(h, up))
        rep.converged.append(all(r.converged for r in reports.values()))

    pts = [(e, dv) for e, dv in zip(eps, rep.diffs) if np.isfinite(dv) and dv > floor_factor * step_tol]
    rep.kappa_points = len(pts)
    if len(pts) >= 2:
        x = np.log([p[0] for p in pts])
        y = np.log([p[1] for p in pts])
        slope, icpt = np.polyfit(x, y, 1)
        rep.kappa = float(slope)
        rep.kappa_residual = float(np.sqrt(np.mean((y - (slope * x + icpt)) ** 2)))
    return rep


# ---------------------------------------------------------------- harnack


def _ball(d: Domain, center, radius: float) -> np.ndarray:
    return np.hypot(d.x - center[0], d.y - center[1]) <= radius * (1 + 1e-12)


@dataclass
class HarnackReport:
    center: tuple
    R: float
    alpha: float
    sup_BR: float
    inf_BR: float
    ratio: float
    sup_B2R: float
    slope: float
    C1: float = None
    C2: float = None
    feasible: bool = False

    def to_dict(self) -> dict:
        return {
            "center": list(self.center),
            "R": self.R,
            "alpha": self.alpha,
            "sup_BR": self.sup_BR,
            "inf_BR": self.inf_BR,
            "ratio": self.ratio,
            "sup_B2R": self.sup_B2R,
            "required_log_slope": self.slope,
            "C1": self.C1,
            "C2": self.C2,
            "feasible": self.feasible,
        }


def harnack_check(u: GridFunction, center, R: float, alpha: float = 1.0,
                  c_grid=None) -> HarnackReport:
    """Harnack ratio ``sup_{B_R} u / (inf_{B_R} u + R)`` and the multiplicative form.

    The multiplicative form asks, for all node pairs ``x, y`` in ``B_R``,

        ln(u(x) + R) - ln(u(y) + R) <= (C2 / R**alpha + C1 * M) |x - y|

    with ``M = sup_{B_2R} (u + R)``.  The smallest feasible pair (by
    ``C1 + C2``) on ``c_grid x c_grid`` is reported; the default grid is 50
    logarithmically spaced values in ``[1e-3, 1e3]``.
    """
    if R <= 0:
        raise ValueError("R must be positive")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    d = u.domain
    center = (float(center[0]), float(center[1]))
    b1, b2 = _ball(d, center, R), _ball(d, center, 2 * R)
    # B_2R must sit inside the closed domain: no node of it may be outside
    lo = np.array(d.origin, float)
    hi = lo + d.h * np.array([d.nx - 1, d.ny - 1])
    if (center[0] - 2 * R < lo[0] - 1e-12 or center[0] + 2 * R > hi[0] + 1e-12
            or center[1] - 2 * R < lo[1] - 1e-12 or center[1] + 2 * R > hi[1] + 1e-12):
        raise ValueError("the ball B_2R is not contained in the grid")
    if (b2 & ~d.active_mask).any():
        raise ValueError("the ball B_2R is not contained in the domain")
    if not b1.any():
        raise ValueError("the ball B_R contains no node")
    vals = u.values
    if np.min(vals[b2]) < 0:
        raise ValueError("u must be nonnegative on B_2R")
    sup_r, inf_r = float(np.max(vals[b1])), float(np.min(vals[b1]))
    sup_2r = float(np.max(vals[b2]))

    lv = np.log(vals[b1] + R)
    px, py = d.x[b1], d.y[b1]
    dist = np.hypot(px[:, None] - px[None, :], py[:, None] - py[None, :])
    np.fill_diagonal(dist, np.inf)
    slope = float(np.max((lv[:, None] - lv[None, :]) / dist)) if lv.size > 1 else 0.0
    slope = max(slope, 0.0)

    grid = np.logspace(-3, 3, 50) if c_grid is None else np.asarray(c_grid, float)
    M = sup_2r + R
    c1, c2 = np.meshgrid(grid, grid, indexing="ij")
    ok = c2 / R**alpha + c1 * M >= slope
    rep = HarnackReport(center, float(R), float(alpha), sup_r, inf_r, sup_r / (inf_r + R), sup_2r, slope)
    if ok.any():
        cost = np.where(ok, c1 + c2, np.inf)
        i, j = np.unravel_index(int(np.argmin(cost)), cost.shape)
        rep.C1, rep.C2, rep.feasible = float(c1[i, j]), float(c2[i, j]), True
    return rep


def fit_harnack_bound(sups, ratios) -> dict:
    """Fit ``ratio <= a + b * sup_{B_2R}`` with ``b >= 0`` over a family of checks.

    ``b`` is the least-squares slope clipped at 0 and ``a`` the smallest
    offset making the bound hold at every point, so the bound is monotone
    and dominates the data by construction.  ``finite`` reports whether the
    inputs allow any such bound.
    """
    s = np.asarray(sups, float)
    r = np.asarray(ratios, float)
    if s.shape != r.shape or s.size == 0:
        raise ValueError("need matching, nonempty arrays")
    finite = bool(np.isfinite(s).all() and np.isfinite(r).all())
    if not finite:
        return {"a": None, "b": None, "finite": False, "max_excess": None}
    b = 0.0
    if s.size >= 2 and np.ptp(s) > 0:
        b = max(0.0, float(np.polyfit(s, r, 1)[0]))
    a = float(np.max(r - b * s))
    return {"a": a, "b": b, "finite": True, "max_excess": float(np.max(r - (a + b * s)))}


# ---------------------------------------------------------------- caccioppoli


@dataclass
class CutoffFunction:
    """Radial cutoff ``min(1, (2R - |x - center|)^+ / R)`` sampled on a grid."""

    values: GridFunction
    center: tuple
    R: float

    @property
    def support(self) -> np.ndarray:
        return self.values.values > 0

    @property
    def gradient_bound(self) -> float:
        return 2.0 / self.R


def make_cutoff(domain: Domain, center, R: float) -> CutoffFunction:
    if R <= 0:
        raise ValueError("R must be positive")
    c = (float(center[0]), float(center[1]))
    r = np.hypot(domain.x - c[0], domain.y - c[1])
    z = np.minimum(1.0, np.maximum(2 * R - r, 0.0) / R)
    return CutoffFunction(GridFunction(domain, z), c, float(R))


@dataclass
class CaccioppoliReport:
    lhs: float
    rhs: float
    rhs_classical: float
    slack: float

    @property
    def gap(self) -> float:
        return self.rhs + self.slack - self.lhs

    @property
    def ok(self) -> bool:
        return self.lhs <= self.rhs + self.slack

    def to_dict(self) -> dict:
        return {
            "lhs": self.lhs,
            "rhs": self.rhs,
            "rhs_classical": self.rhs_classical,
            "slack": self.slack,
            "gap": self.gap,
            "ok": self.ok,
        }


def _centered(a: np.ndarray, h: float):
    p = np.pad(a, 1, mode="edge")
    return (p[2:, 1:-1] - p[:-2, 1:-1]) / (2 * h), (p[1:-1, 2:] - p[1:-1, :-2]) / (2 * h)


def caccioppoli_check(u: GridFunction, zeta: CutoffFunction, field: ExponentField,
                      slack_constant: float = 1.0) -> CaccioppoliReport:
    """Discrete logarithmic Caccioppoli bound.

    ``LHS = max |zeta grad ln u|^p`` and
    ``RHS = max |grad zeta + zeta ln(zeta/u) grad ln p|^p`` with centered
    differences; ``zeta ln(zeta/u)`` is 0 where ``zeta = 0``.  The bound
    holds when ``LHS <= RHS + slack`` with
    ``slack = slack_constant * h * max(1, RHS)``.
    """
    d = u.domain
    if not zeta.values.domain.same_as(d) or not field.domain.same_as(d):
        raise ValueError("cutoff, exponent and u must share a domain")
    supp = zeta.support
    if (supp & ~d.interior_mask).any():
        raise ValueError("the cutoff support must consist of interior nodes")
    if np.min(u.values[supp]) <= 0:
        raise ValueError("u must be positive on the support of the cutoff")
    z = zeta.values.values
    # nodes where zeta or its centered gradient is nonzero
    near = supp.copy()
    near[1:, :] |= supp[:-1, :]
    near[:-1, :] |= supp[1:, :]
    near[:, 1:] |= supp[:, :-1]
    near[:, :-1] |= supp[:, 1:]
    near &= d.active_mask

    lnu = np.where(supp, np.log(np.where(supp, u.values, 1.0)), 0.0)
    # ln u only enters through grad ln u on the support, so take differences
    # of u itself to avoid reading outside values
    ux, uy = _centered(np.nan_to_num(u.values), d.h)
    safe_u = np.where(supp, u.values, 1.0)
    lx, ly = ux / safe_u, uy / safe_u
    zx, zy = _centered(z, d.h)
    p = field.p
    glp = field.grad_log_p

    lhs_mag = np.where(supp, z * np.hypot(lx, ly), 0.0)
    zl = np.where(supp, z * (np.log(np.where(supp, z, 1.0)) - lnu), 0.0)
    rx, ry = zx + zl * glp[0], zy + zl * glp[1]
    rhs_mag = np.hypot(rx, ry)
    cls_mag = np.hypot(zx, zy)

    def mx(a):
        vals = a[near] ** p[near]
        return float(np.max(vals)) if vals.size else 0.0

    lhs, rhs, cls = mx(lhs_mag), mx(rhs_mag), mx(cls_mag)
    return CaccioppoliReport(lhs, rhs, cls, slack_constant * d.h * max(1.0, rhs))


# ---------------------------------------------------------------- consistency


@dataclass
class ConvergenceReport:
    h_list: list
    errors: dict
    orders: dict
    exact: dict
    points: list

    def to_dict(self) -> dict:
        return {
            "h": list(self.h_list),
            "errors": {k: list(v) for k, v in self.errors.items()},
            "orders": dict(self.orders),
            "exact": dict(self.exact),
            "points": [list(p) for p in self.points],
        }


def _patch(probe: SmoothProbe, family, pt, h):
    d = make_domain(3, 3, h, origin=(pt[0] - h, pt[1] - h))
    vals = np.asarray(probe.value(np.stack([d.x, d.y])), dtype=float)
    u = GridFunction(d, np.broadcast_to(vals, d.x.shape).copy())
    return u, exponent_from_family(d, family)


def convergence_order(probe: SmoothProbe, field: ExponentFamily, h_list, points=None,
                      scheme: str = "upwind-log", stencil: str = "directional",
                      min_gradient: float = 1e-3, exact_tol: float = 1e-11,
                      operator=full_operator_discrete) -> ConvergenceReport:
    """Operator error against the continuous value at fixed points under refinement.

    Each ``(point, h)`` uses the 3x3 stencil centred at the point, so the
    sample points need not be grid nodes.  Reports for ``"normalized"``
    (without the logarithmic term) and ``"full"`` the max error per ``h`` and
    the least-squares log-log slope; an operator whose errors all stay below
    ``exact_tol`` is flagged exact with order ``None``.  ``operator`` replaces
    the full discrete operator (same signature as
    :func:`~infxlap.operator.full_operator_discrete`).
    """
    hs = [float(h) for h in h_list]
    if len(hs) < 3:
        raise ValueError("need at least three spacings")
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ValueError("h_list must be strictly decreasing")
    if points is None:
        g = np.linspace(0.25, 0.75, 3)
        points = [(float(a), float(b)) for a in g for b in g]
    points = [(float(p[0]), float(p[1])) for p in points]
    for pt in points:
        gr = np.asarray(probe.gradient(np.array(pt)), float)
        if np.hypot(gr[0], gr[1]) < min_gradient:
            raise ValueError(f"probe gradient too small at {pt}")

    exact_vals = {"normalized": [], "full": []}
    for pt in points:
        x = np.array(pt)
        gr = np.asarray(probe.gradient(x), float)
        exact_vals["normalized"].append(delta_inf_continuous(probe, x) / float(gr @ gr))
        exact_vals["full"].append(normalized_inf_x_continuous(probe, x, field))

    errors = {"normalized": [], "full": []}
    for h in hs:
        en, ef = 0.0, 0.0
        for n, pt in enumerate(points):
            u, fld = _patch(probe, field, pt, h)
            en = max(en, abs(normalized_inf_discrete(u, (1, 1), stencil) - exact_vals["normalized"][n]))
            ef = max(ef, abs(operator(u, (1, 1), fld, scheme=scheme, stencil=stencil)
                             - exact_vals["full"][n]))
        errors["normalized"].append(en)
        errors["full"].append(ef)

    orders, exact = {}, {}
    for name, errs in errors.items():
        scale = 1.0 + max(abs(v) for v in exact_vals[name])
        if max(errs) <= exact_tol * scale:
            exact[name], orders[name] = True, None
            continue
        exact[name] = False
        e = np.maximum(np.asarray(errs), 1e-300)
        orders[name] = float(np.polyfit(np.log(hs), np.log(e), 1)[0])
    return ConvergenceReport(hs, errors, orders, exact, points)


# ---------------------------------------------------------------- lipschitz


@dataclass
class LipschitzReport:
    max_gradient: float
    boundary_lipschitz: float
    ratio: float

    def to_dict(self) -> dict:
        return {"max_gradient": self.max_gradient, "boundary_lipschitz": self.boundary_lipschitz, "ratio": self.ratio}


def lipschitz_bound_check(u: GridFunction, f: BoundaryData) -> LipschitzReport:
    """Largest centered-gradient magnitude over interior nodes relative to ``Lip(f)``."""
    d = u.domain
    m = d.interior_mask
    v = u.values
    g = 0.0
    if m.any():
        gx = (v[2:, 1:-1] - v[:-2, 1:-1]) / (2 * d.h)
        gy = (v[1:-1, 2:] - v[1:-1, :-2]) / (2 * d.h)
        g = float(np.max(np.hypot(gx, gy)[m[1:-1, 1:-1]]))
    L = float(f.lipschitz_constant)
    ratio = g / L if L > 0 else (0.0 if g == 0 else math.inf)
    return LipschitzReport(g, L, ratio)


def default_probes() -> list:
    """Three smooth probes whose gradients stay away from 0 on the unit square."""

    def p1():
        return SmoothProbe(
            lambda X: np.exp(0.5 * X[0]) + X[1] ** 2 + X[1],
            lambda x: np.array([0.5 * np.exp(0.5 * x[0]), 2 * x[1] + 1]),
            lambda x: np.array([[0.25 * np.exp(0.5 * x[0]), 0.0], [0.0, 2.0]]),
            "exp-quadratic",
        )

    def p2():
        def hess(x):
            s = np.sin(x[0] + 2 * x[1])
            return np.array([[-s, 1 - 2 * s], [1 - 2 * s, -4 * s]])

        return SmoothProbe(
            lambda X: np.sin(X[0] + 2 * X[1]) + X[0] * X[1] + 3 * X[0],
            lambda x: np.array([np.cos(x[0] + 2 * x[1]) + x[1] + 3, 2 * np.cos(x[0] + 2 * x[1]) + x[0]]),
            hess,
            "sine-bilinear",
        )

    def p3():
        return SmoothProbe(
            lambda X: X[0] ** 3 / 3 + X[0] * X[1] + 2 * X[1],
            lambda x: np.array([x[0] ** 2 + x[1], x[0] + 2]),
            lambda x: np.array([[2 * x[0], 1.0], [1.0, 0.0]]),
            "cubic",
        )

    return [p1(), p2(), p3()]
