"""
Solvers for the Dirichlet problem: the variational route through the
``k p(x)``-energies and a direct Gauss-Seidel iteration on the discrete
limit operator.

Energy discretisation
---------------------
Gradients are piecewise constant on the standard P1 triangulation of the
grid: every square ``[i, i+1] x [j, j+1]`` splits into a lower triangle with
gradient ``D+ u(i, j)`` and an upper triangle with gradient ``D- u(i+1, j+1)``,
each of area ``h^2 / 2``.  Triangles count when all three vertices are
active.  The exponent on a triangle is the mean of its vertex values.  The
source term is lumped on interior nodes::

    E(u) = sum_T |T| |grad u_T|^q_T / q_T  -  sign * h^2 * sum_n eps^(k p_n - 1) u_n,
    q_T = k p_T.

Powers are evaluated as ``exp(q ln s)``; arguments ``s < 1e-300`` give 0 and
exponents above 700 raise :class:`EnergyOverflowError`.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import newton_krylov
from scipy.optimize import NoConvergence

from .exponent import ExponentField
from .grid import BoundaryData, Domain, GridFunction, diff_sup_norm, gradient_magnitude_upwind_field
from .operator import SCHEMES, STENCILS, default_guard, residual_field

__all__ = [
    "Tolerances",
    "Problem",
    "SolveReport",
    "SolverError",
    "EnergyOverflowError",
    "default_k_schedule",
    "energy",
    "energy_gradient",
    "energy_hessian_diagonal",
    "harmonic_extension",
    "minimize_energy",
    "local_step_norm",
    "solve_variational_limit",
    "solve_direct",
    "solve_triple",
]

log = logging.getLogger(__name__)

_LOG_CAP = 700.0
_TINY = 1e-300


class SolverError(RuntimeError):
    def __init__(self, msg, partial=None):
        super().__init__(msg)
        self.partial = partial


class EnergyOverflowError(FloatingPointError):
    pass


@dataclass(frozen=True)
class Tolerances:
    residual_tol: float = None
    step_tol: float = 1e-9
    max_iters: int = 100_000
    descent_max_iters: int = 20_000

    def to_dict(self) -> dict:
        return {
            "residual_tol": self.residual_tol,
            "step_tol": self.step_tol,
            "max_iters": self.max_iters,
            "descent_max_iters": self.descent_max_iters,
        }


def default_k_schedule(p_min: float, kp_max: float = 64.0) -> list:
    """``k`` with ``k p_min`` in 2, 4, 8, ... up to ``kp_max``."""
    out, k = [], 2.0 / p_min
    while k * p_min <= kp_max * (1 + 1e-12):
        out.append(k)
        k *= 2.0
    return out


@dataclass
class Problem:
    domain: Domain
    boundary: BoundaryData
    exponent: ExponentField
    epsilon: float = 0.0
    k_schedule: list = None
    tolerances: Tolerances = field(default_factory=Tolerances)
    scheme: str = "upwind-log"
    stencil: str = "directional"
    omega: float = 0.8

    def __post_init__(self):
        if not (self.boundary.domain.same_as(self.domain) and self.exponent.domain.same_as(self.domain)):
            raise ValueError("boundary data and exponent must live on the problem domain")
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in [0, 1), got {self.epsilon}")
        if self.k_schedule is None:
            self.k_schedule = default_k_schedule(self.exponent.p_min)
        ks = [float(k) for k in self.k_schedule]
        if not ks:
            raise ValueError("k_schedule is empty")
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise ValueError("k_schedule must be strictly increasing")
        if ks[0] * self.exponent.p_min < 2.0 - 1e-12:
            raise ValueError("every scheduled k needs k * p_min >= 2")
        self.k_schedule = ks
        if self.tolerances.residual_tol is None:
            self.tolerances = replace(
                self.tolerances, residual_tol=1e-8 * (1.0 + self.boundary.lipschitz_constant)
            )
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.stencil not in STENCILS:
            raise ValueError(f"unknown stencil {self.stencil!r}")
        if not 0.0 < self.omega < 2.0:
            raise ValueError("damping omega must lie in (0, 2)")

    def with_(self, **changes) -> "Problem":
        return replace(self, **changes)

    def initial_guess(self) -> GridFunction:
        return harmonic_extension(self.boundary)

    def describe(self) -> dict:
        return {
            "domain": self.domain.to_dict(),
            "exponent": self.exponent.to_dict(),
            "boundary_lipschitz": self.boundary.lipschitz_constant,
            "epsilon": self.epsilon,
            "k_schedule": list(self.k_schedule),
            "tolerances": self.tolerances.to_dict(),
            "scheme": self.scheme,
            "stencil": self.stencil,
            "omega": self.omega,
        }


@dataclass
class SolveReport:
    method: str
    converged: bool = False
    iterations: int = 0
    residual: float = float("nan")
    energy: float = None
    k: float = None
    wall_time: float = 0.0
    warnings: list = field(default_factory=list)
    history: dict = field(default_factory=dict)
    stages: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "converged": self.converged,
            "iterations": self.iterations,
            "residual": self.residual,
            "energy": self.energy,
            "k": self.k,
            "warnings": list(self.warnings),
            "history": {k: list(v) if isinstance(v, (list, tuple, np.ndarray)) else v for k, v in self.history.items()},
            "stages": [s.to_dict() for s in self.stages],
        }


# ---------------------------------------------------------------- energy


class _Mesh:
    """Active P1 triangles of a domain and their vertex index arrays."""

    def __init__(self, domain: Domain):
        a = domain.active_mask
        lower = a[:-1, :-1] & a[1:, :-1] & a[:-1, 1:]
        upper = a[1:, 1:] & a[:-1, 1:] & a[1:, :-1]
        self.lower = lower
        self.upper = upper
        self.area = 0.5 * domain.h**2


_MESH_CACHE: dict = {}


def _mesh(domain: Domain) -> _Mesh:
    key = id(domain)
    hit = _MESH_CACHE.get(key)
    if hit is None or hit[0] is not domain:
        hit = (domain, _Mesh(domain))
        _MESH_CACHE[key] = hit
    return hit[1]


def _triangle_data(u: np.ndarray, domain: Domain, k: float, field: ExponentField):
    h = domain.h
    p = field.p
    uc = np.where(domain.active_mask, u, 0.0)
    # lower: (i,j), (i+1,j), (i,j+1); upper: (i+1,j+1), (i,j+1), (i+1,j)
    gl = np.stack([(uc[1:, :-1] - uc[:-1, :-1]) / h, (uc[:-1, 1:] - uc[:-1, :-1]) / h])
    gu = np.stack([(uc[1:, 1:] - uc[:-1, 1:]) / h, (uc[1:, 1:] - uc[1:, :-1]) / h])
    pc = np.where(domain.active_mask, p, 0.0)
    ql = k * (pc[:-1, :-1] + pc[1:, :-1] + pc[:-1, 1:]) / 3.0
    qu = k * (pc[1:, 1:] + pc[:-1, 1:] + pc[1:, :-1]) / 3.0
    return gl, gu, ql, qu


def _powers(g: np.ndarray, q: np.ndarray, mask: np.ndarray, shift: float):
    """``|g|^(q - shift)`` on ``mask`` in log-domain; 0 for tiny ``|g|``."""
    s = np.hypot(g[0], g[1])
    live = mask & (s >= _TINY)
    out = np.zeros(s.shape)
    e = (q[live] - shift) * np.log(s[live])
    if e.size and e.max() > _LOG_CAP:
        raise EnergyOverflowError(f"|grad u|^(kp) exceeds exp({_LOG_CAP:.0f}); reduce k or rescale data")
    out[live] = np.exp(e)
    if shift == 2.0:
        # |g|^0 = 1 even for g = 0 when q = 2
        out[mask & ~live & (q == 2.0)] = 1.0
    return out, s


def _source(domain: Domain, k: float, field: ExponentField, epsilon: float) -> np.ndarray:
    if epsilon == 0.0:
        return np.zeros((domain.nx, domain.ny))
    m = domain.interior_mask
    out = np.zeros((domain.nx, domain.ny))
    out[m] = domain.h**2 * np.exp((k * field.p[m] - 1.0) * np.log(epsilon))
    return out


def _check_k(k: float, field: ExponentField):
    if k * field.p_min < 2.0 - 1e-12:
        raise ValueError(f"k * p_min = {k * field.p_min:.4g} < 2")


def energy(u: GridFunction, k: float, field: ExponentField, epsilon: float = 0.0, sign: int = 0) -> float:
    """Discrete ``k p(x)``-energy with the signed source term (see module notes)."""
    _check_k(k, field)
    if sign not in (-1, 0, 1):
        raise ValueError("sign must be -1, 0 or +1")
    d = u.domain
    mesh = _mesh(d)
    gl, gu, ql, qu = _triangle_data(u.values, d, k, field)
    pl, _ = _powers(gl, ql, mesh.lower, 0.0)
    pu, _ = _powers(gu, qu, mesh.upper, 0.0)
    e = mesh.area * (np.sum(pl[mesh.lower] / ql[mesh.lower]) + np.sum(pu[mesh.upper] / qu[mesh.upper]))
    if sign != 0:
        src = _source(d, k, field, epsilon)
        m = d.interior_mask
        e -= sign * float(np.sum(src[m] * u.values[m]))
    return float(e)


def _flux(u: np.ndarray, domain: Domain, k: float, field: ExponentField):
    mesh = _mesh(domain)
    gl, gu, ql, qu = _triangle_data(u, domain, k, field)
    wl, sl = _powers(gl, ql, mesh.lower, 2.0)
    wu, su = _powers(gu, qu, mesh.upper, 2.0)
    return mesh, gl, gu, ql, qu, wl, wu, sl, su


def energy_gradient(u: GridFunction, k: float, field: ExponentField, epsilon: float = 0.0, sign: int = 0) -> GridFunction:
    """Partial derivatives of :func:`energy` in the interior nodal values; 0 elsewhere."""
    _check_k(k, field)
    d = u.domain
    mesh, gl, gu, _, _, wl, wu, _, _ = _flux(u.values, d, k, field)
    a, h = mesh.area, d.h
    fl = np.where(mesh.lower, a * wl / h, 0.0) * gl
    fu = np.where(mesh.upper, a * wu / h, 0.0) * gu
    grad = np.zeros((d.nx, d.ny))
    grad[:-1, :-1] -= fl[0] + fl[1]
    grad[1:, :-1] += fl[0]
    grad[:-1, 1:] += fl[1]
    grad[1:, 1:] += fu[0] + fu[1]
    grad[:-1, 1:] -= fu[0]
    grad[1:, :-1] -= fu[1]
    if sign != 0:
        grad -= sign * _source(d, k, field, epsilon)
    grad[~d.interior_mask] = 0.0
    return GridFunction(d, grad)


def energy_hessian_diagonal(u: GridFunction, k: float, field: ExponentField) -> np.ndarray:
    """Diagonal of the energy Hessian, ``|T| |g|^(q-2) (|b|^2 + (q-2) <g/|g|, b>^2)`` summed over triangles."""
    d = u.domain
    mesh, gl, gu, ql, qu, wl, wu, sl, su = _flux(u.values, d, k, field)
    a, h2 = mesh.area, d.h**2

    def contrib(g, s, q, w, mask, b):
        with np.errstate(invalid="ignore", divide="ignore"):
            proj = np.where(s > 0, (g[0] * b[0] + g[1] * b[1]) / np.where(s > 0, s, 1.0), 0.0)
        val = a * w * ((b[0] ** 2 + b[1] ** 2) + (q - 2.0) * proj**2) / h2
        return np.where(mask, val, 0.0)

    diag = np.zeros((d.nx, d.ny))
    diag[:-1, :-1] += contrib(gl, sl, ql, wl, mesh.lower, (-1.0, -1.0))
    diag[1:, :-1] += contrib(gl, sl, ql, wl, mesh.lower, (1.0, 0.0))
    diag[:-1, 1:] += contrib(gl, sl, ql, wl, mesh.lower, (0.0, 1.0))
    diag[1:, 1:] += contrib(gu, su, qu, wu, mesh.upper, (1.0, 1.0))
    diag[:-1, 1:] += contrib(gu, su, qu, wu, mesh.upper, (-1.0, 0.0))
    diag[1:, :-1] += contrib(gu, su, qu, wu, mesh.upper, (0.0, -1.0))
    diag[~d.interior_mask] = 0.0
    return diag


# ---------------------------------------------------------------- helpers


def harmonic_extension(boundary: BoundaryData) -> GridFunction:
    """Discrete (5-point) harmonic function with the given boundary values.

    Outside nodes are NaN.
    """
    d = boundary.domain
    m = d.interior_mask
    idx = -np.ones((d.nx, d.ny), dtype=int)
    idx[m] = np.arange(m.sum())
    bvals = boundary.as_array(fill=0.0)
    rows, cols, data = [], [], []
    rhs = np.zeros(m.sum())
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        ii, jj = np.nonzero(m)
        ni, nj = ii + di, jj + dj
        nb_interior = m[ni, nj]
        r = idx[ii, jj]
        rows.append(r[nb_interior])
        cols.append(idx[ni[nb_interior], nj[nb_interior]])
        data.append(-np.ones(nb_interior.sum()))
        np.add.at(rhs, r[~nb_interior], bvals[ni[~nb_interior], nj[~nb_interior]])
    n = m.sum()
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    data.append(4.0 * np.ones(n))
    A = sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    sol = spla.spsolve(A.tocsc(), rhs)
    out = np.full((d.nx, d.ny), np.nan)
    out[d.boundary_mask] = boundary.values
    out[m] = sol
    return GridFunction(d, out)


def _pin(u: np.ndarray, boundary: BoundaryData) -> np.ndarray:
    d = boundary.domain
    u = u.copy()
    u[d.boundary_mask] = boundary.values
    u[~d.active_mask] = np.nan
    return u


# ---------------------------------------------------------------- descent


def _triangle_energies(vals: np.ndarray, d: Domain, k: float, field: ExponentField):
    """Per-triangle ``|T| |g|^q / q``; ``inf`` where the power would overflow."""
    mesh = _mesh(d)
    gl, gu, ql, qu = _triangle_data(vals, d, k, field)
    out = []
    for g, q, mask in ((gl, ql, mesh.lower), (gu, qu, mesh.upper)):
        s = np.hypot(g[0], g[1])
        live = mask & (s >= _TINY)
        e = np.zeros(s.shape)
        with np.errstate(over="ignore"):
            lg = q[live] * np.log(s[live])
            e[live] = np.where(lg > _LOG_CAP, np.inf, mesh.area * np.exp(np.minimum(lg, _LOG_CAP)) / q[live])
        out.append(e)
    return out


def _local_energy(vals: np.ndarray, d: Domain, k: float, field: ExponentField, src: np.ndarray, sign: int):
    """Part of the energy that depends on each node's value (its six triangles plus source)."""
    el, eu = _triangle_energies(vals, d, k, field)
    loc = np.zeros((d.nx, d.ny))
    loc[:-1, :-1] += el
    loc[1:, :-1] += el
    loc[:-1, 1:] += el
    loc[1:, 1:] += eu
    loc[:-1, 1:] += eu
    loc[1:, :-1] += eu
    if sign != 0:
        loc -= sign * src * np.where(d.interior_mask, vals, 0.0)
    return loc


def _newton_steps(vals, d, k, field, eps, sign):
    gf = GridFunction(d, vals)
    g = energy_gradient(gf, k, field, eps, sign).values
    D = energy_hessian_diagonal(gf, k, field)
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.where(D > 0, g / np.where(D > 0, D, 1.0), np.where(g != 0, np.inf, 0.0))
    step[~d.interior_mask] = 0.0
    return g, D, step


def local_step_norm(u: GridFunction, k: float, field: ExponentField, epsilon: float = 0.0, sign: int = 0) -> float:
    """Sup-norm of the nodewise Newton steps ``grad E / diag(Hess E)`` (units of u)."""
    _, _, step = _newton_steps(u.values, u.domain, k, field, epsilon, sign)
    return float(np.max(np.abs(step[u.domain.interior_mask])))


def _colour_masks(d: Domain):
    ii, jj = np.meshgrid(np.arange(d.nx), np.arange(d.ny), indexing="ij")
    masks = [d.interior_mask & (ii % 2 == a) & (jj % 2 == b) for a in (0, 1) for b in (0, 1)]
    return [m for m in masks if m.any()]


def _nodewise_sweep(vals, d, k, field, eps, sign, src, cap):
    """One pass of preconditioned descent with per-node backtracking, colour by colour.

    Nodes of one parity colour share no triangle, so their local energies
    are independent and every accepted node step lowers the total energy.
    Returns the largest Newton step seen.
    """
    worst = 0.0
    for col in _colour_masks(d):
        g, D, newton = _newton_steps(vals, d, k, field, eps, sign)
        worst = max(worst, float(np.max(np.abs(newton[col]))))
        step = np.clip(-np.where(np.isfinite(newton), newton, np.sign(g) * cap), -cap, cap)
        pending = col & (step != 0)
        if not pending.any():
            continue
        e0 = _local_energy(vals, d, k, field, src, sign)
        t = 1.0
        for _ in range(60):
            trial = vals.copy()
            trial[pending] += t * step[pending]
            e1 = _local_energy(trial, d, k, field, src, sign)
            ok = pending & (e1 <= e0 + 1e-4 * t * g * step + 1e-15 * np.abs(e0))
            vals[ok] = trial[ok]
            pending &= ~ok
            t *= 0.5
            # steps below the resolution of the node value cannot be accepted
            pending &= t * np.abs(step) > 1e-15 * (1.0 + np.abs(np.nan_to_num(vals)))
            if not pending.any():
                break
    return worst


def minimize_energy(problem: Problem, k: float, sign: int = 0, warm_start: GridFunction = None, memory: int = 12):
    """Minimise the ``k``-energy with boundary values pinned.

    Two phases.  A global phase takes limited-memory BFGS directions scaled
    by the Hessian diagonal with an Armijo backtracking line search (a
    preconditioned steepest-descent step replaces any non-descent
    direction).  It stops once the total energy no longer resolves further
    progress, which at large ``k p`` happens early in flat regions whose
    energy is many orders below the total.  A nodewise phase then applies
    diagonal-Newton steps with per-node backtracking on the local energy.

    Convergence: every nodewise Newton step ``|dE/du_n| / (d^2E/du_n^2)`` is at
    most ``step_tol`` (units of u).
    """
    t0 = time.perf_counter()
    d, field, eps = problem.domain, problem.exponent, problem.epsilon
    tol = problem.tolerances
    _check_k(k, field)
    if sign not in (-1, 0, 1):
        raise ValueError("sign must be -1, 0 or +1")
    m = d.interior_mask
    if warm_start is None:
        u = problem.initial_guess().values
    else:
        if not warm_start.domain.same_as(d):
            raise ValueError("warm start lives on another domain")
        u = warm_start.values
    u = _pin(u, problem.boundary)
    rep = SolveReport(method="descent", k=k)
    energies = []

    def f_and_g(vals):
        gf = GridFunction(d, vals)
        return energy(gf, k, field, eps, sign), energy_gradient(gf, k, field, eps, sign).values[m]

    def precond(vals):
        diag = energy_hessian_diagonal(GridFunction(d, vals), k, field)[m]
        floor = 1e-10 * max(float(diag.max()), 1e-300)
        return np.maximum(diag, floor)

    E, g = f_and_g(u)
    energies.append(E)
    S, Y = [], []
    it = 0
    stalled = 0
    res = local_step_norm(GridFunction(d, u), k, field, eps, sign)
    mark_it, mark_res = 0, res
    while res > tol.step_tol and it < tol.descent_max_iters and stalled < 25:
        if it - mark_it >= 100:
            # hand over to the nodewise phase once progress slows down
            if res > 0.5 * mark_res:
                break
            mark_it, mark_res = it, res
        D = precond(u)
        # two-loop recursion with H0 = gamma D^-1
        q = g.copy()
        alphas = []
        for s, y in reversed(list(zip(S, Y))):
            rho = 1.0 / np.dot(y, s)
            al = rho * np.dot(s, q)
            alphas.append((al, rho, s, y))
            q -= al * y
        if S:
            s, y = S[-1], Y[-1]
            gamma = np.dot(s, y) / np.dot(y, y / D)
        else:
            gamma = 1.0
        r = gamma * q / D
        for al, rho, s, y in reversed(alphas):
            beta = rho * np.dot(y, r)
            r += s * (al - beta)
        direction = -r
        slope = np.dot(g, direction)
        if not slope < 0:
            direction = -g / D
            slope = np.dot(g, direction)
            S.clear()
            Y.clear()
        step = 1.0
        accepted = False
        while step > 1e-16:
            trial = u.copy()
            trial[m] = u[m] + step * direction
            try:
                Et, gt = f_and_g(trial)
            except EnergyOverflowError:
                step *= 0.25
                continue
            if Et <= E + 1e-4 * step * slope:
                accepted = True
                break
            # energy differences below round-off: fall back to the curvature condition
            if Et - E <= 1e-13 * abs(E) and abs(np.dot(gt, direction)) <= 0.9 * abs(slope):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            if S:
                S.clear()
                Y.clear()
                stalled += 1
                continue
            break
        s_vec = trial[m] - u[m]
        y_vec = gt - g
        if np.dot(s_vec, y_vec) > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            S.append(s_vec)
            Y.append(y_vec)
            if len(S) > memory:
                S.pop(0)
                Y.pop(0)
        stalled = stalled + 1 if E - Et <= 1e-15 * abs(E) else 0
        u, E, g = trial, Et, gt
        energies.append(E)
        it += 1
        res = local_step_norm(GridFunction(d, u), k, field, eps, sign)
    rep.history["global_iterations"] = it

    sweeps = 0
    if res > tol.step_tol:
        src = _source(d, k, field, eps) if sign != 0 else np.zeros((d.nx, d.ny))
        cap = d.h * (1.0 + problem.boundary.lipschitz_constant)
        while sweeps < tol.descent_max_iters:
            _nodewise_sweep(u, d, k, field, eps, sign, src, cap)
            sweeps += 1
            if sweeps % 5 == 0:
                res = local_step_norm(GridFunction(d, u), k, field, eps, sign)
                energies.append(energy(GridFunction(d, u), k, field, eps, sign))
                if res <= tol.step_tol:
                    break
        res = local_step_norm(GridFunction(d, u), k, field, eps, sign)
        E = energy(GridFunction(d, u), k, field, eps, sign)
        energies.append(E)
    rep.history["nodewise_sweeps"] = sweeps
    rep.iterations = it + sweeps
    rep.residual = res
    rep.energy = E
    rep.converged = bool(res <= tol.step_tol)
    if not rep.converged:
        rep.warnings.append(f"descent stopped at k={k:.4g} with nodewise step {res:.3e} > {tol.step_tol:.1e}")
    rep.history["energy"] = energies
    rep.wall_time = time.perf_counter() - t0
    return GridFunction(d, u), rep


def solve_variational_limit(problem: Problem, sign: int = 0, warm_start: GridFunction = None):
    """Minimise along ``problem.k_schedule`` with warm starts; return the last minimiser.

    The report lists every stage and the sup-distance between consecutive
    minimisers (``history["cauchy"]``).
    """
    t0 = time.perf_counter()
    rep = SolveReport(method="variational")
    u = warm_start
    cauchy = []
    for k in problem.k_schedule:
        prev = u
        u, st = minimize_energy(problem, k, sign, warm_start=u)
        rep.stages.append(st)
        rep.iterations += st.iterations
        rep.warnings.extend(st.warnings)
        if prev is not None:
            cauchy.append(diff_sup_norm(prev, u))
        rep.k = k
        rep.energy = st.energy
        rep.residual = st.residual
    rep.converged = all(s.converged for s in rep.stages)
    rep.history["cauchy"] = cauchy
    rep.history["k"] = list(problem.k_schedule)
    rep.history["limit_residual"] = float(
        np.max(np.abs(residual_field(u, problem.exponent, scheme=problem.scheme, stencil=problem.stencil).values))
    )
    rep.wall_time = time.perf_counter() - t0
    return u, rep


# ---------------------------------------------------------------- direct


def _gs_target(v: np.ndarray, d: Domain, field: ExponentField, guard: float, scheme: str, stencil: str):
    """Node value that zeroes the discrete operator with gradient data frozen."""
    h = d.h
    c = v[1:-1, 1:-1]
    E, W, N, S = v[2:, 1:-1], v[:-2, 1:-1], v[1:-1, 2:], v[1:-1, :-2]
    mx = np.maximum(np.maximum(E, W), np.maximum(N, S))
    mn = np.minimum(np.minimum(E, W), np.minimum(N, S))
    target = 0.5 * (mx + mn)
    gx = (E - W) / (2 * h)
    gy = (N - S) / (2 * h)
    if stencil == "directional":
        s = np.hypot(gx, gy)
        live = s >= guard
        ss = np.where(live, s, 1.0)
        a, b = gx / ss, gy / ss
        uxy = (v[2:, 2:] - v[:-2, 2:] - v[2:, :-2] + v[:-2, :-2]) / (4 * h**2)
        directional = 0.5 * (a * a * (E + W) + b * b * (N + S) + 2.0 * a * b * h * h * uxy)
        target = np.where(live, directional, target)
    if not field.is_constant:
        if scheme == "upwind-log":
            mag = gradient_magnitude_upwind_field(GridFunction(d, v))[1:-1, 1:-1]
        else:
            mag = np.hypot(gx, gy)
        glp = field.grad_log_p[:, 1:-1, 1:-1]
        ok = mag >= guard
        lt = np.zeros(mag.shape)
        lt[ok] = np.log(mag[ok]) * (gx[ok] * glp[0][ok] + gy[ok] * glp[1][ok])
        target = target + 0.5 * h * h * lt
    return c, target


def _newton_polish(v, problem: Problem, guard: float, maxiter: int):
    """Jacobian-free Newton-Krylov on the interior residual, started at ``v``.

    Returns the new node array, or ``None`` when the iteration fails.
    """
    d, field = problem.domain, problem.exponent
    m = d.interior_mask
    scale = d.h**2

    def F(x):
        w = v.copy()
        w[m] = x
        r = residual_field(GridFunction(d, w), field, guard, problem.scheme, problem.stencil)
        return r.values[m] * scale

    try:
        with np.errstate(all="ignore"):
            x = newton_krylov(F, v[m], f_tol=problem.tolerances.residual_tol * scale, maxiter=maxiter)
    except (NoConvergence, ValueError, FloatingPointError, np.linalg.LinAlgError):
        return None
    if not np.all(np.isfinite(x)):
        return None
    out = v.copy()
    out[m] = x
    return out


def solve_direct(problem: Problem, warm_start: GridFunction = None, check_every: int = 10,
                 patience: int = 20, omega_min: float = 0.05, newton_switch: float = 1e-3,
                 newton_maxiter: int = 50):
    """Damped nonlinear Gauss-Seidel on the discrete limit operator, with a Newton finish.

    Four-colour ordering by index parity so that no node reads a value
    updated in the same half-sweep.  Each node moves towards the value that
    zeroes its residual with the gradient data frozen:
    ``u <- (1 - omega) u + omega * target``.

    The directional stencil is not monotone and the sweeps can cycle or
    crawl.  ``omega`` is halved (down to ``omega_min``) whenever the residual
    fails to improve over ``patience`` consecutive checks.  Once the residual
    is below ``newton_switch * (1 + Lip f)``, or the sweeps stall at
    ``omega_min``, a Jacobian-free Newton-Krylov phase takes over; if it
    fails the sweeps resume from the better iterate.  ``newton_maxiter=0``
    disables the Newton phase.
    """
    t0 = time.perf_counter()
    d, field, tol = problem.domain, problem.exponent, problem.tolerances
    v = (warm_start.values if warm_start is not None else problem.initial_guess().values).copy()
    v = _pin(v, problem.boundary)
    u = GridFunction(d, v)
    guard = default_guard(u)
    m = d.interior_mask
    ii, jj = np.meshgrid(np.arange(d.nx), np.arange(d.ny), indexing="ij")
    colours = [m & (ii % 2 == a) & (jj % 2 == b) for a in (0, 1) for b in (0, 1)]
    colours = [c[1:-1, 1:-1] for c in colours if c.any()]
    rep = SolveReport(method="direct")
    hist, newton = [], []
    switch = newton_switch * (1.0 + problem.boundary.lipschitz_constant)

    def residual_of(w):
        r = residual_field(GridFunction(d, w), field, guard, problem.scheme, problem.stencil).values[m]
        return float(np.max(np.abs(r))) if r.size else 0.0

    res = residual_of(v)
    hist.append(res)
    sweeps = 0
    omega = problem.omega
    best, stall, damping = res, 0, []
    tried_at = None
    while res > tol.residual_tol and sweeps < tol.max_iters:
        stuck = omega <= omega_min and stall >= patience
        if newton_maxiter > 0 and (res <= switch or stuck) and tried_at != sweeps:
            tried_at = sweeps
            w = _newton_polish(v, problem, guard, newton_maxiter)
            r_new = residual_of(w) if w is not None else float("inf")
            newton.append([sweeps, r_new])
            if r_new < res:
                v[...] = w
                res = r_new
                hist.append(res)
                best, stall = res, 0
                if res <= tol.residual_tol:
                    break
            # a failed attempt only retries after the residual halves again
            switch = min(switch, 0.5 * res)
            if stuck:
                stall = 0
        for col in colours:
            c, target = _gs_target(v, d, field, guard, problem.scheme, problem.stencil)
            inner = v[1:-1, 1:-1]
            inner[col] = (1.0 - omega) * c[col] + omega * target[col]
        sweeps += 1
        if sweeps % check_every == 0:
            res = residual_of(v)
            hist.append(res)
            if not np.isfinite(res):
                rep.warnings.append("direct iteration diverged")
                break
            if res < 0.999 * best:
                best, stall = res, 0
            else:
                stall += 1
                if stall >= patience and omega > omega_min:
                    omega = max(0.5 * omega, omega_min)
                    damping.append([sweeps, omega])
                    best, stall = res, 0
    res = residual_of(v)
    if not hist or hist[-1] != res:
        hist.append(res)
    rep.iterations = sweeps
    rep.residual = res
    rep.converged = bool(res <= tol.residual_tol)
    if not rep.converged:
        rep.warnings.append(f"direct solve stopped after {sweeps} sweeps with residual {res:.3e}")
    rep.history["residual"] = hist
    rep.history["guard"] = guard
    rep.history["omega"] = damping
    rep.history["newton"] = newton
    rep.wall_time = time.perf_counter() - t0
    return u, rep


def solve_triple(problem: Problem, h_solution=None):
    """``(u_minus, h, u_plus, reports)`` from the variational route with signs -1, 0, +1.

    A precomputed ``h_solution = (h, report)`` is reused as is, since the
    plain equation does not depend on ``epsilon``.
    """
    if h_solution is None:
        h_solution = solve_variational_limit(problem, 0)
    h, rh = h_solution
    um, rm = solve_variational_limit(problem, -1)
    up, rp = solve_variational_limit(problem, +1)
    return um, h, up, {"minus": rm, "zero": rh, "plus": rp}
