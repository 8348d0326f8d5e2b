"""
Small analytic utilities: the vector monotonicity inequality, the
``g``-approximation of the identity, and sampled reference solutions.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .grid import Domain, GridFunction, sample

__all__ = [
    "GFunctionParams",
    "GPropertyReport",
    "SubsolutionOnlyWarning",
    "monotonicity_inequality_gap",
    "monotonicity_gap_batch",
    "g_eval",
    "g_prime",
    "g_prime_minus_one",
    "g_inverse",
    "check_g_properties",
    "reference_solutions",
]

_RESOLVABLE = 1e-12


def monotonicity_inequality_gap(a, b, q: float) -> float:
    """``<|b|^(q-2) b - |a|^(q-2) a, b - a> - 2^(2-q) |b - a|^q``.

    Nonnegative for ``q >= 2``.  ``|0|^(q-2) 0`` is the zero vector.
    """
    if q < 2:
        raise ValueError(f"inequality requires q >= 2, got {q}")
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))

    def flux(v):
        n = np.linalg.norm(v)
        if n == 0.0:
            return np.zeros_like(v)
        return n ** (q - 2) * v

    d = b - a
    lhs = float(np.dot(flux(b) - flux(a), d))
    rhs = 2.0 ** (2 - q) * float(np.linalg.norm(d)) ** q
    return lhs - rhs


def monotonicity_gap_batch(a, b, q) -> np.ndarray:
    """Row-wise :func:`monotonicity_inequality_gap` for ``(n, dim)`` arrays and per-row ``q``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    q = np.broadcast_to(np.asarray(q, dtype=float), (a.shape[0],))
    if (q < 2).any():
        raise ValueError("inequality requires q >= 2")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        fa = np.where(na[:, None] > 0, na[:, None] ** (q[:, None] - 2) * a, 0.0)
        fb = np.where(nb[:, None] > 0, nb[:, None] ** (q[:, None] - 2) * b, 0.0)
    d = b - a
    lhs = np.einsum("ij,ij->i", fb - fa, d)
    return lhs - 2.0 ** (2 - q) * np.linalg.norm(d, axis=1) ** q


@dataclass(frozen=True)
class GFunctionParams:
    alpha: float
    A: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 1.0 < self.A < 2.0:
            raise ValueError(f"A must lie in (1, 2), got {self.A}")


def g_eval(t, params: GFunctionParams):
    """``g(t) = log(1 + A (exp(alpha t) - 1)) / alpha`` for ``t >= 0``.

    Evaluated as ``t + log(A - (A - 1) exp(-alpha t)) / alpha``, which never
    overflows; beyond ``alpha t = 700`` this is ``t + log(A) / alpha`` to
    machine precision.
    """
    t = np.asarray(t, dtype=float)
    if (t < 0).any():
        raise ValueError("g is used on t >= 0 only")
    al, A = params.alpha, params.A
    out = t + np.log(A - (A - 1.0) * np.exp(-al * t)) / al
    return float(out) if out.ndim == 0 else out


def g_prime(t, params: GFunctionParams):
    t = np.asarray(t, dtype=float)
    if (t < 0).any():
        raise ValueError("g is used on t >= 0 only")
    A = params.A
    out = A / (A - (A - 1.0) * np.exp(-params.alpha * t))
    return float(out) if out.ndim == 0 else out


def g_prime_minus_one(t, params: GFunctionParams):
    """``g'(t) - 1`` without cancellation: ``(A-1) e^{-alpha t} / (A - (A-1) e^{-alpha t})``."""
    t = np.asarray(t, dtype=float)
    A = params.A
    e = np.exp(-params.alpha * t)
    out = (A - 1.0) * e / (A - (A - 1.0) * e)
    return float(out) if out.ndim == 0 else out


def g_inverse(s, params: GFunctionParams):
    """Closed-form inverse: ``log(1 + (exp(alpha s) - 1) / A) / alpha``."""
    s = np.asarray(s, dtype=float)
    al, A = params.alpha, params.A
    out = s + np.log(1.0 / A + (1.0 - 1.0 / A) * np.exp(-al * s)) / al
    return float(out) if out.ndim == 0 else out


@dataclass
class GPropertyReport:
    params: GFunctionParams
    n_samples: int
    failures: list = field(default_factory=list)
    limit_cases: list = field(default_factory=list)
    max_identity_error: float = 0.0
    max_excess: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "alpha": self.params.alpha,
            "A": self.params.A,
            "n_samples": self.n_samples,
            "ok": self.ok,
            "failures": self.failures,
            "limit_cases": self.limit_cases,
            "max_identity_error": self.max_identity_error,
            "max_excess": self.max_excess,
        }


def _fd_second(t: float, params: GFunctionParams) -> float:
    # central difference of the analytic g' (one-sided near t = 0)
    d = 1e-4 / max(params.alpha, 1.0)
    if t >= d:
        return (g_prime(t + d, params) - g_prime(t - d, params)) / (2 * d)
    return (-3 * g_prime(t, params) + 4 * g_prime(t + d, params) - g_prime(t + 2 * d, params)) / (2 * d)


def check_g_properties(params: GFunctionParams, t_samples, fd_tol: float = 1e-6) -> GPropertyReport:
    """Check the bounds and derivative identities of ``g`` at each sample.

    For ``t > 0``: ``0 < g - t < (A-1)/alpha`` and ``0 < g' - 1 < A - 1``;
    everywhere ``g''/g' = -alpha (g' - 1)`` with ``g''`` from finite
    differences (tolerance ``fd_tol``) and ``0 <= log g' <= g' - 1``.
    ``t = 0`` attains the bounds and is recorded as a limit case, as is any
    ``t`` with ``alpha t <= 1e-12`` where the strict bounds are not resolvable
    in double precision.
    """
    al, A = params.alpha, params.A
    ts = np.asarray(t_samples, dtype=float).ravel()
    rep = GPropertyReport(params, len(ts))
    for t in ts:
        t = float(t)
        if t < 0:
            rep.failures.append({"t": t, "property": "domain"})
            continue
        gp, gm1 = g_prime(t, params), g_prime_minus_one(t, params)
        # g - t in closed form; the difference of g_eval and t cancels for large t
        excess = math.log(A - (A - 1.0) * math.exp(-al * t)) / al
        rep.max_excess = max(rep.max_excess, excess)
        if al * t <= _RESOLVABLE or gm1 == 0.0:
            # strict bounds collapse to equalities in floating point
            rep.limit_cases.append({"t": t, "g_minus_t": excess, "gprime_minus_1": gm1})
        else:
            if not 0.0 < excess < (A - 1.0) / al:
                rep.failures.append({"t": t, "property": "0 < g-t < (A-1)/alpha", "value": excess})
            if not 0.0 < gm1 < A - 1.0:
                rep.failures.append({"t": t, "property": "0 < g'-1 < A-1", "value": gm1})
        err = abs(_fd_second(t, params) / gp + al * gm1)
        rep.max_identity_error = max(rep.max_identity_error, err)
        if err > fd_tol:
            rep.failures.append({"t": t, "property": "g''/g' = -alpha(g'-1)", "value": err})
        lg = math.log1p(gm1)
        if not (0.0 <= lg <= gm1):
            rep.failures.append({"t": t, "property": "0 <= log g' <= g'-1", "value": lg})
    return rep


class SubsolutionOnlyWarning(UserWarning):
    """The sampled cone has its vertex in the closed domain."""


def reference_solutions(kind: str, domain: Domain, e=(1.0, 0.0), x0=None) -> GridFunction:
    """Sample an explicit solution on ``domain``.

    kind
        ``"affine"``: ``<e, x>`` (a solution for every exponent when ``|e| = 1``);
        ``"cone"``: ``|x - x0|``, a solution away from its vertex;
        ``"aronsson"``: ``x^(4/3) - y^(4/3)`` (constant exponent), needs a
        domain that does not meet the coordinate axes.
    """
    if kind == "affine":
        e1, e2 = float(e[0]), float(e[1])
        return sample(domain, lambda x, y: e1 * x + e2 * y)
    if kind == "cone":
        if x0 is None:
            raise ValueError("cone needs a vertex x0")
        c1, c2 = float(x0[0]), float(x0[1])
        xs, ys = domain.x[domain.active_mask], domain.y[domain.active_mask]
        pad = domain.h
        if xs.min() - pad <= c1 <= xs.max() + pad and ys.min() - pad <= c2 <= ys.max() + pad:
            warnings.warn(
                f"cone vertex {tuple(x0)} lies in the closed domain; only a subsolution there",
                SubsolutionOnlyWarning,
                stacklevel=2,
            )
        return sample(domain, lambda x, y: np.hypot(x - c1, y - c2))
    if kind == "aronsson":
        xs, ys = domain.x[domain.active_mask], domain.y[domain.active_mask]
        if (xs.min() <= 0 <= xs.max()) or (ys.min() <= 0 <= ys.max()):
            raise ValueError("the Aronsson reference needs a domain avoiding the coordinate axes")
        return sample(domain, lambda x, y: np.abs(x) ** (4 / 3) - np.abs(y) ** (4 / 3))
    raise ValueError(f"unknown reference solution {kind!r}")
