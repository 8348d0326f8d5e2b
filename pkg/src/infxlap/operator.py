"""
Continuous and discrete evaluation of the infinity-Laplacian with variable exponent.

Continuous forms act on a :class:`SmoothProbe` at a point::

    Delta_inf phi   = <D^2 phi grad phi, grad phi>
    Delta_inf(x) phi = Delta_inf phi + |grad phi|^2 ln|grad phi| <grad phi, grad ln p>

The discrete operator works with the normalized equation (the above divided
by ``|grad u|^2``)::

    N u + ln(m) <g_c, grad ln p> = 0

where ``N`` is a discrete normalized infinity-Laplacian, ``g_c`` the centered
gradient and ``m`` a gradient magnitude (upwind by default).

Two stencils are provided for ``N``:

``"directional"`` (default)
    second difference along the centered-gradient direction built from the
    3x3 centered Hessian, ``a^2 u_xx + 2ab u_xy + b^2 u_yy`` with
    ``(a, b) = g_c / |g_c|``.  Second-order consistent wherever the gradient
    does not vanish; falls back to ``"minmax"`` at gradient-degenerate nodes.
``"minmax"``
    ``(max_nb u + min_nb u - 2 u) / h^2`` over the four axis neighbours.
    Monotone, but consistent only when the gradient is axis-aligned.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exponent import ExponentFamily, ExponentField
from .grid import GridFunction, gradient_centered, gradient_centered_field, gradient_magnitude_upwind
from .grid import gradient_magnitude_upwind_field, sup_norm

__all__ = [
    "STENCILS",
    "SCHEMES",
    "SmoothProbe",
    "delta_inf_continuous",
    "delta_inf_x_continuous",
    "normalized_inf_x_continuous",
    "default_guard",
    "normalized_inf_discrete",
    "normalized_inf_field",
    "full_operator_discrete",
    "log_term_field",
    "residual_field",
]

STENCILS = ("directional", "minmax")
SCHEMES = ("upwind-log", "centered")


@dataclass(frozen=True)
class SmoothProbe:
    """A C^2 test function given by value, gradient and Hessian callables of a point."""

    value: Callable
    gradient: Callable
    hessian: Callable
    name: str = "probe"

    def __call__(self, x, y):
        return self.value(np.stack(np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))))

    def hessian_asymmetry(self, points) -> float:
        """Largest ``|H - H^T|`` entry over the given points."""
        worst = 0.0
        for pt in points:
            H = np.asarray(self.hessian(np.asarray(pt, float)), dtype=float)
            worst = max(worst, float(np.max(np.abs(H - H.T))))
        return worst


def _grad_log_p_at(field, x) -> np.ndarray:
    if field is None:
        return np.zeros(2)
    if isinstance(field, ExponentFamily):
        gx, gy = field.grad_log_p(np.asarray(x[0], float), np.asarray(x[1], float))
        return np.array([float(gx), float(gy)])
    return np.asarray(field(x), dtype=float)


def delta_inf_continuous(probe: SmoothProbe, x) -> float:
    x = np.asarray(x, dtype=float)
    g = np.asarray(probe.gradient(x), dtype=float)
    H = np.asarray(probe.hessian(x), dtype=float)
    return float(g @ H @ g)


def delta_inf_x_continuous(probe: SmoothProbe, x, field) -> float:
    """``Delta_inf(x)`` of the probe at ``x``.

    ``field`` is an :class:`ExponentFamily` or a callable returning
    ``grad ln p`` at a point.  The logarithmic term is taken as 0 where the
    gradient vanishes (``s^2 ln s -> 0``).
    """
    x = np.asarray(x, dtype=float)
    g = np.asarray(probe.gradient(x), dtype=float)
    s = float(np.hypot(g[0], g[1]))
    base = delta_inf_continuous(probe, x)
    if s == 0.0:
        return base
    return base + s * s * np.log(s) * float(g @ _grad_log_p_at(field, x))


def normalized_inf_x_continuous(probe: SmoothProbe, x, field) -> float:
    """``Delta_inf(x) phi / |grad phi|^2``; undefined (raises) at critical points."""
    g = np.asarray(probe.gradient(np.asarray(x, float)), dtype=float)
    s2 = float(g @ g)
    if s2 == 0.0:
        raise ValueError("normalized operator undefined where the gradient vanishes")
    return delta_inf_x_continuous(probe, x, field) / s2


def default_guard(u: GridFunction) -> float:
    """Gradient-degeneracy threshold ``1e-8 (1 + |u|_inf) / h``."""
    return 1e-8 * (1.0 + sup_norm(u)) / u.domain.h


def _check_stencil(stencil):
    if stencil not in STENCILS:
        raise ValueError(f"unknown stencil {stencil!r}; expected one of {STENCILS}")


def _check_scheme(scheme):
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def normalized_inf_discrete(u: GridFunction, node, stencil: str = "directional", guard: float = None) -> float:
    _check_stencil(stencil)
    i, j = u.domain.check_interior(node)
    v, h = u.values, u.domain.h
    c = v[i, j]
    nb = (v[i + 1, j], v[i - 1, j], v[i, j + 1], v[i, j - 1])
    minmax = (max(nb) + min(nb) - 2.0 * c) / h**2
    if stencil == "minmax":
        return float(minmax)
    guard = default_guard(u) if guard is None else guard
    gx = (v[i + 1, j] - v[i - 1, j]) / (2 * h)
    gy = (v[i, j + 1] - v[i, j - 1]) / (2 * h)
    s = np.hypot(gx, gy)
    if s < guard:
        return float(minmax)
    a, b = gx / s, gy / s
    uxx = (v[i + 1, j] + v[i - 1, j] - 2.0 * c) / h**2
    uyy = (v[i, j + 1] + v[i, j - 1] - 2.0 * c) / h**2
    uxy = (v[i + 1, j + 1] - v[i - 1, j + 1] - v[i + 1, j - 1] + v[i - 1, j - 1]) / (4 * h**2)
    return float(a * a * uxx + 2.0 * a * b * uxy + b * b * uyy)


def normalized_inf_field(u: GridFunction, stencil: str = "directional", guard: float = None) -> np.ndarray:
    """Vectorised :func:`normalized_inf_discrete`; zero off the interior."""
    _check_stencil(stencil)
    v, h, mask = u.values, u.domain.h, u.domain.interior_mask
    c = v[1:-1, 1:-1]
    E, W, N, S = v[2:, 1:-1], v[:-2, 1:-1], v[1:-1, 2:], v[1:-1, :-2]
    out = np.zeros(v.shape)
    with np.errstate(invalid="ignore"):
        mx = np.maximum(np.maximum(E, W), np.maximum(N, S))
        mn = np.minimum(np.minimum(E, W), np.minimum(N, S))
        minmax = (mx + mn - 2.0 * c) / h**2
        if stencil == "minmax":
            out[1:-1, 1:-1] = minmax
        else:
            guard = default_guard(u) if guard is None else guard
            gx = (E - W) / (2 * h)
            gy = (N - S) / (2 * h)
            s = np.hypot(gx, gy)
            deg = ~(s >= guard)
            ss = np.where(deg, 1.0, s)
            a, b = gx / ss, gy / ss
            uxx = (E + W - 2.0 * c) / h**2
            uyy = (N + S - 2.0 * c) / h**2
            uxy = (v[2:, 2:] - v[:-2, 2:] - v[2:, :-2] + v[:-2, :-2]) / (4 * h**2)
            out[1:-1, 1:-1] = np.where(deg, minmax, a * a * uxx + 2.0 * a * b * uxy + b * b * uyy)
    out[~mask] = 0.0
    return out


def full_operator_discrete(
    u: GridFunction,
    node,
    field: ExponentField,
    guard: float = None,
    scheme: str = "upwind-log",
    stencil: str = "directional",
) -> float:
    """Normalized discrete ``Delta_inf(x)`` at an interior node.

    ``N u + ln(m) <g_c, grad ln p>`` with ``m = max(magnitude, guard)``; the
    logarithmic term is 0 when the magnitude is below ``guard`` and the whole
    term is skipped for a constant exponent.
    """
    _check_scheme(scheme)
    guard = default_guard(u) if guard is None else guard
    base = normalized_inf_discrete(u, node, stencil, guard)
    if field.is_constant:
        return base
    i, j = u.domain.check_interior(node)
    g = gradient_centered(u, (i, j))
    if scheme == "upwind-log":
        mag = gradient_magnitude_upwind(u, (i, j))
    else:
        mag = float(np.hypot(g[0], g[1]))
    if mag < guard:
        return base
    glp = field.grad_log_p[:, i, j]
    return float(base + np.log(max(mag, guard)) * (g[0] * glp[0] + g[1] * glp[1]))


def log_term_field(u: GridFunction, field: ExponentField, guard: float, scheme: str = "upwind-log") -> np.ndarray:
    """``ln(m) <g_c, grad ln p>`` at interior nodes, 0 at degenerate or non-interior nodes."""
    _check_scheme(scheme)
    g = gradient_centered_field(u)
    if scheme == "upwind-log":
        mag = gradient_magnitude_upwind_field(u)
    else:
        mag = np.hypot(g[0], g[1])
    live = u.domain.interior_mask & (mag >= guard)
    out = np.zeros(mag.shape)
    out[live] = np.log(mag[live]) * (g[0][live] * field.grad_log_p[0][live] + g[1][live] * field.grad_log_p[1][live])
    return out


def residual_field(
    u: GridFunction,
    field: ExponentField,
    guard: float = None,
    scheme: str = "upwind-log",
    stencil: str = "directional",
) -> GridFunction:
    """:func:`full_operator_discrete` at every interior node, 0 elsewhere."""
    _check_scheme(scheme)
    guard = default_guard(u) if guard is None else guard
    out = normalized_inf_field(u, stencil, guard)
    if not field.is_constant:
        out = out + log_term_field(u, field, guard, scheme)
    return GridFunction(u.domain, out)
