"""Variable exponent ``p(x) > 1`` and its logarithmic gradient on a grid."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import Domain, GridError, read_csv_values

__all__ = [
    "ExponentFamily",
    "ExponentField",
    "ExponentDiagnostics",
    "constant_family",
    "affine_family",
    "gaussian_family",
    "family_from_dict",
    "exponent_from_family",
    "exponent_from_samples",
    "exponent_from_csv",
    "validate",
]


class ExponentError(ValueError):
    pass


@dataclass(frozen=True)
class ExponentFamily:
    """Closed-form exponent: ``p(x, y)`` and ``grad_log_p(x, y) -> (gx, gy)``."""

    name: str
    p: Callable
    grad_log_p: Callable
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"family": self.name, **self.params}


def constant_family(c: float) -> ExponentFamily:
    c = float(c)

    def p(x, y):
        return np.full(np.broadcast(x, y).shape, c)

    def glp(x, y):
        z = np.zeros(np.broadcast(x, y).shape)
        return z, z.copy()

    return ExponentFamily("constant", p, glp, {"c": c})


def affine_family(a, b: float) -> ExponentFamily:
    """``p = a . x + b``."""
    a1, a2 = float(a[0]), float(a[1])
    b = float(b)

    def p(x, y):
        return a1 * x + a2 * y + b

    def glp(x, y):
        pv = p(x, y)
        return a1 / pv, a2 / pv

    return ExponentFamily("affine", p, glp, {"a": [a1, a2], "b": b})


def gaussian_family(base: float, amplitude: float, center, width: float) -> ExponentFamily:
    """``p = base + amplitude * exp(-|x - center|^2 / (2 width^2))``."""
    base, amplitude, width = float(base), float(amplitude), float(width)
    cx, cy = float(center[0]), float(center[1])

    def bump(x, y):
        return amplitude * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * width**2))

    def p(x, y):
        return base + bump(x, y)

    def glp(x, y):
        b = bump(x, y)
        pv = base + b
        s = -b / (width**2 * pv)
        return s * (x - cx), s * (y - cy)

    return ExponentFamily(
        "gaussian", p, glp, {"base": base, "amplitude": amplitude, "center": [cx, cy], "width": width}
    )


def family_from_dict(block: dict) -> ExponentFamily:
    kind = block.get("family")
    if kind == "constant":
        return constant_family(block["c"])
    if kind == "affine":
        return affine_family(block["a"], block["b"])
    if kind == "gaussian":
        return gaussian_family(block["base"], block["amplitude"], block["center"], block["width"])
    raise ExponentError(f"unknown exponent family {kind!r}")


@dataclass(eq=False)
class ExponentField:
    """Nodal exponent values with the stored logarithmic gradient.

    ``p`` has shape ``(nx, ny)`` and ``grad_log_p`` shape ``(2, nx, ny)``.
    Summary statistics are taken over the active nodes of ``domain``.
    Construction does not reject bad values; see :func:`validate`.
    """

    domain: Domain
    p: np.ndarray
    grad_log_p: np.ndarray
    family: ExponentFamily = None

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.grad_log_p = np.asarray(self.grad_log_p, dtype=float)
        if self.p.shape != (self.domain.nx, self.domain.ny):
            raise GridError("exponent shape does not match the domain")
        if self.grad_log_p.shape != (2, self.domain.nx, self.domain.ny):
            raise GridError("grad_log_p must have shape (2, nx, ny)")

    @property
    def p_min(self) -> float:
        return float(np.min(self.p[self.domain.active_mask]))

    @property
    def p_max(self) -> float:
        return float(np.max(self.p[self.domain.active_mask]))

    @property
    def grad_log_p_sup(self) -> float:
        m = self.domain.active_mask
        return float(np.max(np.hypot(self.grad_log_p[0][m], self.grad_log_p[1][m])))

    @property
    def is_constant(self) -> bool:
        return self.grad_log_p_sup == 0.0

    def to_dict(self) -> dict:
        out = {"p_min": self.p_min, "p_max": self.p_max, "grad_log_p_sup": self.grad_log_p_sup}
        if self.family is not None:
            out["family"] = self.family.to_dict()
        return out


def _check_p(domain: Domain, p: np.ndarray):
    vals = p[domain.active_mask]
    if not np.isfinite(vals).all():
        raise ExponentError("exponent values must be finite")
    if (vals <= 1).any():
        raise ExponentError(f"exponent must exceed 1, min is {vals.min():.6g}")


def exponent_from_family(domain: Domain, family: ExponentFamily) -> ExponentField:
    p = np.asarray(family.p(domain.x, domain.y), dtype=float)
    _check_p(domain, p)
    gx, gy = family.grad_log_p(domain.x, domain.y)
    return ExponentField(domain, p, np.stack([gx, gy]).astype(float), family)


def _masked_derivative(f: np.ndarray, active: np.ndarray, h: float, axis: int) -> np.ndarray:
    """d f / d(axis) at active nodes: centered if possible, else second-order one-sided."""
    f = np.moveaxis(f, axis, 0)
    a = np.moveaxis(active, axis, 0)
    out = np.zeros_like(f)

    def shifted(arr, k, fill):
        res = np.full_like(arr, fill)
        if k > 0:
            res[:-k] = arr[k:]
        elif k < 0:
            res[-k:] = arr[:k]
        else:
            res[:] = arr
        return res

    fp1, fm1 = shifted(f, 1, np.nan), shifted(f, -1, np.nan)
    fp2, fm2 = shifted(f, 2, np.nan), shifted(f, -2, np.nan)
    ap1, am1 = shifted(a, 1, False), shifted(a, -1, False)
    ap2, am2 = shifted(a, 2, False), shifted(a, -2, False)

    centered = a & ap1 & am1
    fwd2 = a & ~centered & ap1 & ap2
    bwd2 = a & ~centered & ~fwd2 & am1 & am2
    fwd1 = a & ~centered & ~fwd2 & ~bwd2 & ap1
    bwd1 = a & ~centered & ~fwd2 & ~bwd2 & ~fwd1 & am1
    with np.errstate(invalid="ignore"):
        out = np.where(centered, (fp1 - fm1) / (2 * h), out)
        out = np.where(fwd2, (-3 * f + 4 * fp1 - fp2) / (2 * h), out)
        out = np.where(bwd2, (3 * f - 4 * fm1 + fm2) / (2 * h), out)
        out = np.where(fwd1, (fp1 - f) / h, out)
        out = np.where(bwd1, (f - fm1) / h, out)
    return np.moveaxis(out, 0, axis)


def exponent_from_samples(domain: Domain, p_values) -> ExponentField:
    """Exponent from nodal samples; ``grad_log_p`` by finite differences of ``ln p``.

    Only active nodes are read.  Centered differences where both axis
    neighbours are active, otherwise second-order one-sided differences.
    """
    p = np.array(p_values, dtype=float)
    if p.shape != (domain.nx, domain.ny):
        raise GridError("p_values shape does not match the domain")
    _check_p(domain, p)
    act = domain.active_mask
    logp = np.where(act, np.log(np.where(act, p, 2.0)), np.nan)
    g = np.stack([_masked_derivative(logp, act, domain.h, 0), _masked_derivative(logp, act, domain.h, 1)])
    g[:, ~act] = 0.0
    # exact zero for constant samples
    if np.ptp(p[act]) == 0:
        g[:] = 0.0
    return ExponentField(domain, p, g)


def exponent_from_csv(domain: Domain, path) -> ExponentField:
    """Per-node ``x,y,p`` CSV; every active node must be present."""
    p = read_csv_values(domain, path, column="p")
    if np.isnan(p[domain.active_mask]).any():
        raise ExponentError(f"{path}: missing exponent values at active nodes")
    return exponent_from_samples(domain, np.where(domain.active_mask, p, np.nan))


@dataclass
class ExponentDiagnostics:
    p_min: float
    p_max: float
    grad_log_p_sup: float
    violations: list
    ok: bool

    def to_dict(self) -> dict:
        return {
            "p_min": self.p_min,
            "p_max": self.p_max,
            "grad_log_p_sup": self.grad_log_p_sup,
            "violations": [list(v) for v in self.violations],
            "ok": self.ok,
        }


def validate(field: ExponentField) -> ExponentDiagnostics:
    """Summary of the field plus every active node where ``p > 1`` fails or values are not finite."""
    act = field.domain.active_mask
    bad = act & ~(np.isfinite(field.p) & (field.p > 1))
    bad |= act & ~np.isfinite(field.grad_log_p).all(axis=0)
    viol = [tuple(int(k) for k in ij) for ij in np.argwhere(bad)]
    return ExponentDiagnostics(field.p_min, field.p_max, field.grad_log_p_sup, viol, not viol)
