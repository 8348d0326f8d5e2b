"""
Uniform 2D grids, grid functions and discrete calculus primitives.

Nodes are indexed ``[i, j]`` (row-major over ``i``), with position
``origin + (i*h, j*h)``.  A node is *interior* when its mask entry is true.
Boundary nodes are the masked-false nodes that touch an interior node in the
8-neighbourhood, so every stencil used downstream (axis and diagonal
neighbours, P1 triangles) only ever reads interior or boundary values.
Everything else is *outside* and carries NaN in solver outputs.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "GridError",
    "Domain",
    "GridFunction",
    "BoundaryData",
    "make_domain",
    "sample",
    "gradient_centered",
    "gradient_centered_field",
    "gradient_magnitude_upwind",
    "gradient_magnitude_upwind_field",
    "sup_norm",
    "diff_sup_norm",
    "estimate_lipschitz",
    "write_csv",
    "write_pgm",
    "read_csv_values",
    "atomic_write_text",
]


class GridError(ValueError):
    """Raised on malformed domains, node indices or mismatched grids."""


_NEIGHBOURS_8 = [(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1) if (di, dj) != (0, 0)]


@dataclass(frozen=True, eq=False)
class Domain:
    nx: int
    ny: int
    h: float
    origin: tuple[float, float] = (0.0, 0.0)
    interior_mask: np.ndarray = field(default=None, repr=False)
    shape: str = "rectangle"

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise GridError(f"grid needs at least 3x3 nodes, got {self.nx}x{self.ny}")
        if not self.h > 0:
            raise GridError(f"grid spacing must be positive, got {self.h}")
        mask = self.interior_mask
        if mask is None:
            mask = np.zeros((self.nx, self.ny), dtype=bool)
            mask[1:-1, 1:-1] = True
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (self.nx, self.ny):
            raise GridError("interior mask shape does not match node counts")
        if mask[0, :].any() or mask[-1, :].any() or mask[:, 0].any() or mask[:, -1].any():
            raise GridError("interior nodes must not lie on the edge of the node array")
        if not mask.any():
            raise GridError("domain has no interior nodes")
        mask.setflags(write=False)
        object.__setattr__(self, "interior_mask", mask)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

        padded = np.pad(mask, 1)
        touched = np.zeros_like(mask)
        for di, dj in _NEIGHBOURS_8:
            touched |= padded[1 + di:self.nx + 1 + di, 1 + dj:self.ny + 1 + dj]
        boundary = touched & ~mask
        boundary.setflags(write=False)
        active = boundary | mask
        active.setflags(write=False)
        object.__setattr__(self, "boundary_mask", boundary)
        object.__setattr__(self, "active_mask", active)

    @property
    def x(self) -> np.ndarray:
        """Node x-coordinates as an (nx, ny) array."""
        return self.origin[0] + self.h * np.arange(self.nx)[:, None] * np.ones((1, self.ny))

    @property
    def y(self) -> np.ndarray:
        return self.origin[1] + self.h * np.ones((self.nx, 1)) * np.arange(self.ny)[None, :]

    @property
    def boundary_nodes(self) -> np.ndarray:
        """(m, 2) integer array of boundary node indices, row-major order."""
        return np.argwhere(self.boundary_mask)

    @property
    def interior_nodes(self) -> np.ndarray:
        return np.argwhere(self.interior_mask)

    @property
    def n_interior(self) -> int:
        return int(self.interior_mask.sum())

    def position(self, node) -> np.ndarray:
        i, j = node
        return np.array([self.origin[0] + i * self.h, self.origin[1] + j * self.h])

    def same_as(self, other: "Domain") -> bool:
        return (
            self is other
            or (
                self.nx == other.nx
                and self.ny == other.ny
                and self.h == other.h
                and self.origin == other.origin
                and np.array_equal(self.interior_mask, other.interior_mask)
            )
        )

    def check_interior(self, node) -> tuple[int, int]:
        i, j = int(node[0]), int(node[1])
        if not (0 <= i < self.nx and 0 <= j < self.ny) or not self.interior_mask[i, j]:
            raise GridError(f"node {(i, j)} is not an interior node")
        return i, j

    def to_dict(self) -> dict:
        return {"nx": self.nx, "ny": self.ny, "h": self.h, "origin": list(self.origin), "shape": self.shape}


@dataclass(eq=False)
class GridFunction:
    """Nodal values on a :class:`Domain`; ``values`` has shape ``(nx, ny)``."""

    domain: Domain
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.domain.nx, self.domain.ny):
            raise GridError("values shape does not match the domain")

    def copy(self) -> "GridFunction":
        return GridFunction(self.domain, self.values.copy())

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.values[self.domain.active_mask]).all())

    def __add__(self, other):
        if isinstance(other, GridFunction):
            _check_same(self, other)
            return GridFunction(self.domain, self.values + other.values)
        return GridFunction(self.domain, self.values + other)

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            _check_same(self, other)
            return GridFunction(self.domain, self.values - other.values)
        return GridFunction(self.domain, self.values - other)

    def __mul__(self, scalar):
        return GridFunction(self.domain, self.values * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(self.domain, -self.values)


@dataclass(eq=False)
class BoundaryData:
    """Dirichlet values on the boundary nodes of ``domain`` (row-major order)."""

    domain: Domain
    values: np.ndarray
    lipschitz_constant: float = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.shape != (len(self.domain.boundary_nodes),):
            raise GridError("one value per boundary node required")
        if not np.isfinite(self.values).all():
            raise GridError("boundary data must be finite")
        if self.lipschitz_constant is None:
            self.lipschitz_constant = estimate_lipschitz(self, self.domain)

    @classmethod
    def from_function(cls, domain: Domain, phi: Callable) -> "BoundaryData":
        nodes = domain.boundary_nodes
        x = domain.origin[0] + domain.h * nodes[:, 0]
        y = domain.origin[1] + domain.h * nodes[:, 1]
        vals = np.broadcast_to(np.asarray(phi(x, y), dtype=float), x.shape)
        return cls(domain, vals)

    @classmethod
    def from_grid_function(cls, u: GridFunction) -> "BoundaryData":
        return cls(u.domain, u.values[u.domain.boundary_mask])

    def as_array(self, fill=np.nan) -> np.ndarray:
        out = np.full((self.domain.nx, self.domain.ny), fill, dtype=float)
        out[self.domain.boundary_mask] = self.values
        return out

    def shifted(self, c: float) -> "BoundaryData":
        return BoundaryData(self.domain, self.values + c, self.lipschitz_constant)


def _check_same(u: GridFunction, v: GridFunction):
    if not u.domain.same_as(v.domain):
        raise GridError("grid functions live on different domains")


def make_domain(nx: int, ny: int, h: float, shape: str = "rectangle", origin=(0.0, 0.0)) -> Domain:
    """Build a rectangle of nx-by-ny nodes, or the disk inscribed in it.

    The disk is centred in the bounding box with radius half the shorter
    side; interior nodes are those strictly inside it.
    """
    if nx < 3 or ny < 3:
        raise GridError(f"grid needs at least 3x3 nodes, got {nx}x{ny}")
    if not h > 0:
        raise GridError(f"grid spacing must be positive, got {h}")
    if shape == "rectangle":
        return Domain(nx, ny, h, origin)
    if shape == "disk":
        ox, oy = float(origin[0]), float(origin[1])
        cx = ox + 0.5 * (nx - 1) * h
        cy = oy + 0.5 * (ny - 1) * h
        r = 0.5 * min(nx - 1, ny - 1) * h
        x = ox + h * np.arange(nx)[:, None]
        y = oy + h * np.arange(ny)[None, :]
        mask = np.hypot(x - cx, y - cy) < r
        mask[0, :] = mask[-1, :] = False
        mask[:, 0] = mask[:, -1] = False
        return Domain(nx, ny, h, origin, mask, shape="disk")
    raise GridError(f"unknown domain shape {shape!r}")


def sample(domain: Domain, phi: Callable) -> GridFunction:
    """Evaluate ``phi(x, y)`` (vectorised over arrays) at every node."""
    vals = np.broadcast_to(np.asarray(phi(domain.x, domain.y), dtype=float), (domain.nx, domain.ny))
    if not np.isfinite(vals).all():
        raise GridError("sampled function is not finite on the grid")
    return GridFunction(domain, vals.copy())


def gradient_centered(u: GridFunction, node) -> np.ndarray:
    i, j = u.domain.check_interior(node)
    v, h = u.values, u.domain.h
    return np.array([(v[i + 1, j] - v[i - 1, j]) / (2 * h), (v[i, j + 1] - v[i, j - 1]) / (2 * h)])


def gradient_centered_field(u: GridFunction) -> np.ndarray:
    """Centered gradient at every interior node, shape (2, nx, ny); zero elsewhere."""
    v, h, m = u.values, u.domain.h, u.domain.interior_mask
    g = np.zeros((2,) + v.shape)
    g[0, 1:-1, 1:-1] = (v[2:, 1:-1] - v[:-2, 1:-1]) / (2 * h)
    g[1, 1:-1, 1:-1] = (v[1:-1, 2:] - v[1:-1, :-2]) / (2 * h)
    g[:, ~m] = 0.0
    return g


def _godunov(dxm, dxp, dym, dyp):
    gx = np.maximum(np.maximum(dxm, -dxp), 0.0)
    gy = np.maximum(np.maximum(dym, -dyp), 0.0)
    return np.sqrt(gx * gx + gy * gy)


def _upwind_from_diffs(dxm, dxp, dym, dyp):
    # max(G(u), G(-u)) with G the Godunov magnitude
    # sqrt(max(D-x u, -D+x u, 0)^2 + max(D-y u, -D+y u, 0)^2)
    return np.maximum(_godunov(dxm, dxp, dym, dyp), _godunov(-dxm, -dxp, -dym, -dyp))


def gradient_magnitude_upwind(u: GridFunction, node) -> float:
    """Monotone upwind surrogate for ``|grad u|`` at an interior node.

    With one-sided differences ``D-``/``D+`` the Godunov magnitude is
    ``G(u) = sqrt(max(D-x u, -D+x u, 0)**2 + max(D-y u, -D+y u, 0)**2)``;
    the value returned is ``max(G(u), G(-u))``, which is exact on affine data
    and dominates the centered magnitude on data monotone along each axis.
    """
    i, j = u.domain.check_interior(node)
    v, h = u.values, u.domain.h
    c = v[i, j]
    return float(
        _upwind_from_diffs(
            (c - v[i - 1, j]) / h, (v[i + 1, j] - c) / h, (c - v[i, j - 1]) / h, (v[i, j + 1] - c) / h
        )
    )


def gradient_magnitude_upwind_field(u: GridFunction) -> np.ndarray:
    v, h, m = u.values, u.domain.h, u.domain.interior_mask
    out = np.zeros(v.shape)
    c = v[1:-1, 1:-1]
    out[1:-1, 1:-1] = _upwind_from_diffs(
        (c - v[:-2, 1:-1]) / h, (v[2:, 1:-1] - c) / h, (c - v[1:-1, :-2]) / h, (v[1:-1, 2:] - c) / h
    )
    out[~m] = 0.0
    return out


def sup_norm(u: GridFunction) -> float:
    """Max of ``|u|`` over interior and boundary nodes."""
    return float(np.max(np.abs(u.values[u.domain.active_mask])))


def diff_sup_norm(u: GridFunction, v: GridFunction) -> float:
    _check_same(u, v)
    m = u.domain.active_mask
    return float(np.max(np.abs(u.values[m] - v.values[m])))


def estimate_lipschitz(f: BoundaryData, domain: Domain = None) -> float:
    """Largest difference quotient of ``f`` over all pairs of boundary nodes."""
    domain = domain or f.domain
    nodes = domain.boundary_nodes
    if len(nodes) < 2:
        raise GridError("need at least two boundary nodes")
    pos = domain.h * nodes.astype(float)
    best = 0.0
    # row blocks keep memory bounded on large boundaries
    for start in range(0, len(nodes), 512):
        blk = slice(start, start + 512)
        dist = np.hypot(pos[blk, 0, None] - pos[None, :, 0], pos[blk, 1, None] - pos[None, :, 1])
        diff = np.abs(f.values[blk, None] - f.values[None, :])
        with np.errstate(invalid="ignore", divide="ignore"):
            q = np.where(dist > 0, diff / np.where(dist > 0, dist, 1.0), 0.0)
        best = max(best, float(q.max()))
    return best


def atomic_write_text(path, text: str):
    """Write ``text`` to ``path`` through a temporary file and rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(u: GridFunction, path):
    """Export ``x,y,value`` rows, one per node, 17 significant digits."""
    d = u.domain
    lines = ["x,y,value"]
    for i in range(d.nx):
        for j in range(d.ny):
            x = d.origin[0] + i * d.h
            y = d.origin[1] + j * d.h
            lines.append(f"{x:.17g},{y:.17g},{u.values[i, j]:.17g}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_csv_values(domain: Domain, path, column: str = "value") -> np.ndarray:
    """Read ``x,y,<column>`` rows back onto the nodes of ``domain``.

    Nodes missing from the file come back as NaN.
    """
    data = np.genfromtxt(path, delimiter=",", names=True)
    out = np.full((domain.nx, domain.ny), np.nan)
    i = np.rint((data["x"] - domain.origin[0]) / domain.h).astype(int)
    j = np.rint((data["y"] - domain.origin[1]) / domain.h).astype(int)
    ok = (i >= 0) & (i < domain.nx) & (j >= 0) & (j < domain.ny)
    if not ok.all():
        raise GridError(f"{path}: rows outside the grid")
    out[i, j] = data[column]
    return out


def write_pgm(u: GridFunction, path, maxval: int = 255):
    """Plain (P2) greyscale export, min-max normalised; non-active nodes are black.

    Image rows run top to bottom in decreasing y.
    """
    d = u.domain
    vals = np.where(d.active_mask, u.values, np.nan)
    lo, hi = np.nanmin(vals), np.nanmax(vals)
    span = hi - lo if hi > lo else 1.0
    img = np.where(np.isfinite(vals), np.rint((vals - lo) / span * maxval), 0).astype(int)
    img = img.T[::-1]
    rows = [" ".join(str(v) for v in row) for row in img]
    atomic_write_text(path, f"P2\n{d.nx} {d.ny}\n{maxval}\n" + "\n".join(rows) + "\n")
