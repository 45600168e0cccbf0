"""Domain shapes on a periodic box grid and their characteristic-function encodings."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

__all__ = [
    "BoxGrid",
    "DegenerateShapeError",
    "FullBox",
    "Rectangle",
    "Disk",
    "VoidCell",
    "Polygon",
    "CrackedPlate",
    "shape_to_dict",
    "shape_from_dict",
    "rasterize",
    "distance_field",
    "smooth_chi",
    "smoothed_chi",
    "void_variance",
    "sample_void_shape",
    "airfoil_map_forward",
    "airfoil_map_inverse",
    "evolve_chi",
]


class DegenerateShapeError(ValueError):
    pass


@dataclass(frozen=True)
class BoxGrid:
    """Uniform node-centred grid on the box ``[0, extent[0]] x [0, extent[1]]``.

    Node ``(i, j)`` sits at ``((i + 1/2) h1, (j + 1/2) h2)``.
    """

    extent: tuple
    shape: tuple

    def __post_init__(self):
        ext = tuple(float(e) for e in np.broadcast_to(self.extent, (2,)))
        shp = tuple(int(n) for n in np.broadcast_to(self.shape, (2,)))
        if min(ext) <= 0 or min(shp) < 1:
            raise ValueError(f"invalid grid extent {ext} / shape {shp}")
        object.__setattr__(self, "extent", ext)
        object.__setattr__(self, "shape", shp)

    @property
    def spacing(self):
        return self.extent[0] / self.shape[0], self.extent[1] / self.shape[1]

    @property
    def cell_area(self):
        h1, h2 = self.spacing
        return h1 * h2

    def axes(self):
        h1, h2 = self.spacing
        return (np.arange(self.shape[0]) + 0.5) * h1, (np.arange(self.shape[1]) + 0.5) * h2

    def mesh(self):
        x, y = self.axes()
        return np.meshgrid(x, y, indexing="ij")

    def coords(self):
        """Node positions, shape ``[n1, n2, 2]``."""
        return np.stack(self.mesh(), axis=-1)

    def refine(self, factor: int = 2) -> "BoxGrid":
        return BoxGrid(self.extent, (self.shape[0] * factor, self.shape[1] * factor))


# ---------------------------------------------------------------------- shapes


@dataclass(frozen=True)
class FullBox:
    kind = "full"

    def contains(self, x, y, spacing=None):
        return np.ones(np.broadcast(x, y).shape, dtype=bool)

    def area(self):
        return math.inf

    def bounds(self):
        return None


@dataclass(frozen=True)
class Rectangle:
    x0: float
    y0: float
    x1: float
    y1: float
    kind = "rectangle"

    def contains(self, x, y, spacing=None):
        return (x >= self.x0) & (x <= self.x1) & (y >= self.y0) & (y <= self.y1)

    def area(self):
        return max(self.x1 - self.x0, 0.0) * max(self.y1 - self.y0, 0.0)

    def bounds(self):
        return self.x0, self.y0, self.x1, self.y1


@dataclass(frozen=True)
class Disk:
    center: tuple
    radius: float
    kind = "disk"

    def contains(self, x, y, spacing=None):
        cx, cy = self.center
        return (x - cx) ** 2 + (y - cy) ** 2 <= self.radius**2

    def area(self):
        return math.pi * self.radius**2

    def bounds(self):
        cx, cy = self.center
        r = self.radius
        return cx - r, cy - r, cx + r, cy + r


@dataclass(frozen=True)
class VoidCell:
    """Square cell with a star-shaped void around its centre.

    The void boundary is ``r(theta) = r_min + r_span / (1 + exp(g(theta)))``
    where ``g`` is a real Fourier series with coefficients ``cos_coeffs[k]``,
    ``sin_coeffs[k]`` (``sin_coeffs[0]`` is unused).
    """

    origin: tuple
    size: float
    cos_coeffs: tuple
    sin_coeffs: tuple
    r_min: float = 0.2
    r_span: float = 0.2
    kind = "void_cell"

    @property
    def center(self):
        return self.origin[0] + 0.5 * self.size, self.origin[1] + 0.5 * self.size

    def log_field(self, theta):
        theta = np.asarray(theta, dtype=float)
        k = np.arange(len(self.cos_coeffs))
        a = np.asarray(self.cos_coeffs)
        b = np.asarray(self.sin_coeffs)
        kt = np.multiply.outer(theta, k)
        return np.cos(kt) @ a + np.sin(kt) @ b

    def radius(self, theta):
        """Void radius in units of the cell size."""
        return self.r_min + self.r_span / (1.0 + np.exp(self.log_field(theta)))

    def contains(self, x, y, spacing=None):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ox, oy = self.origin
        cx, cy = self.center
        in_cell = (x >= ox) & (x <= ox + self.size) & (y >= oy) & (y <= oy + self.size)
        dx, dy = x - cx, y - cy
        rho = np.hypot(dx, dy)
        theta = np.arctan2(dy, dx)
        return in_cell & (rho > self.size * self.radius(theta))

    def area(self):
        th = np.linspace(0.0, 2 * np.pi, 2048, endpoint=False)
        void = 0.5 * np.mean(self.radius(th) ** 2) * 2 * np.pi
        return self.size**2 * (1.0 - void)

    def bounds(self):
        ox, oy = self.origin
        return ox, oy, ox + self.size, oy + self.size


@dataclass(frozen=True)
class Polygon:
    """Closed polygon, even-odd rule."""

    vertices: tuple
    kind = "polygon"

    def contains(self, x, y, spacing=None):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        v = np.asarray(self.vertices, dtype=float)
        inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
        xa, ya = v[:, 0], v[:, 1]
        xb, yb = np.roll(xa, -1), np.roll(ya, -1)
        for x0, y0, x1, y1 in zip(xa, ya, xb, yb):
            crosses = (y0 > y) != (y1 > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
            inside ^= crosses & (x < xint)
        return inside

    def area(self):
        v = np.asarray(self.vertices, dtype=float)
        x, y = v[:, 0], v[:, 1]
        return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))

    def bounds(self):
        v = np.asarray(self.vertices, dtype=float)
        return v[:, 0].min(), v[:, 1].min(), v[:, 0].max(), v[:, 1].max()


def _segment_distance(x, y, a, b):
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    L2 = dx * dx + dy * dy
    t = np.zeros_like(x) if L2 == 0 else np.clip(((x - ax) * dx + (y - ay) * dy) / L2, 0.0, 1.0)
    return np.hypot(x - (ax + t * dx), y - (ay + t * dy))


@dataclass(frozen=True)
class CrackedPlate:
    """Rectangular plate with zero-width crack segments carved as bands.

    ``half_width=None`` uses one grid spacing at rasterization time.
    """

    x0: float
    y0: float
    x1: float
    y1: float
    cracks: tuple = field(default_factory=tuple)
    half_width: float | None = None
    kind = "cracked_plate"

    def contains(self, x, y, spacing=None):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        inside = (x >= self.x0) & (x <= self.x1) & (y >= self.y0) & (y <= self.y1)
        hw = self.half_width
        if hw is None:
            if spacing is None:
                raise ValueError("crack band width needs a grid spacing")
            hw = float(np.min(spacing))
        for a, b in self.cracks:
            inside &= _segment_distance(x, y, a, b) > hw
        return inside

    def area(self):
        return max(self.x1 - self.x0, 0.0) * max(self.y1 - self.y0, 0.0)

    def bounds(self):
        return self.x0, self.y0, self.x1, self.y1


_SHAPES = {cls.kind: cls for cls in (FullBox, Rectangle, Disk, VoidCell, Polygon, CrackedPlate)}


def _plain(v):
    if isinstance(v, (tuple, list)):
        return [_plain(u) for u in v]
    return float(v) if isinstance(v, (np.floating, float, int)) else v


def shape_to_dict(shape) -> dict:
    out = {"kind": shape.kind}
    for name in shape.__dataclass_fields__:
        out[name] = _plain(getattr(shape, name))
    return out


def _tuplify(v):
    return tuple(_tuplify(u) for u in v) if isinstance(v, list) else v


def shape_from_dict(d: dict):
    d = dict(d)
    try:
        cls = _SHAPES[d.pop("kind")]
    except KeyError as exc:
        raise ValueError(f"unknown shape kind {exc}") from None
    return cls(**{k: _tuplify(v) for k, v in d.items()})


# ---------------------------------------------------------------- encodings


def rasterize(shape, grid: BoxGrid) -> np.ndarray:
    """Binary characteristic function: 1 at nodes inside ``shape``."""
    if shape.area() <= 0:
        raise DegenerateShapeError(f"{shape.kind} has zero area")
    b = shape.bounds()
    if b is not None:
        tol = 1e-12 * max(grid.extent)
        if b[0] < -tol or b[1] < -tol or b[2] > grid.extent[0] + tol or b[3] > grid.extent[1] + tol:
            raise ValueError(f"{shape.kind} with bounds {b} does not fit in box {grid.extent}")
    X, Y = grid.mesh()
    chi = shape.contains(X, Y, grid.spacing).astype(np.float64)
    if not chi.any():
        raise DegenerateShapeError(f"{shape.kind} covers no grid node")
    return chi


def distance_field(chi, grid: BoxGrid) -> np.ndarray:
    """Distance from each node to the nearest node of the opposite phase.

    The opposite-phase nearest node always lies on the discrete interface,
    so this is the exact distance to that node set.
    """
    chi = np.asarray(chi)
    if chi.ndim != 2:
        raise ValueError(f"expected a 2D field, got shape {chi.shape}")
    inside = chi > 0.5
    if inside.all() or not inside.any():
        raise ValueError("distance field needs both phases present")
    h1, h2 = grid.spacing
    ii, jj = np.indices(chi.shape)
    dist = np.empty(chi.shape)
    for phase in (inside, ~inside):
        # edt measures distance to the nearest zero, so pass the phase itself
        _, (ni, nj) = ndimage.distance_transform_edt(phase, return_indices=True)
        di, dj = ni - ii, nj - jj
        if h1 == h2:
            d = h1 * np.sqrt(di * di + dj * dj)
        else:
            d = np.sqrt((di * h1) ** 2 + (dj * h2) ** 2)
        dist[phase] = d[phase]
    return dist


def smooth_chi(chi, dist, beta: float) -> np.ndarray:
    """``tanh(beta * dist) * (chi - 1/2) + 1/2``."""
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    chi = np.asarray(chi, dtype=float)
    dist = np.asarray(dist, dtype=float)
    if np.any(dist < 0):
        raise ValueError("distances must be non-negative")
    return np.tanh(beta * dist) * (chi - 0.5) + 0.5


def smoothed_chi(chi, grid: BoxGrid, beta: float) -> np.ndarray:
    """Convenience: distance field + smoothing; uniform fields pass through."""
    chi = np.asarray(chi, dtype=float)
    if chi.min() == chi.max():
        return chi.copy()
    return smooth_chi(chi, distance_field(chi, grid), beta)


# ----------------------------------------------------------- random voids


def void_spectrum(n_modes: int = 64, amplitude: float = 4.0, shift: float = 3.0):
    """Eigenvalues of ``amplitude^2 (-d^2/dtheta^2 + shift^2)^-1`` for ``k = 0..n_modes``."""
    k = np.arange(n_modes + 1)
    return amplitude**2 / (k**2 + shift**2)


def void_variance(n_modes: int = 64, amplitude: float = 4.0, shift: float = 3.0) -> float:
    """Pointwise variance of the truncated log-radius field (angle-independent)."""
    lam = void_spectrum(n_modes, amplitude, shift)
    return lam[0] / (2 * np.pi) + lam[1:].sum() / np.pi


def sample_log_radius(rng, n_modes=64, amplitude=4.0, shift=3.0):
    """Karhunen-Loeve coefficients ``(cos, sin)`` of one log-radius sample."""
    lam = void_spectrum(n_modes, amplitude, shift)
    xi_c = rng.standard_normal(n_modes + 1)
    xi_s = rng.standard_normal(n_modes + 1)
    # orthonormal basis on [0, 2pi): 1/sqrt(2pi), cos(k t)/sqrt(pi), sin(k t)/sqrt(pi)
    norm = np.full(n_modes + 1, 1.0 / np.sqrt(np.pi))
    norm[0] = 1.0 / np.sqrt(2 * np.pi)
    a = np.sqrt(lam) * norm * xi_c
    b = np.sqrt(lam) * norm * xi_s
    b[0] = 0.0
    return a, b


def sample_void_shape(seed, grf_params=None, origin=(0.0, 0.0), size=1.0) -> VoidCell:
    """Unit cell with a random void ``r = 0.2 + 0.2 / (1 + exp(g))``."""
    params = {"amplitude": 4.0, "shift": 3.0, "n_modes": 64}
    params.update(grf_params or {})
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    a, b = sample_log_radius(rng, params["n_modes"], params["amplitude"], params["shift"])
    return VoidCell(tuple(origin), float(size), tuple(a), tuple(b))


# ------------------------------------------------------------ airfoil maps


def airfoil_map_forward(X, Y):
    """Physical ``(X, Y)`` to computational ``(x, y)``."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    ax = np.arctan(1.965 * X)
    x = 0.909 * ax
    y = 0.714 * np.arctan(3.46 * Y + 0.173 * np.sin(0.909 * np.pi * ax))
    return x, y


def airfoil_map_inverse(x, y):
    """Computational ``(x, y)`` back to physical ``(X, Y)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    X = 0.509 * np.tan(1.1 * x)
    Y = 0.289 * np.tan(1.4 * y) - 0.05 * np.sin(np.pi * x)
    return X, Y


# ---------------------------------------------------------- evolving domains


def evolve_chi(damage, threshold: float, prev) -> np.ndarray:
    """Drop nodes whose damage exceeds ``threshold``; material never returns."""
    damage = np.asarray(damage, dtype=float)
    prev = np.asarray(prev, dtype=float)
    return np.where(damage > threshold, 0.0, prev)
