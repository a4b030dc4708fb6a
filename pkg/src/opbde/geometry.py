"""Embedded domain shapes and the diffuse characteristic function.

A shape describes the physical domain as a signed distance function ``r``
(negative inside, positive outside).  From ``r`` we sample the logistic
profile ``psi = 1 / (exp(6 r / eps) + 1)`` at cell centres, its regularised
reciprocal ``chi`` and the face-wise magnitudes ``|D psi|`` that stand in for
the boundary delta function.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from scipy.special import expit

from .grid import Grid, diff_x, diff_y

CHI_FLOOR = 1e-6
_TINY = np.finfo(float).tiny


def _box_sdf(x, y, x0, x1, y0, y1):
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    hx, hy = 0.5 * (x1 - x0), 0.5 * (y1 - y0)
    qx = np.abs(x - cx) - hx
    qy = np.abs(y - cy) - hy
    outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
    inside = np.minimum(np.maximum(qx, qy), 0.0)
    return outside + inside


def _circle_sdf(x, y, cx, cy, radius):
    return np.hypot(x - cx, y - cy) - radius


@dataclass(frozen=True)
class FullRectangle:
    """Axis-aligned box ``[x0, x1] x [y0, y1]``."""

    x0: float
    x1: float
    y0: float
    y1: float

    def sdf(self, x, y):
        return _box_sdf(x, y, self.x0, self.x1, self.y0, self.y1)

    def bbox(self):
        return (self.x0, self.x1, self.y0, self.y1)


@dataclass(frozen=True)
class Disk:
    cx: float
    cy: float
    radius: float

    def sdf(self, x, y):
        return _circle_sdf(x, y, self.cx, self.cy, self.radius)

    def bbox(self):
        r = self.radius
        return (self.cx - r, self.cx + r, self.cy - r, self.cy + r)


@dataclass(frozen=True)
class HalfPlaneSubstrate:
    """Region above the line ``y = y0``, optionally clipped to a box.

    ``bounds = (x0, x1, ytop)`` intersects the half plane with
    ``[x0, x1] x (-inf, ytop]`` so the domain sits inside a finite
    computational rectangle.
    """

    y0: float
    bounds: tuple[float, float, float] | None = None

    def sdf(self, x, y):
        r = self.y0 - np.asarray(y, dtype=float) + 0.0 * np.asarray(x, dtype=float)
        if self.bounds is not None:
            x0, x1, ytop = self.bounds
            r = np.maximum(r, _box_sdf(x, y, x0, x1, self.y0 - 1.0, ytop))
        return r

    def bbox(self):
        if self.bounds is None:
            return (-np.inf, np.inf, self.y0, np.inf)
        x0, x1, ytop = self.bounds
        return (x0, x1, self.y0, ytop)


@dataclass(frozen=True)
class SinusoidalSubstrate:
    """Region above ``y = y0 + amplitude * cos(2 pi (x - peak_x) / wavelength)``.

    The distance is the vertical offset from the curve, which is exact at
    the crests and troughs and a first-order approximation elsewhere.
    """

    y0: float
    amplitude: float
    wavelength: float
    peak_x: float = 0.0
    bounds: tuple[float, float, float] | None = None

    def height(self, x):
        return self.y0 + self.amplitude * np.cos(
            2.0 * np.pi * (np.asarray(x, dtype=float) - self.peak_x) / self.wavelength
        )

    def sdf(self, x, y):
        r = self.height(x) - np.asarray(y, dtype=float)
        if self.bounds is not None:
            x0, x1, ytop = self.bounds
            r = np.maximum(
                r, _box_sdf(x, y, x0, x1, self.y0 - abs(self.amplitude) - 1.0, ytop)
            )
        return r

    def bbox(self):
        lo = self.y0 - abs(self.amplitude)
        if self.bounds is None:
            return (-np.inf, np.inf, lo, np.inf)
        x0, x1, ytop = self.bounds
        return (x0, x1, lo, ytop)


@dataclass(frozen=True)
class CSGPolygon:
    """A box with circular holes and rectangular cut-outs removed.

    ``holes`` are ``(cx, cy, radius)``; ``cuts`` are boxes
    ``(x0, x1, y0, y1)``.  Composition is by ``max(box, -hole, -cut)``, exact
    wherever a single primitive is nearest.
    """

    x0: float
    x1: float
    y0: float
    y1: float
    holes: tuple[tuple[float, float, float], ...] = ()
    cuts: tuple[tuple[float, float, float, float], ...] = ()

    def sdf(self, x, y):
        r = _box_sdf(x, y, self.x0, self.x1, self.y0, self.y1)
        for cx, cy, rad in self.holes:
            r = np.maximum(r, -_circle_sdf(x, y, cx, cy, rad))
        for bx0, bx1, by0, by1 in self.cuts:
            r = np.maximum(r, -_box_sdf(x, y, bx0, bx1, by0, by1))
        return r

    def bbox(self):
        return (self.x0, self.x1, self.y0, self.y1)


Shape = Union[FullRectangle, Disk, HalfPlaneSubstrate, SinusoidalSubstrate, CSGPolygon]


def signed_distance(shape: Shape, x, y):
    """Signed distance to the boundary: negative inside, positive outside."""
    return shape.sdf(x, y)


def check_clearance(shape: Shape, grid: Grid, eps: float) -> None:
    """Require the domain to stay at least ``3 eps`` away from the grid edge."""
    xmin, xmax, ymin, ymax = grid.bounds
    s = np.linspace(0.0, 1.0, 4 * max(grid.Nx, grid.Ny) + 1)
    xs = np.concatenate([xmin + s * grid.Lx, xmin + s * grid.Lx, np.full_like(s, xmin), np.full_like(s, xmax)])
    ys = np.concatenate([np.full_like(s, ymin), np.full_like(s, ymax), ymin + s * grid.Ly, ymin + s * grid.Ly])
    r = shape.sdf(xs, ys)
    if np.min(r) < 3.0 * eps:
        raise ValueError(
            f"embedded domain comes within {np.min(r):.3g} of the computational "
            f"boundary; need clearance >= 3*eps = {3 * eps:.3g}"
        )


def psi_profile(r, eps: float):
    """``1 / (exp(6 r / eps) + 1)`` kept inside ``(0, 1]``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return np.maximum(expit(-6.0 * np.asarray(r, dtype=float) / eps), _TINY)


def build_psi(shape: Shape, grid: Grid, eps: float) -> np.ndarray:
    x, y = grid.mesh()
    return psi_profile(shape.sdf(x, y), eps)


def build_chi(psi: np.ndarray) -> np.ndarray:
    """Regularised reciprocal ``1 / (psi + (1 - psi) 1e-6)``."""
    return 1.0 / (psi + (1.0 - psi) * CHI_FLOOR)


def build_grad_psi_abs(psi: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Face magnitudes ``|D_x psi|`` and ``|D_y psi|`` from the sampled field."""
    return np.abs(diff_x(psi, grid)), np.abs(diff_y(psi, grid))


@dataclass(frozen=True)
class Embedding:
    grid: Grid
    psi: np.ndarray
    chi: np.ndarray
    gpx: np.ndarray  # |D_x psi| on x-faces
    gpy: np.ndarray  # |D_y psi| on y-faces
    eps: float | None = None
    shape: Shape | None = field(default=None, compare=False)

    @classmethod
    def from_psi(cls, psi: np.ndarray, grid: Grid, eps=None, shape=None) -> "Embedding":
        grid.check(psi)
        psi = np.asarray(psi, dtype=float)
        if np.any(psi <= 0) or np.any(psi > 1):
            raise ValueError("psi must lie in (0, 1]")
        gpx, gpy = build_grad_psi_abs(psi, grid)
        return cls(grid, psi, build_chi(psi), gpx, gpy, eps, shape)

    @classmethod
    def trivial(cls, grid: Grid) -> "Embedding":
        """psi = 1 everywhere: the physical domain is the whole grid."""
        return cls.from_psi(np.ones(grid.shape), grid)

    @property
    def inside(self) -> np.ndarray:
        return self.psi >= 0.5


def build_embedding(shape: Shape, grid: Grid, eps: float, check: bool = True) -> Embedding:
    if check:
        check_clearance(shape, grid, eps)
    return Embedding.from_psi(build_psi(shape, grid, eps), grid, eps, shape)


# -- boundary data -----------------------------------------------------------

HSpec = Union[float, int, Callable[[np.ndarray, np.ndarray], np.ndarray]]


def nearest_boundary_point(shape: Shape, x, y, h: float = 1e-6):
    """Project points onto the zero level set along the distance gradient."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = shape.sdf(x, y)
    nx = (shape.sdf(x + h, y) - shape.sdf(x - h, y)) / (2 * h)
    ny = (shape.sdf(x, y + h) - shape.sdf(x, y - h)) / (2 * h)
    norm = np.hypot(nx, ny)
    norm = np.where(norm > 0, norm, 1.0)
    return x - r * nx / norm, y - r * ny / norm


def boundary_data_field(hspec: HSpec, shape: Shape, grid: Grid) -> np.ndarray:
    """Extend boundary data off the boundary, constant along the normal.

    ``hspec`` is a number or a callable ``h(xb, yb)`` evaluated at the
    nearest boundary point of every cell centre.
    """
    if not callable(hspec):
        return grid.full(float(hspec))
    xb, yb = nearest_boundary_point(shape, *grid.mesh())
    return np.asarray(hspec(xb, yb), dtype=float) * np.ones(grid.shape)
