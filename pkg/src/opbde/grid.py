"""Cell-centred rectangular mesh and the discrete calculus on it.

Fields are plain ``numpy`` arrays indexed ``f[i, j]`` with ``i`` along x and
``j`` along y.  The 1-based cell index ``(i, j)`` used in the usual finite
difference notation maps to the array entry ``f[i - 1, j - 1]``.

Face fields live on the half-integer positions:

* x-faces have shape ``(Nx + 1, Ny)``; entry ``[k, j]`` is the face between
  cells ``k - 1`` and ``k`` (0-based), so ``[0, j]`` and ``[Nx, j]`` are the
  left and right boundary faces.
* y-faces have shape ``(Nx, Ny + 1)`` with the analogous layout.

Boundary faces are evaluated with a single ghost layer that mirrors the
adjacent interior cell (zero normal difference).  That one rule realises the
homogeneous Neumann condition on the phase field, the no-flux condition on
the chemical potential and the zero normal derivative of the embedding
function on the outer boundary.

Flattened vectors use C order of the ``(Nx, Ny)`` array: cell ``[i, j]`` is
entry ``i * Ny + j``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class GridMismatchError(ValueError):
    """Raised when a field's shape does not match the grid it is used with."""


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centred mesh of the rectangle ``[x0, x0+Lx] x [y0, y0+Ly]``.

    When ``x0``/``y0`` are omitted the rectangle is centred on the origin.
    """

    Lx: float
    Ly: float
    Nx: int
    Ny: int
    x0: float | None = None
    y0: float | None = None

    def __post_init__(self):
        if int(self.Nx) != self.Nx or int(self.Ny) != self.Ny:
            raise ValueError("Nx and Ny must be integers")
        if self.Nx < 2 or self.Ny < 2:
            raise ValueError(f"need Nx, Ny >= 2, got {self.Nx}x{self.Ny}")
        if not (self.Lx > 0 and self.Ly > 0):
            raise ValueError(f"need Lx, Ly > 0, got {self.Lx}, {self.Ly}")
        if self.x0 is None:
            object.__setattr__(self, "x0", -0.5 * self.Lx)
        if self.y0 is None:
            object.__setattr__(self, "y0", -0.5 * self.Ly)

    @classmethod
    def from_bounds(cls, xmin, xmax, ymin, ymax, dx, dy=None) -> "Grid":
        """Grid covering a box with (approximately) the requested spacing."""
        dy = dx if dy is None else dy
        nx = int(round((xmax - xmin) / dx))
        ny = int(round((ymax - ymin) / dy))
        return cls(xmax - xmin, ymax - ymin, nx, ny, xmin, ymin)

    @property
    def dx(self) -> float:
        return self.Lx / self.Nx

    @property
    def dy(self) -> float:
        return self.Ly / self.Ny

    @property
    def shape(self) -> tuple[int, int]:
        return (self.Nx, self.Ny)

    @property
    def size(self) -> int:
        return self.Nx * self.Ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return (self.x0, self.x0 + self.Lx, self.y0, self.y0 + self.Ly)

    @cached_property
    def xc(self) -> np.ndarray:
        return self.x0 + (np.arange(self.Nx) + 0.5) * self.dx

    @cached_property
    def yc(self) -> np.ndarray:
        return self.y0 + (np.arange(self.Ny) + 0.5) * self.dy

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-centre coordinates as two ``(Nx, Ny)`` arrays."""
        return np.meshgrid(self.xc, self.yc, indexing="ij")

    def check(self, *fields: np.ndarray) -> None:
        for f in fields:
            if np.shape(f) != self.shape:
                raise GridMismatchError(
                    f"field of shape {np.shape(f)} does not match grid {self.shape}"
                )

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def full(self, value: float) -> np.ndarray:
        return np.full(self.shape, float(value))

    def offset_of(self, sub: "Grid") -> tuple[int, int]:
        """Index offset of ``sub`` inside this grid when the cells coincide.

        Raises ``GridMismatchError`` if the spacings differ or the cell
        centres of ``sub`` are not centres of this grid.
        """
        tol = 1e-9
        if abs(sub.dx - self.dx) > tol * self.dx or abs(sub.dy - self.dy) > tol * self.dy:
            raise GridMismatchError("grids have different spacing")
        fx = (sub.x0 - self.x0) / self.dx
        fy = (sub.y0 - self.y0) / self.dy
        ox, oy = int(round(fx)), int(round(fy))
        if abs(fx - ox) > 1e-6 or abs(fy - oy) > 1e-6:
            raise GridMismatchError("cell centres of the two grids do not coincide")
        if ox < 0 or oy < 0 or ox + sub.Nx > self.Nx or oy + sub.Ny > self.Ny:
            raise GridMismatchError("sub-grid is not contained in the grid")
        return ox, oy


# -- ghost extension ---------------------------------------------------------


def extend_ghost_neumann(f: np.ndarray) -> np.ndarray:
    """Return ``f`` padded by one ghost layer copying the adjacent cell.

    The result has shape ``(Nx + 2, Ny + 2)``; the corners are never read by
    the face operators.
    """
    return np.pad(np.asarray(f, dtype=float), 1, mode="edge")


# -- averaging and differencing onto faces ----------------------------------


def avg_x(f: np.ndarray, grid: Grid) -> np.ndarray:
    grid.check(f)
    g = extend_ghost_neumann(f)[:, 1:-1]
    return 0.5 * (g[1:] + g[:-1])


def avg_y(f: np.ndarray, grid: Grid) -> np.ndarray:
    grid.check(f)
    g = extend_ghost_neumann(f)[1:-1, :]
    return 0.5 * (g[:, 1:] + g[:, :-1])


def diff_x(f: np.ndarray, grid: Grid) -> np.ndarray:
    grid.check(f)
    g = extend_ghost_neumann(f)[:, 1:-1]
    return (g[1:] - g[:-1]) / grid.dx


def diff_y(f: np.ndarray, grid: Grid) -> np.ndarray:
    grid.check(f)
    g = extend_ghost_neumann(f)[1:-1, :]
    return (g[:, 1:] - g[:, :-1]) / grid.dy


def div_x(fx: np.ndarray, grid: Grid) -> np.ndarray:
    """Difference of x-face values back onto cells."""
    if fx.shape != (grid.Nx + 1, grid.Ny):
        raise GridMismatchError(f"x-face field has shape {fx.shape}")
    return (fx[1:] - fx[:-1]) / grid.dx


def div_y(fy: np.ndarray, grid: Grid) -> np.ndarray:
    if fy.shape != (grid.Nx, grid.Ny + 1):
        raise GridMismatchError(f"y-face field has shape {fy.shape}")
    return (fy[:, 1:] - fy[:, :-1]) / grid.dy


def weighted_div(a: np.ndarray, b: np.ndarray, grid: Grid) -> np.ndarray:
    """``D_x[A_x(a) D_x(b)] + D_y[A_y(a) D_y(b)]`` with mirrored ghosts.

    For ``a == 1`` this is the 5-point Laplacian with homogeneous Neumann
    closure.
    """
    return div_x(avg_x(a, grid) * diff_x(b, grid), grid) + div_y(
        avg_y(a, grid) * diff_y(b, grid), grid
    )


def inner(u: np.ndarray, v: np.ndarray, grid: Grid) -> float:
    """Discrete L2 inner product ``dx*dy*sum(u*v)``."""
    grid.check(u, v)
    return float(grid.cell_area * np.sum(u * v))


def face_inner(ux, uy, vx, vy, grid: Grid) -> float:
    """``dx*dy`` times the sum over all x- and y-faces of ``u*v``."""
    return float(grid.cell_area * (np.sum(ux * vx) + np.sum(uy * vy)))


def half_face_sum(wx: np.ndarray, wy: np.ndarray, grid: Grid) -> np.ndarray:
    """Per cell, one half of the sum of ``w`` over its four faces."""
    return 0.5 * (wx[1:] + wx[:-1]) + 0.5 * (wy[:, 1:] + wy[:, :-1])


# -- the same operators as sparse matrices ----------------------------------


def _avg_1d(n: int) -> sp.csr_matrix:
    rows = [0]
    cols = [0]
    vals = [1.0]
    for k in range(1, n):
        rows += [k, k]
        cols += [k - 1, k]
        vals += [0.5, 0.5]
    rows.append(n)
    cols.append(n - 1)
    vals.append(1.0)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n + 1, n))


def _diff_1d(n: int, h: float) -> sp.csr_matrix:
    # boundary rows stay empty: mirrored ghost gives zero difference
    k = np.arange(1, n)
    rows = np.concatenate([k, k])
    cols = np.concatenate([k - 1, k])
    vals = np.concatenate([-np.ones(n - 1), np.ones(n - 1)]) / h
    return sp.csr_matrix((vals, (rows, cols)), shape=(n + 1, n))


def _div_1d(n: int, h: float) -> sp.csr_matrix:
    k = np.arange(n)
    rows = np.concatenate([k, k])
    cols = np.concatenate([k, k + 1])
    vals = np.concatenate([-np.ones(n), np.ones(n)]) / h
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n + 1))


class SparseOps:
    """Matrix versions of the face operators acting on flattened fields."""

    def __init__(self, grid: Grid):
        self.grid = grid
        ix, iy = sp.identity(grid.Nx, format="csr"), sp.identity(grid.Ny, format="csr")
        self.Ax = sp.kron(_avg_1d(grid.Nx), iy, format="csr")
        self.Ay = sp.kron(ix, _avg_1d(grid.Ny), format="csr")
        self.Dx = sp.kron(_diff_1d(grid.Nx, grid.dx), iy, format="csr")
        self.Dy = sp.kron(ix, _diff_1d(grid.Ny, grid.dy), format="csr")
        self.Divx = sp.kron(_div_1d(grid.Nx, grid.dx), iy, format="csr")
        self.Divy = sp.kron(ix, _div_1d(grid.Ny, grid.dy), format="csr")
        # half sum of the two x-faces (resp. y-faces) bounding each cell
        self.Hx = 0.5 * abs(self.Divx) * grid.dx
        self.Hy = 0.5 * abs(self.Divy) * grid.dy

    def weighted_div(self, a: np.ndarray) -> sp.csr_matrix:
        """Matrix of ``b -> weighted_div(a, b)``."""
        a = np.asarray(a, dtype=float).ravel()
        return (
            self.Divx @ sp.diags(self.Ax @ a) @ self.Dx
            + self.Divy @ sp.diags(self.Ay @ a) @ self.Dy
        ).tocsr()

    def boundary_average(self, wx: np.ndarray, wy: np.ndarray) -> sp.csr_matrix:
        """Matrix of ``u -> half_face_sum(wx*A_x u, wy*A_y u)``."""
        return (
            self.Hx @ sp.diags(np.ravel(wx)) @ self.Ax
            + self.Hy @ sp.diags(np.ravel(wy)) @ self.Ay
        ).tocsr()
