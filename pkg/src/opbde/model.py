"""Bulk potential, energy-quadratization variable and discrete energetics."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Embedding
from .grid import Grid, avg_x, avg_y, diff_x, diff_y, half_face_sum, inner

G_FLOOR = 1e-12


def f_bulk(phi):
    """Quartic double well ``(phi^2 - 1)^2 / 4``."""
    phi = np.asarray(phi, dtype=float)
    return 0.25 * (phi * phi - 1.0) ** 2


def f_prime(phi):
    phi = np.asarray(phi, dtype=float)
    return phi**3 - phi


POTENTIALS = {"quartic": (f_bulk, f_prime)}


@dataclass(frozen=True)
class PhysParams:
    """Model constants.

    ``gamma_inv = 0`` encodes an infinitely fast boundary relaxation.
    """

    K: float = 1e-4
    M: float = 0.01
    gamma_inv: float = 0.0
    alpha: float = 0.0
    A: float = 0.0
    eps: float = 1e-2
    potential: str = "quartic"

    def __post_init__(self):
        for name in ("K", "M", "eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("gamma_inv", "alpha", "A"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.potential not in POTENTIALS:
            raise ValueError(f"unknown potential {self.potential!r}")

    @property
    def f(self):
        return POTENTIALS[self.potential][0]

    @property
    def fp(self):
        return POTENTIALS[self.potential][1]

    def with_(self, **kw) -> "PhysParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class BoundaryData:
    h1: np.ndarray
    h2: np.ndarray
    h3: np.ndarray

    @classmethod
    def constant(cls, grid: Grid, h1=0.0, h2=0.0, h3=0.0) -> "BoundaryData":
        return cls(grid.full(h1), grid.full(h2), grid.full(h3))

    @property
    def closed(self) -> bool:
        return not np.any(self.h3)


@dataclass
class SimState:
    """Time level ``n`` of a run.

    ``ghosts`` only carries boundary unknowns of the reference solver.
    """

    n: int
    t: float
    phi: np.ndarray
    q: np.ndarray
    phi_prev: np.ndarray | None = None
    ghosts: dict = field(default_factory=dict)


class ParameterError(ValueError):
    pass


def q_init(phi: np.ndarray, A: float, f=f_bulk) -> np.ndarray:
    """``sqrt(2 f(phi) + 2 A)``."""
    rad = 2.0 * f(phi) + 2.0 * A
    if np.any(rad < 0):
        idx = np.unravel_index(np.argmin(rad), np.shape(rad))
        raise ParameterError(f"negative radicand {rad[idx]:.3g} at cell {idx}; increase A")
    return np.sqrt(rad)


def g_with_floor_hits(phi, A: float, f=f_bulk, fp=f_prime) -> tuple[np.ndarray, int]:
    """``f'(phi) / sqrt(2 f(phi) + 2 A)`` and the number of floored cells.

    The denominator is kept above ``1e-12``; with ``A = 0`` it vanishes at
    the wells ``phi = +-1`` where the numerator vanishes as well.
    """
    rad = np.sqrt(np.maximum(2.0 * f(phi) + 2.0 * A, 0.0))
    hits = int(np.count_nonzero(rad < G_FLOOR))
    return fp(phi) / np.maximum(rad, G_FLOOR), hits


def g_fn(phi, A: float, f=f_bulk, fp=f_prime):
    return g_with_floor_hits(phi, A, f, fp)[0]


def initial_state(phi0: np.ndarray, params: PhysParams, t0: float = 0.0) -> SimState:
    phi0 = np.array(phi0, dtype=float)
    return SimState(0, t0, phi0, q_init(phi0, params.A, params.f))


# -- discrete energetics -----------------------------------------------------


def discrete_energy(phi, q, emb: Embedding, params: PhysParams, bdata: BoundaryData) -> float:
    """Discrete free energy whose increments the scheme balances exactly.

    Bulk part ``dx dy sum psi q^2 / 2`` plus the gradient part weighted by
    the face averages of ``psi``, plus the boundary energy
    ``alpha/2 (A phi - A h1)^2 - A h2 A phi`` on every face weighted by
    ``|D psi|``.  The constant ``-A (psi, 1)`` is left out.
    """
    g = emb.grid
    g.check(phi, q)
    bulk = 0.5 * np.sum(emb.psi * q * q)
    grad = 0.5 * params.K * (
        np.sum(avg_x(emb.psi, g) * diff_x(phi, g) ** 2)
        + np.sum(avg_y(emb.psi, g) * diff_y(phi, g) ** 2)
    )
    bdry = 0.0
    if np.any(emb.gpx) or np.any(emb.gpy):
        for gp, avg in ((emb.gpx, avg_x), (emb.gpy, avg_y)):
            pf = avg(phi, g)
            bdry += np.sum(
                gp * (0.5 * params.alpha * (pf - avg(bdata.h1, g)) ** 2 - avg(bdata.h2, g) * pf)
            )
    return float(g.cell_area * (bulk + grad + bdry))


def energy_increment(phi_old, phi_new, q_old, q_new, emb: Embedding, params: PhysParams,
                     bdata: BoundaryData) -> float:
    """``discrete_energy(new) - discrete_energy(old)`` without cancellation.

    Every quadratic term is expanded as ``(b - a)(b + a)``, so the rounding
    error is relative to the increment rather than to the energy itself.
    """
    g = emb.grid
    g.check(phi_old, phi_new, q_old, q_new)
    d = phi_new - phi_old
    bulk = 0.5 * np.sum(emb.psi * (q_new - q_old) * (q_new + q_old))
    s = phi_new + phi_old
    grad = 0.5 * params.K * (
        np.sum(avg_x(emb.psi, g) * diff_x(d, g) * diff_x(s, g))
        + np.sum(avg_y(emb.psi, g) * diff_y(d, g) * diff_y(s, g))
    )
    bdry = 0.0
    if np.any(emb.gpx) or np.any(emb.gpy):
        for gp, avg in ((emb.gpx, avg_x), (emb.gpy, avg_y)):
            df = avg(d, g)
            bdry += np.sum(
                gp * df * (0.5 * params.alpha * (avg(s, g) - 2.0 * avg(bdata.h1, g)) - avg(bdata.h2, g))
            )
    return float(g.cell_area * (bulk + grad + bdry))


def discrete_volume(phi, psi, grid: Grid) -> float:
    return inner(psi * phi, np.ones(grid.shape), grid)


def boundary_source(emb: Embedding, h3: np.ndarray) -> np.ndarray:
    """Per cell, half the four-face sum of ``|D psi| A h3``."""
    g = emb.grid
    return half_face_sum(emb.gpx * avg_x(h3, g), emb.gpy * avg_y(h3, g), g)


def pumped_power(mu_star, emb: Embedding, h3) -> float:
    """Rate of energy fed in through the prescribed boundary flux."""
    if not np.any(h3):
        return 0.0
    return inner(mu_star * emb.chi, boundary_source(emb, h3), emb.grid)
