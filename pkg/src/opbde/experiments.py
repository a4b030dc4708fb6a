"""Experiment set-up and the diagnostic trajectory stream."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import geometry as geo
from .config import ConfigError, RunConfig
from .grid import Grid, GridMismatchError
from .model import BoundaryData, discrete_energy, discrete_volume, initial_state
from .reference import ReferenceSolver
from .scheme import Stepper
from .verify import energy_law_terms

log = logging.getLogger(__name__)

COLUMNS = (
    "step", "t", "energy", "volume", "volume_drift", "energy_law_residual",
    "pumped_power", "solver_iters", "solver_residual",
)


def config_digest(cfg: RunConfig) -> str:
    return hashlib.sha256(cfg.to_text().encode()).hexdigest()[:16]


def reference_grid(cfg: RunConfig) -> Grid:
    """Grid of the rectangular physical domain at the configured spacing."""
    x0, x1, y0, y1 = cfg.shape.bbox()
    if not np.all(np.isfinite([x0, x1, y0, y1])):
        raise ConfigError("reference runs need a bounded rectangular shape")
    if not isinstance(cfg.shape, (geo.FullRectangle, geo.HalfPlaneSubstrate)):
        raise ConfigError("reference runs need [shape] kind = rectangle or halfplane")
    g = cfg.grid
    ref = Grid.from_bounds(x0, x1, y0, y1, g.dx, g.dy)
    if abs(ref.dx - g.dx) > 1e-9 * g.dx or abs(ref.dy - g.dy) > 1e-9 * g.dy:
        raise ConfigError("shape box is not a whole number of grid cells")
    return ref


def _box_grid(cfg: RunConfig):
    """Grid of the shape's box when it is aligned with the configured grid."""
    try:
        ref = reference_grid(cfg)
        cfg.grid.offset_of(ref)
        return ref
    except (ConfigError, GridMismatchError):
        return None


def initial_phi(cfg: RunConfig, grid: Grid, inside: np.ndarray) -> np.ndarray:
    """Initial phase field on ``grid``, zero on cells outside the domain.

    Random data is drawn on the cells of the physical box so the reference
    and extended runs with one seed start from the same values.
    """
    ic = cfg.initial
    if ic["kind"] == "droplet":
        x, y = grid.mesh()
        rho = np.hypot(x - ic["cx"], y - ic["cy"])
        phi = np.tanh((ic["radius"] - rho) / ic["width"])
    elif ic["kind"] == "wave":
        x, y = grid.mesh()
        phi = ic["amplitude"] * np.cos(2 * np.pi * (x - ic["cx"]) / ic["wavelength"])
        if ic["taper"] > 0:
            # smooth ramp from 0 on the boundary to 1 at depth ``taper``;
            # data that vanish near the wall excite no stiff boundary modes
            t = np.clip(-cfg.shape.sdf(x, y) / ic["taper"], 0.0, 1.0)
            phi = phi * t**3 * (10 - 15 * t + 6 * t**2)
    else:
        rng = np.random.default_rng(cfg.seed)
        box = _box_grid(cfg)
        if box is None:
            phi = ic["amplitude"] * rng.uniform(-1.0, 1.0, size=grid.shape)
        else:
            ox, oy = grid.offset_of(box)
            phi = np.zeros(grid.shape)
            phi[ox:ox + box.Nx, oy:oy + box.Ny] = ic["amplitude"] * rng.uniform(-1.0, 1.0, size=box.shape)
    return np.where(inside, phi, 0.0)


def extend_outside(phi: np.ndarray, inside: np.ndarray) -> np.ndarray:
    """Copy to every outside cell the value of its nearest inside cell.

    The first cells past the boundary act as ghosts for the boundary law.
    Zero there makes a jump of size one across the wall and starts a
    boundary transient the rectangle solver does not have.
    """
    if not inside.any():
        return phi
    _, (ii, jj) = ndimage.distance_transform_edt(~inside, return_indices=True)
    return phi[ii, jj]


@dataclass
class Simulation:
    """One configured solver with its initial state and diagnostics."""

    cfg: RunConfig
    grid: Grid
    psi: np.ndarray
    state0: object
    _advance: object
    _energy: object

    @property
    def is_reference(self) -> bool:
        return self.cfg.solver == "reference"

    def energy(self, state) -> float:
        return self._energy(state)

    def volume(self, state) -> float:
        return discrete_volume(state.phi, self.psi, self.grid)

    def step(self, state):
        """Return ``(new_state, report, energy_law_residual, pumped_power)``."""
        return self._advance(state)


def build(cfg: RunConfig) -> Simulation:
    p = cfg.params
    if cfg.solver == "reference":
        grid = reference_grid(cfg)
        shape = cfg.shape
        h = [geo.boundary_data_field(v, shape, grid) for v in cfg.h]
        bdata = BoundaryData(*h)
        if not bdata.closed:
            raise ConfigError("reference runs do not support a boundary flux h3")
        solver = ReferenceSolver(grid, p, bdata, cfg.dt, cfg.dynamic_edges, cfg.solver_opts)
        state0 = solver.initial_state(initial_phi(cfg, grid, np.ones(grid.shape, bool)))

        def advance(state):
            new, report, _ = solver.step(state)
            return new, report, float("nan"), 0.0

        return Simulation(cfg, grid, np.ones(grid.shape), state0, advance, solver.energy)

    grid = cfg.grid
    try:
        emb = geo.build_embedding(cfg.shape, grid, p.eps)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    bdata = BoundaryData(*(geo.boundary_data_field(v, cfg.shape, grid) for v in cfg.h))
    inside = cfg.shape.sdf(*grid.mesh()) < 0
    phi0 = emb.psi * initial_phi(cfg, grid, inside)
    if cfg.initial["outside"] == "extend":
        phi0 = extend_outside(phi0, inside)
    stepper = Stepper(p, emb, bdata, cfg.dt, cfg.solver_opts)

    def advance(state):
        new, report, audit = stepper.step(state)
        lhs, rhs, _, _, pumped = energy_law_terms(audit, emb, p, bdata)
        return new, report, abs(lhs - rhs), pumped

    def energy(state):
        return discrete_energy(state.phi, state.q, emb, p, bdata)

    return Simulation(cfg, grid, emb.psi, initial_state(phi0, p), advance, energy)


def run(cfg: RunConfig, sim: Simulation | None = None):
    """Yield ``(state, record)`` at step 0 and every ``diagnostics_every`` steps.

    ``record`` maps the names in ``COLUMNS`` to values.  The last step is
    always reported.  Solver failures propagate as ``StepFailure``.
    """
    sim = sim or build(cfg)
    state = sim.state0
    vol0 = sim.volume(state)

    def record(state, resid, pumped, report):
        vol = sim.volume(state)
        return {
            "step": state.n,
            "t": state.n * cfg.dt,
            "energy": sim.energy(state),
            "volume": vol,
            "volume_drift": vol - vol0,
            "energy_law_residual": resid,
            "pumped_power": pumped,
            "solver_iters": report.iterations if report else 0,
            "solver_residual": report.residual if report else 0.0,
        }

    yield state, record(state, 0.0, 0.0, None)
    n_steps = cfg.n_steps
    worst = 0.0
    for k in range(1, n_steps + 1):
        state, report, resid, pumped = sim.step(state)
        # report the largest residual since the previous record
        worst = max(worst, resid) if np.isfinite(resid) else resid
        if k % cfg.diagnostics_every == 0 or k == n_steps:
            yield state, record(state, worst, pumped, report)
            worst = 0.0


def fields_at(cfg: RunConfig, times, sim: Simulation | None = None) -> tuple[Simulation, dict]:
    """Run ``cfg`` and keep ``phi`` at the requested times (rounded to steps)."""
    sim = sim or build(cfg)
    want = {int(round(t / cfg.dt)): t for t in times}
    out = {}
    state = sim.state0
    if 0 in want:
        out[want[0]] = state.phi.copy()
    for k in range(1, max(want, default=0) + 1):
        state = sim.step(state)[0]
        if k in want:
            out[want[k]] = state.phi.copy()
    return sim, out
