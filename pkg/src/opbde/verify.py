"""Checks that compare runs and audit the discrete invariants."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Embedding
from .grid import Grid, GridMismatchError, avg_x, avg_y, diff_x, diff_y
from .model import BoundaryData, PhysParams, discrete_energy, energy_increment, pumped_power
from .scheme import StepAudit


# -- L2 comparison -----------------------------------------------------------


def embed_reference(phi_ref: np.ndarray, ref_grid: Grid, ext_grid: Grid) -> np.ndarray:
    """Place a reference field into the extended grid; NaN elsewhere."""
    ref_grid.check(phi_ref)
    ox, oy = ext_grid.offset_of(ref_grid)
    out = np.full(ext_grid.shape, np.nan)
    out[ox:ox + ref_grid.Nx, oy:oy + ref_grid.Ny] = phi_ref
    return out


def l2_error_restricted(phi_ext, phi_ref, psi, grid: Grid, threshold: float = 0.5) -> float:
    """L2 distance over the cells with ``psi >= threshold``.

    ``phi_ref`` lives on the extended grid (see ``embed_reference``); every
    masked cell must carry a reference value.
    """
    grid.check(phi_ext, phi_ref, psi)
    mask = psi >= threshold
    diff = phi_ext[mask] - phi_ref[mask]
    if np.any(np.isnan(diff)):
        raise GridMismatchError("reference field does not cover the physical domain")
    return float(np.sqrt(grid.cell_area * np.sum(diff * diff)))


@dataclass
class ComparisonReport:
    eps: float | None
    times: list = field(default_factory=list)
    l2_errors: list = field(default_factory=list)
    digest: str = ""

    def add(self, t, err):
        self.times.append(float(t))
        self.l2_errors.append(float(err))


# -- energy law --------------------------------------------------------------


def energy_law_terms(audit: StepAudit, emb: Embedding, params: PhysParams, bdata: BoundaryData):
    """Return ``(lhs, rhs, energy_old, energy_new, pumped)`` for one step.

    ``lhs`` is the energy increment over ``dt``, formed without
    subtracting the two energies; ``rhs`` is the negative
    bulk and boundary dissipation minus the pumped power, all evaluated
    from the solved fields.
    """
    g = emb.grid
    dt = audit.dt
    e_old = discrete_energy(audit.phi_old, audit.q_old, emb, params, bdata)
    e_new = discrete_energy(audit.phi_new, audit.q_new, emb, params, bdata)
    w = emb.chi * audit.mu_star
    mob = emb.psi * audit.M
    bulk = np.sum(avg_x(mob, g) * diff_x(w, g) ** 2) + np.sum(avg_y(mob, g) * diff_y(w, g) ** 2)
    rate = (audit.phi_new - audit.phi_old) / dt
    bdry = 0.0
    if audit.gamma_inv:
        bdry = audit.gamma_inv * (
            np.sum(emb.gpx * avg_x(rate, g) ** 2) + np.sum(emb.gpy * avg_y(rate, g) ** 2)
        )
    pumped = pumped_power(audit.mu_star, emb, bdata.h3)
    rhs = -g.cell_area * (bulk + bdry) - pumped
    inc = energy_increment(audit.phi_old, audit.phi_new, audit.q_old, audit.q_new, emb, params, bdata)
    return inc / dt, rhs, e_old, e_new, pumped


def energy_law_residual(audit: StepAudit, emb, params, bdata) -> float:
    lhs, rhs, *_ = energy_law_terms(audit, emb, params, bdata)
    return abs(lhs - rhs)


# -- contact angle -----------------------------------------------------------


def zero_contour_points(phi: np.ndarray, grid: Grid, mask: np.ndarray | None = None):
    """Crossings of ``phi = 0`` along grid lines, by linear interpolation.

    A crossing needs strictly opposite signs in two neighbouring cells, so
    the exact zeros outside an embedded domain never produce one.  It is
    kept only when both cells are in ``mask``.
    """
    grid.check(phi)
    if mask is None:
        mask = np.ones(grid.shape, dtype=bool)
    x, y = grid.mesh()
    pts = []
    for axis in (0, 1):
        a = np.take(phi, range(phi.shape[axis] - 1), axis=axis)
        b = np.take(phi, range(1, phi.shape[axis]), axis=axis)
        ma = np.take(mask, range(phi.shape[axis] - 1), axis=axis)
        mb = np.take(mask, range(1, phi.shape[axis]), axis=axis)
        hit = (a * b < 0) & ma & mb
        s = a[hit] / (a[hit] - b[hit])
        xa = np.take(x, range(phi.shape[axis] - 1), axis=axis)[hit]
        ya = np.take(y, range(phi.shape[axis] - 1), axis=axis)[hit]
        if axis == 0:
            pts.append(np.column_stack([xa + s * grid.dx, ya]))
        else:
            pts.append(np.column_stack([xa, ya + s * grid.dy]))
    return np.vstack(pts) if pts else np.empty((0, 2))


def fit_circle(points: np.ndarray) -> tuple[float, float, float]:
    """Algebraic least-squares circle ``(cx, cy, radius)``."""
    x, y = points[:, 0], points[:, 1]
    A = np.column_stack([x, y, np.ones_like(x)])
    b = x * x + y * y
    (c0, c1, c2), *_ = np.linalg.lstsq(A, b, rcond=None)
    cx, cy = 0.5 * c0, 0.5 * c1
    return cx, cy, float(np.sqrt(c2 + cx * cx + cy * cy))


class ContactAngleError(ValueError):
    pass


TANGENT_SLACK = 0.05


def contact_angle(phi: np.ndarray, grid: Grid, substrate_y: float, eps: float,
                  band_max: float = 0.1, mask: np.ndarray | None = None) -> float:
    """Contact angle in degrees of the ``phi > 0`` drop on ``y = substrate_y``.

    Fits a circle to the zero-contour points lying between ``2 eps`` and
    ``band_max`` above the substrate and measures the angle inside the drop
    where the circle meets the substrate.
    """
    pts = zero_contour_points(phi, grid, mask)
    if len(pts):
        h = pts[:, 1] - substrate_y
        pts = pts[(h >= 2 * eps) & (h <= band_max)]
    if len(pts) < 3:
        raise ContactAngleError("drop interface does not reach the substrate band")
    cx, cy, R = fit_circle(pts)
    c = (substrate_y - cy) / R
    # a drop just touching the substrate fits a tangent circle up to noise
    if abs(c) > 1.0 + TANGENT_SLACK:
        raise ContactAngleError("fitted circle does not intersect the substrate")
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


# -- orderings ---------------------------------------------------------------


def energy_ordering_violations(curves: dict, slack: float = 1e-6) -> list:
    """Check that larger ``Gamma`` never has higher energy at a shared time.

    ``curves`` maps Gamma to ``(times, energies)``.  Returns a list of
    ``(t, gamma_small, gamma_large, excess)`` violations.
    """
    keys = sorted(curves)
    out = []
    for lo, hi in zip(keys[:-1], keys[1:]):
        t_lo, e_lo = map(np.asarray, curves[lo])
        t_hi, e_hi = map(np.asarray, curves[hi])
        shared, i_lo, i_hi = np.intersect1d(np.round(t_lo, 12), np.round(t_hi, 12), return_indices=True)
        excess = e_hi[i_hi] - e_lo[i_lo]
        for t, ex in zip(shared, excess):
            if ex > slack:
                out.append((float(t), lo, hi, float(ex)))
    return out


def is_nonincreasing(values, slack: float = 0.0) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) <= slack))


# -- comparisons and sweeps ----------------------------------------------------
# These drive full runs, so the runner is imported on use.


def compare(ref_cfg, ext_cfg, times) -> ComparisonReport:
    """L2 errors of the ``ext_cfg`` run against the ``ref_cfg`` run.

    The mask comes from the embedding of ``ext_cfg``; the reference field
    must live on cells of the extended grid.
    """
    from .experiments import config_digest, fields_at

    times = sorted(float(t) for t in times)
    ref_sim, ref_fields = fields_at(ref_cfg, times)
    ext_sim, ext_fields = fields_at(ext_cfg, times)
    report = ComparisonReport(
        ext_cfg.params.eps, digest=config_digest(ref_cfg) + ":" + config_digest(ext_cfg)
    )
    for t in times:
        ref_on_ext = embed_reference(ref_fields[t], ref_sim.grid, ext_sim.grid)
        report.add(t, l2_error_restricted(ext_fields[t], ref_on_ext, ext_sim.psi, ext_sim.grid))
    return report


def errors_decreasing(reports) -> bool:
    """True when the final errors strictly decrease along the list."""
    last = [r.l2_errors[-1] for r in reports]
    return all(b < a for a, b in zip(last[:-1], last[1:]))


def eps_sweep(ext_cfg, eps_list, ref_cfg, times=None) -> list:
    """One comparison report per interface width, against one reference run."""
    from .config import override
    from .experiments import config_digest, fields_at

    if not len(eps_list):
        raise ValueError("empty eps list")
    times = sorted(float(t) for t in (times or [ext_cfg.t_final]))
    ref_sim, ref_fields = fields_at(ref_cfg, times)
    reports = []
    for eps in eps_list:
        cfg = override(ext_cfg, "physics", "eps", eps)
        sim, fields = fields_at(cfg, times)
        rep = ComparisonReport(float(eps), digest=config_digest(cfg))
        for t in times:
            ref_on_ext = embed_reference(ref_fields[t], ref_sim.grid, sim.grid)
            rep.add(t, l2_error_restricted(fields[t], ref_on_ext, sim.psi, sim.grid))
        reports.append(rep)
    if len(reports) > 1 and not errors_decreasing(reports):
        import logging

        logging.getLogger(__name__).warning("eps sweep errors are not decreasing: %s",
                                            [r.l2_errors[-1] for r in reports])
    return reports


@dataclass
class GammaSweepReport:
    curves: dict  # gamma -> (times, energies)
    violations: list

    @property
    def ordered(self) -> bool:
        return not self.violations


def gamma_sweep(cfg, gamma_list, slack: float = 1e-6) -> GammaSweepReport:
    """Energy curves for each ``Gamma`` and the pointwise ordering check.

    ``inf`` is accepted and stands for ``gamma_inv = 0``.
    """
    from .config import override
    from .experiments import run

    if not len(gamma_list):
        raise ValueError("empty gamma list")
    curves = {}
    for gamma in gamma_list:
        member = override(cfg, "physics", "gamma", gamma)
        times, energies = [], []
        for _, rec in run(member):
            times.append(rec["t"])
            energies.append(rec["energy"])
        curves[float(gamma)] = (np.array(times), np.array(energies))
    return GammaSweepReport(curves, energy_ordering_violations(curves, slack))
