"""Acceptance criteria for the extended scheme.

Each test carries a ``criterion`` marker; the terminal summary prints one
pass/fail line per criterion with the measured values.  The full module
runs for several hours on one core.  Set ``OPBDE_QUICK=1`` to skip the
runs marked ``slow`` while developing.
"""

import os

import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings
from hypothesis import strategies as st

from opbde.config import override, parse_config_text
from opbde.experiments import build, fields_at, run
from opbde.geometry import Embedding, build_embedding
from opbde.grid import Grid
from opbde.model import BoundaryData, PhysParams, initial_state
from opbde.reference import ReferenceSolver
from opbde.scheme import SolverOptions, StepAudit, Stepper, extrapolate, update_q
from opbde.verify import (
    contact_angle,
    embed_reference,
    energy_law_terms,
    energy_ordering_violations,
    eps_sweep,
    l2_error_restricted,
)

slow = pytest.mark.skipif(os.environ.get("OPBDE_QUICK") == "1", reason="OPBDE_QUICK=1")


def criterion(n):
    return pytest.mark.criterion(n)


def coarsening_text(n=64, eps=0.02, dt=1e-5, steps=2000, solver="extended"):
    return (
        f"[run]\nexperiment = coarsening\nsolver = {solver}\nseed = 7\n[grid]\nNx = {n}\nNy = {n}\n"
        f"[physics]\neps = {eps}\n[time]\ndt = {dt!r}\nt_final = {steps * dt!r}\n"
    )


def droplet_text(gamma, t_final, solver="extended"):
    return (
        f"[run]\nexperiment = droplet_flat\nsolver = {solver}\n[physics]\ngamma = {gamma}\n"
        f"[time]\nt_final = {t_final}\ndiagnostics_every = 1000\n"
    )


# -- criteria 1 and 2: one 64 x 64 coarsening run ---------------------------


class CoarseningRun:
    """Records of every step and the states of steps 20 to 39."""

    def __init__(self):
        self.cfg = parse_config_text(coarsening_text())
        self.sim = build(self.cfg)
        self.records, self.states = [], []
        for state, rec in run(self.cfg, self.sim):
            self.records.append(rec)
            if 20 <= state.n < 40:
                self.states.append(state)
        self.emb = build_embedding(self.cfg.shape, self.cfg.grid, self.cfg.params.eps)
        self.bdata = BoundaryData.constant(self.cfg.grid)
        self._lu = {}

    def __repr__(self):
        return "CoarseningRun(64x64, 2000 steps)"

    def factored(self, k):
        """Step system of state ``k`` with its sparse LU, cached."""
        if k not in self._lu:
            stepper = Stepper(self.cfg.params, self.emb, self.bdata, self.cfg.dt)
            system = stepper.system(self.states[k])
            self._lu[k] = system, spla.splu(system.operator.tocsc())
        return self._lu[k]


@pytest.fixture(scope="module")
def coarsening_run():
    return CoarseningRun()


@criterion(1)
def test_volume_conservation(coarsening_run, record_property):
    records = coarsening_run.records
    drift = max(abs(r["volume_drift"]) for r in records)
    record_property("steps", records[-1]["step"])
    record_property("max_drift", f"{drift:.2e}")
    assert records[-1]["step"] == 2000 and len(records) == 2001
    assert drift <= 1e-8


@criterion(2)
def test_energy_law_every_step(coarsening_run, record_property):
    records = coarsening_run.records
    worst = max(
        r["energy_law_residual"] / max(1.0, abs(prev["energy"])) for prev, r in zip(records, records[1:])
    )
    record_property("max_scaled_residual", f"{worst:.2e}")
    assert worst <= 1e-7


def _solver_defect(cr, state, tol):
    """Energy-law residual of one step solved by GMRES to ``rel_tol = tol``."""
    opts = SolverOptions(method="gmres", rel_tol=tol, abs_tol=0.0, drop_tol=0.1)
    stepper = Stepper(cr.cfg.params, cr.emb, cr.bdata, cr.cfg.dt, opts)
    audit = stepper.step(state)[2]
    lhs, rhs, *_ = energy_law_terms(audit, cr.emb, cr.cfg.params, cr.bdata)
    return abs(lhs - rhs)


@criterion(2)
def test_energy_law_follows_solver_tolerance(coarsening_run, record_property):
    # geometric mean over twenty fixed states, one solve per state and tolerance;
    # single decades are noisy because GMRES overshoots its target by a
    # varying amount, so the check is on the fitted log-log slope
    tols = np.array([1e-1, 1e-2, 1e-3, 1e-4])
    means = np.array([
        np.exp(np.mean([np.log(_solver_defect(coarsening_run, s, t)) for s in coarsening_run.states]))
        for t in tols
    ])
    slope = np.polyfit(np.log10(tols), np.log10(means), 1)[0]
    record_property("defects", " ".join(f"{m:.2e}" for m in means))
    record_property("slope", f"{slope:.2f}")
    assert 0.5 <= slope <= 1.5


@criterion(2)
@settings(max_examples=20, deadline=None)
@given(pick=st.integers(0, 19), log_tol=st.floats(-5, -3), seed=st.integers(0, 2**32 - 1))
def test_energy_law_defect_shrinks_with_solve_residual(coarsening_run, pick, log_tol, seed):
    # an approximate solution whose residual is tol * |b - A x_ref| in a random
    # direction; a tenfold tighter residual leaves a defect at least eight
    # times smaller, since both its linear and quadratic parts shrink.  The
    # window keeps tol / 10 clear of the round-off floor near 2e-14
    cr = coarsening_run
    s = cr.states[pick]
    system, lu = cr.factored(pick)
    A, b = system.operator, system.rhs
    exact = lu.solve(b)
    x_ref = np.concatenate([s.phi.ravel(), np.zeros(s.phi.size)])
    u = np.random.default_rng(seed).standard_normal(b.size)
    err = lu.solve(u / np.linalg.norm(u)) * np.linalg.norm(b - A @ x_ref)
    gb, gamma_inv, M, _ = extrapolate(s, cr.cfg.params)

    def defect(tol):
        phi, mu = system.unpack(exact + tol * err)
        audit = StepAudit(s.phi, phi, s.q, update_q(s, phi, gb), mu, gb, cr.cfg.dt, gamma_inv, M)
        lhs, rhs, *_ = energy_law_terms(audit, cr.emb, cr.cfg.params, cr.bdata)
        return abs(lhs - rhs)

    tol = 10.0**log_tol
    assert defect(tol) >= 8.0 * defect(tol / 10)


# -- criterion 3 -------------------------------------------------------------


@criterion(3)
@pytest.mark.parametrize("dt", [1e-5, 1e-4, 1e-3, 1e-2])
def test_energy_stability(dt, record_property):
    cfg = parse_config_text(coarsening_text(dt=dt, steps=200))
    energies = [rec["energy"] for _, rec in run(cfg)]
    increases = int(np.sum(np.diff(energies) > 0))
    record_property("increases", increases)
    record_property("energy_drop", f"{energies[0] - energies[-1]:.3e}")
    assert len(energies) == 201 and increases == 0


# -- criterion 4 -------------------------------------------------------------


def _table_errors(n):
    ext = parse_config_text(coarsening_text(n=n, eps=1e-2, steps=1000))
    ref = parse_config_text(coarsening_text(n=n, eps=1e-2, steps=1000, solver="reference"))
    return [r.l2_errors[-1] for r in eps_sweep(ext, [1e-2, 2e-3], ref)]


@criterion(4)
def test_eps_refinement_scaled(record_property):
    # 80 x 80 extended grid, the unit square resolved by 64 x 64 cells
    e1, e2 = _table_errors(80)
    record_property("errors", f"{e1:.3e} {e2:.3e}")
    record_property("ratio", f"{e1 / e2:.0f}")
    assert e1 / e2 >= 50


@pytest.fixture(scope="module")
def full_scale_errors():
    return _table_errors(160)


@slow
@criterion(4)
def test_full_scale_coarse_eps_band(full_scale_errors, record_property):
    record_property("error", f"{full_scale_errors[0]:.3e}")
    assert 2e-4 <= full_scale_errors[0] <= 1e-2


@slow
@criterion(4)
def test_full_scale_fine_eps_band(full_scale_errors, record_property):
    record_property("error", f"{full_scale_errors[1]:.3e}")
    assert 3e-8 <= full_scale_errors[1] <= 3e-5


@slow
@criterion(4)
def test_full_scale_ratio(full_scale_errors, record_property):
    e1, e2 = full_scale_errors
    record_property("ratio", f"{e1 / e2:.0f}")
    assert e1 / e2 >= 100


# -- criteria 5, 6 and 7: droplet runs --------------------------------------


class DropletRun:
    """Energies once per unit time plus fields at chosen times."""

    def __init__(self, gamma, t_final, keep=()):
        self.cfg = parse_config_text(droplet_text(gamma, t_final))
        self.sim = build(self.cfg)
        self.times, self.energies, self.fields = [], [], {}
        keep = {int(round(t / self.cfg.dt)) for t in keep}
        for state, rec in run(self.cfg, self.sim):
            self.times.append(round(rec["t"], 9))
            self.energies.append(rec["energy"])
            if state.n in keep:
                self.fields[round(rec["t"], 9)] = state.phi.copy()
        self.final = state

    def angle(self):
        return contact_angle(self.final.phi, self.sim.grid, 0.0, self.cfg.params.eps, mask=self.sim.psi >= 0.5)


_DROPLETS = {}


def droplet(gamma, t_final, keep=()):
    key = (gamma, t_final)
    if key not in _DROPLETS:
        _DROPLETS[key] = DropletRun(gamma, t_final, keep)
    return _DROPLETS[key]


@pytest.fixture(scope="module")
def droplet_errors():
    ext = droplet(10, 20, keep=(10, 20))
    ref_cfg = parse_config_text(droplet_text(10, 20, solver="reference"))
    ref_sim, ref_fields = fields_at(ref_cfg, [10.0, 20.0])
    out = {}
    for t in (10.0, 20.0):
        ref = embed_reference(ref_fields[t], ref_sim.grid, ext.sim.grid)
        out[t] = l2_error_restricted(ext.fields[t], ref, ext.sim.psi, ext.sim.grid)
    return out


@slow
@criterion(5)
def test_droplet_error_at_t10(droplet_errors, record_property):
    record_property("error", f"{droplet_errors[10.0]:.3e}")
    assert droplet_errors[10.0] <= 1e-3


@slow
@criterion(5)
def test_droplet_error_at_t20(droplet_errors, record_property):
    # the long-time band, applied at the end of the shortened run
    record_property("error", f"{droplet_errors[20.0]:.3e}")
    assert droplet_errors[20.0] <= 2e-3


@slow
@criterion(6)
def test_contact_angle_relaxes(record_property):
    angle = droplet(100, 50).angle()
    record_property("angle", f"{angle:.2f}")
    assert abs(angle - 90.0) <= 5.0


@slow
@criterion(7)
def test_gamma_ordering(record_property):
    runs = {10.0: droplet(10, 20, keep=(10, 20)), 50.0: droplet(50, 20), 100.0: droplet(100, 50)}
    curves = {g: (r.times, r.energies) for g, r in runs.items()}
    violations = energy_ordering_violations(curves, slack=1e-6)
    record_property("violations", len(violations))
    record_property("final_energies", " ".join(f"{r.energies[20]:.6f}" for r in runs.values()))
    assert violations == []


# -- criterion 8 -------------------------------------------------------------


@criterion(8)
def test_trivial_embedding_matches_reference(record_property):
    g = Grid(1.0, 1.0, 8, 8)
    p = PhysParams(K=1e-3, M=0.05, eps=0.02)
    bd = BoundaryData.constant(g)
    phi0 = np.random.default_rng(8).uniform(-0.6, 0.6, g.shape)
    ref = ReferenceSolver(g, p, bd, 1e-3, ())
    ext = Stepper(p, Embedding.trivial(g), bd, 1e-3)
    a, b = ref.initial_state(phi0), initial_state(phi0, p)
    worst = 0.0
    for _ in range(100):
        a, b = ref.step(a)[0], ext.step(b)[0]
        worst = max(worst, np.abs(a.phi - b.phi).max())
    record_property("max_difference", f"{worst:.2e}")
    assert worst <= 1e-9


# -- criterion 9 -------------------------------------------------------------


@criterion(9)
def test_second_order_in_time(record_property):
    base = parse_config_text(
        "[grid]\nNx = 40\nNy = 40\n[physics]\neps = 0.04\nK = 1e-3\nM = 0.1\n"
        "[time]\ndt = 1e-3\nt_final = 0.08\n[initial]\nkind = wave\namplitude = 0.5\ntaper = 0.15\n"
    )
    finals = []
    for dt in (4e-3, 2e-3, 1e-3, 5e-4):
        sim, f = fields_at(override(base, "time", "dt", dt), [0.08])
        finals.append(f[0.08])
    diffs = [l2_error_restricted(a, b, sim.psi, sim.grid) for a, b in zip(finals, finals[1:])]
    ratios = [d0 / d1 for d0, d1 in zip(diffs, diffs[1:])]
    record_property("ratios", " ".join(f"{r:.3f}" for r in ratios))
    assert all(abs(r - 4.0) <= 0.5 for r in ratios)
