"""Linearly implicit, second-order energy-quadratized stepper.

Each step solves one sparse linear system for ``(phi^{n+1}, mu*^{n+1/2})``:

    (phi' - phi)/dt - chi Dh(psi M, chi mu)  + chi S(h3)                  = 0
    mu - psi g (q + g (phi' - phi)/2) + K Dh(psi, (phi' + phi)/2)
       - S[alpha ((phi' + phi)/2 - h1) - h2 + gamma_inv (phi' - phi)/dt]  = 0

where ``S[u]`` is half the four-face sum of ``|D psi| A u`` and ``g`` is the
extrapolated ``dq/dphi``.  The auxiliary variable is then advanced with
``q' = q + g (phi' - phi)``, so it never enters the linear system.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import Embedding
from .grid import SparseOps
from .model import (
    BoundaryData,
    PhysParams,
    SimState,
    boundary_source,
    g_with_floor_hits,
)

log = logging.getLogger(__name__)


class StepFailure(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class AssemblyError(ValueError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    """Linear solver settings.

    ``method`` is ``"direct"`` (sparse LU), ``"gmres"`` (ILU preconditioned),
    ``"lagged"`` (GMRES preconditioned by the LU of an earlier step's
    operator, refactored when it stops paying off) or ``"auto"``, which
    picks ``"lagged"``.  Only the lower-left diagonal of the operator
    changes between steps, so an old factorization stays an excellent
    preconditioner and a fresh LU is rarely needed.

    ``drop_tol`` sets the incomplete factorization used by ``"gmres"``.
    When GMRES misses the target the step is finished with a sparse LU.
    """

    rel_tol: float = 1e-8
    abs_tol: float = 1e-13
    max_iterations: int = 500
    method: str = "auto"
    refactor_iterations: int = 8
    drop_tol: float = 1e-5

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if not 0 <= self.drop_tol < 1:
            raise ValueError("drop_tol must lie in [0, 1)")
        if self.method not in ("auto", "direct", "gmres", "lagged"):
            raise ValueError(f"unknown solver method {self.method!r}")


@dataclass
class StepReport:
    residual: float = 0.0
    iterations: int = 0
    wall_time: float = 0.0
    g_floor_hits: int = 0
    converged: bool = True


@dataclass
class StepSystem:
    """Block system over the stacked unknown ``[phi^{n+1}; mu*^{n+1/2}]``."""

    operator: sp.csr_matrix
    rhs: np.ndarray
    shape: tuple[int, int]

    @property
    def n_cells(self) -> int:
        return self.shape[0] * self.shape[1]

    def unpack(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = self.n_cells
        return x[:n].reshape(self.shape), x[n:].reshape(self.shape)


@dataclass
class StepAudit:
    """Everything needed to re-check the energy law of one step."""

    phi_old: np.ndarray
    phi_new: np.ndarray
    q_old: np.ndarray
    q_new: np.ndarray
    mu_star: np.ndarray
    g_bar: np.ndarray
    dt: float
    gamma_inv: float
    M: float


def bar(now, before, n: int):
    """Second-order extrapolation to ``n + 1/2``; the current value at n = 0."""
    if n == 0 or before is None:
        return now
    return 1.5 * now - 0.5 * before


def extrapolate(state: SimState, params: PhysParams):
    """Return ``(g_bar, gamma_inv_bar, M_bar, floor_hits)``."""
    g_now, hits = g_with_floor_hits(state.phi, params.A, params.f, params.fp)
    if state.n == 0 or state.phi_prev is None:
        g_bar = g_now
    else:
        g_old, hits_old = g_with_floor_hits(state.phi_prev, params.A, params.f, params.fp)
        g_bar = bar(g_now, g_old, state.n)
        hits += hits_old
    return g_bar, params.gamma_inv, params.M, hits


def update_q(state: SimState, phi_next: np.ndarray, g_bar: np.ndarray) -> np.ndarray:
    return state.q + g_bar * (phi_next - state.phi)


class _Blocks:
    """Step-independent pieces of the operator for fixed embedding and dt."""

    def __init__(self, params: PhysParams, emb: Embedding, bdata: BoundaryData, dt: float):
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        grid = emb.grid
        ops = SparseOps(grid)
        n = grid.size
        psi, chi = emb.psi.ravel(), emb.chi.ravel()
        self.n = n
        self.dt = dt
        self.psi = psi
        self.L_psi = ops.weighted_div(psi)
        self.P = ops.boundary_average(emb.gpx, emb.gpy)
        C = sp.diags(chi)
        flux = C @ ops.weighted_div(psi * params.M) @ C
        couple = (
            0.5 * params.K * self.L_psi
            - (0.5 * params.alpha + params.gamma_inv / dt) * self.P
        )
        eye = sp.identity(n, format="csr")
        # a unit placeholder keeps every lower-left diagonal entry stored so
        # the g_bar^2 term can be written into .data in place each step
        base = sp.bmat([[eye / dt, -flux], [couple + eye, eye]], format="csr")
        base.sum_duplicates()
        coo = base.tocoo()
        self._diag_pos = np.flatnonzero((coo.row >= n) & (coo.row - n == coo.col))
        if self._diag_pos.size != n:
            raise AssemblyError("lower-left diagonal is not fully stored")
        self._base_diag = base.data[self._diag_pos] - 1.0
        self.base = base
        self.rhs1_const = -(chi * boundary_source(emb, bdata.h3).ravel())
        self.rhs2_const = -(params.alpha * (self.P @ bdata.h1.ravel()) + self.P @ bdata.h2.ravel())
        self.half_explicit = 0.5 * params.K * self.L_psi - (
            0.5 * params.alpha - params.gamma_inv / dt
        ) * self.P
        self.shape = grid.shape
        for name, arr in (("flux", flux.data), ("coupling", couple.data)):
            if not np.all(np.isfinite(arr)):
                raise AssemblyError(f"non-finite {name} coefficient")

    def system(self, state: SimState, g_bar: np.ndarray) -> StepSystem:
        gb = g_bar.ravel()
        phi = state.phi.ravel()
        q = state.q.ravel()
        op = self.base.copy()
        op.data[self._diag_pos] = self._base_diag - 0.5 * self.psi * gb * gb
        rhs1 = phi / self.dt + self.rhs1_const
        rhs2 = (
            self.psi * gb * q
            - 0.5 * self.psi * gb * gb * phi
            - self.half_explicit @ phi
            + self.rhs2_const
        )
        rhs = np.concatenate([rhs1, rhs2])
        if not np.all(np.isfinite(rhs)):
            bad = int(np.flatnonzero(~np.isfinite(rhs))[0]) % self.n
            raise AssemblyError(f"non-finite right-hand side at cell {np.unravel_index(bad, self.shape)}")
        return StepSystem(op, rhs, self.shape)


def assemble(state: SimState, params: PhysParams, emb: Embedding, bdata: BoundaryData, dt: float) -> StepSystem:
    g_bar = extrapolate(state, params)[0]
    return _Blocks(params, emb, bdata, dt).system(state, g_bar)


# -- linear solves -----------------------------------------------------------


def _target(ref_norm: float, opts: SolverOptions) -> float:
    return max(opts.abs_tol, opts.rel_tol * ref_norm)


def _gmres(A, b, M, target: float, opts: SolverOptions, x0=None):
    count = [0]

    def cb(_):
        count[0] += 1

    x, info = spla.gmres(
        A,
        b,
        x0=x0,
        rtol=0.0,
        atol=target,
        M=M,
        restart=min(50, opts.max_iterations),
        maxiter=opts.max_iterations,
        callback=cb,
        callback_type="pr_norm",
    )
    return x, count[0]


def _ilu(A, drop_tol: float):
    """Incomplete LU in the natural order of the stacked unknowns.

    Fill-reducing column orders can pair a dropped row with a zero pivot;
    keeping the natural order eliminates each ``phi`` block before its
    ``mu`` block, whose pivots stay away from zero.
    """
    A = A.tocsc()
    try:
        return spla.spilu(A, drop_tol=drop_tol, fill_factor=20, permc_spec="NATURAL")
    except RuntimeError:
        return spla.spilu(A, drop_tol=drop_tol, fill_factor=20, diag_pivot_thresh=0.0)


def _direct(A, b, target):
    lu = spla.splu(A.tocsc())
    x = lu.solve(b)
    iters = 1
    # iterative refinement guards against loss of accuracy from
    # badly scaled rows where chi is large
    for _ in range(3):
        r = b - A @ x
        if np.linalg.norm(r) <= target:
            break
        x += lu.solve(r)
        iters += 1
    return x, iters


class LinearSolver:
    """Residual-controlled solver that may keep a factorization between calls."""

    def __init__(self, opts: SolverOptions | None = None):
        self.opts = opts or SolverOptions()
        self._lu = None
        self._last_iters = 0

    def method(self, n: int) -> str:
        m = self.opts.method
        return "lagged" if m == "auto" else m

    def solve(self, system: StepSystem, x0=None, x_ref=None):
        """Solve to ``max(abs_tol, rel_tol * |b - A x_ref|)``.

        ``x_ref`` defaults to zero.  Steppers pass the unchanged state so the
        tolerance measures the update rather than the large ``phi / dt``
        part of the right-hand side.
        """
        t0 = time.perf_counter()
        A, b = system.operator, system.rhs
        opts = self.opts
        ref = b if x_ref is None else b - A @ x_ref
        target = _target(np.linalg.norm(ref), opts)
        method = self.method(A.shape[0])
        iters = 0
        if method == "direct":
            x, iters = _direct(A, b, target)
        elif method == "gmres":
            M = spla.LinearOperator(A.shape, _ilu(A, opts.drop_tol).solve)
            x, iters = _gmres(A, b, M, target, opts, x0)
            if not np.linalg.norm(b - A @ x) <= target:
                log.warning("ILU-preconditioned GMRES missed the target; using sparse LU")
                x, more = _direct(A, b, target)
                iters += more
        else:
            if self._lu is None or self._last_iters > opts.refactor_iterations:
                self._lu = spla.splu(A.tocsc())
            x, iters = _gmres(A, b, spla.LinearOperator(A.shape, self._lu.solve), target, opts, x0)
            self._last_iters = iters
            if np.linalg.norm(b - A @ x) > target:
                # stale preconditioner: refactor once and retry
                self._lu = spla.splu(A.tocsc())
                M = spla.LinearOperator(A.shape, self._lu.solve)
                x, more = _gmres(A, b, M, target, opts, x)
                iters += more
                self._last_iters = 0
        res = float(np.linalg.norm(b - A @ x))
        report = StepReport(res, iters, time.perf_counter() - t0, 0, res <= target)
        if not report.converged:
            raise StepFailure(
                f"linear solve reached residual {res:.3e} > target {target:.3e}", report
            )
        return x, report


def solve(system: StepSystem, opts: SolverOptions | None = None):
    x, report = LinearSolver(opts).solve(system)
    phi, mu = system.unpack(x)
    return phi, mu, report


# -- stepping ----------------------------------------------------------------


class Stepper:
    """Advance states for one fixed set of parameters, embedding and dt."""

    def __init__(self, params: PhysParams, emb: Embedding, bdata: BoundaryData, dt: float,
                 opts: SolverOptions | None = None):
        self.params = params
        self.emb = emb
        self.bdata = bdata
        self.dt = float(dt)
        self.blocks = _Blocks(params, emb, bdata, self.dt)
        self.solver = LinearSolver(opts)
        self._mu = []  # recent solutions, used only as Krylov initial guesses

    def system(self, state: SimState) -> StepSystem:
        g_bar = extrapolate(state, self.params)[0]
        return self.blocks.system(state, g_bar)

    def step(self, state: SimState):
        """Return ``(new_state, report, audit)``."""
        g_bar, gamma_inv, M, hits = extrapolate(state, self.params)
        system = self.blocks.system(state, g_bar)
        x0 = None
        if self.solver.method(system.operator.shape[0]) != "direct":
            prev = state.phi if state.phi_prev is None else state.phi_prev
            mu0 = np.zeros(state.phi.size)
            if len(self._mu) == 2:
                mu0 = 2 * self._mu[1] - self._mu[0]
            elif self._mu:
                mu0 = self._mu[-1]
            x0 = np.concatenate([(2 * state.phi - prev).ravel(), mu0])
        x_ref = np.concatenate([state.phi.ravel(), np.zeros(state.phi.size)])
        x, report = self.solver.solve(system, x0, x_ref)
        phi_next, mu = system.unpack(x)
        self._mu = (self._mu + [mu.ravel()])[-2:]
        report.g_floor_hits = hits
        q_next = update_q(state, phi_next, g_bar)
        new = SimState(state.n + 1, state.t + self.dt, phi_next, q_next, state.phi)
        audit = StepAudit(state.phi, phi_next, state.q, q_next, mu, g_bar, self.dt, gamma_inv, M)
        return new, report, audit


def step(state, params, emb, bdata, dt, opts=None):
    new, report, _ = Stepper(params, emb, bdata, dt, opts).step(state)
    return new, report
