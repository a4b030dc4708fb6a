"""Original Cahn-Hilliard model on a rectangle, for comparison runs.

Same energy-quadratized Crank-Nicolson discretization as the extended
solver, but with plain 5-point Laplacians.  Edges listed in
``dynamic_edges`` carry the relaxational boundary law

    gamma_inv d(phi_b)/dt + alpha (phi_b - h1) - h2 + K dphi/dn = 0

with ``phi_b`` the average of the ghost and the adjacent cell and ``dphi/dn``
the outward difference ``(ghost - adjacent) / h``.  The ghost values are
extra unknowns coupled implicitly at ``n + 1/2``.  Other edges are
homogeneous Neumann for ``phi`` and no-flux for ``mu``.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .grid import Grid
from .model import BoundaryData, PhysParams, SimState, initial_state
from .scheme import LinearSolver, SolverOptions, StepSystem, extrapolate, update_q

EDGES = ("left", "right", "bottom", "top")


def _neumann_second_diff(n: int, h: float) -> sp.csr_matrix:
    main = np.full(n, -2.0)
    main[0] = main[-1] = -1.0
    off = np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / (h * h)


def neumann_laplacian(grid: Grid) -> sp.csr_matrix:
    lx = _neumann_second_diff(grid.Nx, grid.dx)
    ly = _neumann_second_diff(grid.Ny, grid.dy)
    return (sp.kron(lx, sp.identity(grid.Ny)) + sp.kron(sp.identity(grid.Nx), ly)).tocsr()


def edge_cells(grid: Grid, edge: str) -> np.ndarray:
    """Flat indices of the cells adjacent to ``edge``, in edge order."""
    idx = np.arange(grid.size).reshape(grid.shape)
    return {
        "left": idx[0, :],
        "right": idx[-1, :],
        "bottom": idx[:, 0],
        "top": idx[:, -1],
    }[edge].copy()


def edge_spacing(grid: Grid, edge: str) -> tuple[float, float]:
    """``(normal spacing, tangential spacing)``."""
    return (grid.dx, grid.dy) if edge in ("left", "right") else (grid.dy, grid.dx)


class ReferenceSolver:
    def __init__(self, grid: Grid, params: PhysParams, bdata: BoundaryData, dt: float,
                 dynamic_edges=(), opts: SolverOptions | None = None):
        if not dt > 0:
            raise ValueError("dt must be positive")
        for e in dynamic_edges:
            if e not in EDGES:
                raise ValueError(f"unknown edge {e!r}")
        self.grid = grid
        self.params = params
        self.bdata = bdata
        self.dt = float(dt)
        self.edges = tuple(dynamic_edges)
        self.solver = LinearSolver(opts)
        self._build()

    def _build(self):
        g, p, dt = self.grid, self.params, self.dt
        n = g.size
        lap = neumann_laplacian(g)
        self.lap = lap
        self.offsets = {}
        blocks_adj = []  # ghost-coupling columns in the mu rows
        m = 0
        for e in self.edges:
            cells = edge_cells(g, e)
            hn, _ = edge_spacing(g, e)
            k = cells.size
            self.offsets[e] = (m, k)
            # Laplacian contribution (ghost - adjacent) / hn^2 at the adjacent cell
            S = sp.csr_matrix((np.ones(k), (cells, np.arange(k))), shape=(n, k))
            blocks_adj.append((e, S, hn))
            m += k
        self.n_ghost = m
        self.n = n
        eye = sp.identity(n, format="csr")
        K = p.K
        # ghost-to-mu coupling and the extra diagonal on the adjacent cells
        G_mu = sp.csr_matrix((n, m))
        D_adj = sp.csr_matrix((n, n))
        # ghost rows: [coef on phi_adj] [coef on ghost]
        R_phi = sp.csr_matrix((m, n))
        R_gh = sp.csr_matrix((m, m))
        for e, S, hn in blocks_adj:
            o, k = self.offsets[e]
            place = sp.csr_matrix((np.ones(k), (np.arange(k), o + np.arange(k))), shape=(k, m))
            Sg = S @ place
            G_mu = G_mu + Sg / hn**2
            D_adj = D_adj - sp.diags(np.asarray(S.sum(axis=1)).ravel()) / hn**2
            # rows for this edge: Rk_phi (k x n), Rk_gh (k x m)
            c_avg = 0.5 * p.gamma_inv / dt + 0.25 * p.alpha
            c_grad = 0.5 * K / hn
            Rk_phi = (c_avg - c_grad) * S.T
            Rk_gh = (c_avg + c_grad) * place
            R_phi = R_phi + place.T @ Rk_phi
            R_gh = R_gh + place.T @ Rk_gh
        self.lap_full = lap + D_adj  # acting on phi, ghosts enter through G_mu
        self.G_mu = G_mu
        self.R_phi, self.R_gh = R_phi.tocsr(), R_gh.tocsr()
        # half-level coupling K Lap phi^{n+1/2}
        # unit placeholder on the lower-left diagonal, replaced per step
        rows = [[eye / dt, -p.M * lap], [0.5 * K * self.lap_full + eye, eye]]
        if m:
            rows[0].append(None)
            rows[1].append(0.5 * K * G_mu)
            rows.append([self.R_phi, None, self.R_gh])
        self.base = sp.bmat(rows, format="csr")
        self.base.sum_duplicates()
        coo = self.base.tocoo()
        self._diag_pos = np.flatnonzero((coo.row >= n) & (coo.row < 2 * n) & (coo.row - n == coo.col))
        self._base_diag = self.base.data[self._diag_pos] - 1.0

    def initial_state(self, phi0: np.ndarray) -> SimState:
        st = initial_state(phi0, self.params)
        flat = st.phi.ravel()
        for e in self.edges:
            st.ghosts[e] = flat[edge_cells(self.grid, e)].copy()
        return st

    def _edge_data(self, field: np.ndarray) -> np.ndarray:
        flat = field.ravel()
        return np.concatenate([flat[edge_cells(self.grid, e)] for e in self.edges]) if self.edges else np.zeros(0)

    def step(self, state: SimState):
        p, dt, n, m = self.params, self.dt, self.n, self.n_ghost
        g_bar, _, _, hits = extrapolate(state, p)
        gb = g_bar.ravel()
        phi = state.phi.ravel()
        q = state.q.ravel()
        gh = np.concatenate([state.ghosts[e] for e in self.edges]) if m else np.zeros(0)
        A = self.base.copy()
        A.data[self._diag_pos] = self._base_diag - 0.5 * gb * gb
        rhs1 = phi / dt
        rhs2 = gb * q - 0.5 * gb * gb * phi - 0.5 * p.K * (self.lap_full @ phi)
        if m:
            rhs2 = rhs2 - 0.5 * p.K * (self.G_mu @ gh)
            c_avg = 0.5 * p.gamma_inv / dt - 0.25 * p.alpha
            rhs3 = np.empty(m)
            h1 = self._edge_data(self.bdata.h1)
            h2 = self._edge_data(self.bdata.h2)
            for e in self.edges:
                o, k = self.offsets[e]
                hn, _ = edge_spacing(self.grid, e)
                adj = phi[edge_cells(self.grid, e)]
                ge = gh[o:o + k]
                c_grad = 0.5 * p.K / hn
                rhs3[o:o + k] = (
                    c_avg * (adj + ge)
                    - c_grad * (ge - adj)
                    + p.alpha * h1[o:o + k]
                    + h2[o:o + k]
                )
            rhs = np.concatenate([rhs1, rhs2, rhs3])
        else:
            rhs = np.concatenate([rhs1, rhs2])
        x_ref = np.concatenate([phi, np.zeros(n), gh])
        x, report = self.solver.solve(StepSystem(A, rhs, self.grid.shape), x_ref=x_ref)
        report.g_floor_hits = hits
        phi_next = x[:n].reshape(self.grid.shape)
        mu = x[n:2 * n].reshape(self.grid.shape)
        new = SimState(state.n + 1, state.t + dt, phi_next, update_q(state, phi_next, g_bar), state.phi)
        for e in self.edges:
            o, k = self.offsets[e]
            new.ghosts[e] = x[2 * n + o:2 * n + o + k].copy()
        return new, report, mu

    def energy(self, state: SimState) -> float:
        """Bulk + gradient energy, with the boundary faces of dynamic edges."""
        g, p = self.grid, self.params
        phi = state.phi
        e = 0.5 * np.sum(state.q**2)
        e += 0.5 * p.K * (np.sum(np.diff(phi, axis=0) ** 2) / g.dx**2 + np.sum(np.diff(phi, axis=1) ** 2) / g.dy**2)
        e *= g.cell_area
        flat = phi.ravel()
        for edge in self.edges:
            hn, ht = edge_spacing(g, edge)
            adj = flat[edge_cells(g, edge)]
            gh = state.ghosts[edge]
            pb = 0.5 * (adj + gh)
            h1 = self.bdata.h1.ravel()[edge_cells(g, edge)]
            h2 = self.bdata.h2.ravel()[edge_cells(g, edge)]
            e += 0.5 * p.K * np.sum((gh - adj) ** 2) * ht / hn
            e += ht * np.sum(0.5 * p.alpha * (pb - h1) ** 2 - h2 * pb)
        return float(e)


def reference_step(state, params, bdata, dt, grid, dynamic_edges=(), opts=None):
    new, report, _ = ReferenceSolver(grid, params, bdata, dt, dynamic_edges, opts).step(state)
    return new, report
