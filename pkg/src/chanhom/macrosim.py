"""Limit model: bulk diffusion on both half-domains coupled through
per-interface-node cell problems on the reference channel.

Unknowns per implicit step: the two bulk fields, one trace value per side
and interface node, and one reference-cell field per node.  The trace
values tie the bulk half-cell flux to the integrated cell-problem boundary
flux on the corresponding side; they carry no accumulation term, so their
rows are discrete per-side flux balances.  Summing the two sides gives the
jump of the bulk normal fluxes across the interface.  The whole system is
assembled once, symmetric positive definite, and solved monolithically.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import linsolve
from .errors import StabilityError
from .geometry import CellGeometry
from .grid import build_bulk_grid, build_cell_grid, boundary_row_faces, wall_faces
from .kinetics import InitialData
from .microsim import DiffusionSpec, KineticsBundle, _segment_lookup


@dataclass(frozen=True)
class InterfaceLayout:
    """Uniform interface partition and the shared reference-cell refinement."""

    n_sigma: int
    m: int

    @property
    def spacing(self) -> float:
        return 1.0 / self.n_sigma

    @property
    def nodes(self) -> np.ndarray:
        return (np.arange(self.n_sigma) + 0.5) * self.spacing


@dataclass
class MacroState:
    t: float
    u: np.ndarray
    dt: float
    sim: "MacroSimulation"

    @property
    def bulk_plus(self) -> np.ndarray:
        return self.u[: self.sim.nbp]

    @property
    def bulk_minus(self) -> np.ndarray:
        return self.u[self.sim.nbp : self.sim.nbp + self.sim.nbm]

    @property
    def v_plus(self) -> np.ndarray:
        return self.u[self.sim.ovp : self.sim.ovp + self.sim.n_sigma]

    @property
    def v_minus(self) -> np.ndarray:
        return self.u[self.sim.ovm : self.sim.ovm + self.sim.n_sigma]

    @property
    def cells(self) -> np.ndarray:
        """(n_sigma, cell unknowns) block of reference-cell fields."""
        return self.u[self.sim.oc :].reshape(self.sim.n_sigma, self.sim.ncc)


class MacroSimulation:
    def __init__(self, cell: CellGeometry, H, layout: InterfaceLayout,
                 diff: DiffusionSpec, kin: KineticsBundle, solver_tol=1e-12):
        self.cell = cell
        self.layout = layout
        self.diff = diff
        self.kin = kin
        self.solver_tol = solver_tol

        self.cell_grid = build_cell_grid(cell, layout.m)
        self.grid_p = build_bulk_grid("+", H, layout.n_sigma)
        self.grid_m = build_bulk_grid("-", H, layout.n_sigma)

        self.n_sigma = layout.n_sigma
        self.nbp = self.grid_p.n_cells
        self.nbm = self.grid_m.n_cells
        self.ncc = self.cell_grid.n_cells
        self.ovp = self.nbp + self.nbm
        self.ovm = self.ovp + self.n_sigma
        self.oc = self.ovm + self.n_sigma
        self.n = self.oc + self.n_sigma * self.ncc

        self._build_coupling_data()
        self.stiffness = self._assemble_stiffness()
        self.weights = self._assemble_weights()
        self._implicit = {}
        self._prepare_kinetics()

    # -- assembly -----------------------------------------------------------

    def _build_coupling_data(self):
        d = np.empty((self.ncc, 2))
        seg = _segment_lookup(self.cell.profile, self.cell_grid.cell_y)
        dmat = np.asarray(self.diff.channel, dtype=float)
        d[:, 0] = dmat[seg, 0]
        d[:, 1] = dmat[seg, 1]
        self.cell_diff = d

        self.top = boundary_row_faces(self.cell_grid, "+")
        self.bot = boundary_row_faces(self.cell_grid, "-")
        half_top = 0.5 * self.cell_grid.dy[-1]
        half_bot = 0.5 * self.cell_grid.dy[0]
        self.top_cells = np.array([c for c, _, _ in self.top], dtype=np.int64)
        self.top_coef = np.array([ln * d[c, 1] / half_top for c, ln, _ in self.top])
        self.bot_cells = np.array([c for c, _, _ in self.bot], dtype=np.int64)
        self.bot_coef = np.array([ln * d[c, 1] / half_bot for c, ln, _ in self.bot])

        # bulk cells adjacent to the interface, one per node
        self.adj_p = np.array(
            [self.grid_p.index[i, 0] for i in range(self.n_sigma)], dtype=np.int64
        )
        self.adj_m = np.array(
            [self.grid_m.index[i, self.grid_m.shape[1] - 1] for i in range(self.n_sigma)],
            dtype=np.int64,
        )
        self.half_p = 0.5 * self.grid_p.dy[0]
        self.half_m = 0.5 * self.grid_m.dy[-1]

    def _bulk_entries(self, grid, d_scalar, offset, rows, cols, vals):
        for fs in grid.faces:
            trans = fs.length * d_scalar / (fs.dist_a + fs.dist_b)
            rows.extend([fs.a + offset, fs.b + offset, fs.a + offset, fs.b + offset])
            cols.extend([fs.a + offset, fs.b + offset, fs.b + offset, fs.a + offset])
            vals.extend([trans, trans, -trans, -trans])

    def _pair(self, i, j, t, rows, cols, vals):
        rows.extend([i, j, i, j])
        cols.extend([i, j, j, i])
        vals.extend([t, t, -t, -t])

    def _assemble_stiffness(self) -> linsolve.SparseMatrix:
        rows, cols, vals = [], [], []
        self._bulk_entries(self.grid_p, self.diff.d_plus, 0, rows, cols, vals)
        self._bulk_entries(self.grid_m, self.diff.d_minus, self.nbp, rows, cols, vals)

        dsig = self.layout.spacing
        rows = [np.asarray(r) for r in rows]
        cols = [np.asarray(c) for c in cols]
        vals = [np.asarray(v, dtype=float) for v in vals]
        extra_r, extra_c, extra_v = [], [], []

        # one reference-cell stiffness block, replicated per node with dsig weight
        base_r, base_c, base_v = [], [], []
        for fs in self.cell_grid.faces:
            da = self.cell_diff[fs.a, fs.axis]
            db = self.cell_diff[fs.b, fs.axis]
            trans = dsig * fs.length / (fs.dist_a / da + fs.dist_b / db)
            base_r.extend([fs.a, fs.b, fs.a, fs.b])
            base_c.extend([fs.a, fs.b, fs.b, fs.a])
            base_v.extend([trans, trans, -trans, -trans])
        base_r = np.concatenate(base_r)
        base_c = np.concatenate(base_c)
        base_v = np.concatenate(base_v)

        for j in range(self.n_sigma):
            off = self.oc + j * self.ncc
            extra_r.append(base_r + off)
            extra_c.append(base_c + off)
            extra_v.append(base_v)
            # trace <-> bulk coupling
            tp = self.grid_p.dx[j] * self.diff.d_plus / self.half_p
            tm = self.grid_m.dx[j] * self.diff.d_minus / self.half_m
            r4, c4, v4 = [], [], []
            self._pair(int(self.adj_p[j]), self.ovp + j, tp, r4, c4, v4)
            self._pair(self.nbp + int(self.adj_m[j]), self.ovm + j, tm, r4, c4, v4)
            # trace <-> cell coupling (Dirichlet rows of the cell problem)
            for cell_idx, coef in zip(self.top_cells, dsig * self.top_coef):
                self._pair(off + int(cell_idx), self.ovp + j, coef, r4, c4, v4)
            for cell_idx, coef in zip(self.bot_cells, dsig * self.bot_coef):
                self._pair(off + int(cell_idx), self.ovm + j, coef, r4, c4, v4)
            extra_r.append(np.asarray(r4))
            extra_c.append(np.asarray(c4))
            extra_v.append(np.asarray(v4, dtype=float))

        return linsolve.assemble(
            np.concatenate(rows + extra_r),
            np.concatenate(cols + extra_c),
            np.concatenate(vals + extra_v),
            self.n,
        )

    def _assemble_weights(self) -> np.ndarray:
        w = np.zeros(self.n)
        w[: self.nbp] = self.grid_p.cell_vol
        w[self.nbp : self.ovp] = self.grid_m.cell_vol
        dsig = self.layout.spacing
        for j in range(self.n_sigma):
            w[self.oc + j * self.ncc : self.oc + (j + 1) * self.ncc] = dsig * self.cell_grid.cell_vol
        return w

    def _prepare_kinetics(self):
        cg = self.cell_grid
        self.g_factor = self.kin.g.position_factor(cg.cell_x, cg.cell_y)
        walls = wall_faces(cg)
        self.wall_cells = np.array([w.cell for w in walls], dtype=np.int64)
        self.wall_len = np.array([w.length for w in walls])
        arc_total = float(self.cell.n_length)
        arcs = np.array([self.cell.arc_coordinate(*w.local) for w in walls])
        self.h_factor = self.kin.h.position_factor(
            np.array([w.local[0] for w in walls]),
            np.array([w.local[1] for w in walls]),
            arc=arcs,
            arc_total=arc_total,
        )

    # -- stepping -----------------------------------------------------------

    def max_stable_dt(self) -> float:
        m = self.layout.m
        ratio = float(self.cell.n_length / self.cell.area)
        L = max(
            self.kin.f_plus.lipschitz,
            self.kin.f_minus.lipschitz,
            self.kin.g.lipschitz,
            self.kin.h.lipschitz * m * ratio,
        )
        return 0.5 / L if L > 0 else np.inf

    def explicit_rate(self, t, u) -> np.ndarray:
        out = np.zeros(self.n)
        out[: self.nbp] = self.kin.f_plus.base_rate(t, u[: self.nbp]) * self.grid_p.cell_vol
        out[self.nbp : self.ovp] = (
            self.kin.f_minus.base_rate(t, u[self.nbp : self.ovp]) * self.grid_m.cell_vol
        )
        dsig = self.layout.spacing
        cells = u[self.oc :].reshape(self.n_sigma, self.ncc)
        g = self.kin.g.base_rate(t, cells) * self.g_factor[None, :]
        g *= dsig * self.cell_grid.cell_vol[None, :]
        if len(self.wall_cells):
            hv = self.kin.h.base_rate(t, cells[:, self.wall_cells]) * self.h_factor[None, :]
            hv *= dsig * self.wall_len[None, :]
            for f, cell_idx in enumerate(self.wall_cells):  # duplicates per corner cell
                g[:, cell_idx] -= hv[:, f]
        out[self.oc :] = g.reshape(-1)
        return out

    def _implicit_matrix(self, dt):
        key = float(dt)
        if key not in self._implicit:
            mass = sp.diags(self.weights, format="csr")
            self._implicit[key] = linsolve.SparseMatrix(
                csr=(mass + key * self.stiffness.csr).tocsr(), symmetric=True
            )
        return self._implicit[key]

    def step(self, state: MacroState, dt, enforce_stability=True) -> MacroState:
        if enforce_stability and dt > self.max_stable_dt() * (1 + 1e-12):
            raise StabilityError(
                f"dt={dt:g} exceeds the explicit stability bound {self.max_stable_dt():g}"
            )
        rhs = self.weights * state.u + dt * self.explicit_rate(state.t, state.u)
        x = linsolve.solve_spd(self._implicit_matrix(dt), rhs, tol=self.solver_tol, x0=state.u)
        return MacroState(t=state.t + dt, u=x, dt=dt, sim=self)

    def initial_state(self, init: InitialData, dt) -> MacroState:
        u = np.zeros(self.n)
        gp, gm, cg = self.grid_p, self.grid_m, self.cell_grid
        u[: self.nbp] = [init.u_plus(x, y) for x, y in zip(gp.cell_x, gp.cell_y)]
        u[self.nbp : self.ovp] = [init.u_minus(x, y) for x, y in zip(gm.cell_x, gm.cell_y)]
        nodes = self.layout.nodes
        sp_mid = 0.5 * float(self.cell.s_plus[0] + self.cell.s_plus[1])
        sm_mid = 0.5 * float(self.cell.s_minus[0] + self.cell.s_minus[1])
        for j, xb in enumerate(nodes):
            u[self.ovp + j] = init.u_channel(xb, sp_mid, 1.0)
            u[self.ovm + j] = init.u_channel(xb, sm_mid, -1.0)
            off = self.oc + j * self.ncc
            u[off : off + self.ncc] = [
                init.u_channel(xb, yb, yn) for yb, yn in zip(cg.cell_x, cg.cell_y)
            ]
        return MacroState(t=0.0, u=u, dt=dt, sim=self)

    def run(self, init: InitialData, T, dt, snapshot_stride=1):
        state = self.initial_state(init, dt)
        snaps = [state]
        if T <= 0:
            return snaps
        n_steps = int(round(T / dt))
        if abs(n_steps * dt - T) > 1e-9 * max(T, 1.0):
            raise ValueError(f"T={T} is not an integer number of steps of dt={dt}")
        for n in range(1, n_steps + 1):
            state = self.step(state, dt)
            if n % snapshot_stride == 0 or n == n_steps:
                snaps.append(state)
        return snaps

    # -- interface quantities ------------------------------------------------

    def cell_flux(self, state: MacroState):
        """Per-node outward boundary flux of the cell problems on each side."""
        cells = state.cells
        fp = (self.top_coef[None, :] * (state.v_plus[:, None] - cells[:, self.top_cells])).sum(1)
        fm = (self.bot_coef[None, :] * (state.v_minus[:, None] - cells[:, self.bot_cells])).sum(1)
        return fp, fm

    def flux_balance_residuals(self, state: MacroState):
        """Per-side |bulk half-cell flux - cell boundary flux| at every node."""
        fp, fm = self.cell_flux(state)
        bp = self.diff.d_plus * (state.bulk_plus[self.adj_p] - state.v_plus) / self.half_p
        bm = self.diff.d_minus * (state.bulk_minus[self.adj_m] - state.v_minus) / self.half_m
        return np.abs(bp - fp), np.abs(bm - fm)

    def weighted_mass(self, u) -> float:
        return float(np.dot(self.weights, u))

    def mass_report(self, before: MacroState, after: MacroState, dt) -> float:
        rate = self.explicit_rate(before.t, before.u)
        return abs(
            self.weighted_mass(after.u) - self.weighted_mass(before.u) - dt * float(rate.sum())
        )

    def steady_conduction(self, top_value, bottom_value):
        """Dirichlet override at x_n = +H / -H, zero kinetics, direct steady solve.

        Harness-level oracle hook, not part of the transport model.
        """
        rows, cols, vals = [], [], []
        rhs = np.zeros(self.n)
        gp, gm = self.grid_p, self.grid_m
        jtop = gp.shape[1] - 1
        for i in range(self.n_sigma):
            idx = int(gp.index[i, jtop])
            t = gp.dx[i] * self.diff.d_plus / (0.5 * gp.dy[jtop])
            rows.append(idx)
            cols.append(idx)
            vals.append(t)
            rhs[idx] += t * top_value
            idx_m = self.nbp + int(gm.index[i, 0])
            t_m = gm.dx[i] * self.diff.d_minus / (0.5 * gm.dy[0])
            rows.append(idx_m)
            cols.append(idx_m)
            vals.append(t_m)
            rhs[idx_m] += t_m * bottom_value
        dir_part = sp.coo_matrix((vals, (rows, cols)), shape=(self.n, self.n)).tocsr()
        A = linsolve.SparseMatrix(csr=(self.stiffness.csr + dir_part).tocsr(), symmetric=True)
        x = linsolve.solve_spd(A, rhs, tol=self.solver_tol)
        return MacroState(t=np.inf, u=x, dt=0.0, sim=self)


def assemble_macro(cell, H, layout: InterfaceLayout, diff: DiffusionSpec):
    """Coupled SPD stiffness and accumulation weights (kinetics-independent)."""
    sim = MacroSimulation(cell, H, layout, diff, KineticsBundle.zero())
    return sim.stiffness, sim.weights


def step_macro(sim: MacroSimulation, state: MacroState, dt) -> MacroState:
    return sim.step(state, dt)


def cell_flux(state: MacroState, j=None):
    fp, fm = state.sim.cell_flux(state)
    if j is None:
        return fp, fm
    return float(fp[j]), float(fm[j])


def run_macro(cell, H, layout, diff, kin, init, T, dt, snapshot_stride=1, solver_tol=1e-12):
    sim = MacroSimulation(cell, H, layout, diff, kin, solver_tol=solver_tol)
    return sim.run(init, T, dt, snapshot_stride)
