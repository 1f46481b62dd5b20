"""Channel-resolved simulation on the eps-periodic domain.

Conservative cell-centered finite volumes with two-point fluxes.  The
accumulation term carries the layer scaling (channel cells weigh 1/eps),
the stiffness realizes bulk diffusion plus eps-scaled channel diffusion,
and faces between a bulk and a channel cell get the harmonic two-sided
transmissibility, which is exactly the flux-continuity transmission
condition on conforming grids.  Diffusion is advanced implicitly (backward
Euler), the reaction terms and the wall flux explicitly.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import linsolve
from .errors import GeometryError, StabilityError
from .geometry import BULK_M, BULK_P, CHAN, MicroGeometry
from .grid import Field, RectGrid, wall_faces
from .kinetics import InitialData, KineticsSpec


@dataclass(frozen=True)
class DiffusionSpec:
    """Bulk scalars and a diagonal channel tensor, constant per profile segment."""

    d_plus: float
    d_minus: float
    channel: tuple  # ((d_ybar, d_yn), ...) aligned with the profile segments

    def __post_init__(self):
        entries = [self.d_plus, self.d_minus]
        for pair in self.channel:
            entries.extend(pair)
        if min(entries) <= 0:
            raise GeometryError("diffusivities must be strictly positive (coercivity)")

    @property
    def c0(self) -> float:
        vals = [self.d_plus, self.d_minus]
        for pair in self.channel:
            vals.extend(pair)
        return float(min(vals))

    @staticmethod
    def isotropic(d_plus, d_minus, d_channel, n_segments=1) -> "DiffusionSpec":
        return DiffusionSpec(
            d_plus, d_minus, tuple((d_channel, d_channel) for _ in range(n_segments))
        )


@dataclass(frozen=True)
class KineticsBundle:
    f_plus: KineticsSpec
    f_minus: KineticsSpec
    g: KineticsSpec
    h: KineticsSpec

    @staticmethod
    def zero() -> "KineticsBundle":
        z = KineticsSpec("zero")
        return KineticsBundle(z, z, z, z)


@dataclass
class MicroState:
    t: float
    u: Field
    dt: float

    @property
    def values(self) -> np.ndarray:
        return self.u.values


def _segment_lookup(profile, y_n):
    """Profile segment index per value of y_n (vectorized)."""
    breaks = np.array([float(hi) for (lo, hi), _ in profile.segments[:-1]])
    return np.searchsorted(breaks, y_n, side="right")


def cell_diffusivities(geom: MicroGeometry, grid: RectGrid, diff: DiffusionSpec):
    """Directional diffusivity of every cell; channel values carry the eps factor."""
    eps = float(geom.eps)
    d = np.empty((grid.n_cells, 2))
    for tag_val, val in ((BULK_P, diff.d_plus), (BULK_M, diff.d_minus)):
        d[grid.cell_tag == tag_val] = val
    chan = grid.cell_tag == CHAN
    seg = _segment_lookup(geom.cell.profile, grid.cell_y[chan] / eps)
    dmat = np.asarray(diff.channel, dtype=float)
    d[chan, 0] = eps * dmat[seg, 0]
    d[chan, 1] = eps * dmat[seg, 1]
    return d


def assemble_micro_operator(geom: MicroGeometry, grid: RectGrid, diff: DiffusionSpec):
    """Stiffness (SPD, zero row sums) and the weighted accumulation vector."""
    d = cell_diffusivities(geom, grid, diff)
    rows, cols, vals = [], [], []
    for fs in grid.faces:
        trans = fs.length / (fs.dist_a / d[fs.a, fs.axis] + fs.dist_b / d[fs.b, fs.axis])
        rows.extend([fs.a, fs.b, fs.a, fs.b])
        cols.extend([fs.a, fs.b, fs.b, fs.a])
        vals.extend([trans, trans, -trans, -trans])
    A = linsolve.assemble(
        np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), grid.n_cells
    )
    weights = grid.weight * grid.cell_vol
    return A, weights


class MicroSimulation:
    """Holds the assembled operator plus precomputed kinetics positions."""

    def __init__(self, geom, grid, diff, kin: KineticsBundle, solver_tol=1e-12):
        self.geom = geom
        self.grid = grid
        self.diff = diff
        self.kin = kin
        self.solver_tol = solver_tol

        self.stiffness, self.weights = assemble_micro_operator(geom, grid, diff)
        self._implicit = {}

        eps = float(geom.eps)
        self.mask_p = grid.cell_tag == BULK_P
        self.mask_m = grid.cell_tag == BULK_M
        self.mask_c = grid.cell_tag == CHAN
        self.g_factor = kin.g.position_factor(
            np.mod(grid.cell_x[self.mask_c] / eps, 1.0), grid.cell_y[self.mask_c] / eps
        )

        self.walls = wall_faces(grid, geom)
        self.wall_cells = np.array([w.cell for w in self.walls], dtype=np.int64)
        self.wall_len = np.array([w.length for w in self.walls])
        arc_total = float(geom.cell.n_length)
        arcs = np.array([geom.cell.arc_coordinate(*w.local) for w in self.walls])
        self.h_factor = kin.h.position_factor(
            np.array([w.local[0] for w in self.walls]),
            np.array([w.local[1] for w in self.walls]),
            arc=arcs,
            arc_total=arc_total,
        )

    def max_stable_dt(self) -> float:
        """Explicit-part bound 0.5 / L with the wall term's face/volume factor."""
        k = self.grid.k
        ratio = float(self.geom.cell.n_length / self.geom.cell.area)
        L = max(
            self.kin.f_plus.lipschitz,
            self.kin.f_minus.lipschitz,
            self.kin.g.lipschitz,
            self.kin.h.lipschitz * k * ratio,
        )
        return 0.5 / L if L > 0 else np.inf

    def explicit_rate(self, t, values) -> np.ndarray:
        """Weighted reaction vector plus the wall-flux sink at time t."""
        out = np.zeros(self.grid.n_cells)
        out[self.mask_p] = self.kin.f_plus.base_rate(t, values[self.mask_p])
        out[self.mask_m] = self.kin.f_minus.base_rate(t, values[self.mask_m])
        out[self.mask_c] = self.kin.g.base_rate(t, values[self.mask_c]) * self.g_factor
        out *= self.weights
        if len(self.wall_cells):
            sink = self.kin.h.base_rate(t, values[self.wall_cells]) * self.h_factor * self.wall_len
            np.subtract.at(out, self.wall_cells, sink)
        return out

    def _implicit_matrix(self, dt):
        key = float(dt)
        if key not in self._implicit:
            mass = sp.diags(self.weights, format="csr")
            self._implicit[key] = linsolve.SparseMatrix(
                csr=(mass + key * self.stiffness.csr).tocsr(), symmetric=True
            )
        return self._implicit[key]

    def step(self, state: MicroState, dt, enforce_stability=True) -> MicroState:
        if enforce_stability and dt > self.max_stable_dt() * (1 + 1e-12):
            raise StabilityError(
                f"dt={dt:g} exceeds the explicit stability bound {self.max_stable_dt():g}"
            )
        u = state.values
        rhs = self.weights * u + dt * self.explicit_rate(state.t, u)
        x = linsolve.solve_spd(self._implicit_matrix(dt), rhs, tol=self.solver_tol, x0=u)
        t_new = state.t + dt
        return MicroState(t=t_new, u=Field(self.grid, x, time=t_new), dt=dt)

    def initial_state(self, init: InitialData, dt) -> MicroState:
        g = self.grid
        eps = float(self.geom.eps)
        vals = np.empty(g.n_cells)
        vals[self.mask_p] = [
            init.u_plus(x, y) for x, y in zip(g.cell_x[self.mask_p], g.cell_y[self.mask_p])
        ]
        vals[self.mask_m] = [
            init.u_minus(x, y) for x, y in zip(g.cell_x[self.mask_m], g.cell_y[self.mask_m])
        ]
        xc = g.cell_x[self.mask_c]
        vals[self.mask_c] = [
            init.u_channel(x, np.mod(x / eps, 1.0), y / eps)
            for x, y in zip(xc, g.cell_y[self.mask_c])
        ]
        return MicroState(t=0.0, u=Field(g, vals, time=0.0), dt=dt)

    def weighted_mass(self, values) -> float:
        return float(np.dot(self.weights, values))

    def mass_report(self, before: MicroState, after: MicroState, dt) -> float:
        """|Delta mass - dt * (reactions - wall outflow)| for one step."""
        rate = self.explicit_rate(before.t, before.values)
        return abs(
            self.weighted_mass(after.values) - self.weighted_mass(before.values)
            - dt * float(rate.sum())
        )

    def run(self, init: InitialData, T, dt, snapshot_stride=1):
        """Backward-Euler/explicit stepping to T; returns snapshot states."""
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


def step_micro(sim: MicroSimulation, state: MicroState, dt) -> MicroState:
    return sim.step(state, dt)


def micro_mass_report(sim: MicroSimulation, before: MicroState, after: MicroState, dt) -> float:
    return sim.mass_report(before, after, dt)


def run_micro(geom, grid, diff, kin, init, T, dt, snapshot_stride=1, solver_tol=1e-12):
    sim = MicroSimulation(geom, grid, diff, kin, solver_tol=solver_tol)
    return sim.run(init, T, dt, snapshot_stride)
