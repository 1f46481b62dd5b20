"""Aligned rectilinear grids and the scaled discrete inner products.

All grids are tensor products of 1D edge arrays with a per-cell region tag
(bulk above / bulk below / channel / void).  Non-void cells carry the
unknowns, numbered row-major in (i, j).  Channel walls always coincide with
grid faces; construction rejects refinements that would put a wall inside a
cell.

The weighted inner product matches the scaling of the transport problem:
bulk cells count with weight 1, channel cells with weight 1/eps.  The
energy norm adds face-reconstructed gradients, weighted 1 in the bulk and
eps in the channel.
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import AlignmentError
from .geometry import BULK_M, BULK_P, CHAN, VOID, CellGeometry, MicroGeometry

GRADING_RATIO = 1.2


@dataclass
class FaceSet:
    """Interior faces along one axis: cells a, b, face length, center-to-face distances."""

    a: np.ndarray
    b: np.ndarray
    length: np.ndarray
    dist_a: np.ndarray
    dist_b: np.ndarray
    axis: int


@dataclass
class WallFace:
    """One face between a channel cell and the void part of the layer."""

    cell: int
    column: int
    key: tuple          # integer lattice key in reference-cell units, for cross-grid matching
    length: float
    midpoint: tuple     # physical coordinates on this grid
    local: tuple        # (ybar, y_n) reference-cell coordinates of the midpoint
    normal_axis: int


class RectGrid:
    """Tensor-product grid with region tags and cached face/cell data."""

    def __init__(self, x_edges, y_edges, tag, eps=None, layer_refinement=None):
        self.x = np.asarray(x_edges, dtype=float)
        self.y = np.asarray(y_edges, dtype=float)
        self.tag = np.asarray(tag, dtype=np.int8)
        self.eps = None if eps is None else float(eps)
        self.k = layer_refinement
        nx, ny = self.tag.shape
        if self.x.shape != (nx + 1,) or self.y.shape != (ny + 1,):
            raise ValueError("tag shape inconsistent with edge arrays")

        self.dx = np.diff(self.x)
        self.dy = np.diff(self.y)
        if np.any(self.dx <= 0) or np.any(self.dy <= 0):
            raise ValueError("edge coordinates must be strictly increasing")
        self.xc = 0.5 * (self.x[:-1] + self.x[1:])
        self.yc = 0.5 * (self.y[:-1] + self.y[1:])

        self.index = -np.ones((nx, ny), dtype=np.int64)
        live = self.tag != VOID
        self.index[live] = np.arange(int(live.sum()))
        self.n_cells = int(live.sum())

        ii, jj = np.nonzero(live)
        self.cell_i = ii
        self.cell_j = jj
        self.cell_tag = self.tag[ii, jj]
        self.cell_x = self.xc[ii]
        self.cell_y = self.yc[jj]
        self.cell_vol = self.dx[ii] * self.dy[jj]

        self.weight = np.where(self.cell_tag == CHAN, 1.0 / self.eps if self.eps else 1.0, 1.0)
        self.faces = (self._build_faces(0), self._build_faces(1))

        # immutable after construction; fields are the only mutable carriers
        for arr in (self.x, self.y, self.tag, self.index, self.dx, self.dy, self.xc,
                    self.yc, self.cell_i, self.cell_j, self.cell_tag, self.cell_x,
                    self.cell_y, self.cell_vol, self.weight):
            arr.setflags(write=False)

    @property
    def shape(self):
        return self.tag.shape

    def _build_faces(self, axis) -> FaceSet:
        if axis == 0:
            ta, tb = self.tag[:-1, :], self.tag[1:, :]
            mask = (ta != VOID) & (tb != VOID)
            ia, ja = np.nonzero(mask)
            a = self.index[ia, ja]
            b = self.index[ia + 1, ja]
            length = self.dy[ja]
            dist_a = 0.5 * self.dx[ia]
            dist_b = 0.5 * self.dx[ia + 1]
        else:
            ta, tb = self.tag[:, :-1], self.tag[:, 1:]
            mask = (ta != VOID) & (tb != VOID)
            ia, ja = np.nonzero(mask)
            a = self.index[ia, ja]
            b = self.index[ia, ja + 1]
            length = self.dx[ia]
            dist_a = 0.5 * self.dy[ja]
            dist_b = 0.5 * self.dy[ja + 1]
        return FaceSet(a=a, b=b, length=length, dist_a=dist_a, dist_b=dist_b, axis=axis)

    def cells_dense(self, values, fill=0.0):
        """Scatter a per-cell vector to the dense (nx, ny) layout."""
        out = np.full(self.shape, fill, dtype=float)
        out[self.cell_i, self.cell_j] = values
        return out


@dataclass
class Field:
    """Per-cell values on a grid at one instant."""

    grid: RectGrid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_cells,):
            raise ValueError(
                f"field needs {self.grid.n_cells} values, got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    @staticmethod
    def from_function(grid, fn, time=0.0) -> "Field":
        vals = np.array([fn(x, y) for x, y in zip(grid.cell_x, grid.cell_y)], dtype=float)
        return Field(grid, vals, time)

    @staticmethod
    def constant(grid, value, time=0.0) -> "Field":
        return Field(grid, np.full(grid.n_cells, float(value)), time)


def graded_edges(start, stop, h0, ratio=GRADING_RATIO):
    """Edges from start to stop, first spacing h0, growing by at most `ratio`."""
    span = float(stop) - float(start)
    if span <= 0:
        raise ValueError("empty interval")
    rel = [0.0]
    h = float(h0)
    while span - rel[-1] > ratio * h * (1 + 1e-12):
        rel.append(rel[-1] + h)
        h *= ratio
    rel.append(span)
    return float(start) + np.asarray(rel)


def _check_alignment(cell: CellGeometry, k: int):
    if k <= 0:
        raise AlignmentError("refinement must be a positive integer")
    offenders = []
    for (lo, hi), w in cell.profile.segments:
        for val, name in (
            ((1 - w) * Fraction(1, 2), "wall offset"),
            (lo, "breakpoint"),
            (hi, "breakpoint"),
        ):
            if (val * k).denominator != 1:
                offenders.append(f"{name} {val} not a multiple of 1/{k}")
    if offenders:
        raise AlignmentError("; ".join(offenders))


def _layer_tags(cell: CellGeometry, k: int, n_columns: int):
    """CHAN/VOID tags for the 2k layer rows of every column (alignment assumed)."""
    block = np.full((k, 2 * k), VOID, dtype=np.int8)
    for i in range(k):
        ybar = (i + 0.5) / k
        for j in range(2 * k):
            y_n = (j + 0.5) / k - 1.0
            if cell.contains(ybar, y_n):
                block[i, j] = CHAN
    return np.tile(block, (n_columns, 1))


def build_cell_grid(cell: CellGeometry, m: int) -> RectGrid:
    """Uniform grid of spacing 1/m on the reference cell Z = (0,1) x (-1,1)."""
    _check_alignment(cell, m)
    x = np.arange(m + 1) / m
    y = np.arange(2 * m + 1) / m - 1.0
    tag = _layer_tags(cell, m, 1)
    return RectGrid(x, y, tag, eps=None, layer_refinement=m)


def build_micro_grid(geom: MicroGeometry, k: int, ratio=GRADING_RATIO) -> RectGrid:
    """Grid over Omega resolving the layer at spacing eps/k, graded in the bulk."""
    _check_alignment(geom.cell, k)
    eps = float(geom.eps)
    H = float(geom.H)
    ncol = geom.n_columns
    h = eps / k

    x = np.arange(ncol * k + 1) * h
    y_layer = np.arange(2 * k + 1) * h - eps
    y_up = graded_edges(eps, H, h, ratio)
    y_dn = -graded_edges(eps, H, h, ratio)[::-1]
    y = np.concatenate([y_dn[:-1], y_layer, y_up[1:]])

    n_dn = len(y_dn) - 1
    n_lay = 2 * k
    n_up = len(y_up) - 1
    tag = np.empty((ncol * k, n_dn + n_lay + n_up), dtype=np.int8)
    tag[:, :n_dn] = BULK_M
    tag[:, n_dn + n_lay:] = BULK_P
    tag[:, n_dn:n_dn + n_lay] = _layer_tags(geom.cell, k, ncol)
    return RectGrid(x, y, tag, eps=eps, layer_refinement=k)


def build_bulk_grid(side: str, H, n_sigma: int, ratio=GRADING_RATIO) -> RectGrid:
    """Macro bulk grid on (0,1) x (0,H) or (0,1) x (-H,0), fine near the interface."""
    H = float(H)
    h = 1.0 / n_sigma
    x = np.arange(n_sigma + 1) * h
    if side == "+":
        y = graded_edges(0.0, H, h, ratio)
        tag = np.full((n_sigma, len(y) - 1), BULK_P, dtype=np.int8)
    elif side == "-":
        y = -graded_edges(0.0, H, h, ratio)[::-1]
        tag = np.full((n_sigma, len(y) - 1), BULK_M, dtype=np.int8)
    else:
        raise ValueError("side must be '+' or '-'")
    return RectGrid(x, y, tag)


# ---------------------------------------------------------------------------
# scaled inner products and norms

def inner_product_leps(u: Field, v: Field) -> float:
    """Weighted L2 pairing: bulk weight 1, channel weight 1/eps."""
    if u.grid is not v.grid:
        raise ValueError("fields live on different grids")
    g = u.grid
    return float(np.dot(g.weight * g.cell_vol, u.values * v.values))


def norm_leps(u: Field) -> float:
    return float(np.sqrt(max(inner_product_leps(u, u), 0.0)))


def cell_gradients(grid: RectGrid, values, valid=None):
    """Per-cell gradient, averaging the face differences available in each axis.

    `valid` masks cells; faces touching an invalid cell are skipped.
    """
    values = np.asarray(values, dtype=float)
    grad = np.zeros((grid.n_cells, 2))
    for fs in grid.faces:
        fg = (values[fs.b] - values[fs.a]) / (fs.dist_a + fs.dist_b)
        if valid is not None:
            keep = valid[fs.a] & valid[fs.b]
            fa, fb, fg = fs.a[keep], fs.b[keep], fg[keep]
        else:
            fa, fb = fs.a, fs.b
        s = np.zeros(grid.n_cells)
        c = np.zeros(grid.n_cells)
        np.add.at(s, fa, fg)
        np.add.at(s, fb, fg)
        np.add.at(c, fa, 1.0)
        np.add.at(c, fb, 1.0)
        grad[:, fs.axis] = s / np.maximum(c, 1.0)
    return grad


def gradient_quadrature(grid: RectGrid, values, region_weight, valid=None) -> float:
    """Sum of |grad u|^2 * vol * w(region) over (masked) cells."""
    grad = cell_gradients(grid, values, valid=valid)
    q = grid.cell_vol * (grad[:, 0] ** 2 + grad[:, 1] ** 2) * region_weight
    if valid is not None:
        q = q[valid]
    return float(q.sum())


def heps_region_weights(grid: RectGrid):
    """Gradient weights of the energy norm: 1 in the bulk, eps in the channel."""
    if grid.eps is None:
        raise ValueError("energy norm needs a micro grid (eps set)")
    return np.where(grid.cell_tag == CHAN, grid.eps, 1.0)


def norm_heps(u: Field) -> float:
    """sqrt of |u|_{weighted L2}^2 + bulk gradient energy + eps * channel gradient energy."""
    g = u.grid
    sq = inner_product_leps(u, u) + gradient_quadrature(g, u.values, heps_region_weights(g))
    return float(np.sqrt(max(sq, 0.0)))


# ---------------------------------------------------------------------------
# unfolding index plumbing

def _local_layer_offsets(grid: RectGrid):
    """(row office of the layer, k) for a micro grid."""
    if grid.eps is None or grid.k is None:
        raise ValueError("not a micro grid")
    eps = grid.eps
    j0 = int(np.argmin(np.abs(grid.y + eps)))
    return j0, grid.k


def channel_index_matrix(grid: RectGrid) -> np.ndarray:
    """(n_columns, n_local) cell indices of channel cells, local order (i, j)."""
    j0, k = _local_layer_offsets(grid)
    ncol = grid.shape[0] // k
    cols = []
    for c in range(ncol):
        ids = []
        for i_loc in range(k):
            for j_loc in range(2 * k):
                idx = grid.index[c * k + i_loc, j0 + j_loc]
                if idx >= 0 and grid.tag[c * k + i_loc, j0 + j_loc] == CHAN:
                    ids.append(idx)
        cols.append(ids)
    out = np.asarray(cols, dtype=np.int64)
    return out


def chan_cell_indices(cell_grid: RectGrid) -> np.ndarray:
    """Channel cell indices of a reference-cell grid in local order (i, j)."""
    ids = []
    for i in range(cell_grid.shape[0]):
        for j in range(cell_grid.shape[1]):
            if cell_grid.tag[i, j] == CHAN:
                ids.append(cell_grid.index[i, j])
    return np.asarray(ids, dtype=np.int64)


def wall_faces(grid: RectGrid, geom: MicroGeometry = None):
    """Faces between channel and void cells, with reference-cell lattice keys.

    For a micro grid pass the geometry so midpoints can be mapped to local
    coordinates; for a reference-cell grid the coordinates are already local.
    """
    k = grid.k
    if k is None:
        raise ValueError("grid carries no layer refinement")
    faces = []
    nx, ny = grid.shape
    scale = grid.eps if grid.eps is not None else 1.0

    def local_of(xm, ym):
        if geom is not None:
            col, ybar, y_n = geom.to_local(xm, ym)
            return col, ybar, y_n
        return 0, xm, ym

    for axis in (0, 1):
        for i in range(nx):
            for j in range(ny):
                if grid.tag[i, j] != CHAN:
                    continue
                for sgn in (-1, 1):
                    ii = i + (sgn if axis == 0 else 0)
                    jj = j + (sgn if axis == 1 else 0)
                    if not (0 <= ii < nx and 0 <= jj < ny):
                        continue  # grid boundary: channel openings, not wall
                    if grid.tag[ii, jj] != VOID:
                        continue
                    if axis == 0:
                        xm = grid.x[i + (sgn > 0)]
                        ym = grid.yc[j]
                        length = grid.dy[j]
                    else:
                        xm = grid.xc[i]
                        ym = grid.y[j + (sgn > 0)]
                        length = grid.dx[i]
                    col, ybar, y_n = local_of(xm, ym)
                    key = (axis, sgn, round(2 * k * ybar), round(2 * k * (y_n + 1)))
                    faces.append(
                        WallFace(
                            cell=int(grid.index[i, j]),
                            column=col,
                            key=key,
                            length=float(length),
                            midpoint=(float(xm), float(ym)),
                            local=(float(ybar), float(y_n)),
                            normal_axis=axis,
                        )
                    )
    faces.sort(key=lambda f: (f.column, f.key))
    _ = scale
    return faces


def boundary_row_faces(grid: RectGrid, side: str):
    """Channel faces of a reference-cell grid on y_n = +1 ('+') or y_n = -1 ('-').

    Returns (cell index, face length, face midpoint ybar) triples in i order.
    """
    j = grid.shape[1] - 1 if side == "+" else 0
    out = []
    for i in range(grid.shape[0]):
        if grid.tag[i, j] == CHAN:
            out.append((int(grid.index[i, j]), float(grid.dx[i]), float(grid.xc[i])))
    return out


# ---------------------------------------------------------------------------
# cross-grid comparison by interval overlap

def _axis_overlaps(edges_a, edges_b):
    ia = ib = 0
    out_a, out_b, w = [], [], []
    while ia < len(edges_a) - 1 and ib < len(edges_b) - 1:
        lo = max(edges_a[ia], edges_b[ib])
        hi = min(edges_a[ia + 1], edges_b[ib + 1])
        if hi > lo:
            out_a.append(ia)
            out_b.append(ib)
            w.append(hi - lo)
        if edges_a[ia + 1] <= edges_b[ib + 1]:
            ia += 1
        else:
            ib += 1
    return np.asarray(out_a, dtype=int), np.asarray(out_b, dtype=int), np.asarray(w)


def l2_overlap_diff_sq(grid_a: RectGrid, dense_a, grid_b: RectGrid, dense_b) -> float:
    """Integral of (a - b)^2 over the intersection of the two grids' extents.

    Inputs are dense (nx, ny) arrays; use 0 entries to encode extension by zero.
    """
    xa, xb, wx = _axis_overlaps(grid_a.x, grid_b.x)
    ya, yb, wy = _axis_overlaps(grid_a.y, grid_b.y)
    if len(xa) == 0 or len(ya) == 0:
        return 0.0
    diff = dense_a[np.ix_(xa, ya)] - dense_b[np.ix_(xb, yb)]
    return float(np.einsum("i,j,ij->", wx, wy, diff**2))


def leps_diff(field_a: Field, field_b: Field) -> float:
    """Weighted-L2 distance of two micro fields on nested/aligned grids."""
    ga, gb = field_a.grid, field_b.grid
    if ga.eps != gb.eps:
        raise ValueError("fields come from different scale parameters")
    total = 0.0
    for tag_val, w in ((BULK_P, 1.0), (BULK_M, 1.0), (CHAN, 1.0 / ga.eps)):
        da = ga.cells_dense(np.where(ga.cell_tag == tag_val, field_a.values, 0.0))
        db = gb.cells_dense(np.where(gb.cell_tag == tag_val, field_b.values, 0.0))
        total += w * l2_overlap_diff_sq(ga, da, gb, db)
    return float(np.sqrt(total))


def _overlap_matrix(edges_coarse, edges_fine):
    ia, ib, w = _axis_overlaps(edges_coarse, edges_fine)
    W = np.zeros((len(edges_coarse) - 1, len(edges_fine) - 1))
    W[ia, ib] = w
    return W


def project_dense(grid_c: RectGrid, grid_f: RectGrid, dense_f, dense_mask):
    """Volume-averaged restriction of a fine dense field to coarse cells.

    dense_mask selects the fine cells to average; coarse cells with no
    overlap get 0.  Returns (values, covered volume fraction) dense arrays.
    """
    wx = _overlap_matrix(grid_c.x, grid_f.x)
    wy = _overlap_matrix(grid_c.y, grid_f.y)
    num = wx @ (dense_f * dense_mask) @ wy.T
    den = wx @ dense_mask @ wy.T
    out = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return out, den


def leps_project_diff(coarse: Field, fine: Field) -> float:
    """Weighted-L2 distance after volume-averaging the fine field per coarse cell.

    The restriction is the L2 projection onto the coarse piecewise constants,
    so the comparison measures the solution difference, not the difference of
    the two piecewise-constant representations.
    """
    gc, gf = coarse.grid, fine.grid
    if gc.eps != gf.eps:
        raise ValueError("fields come from different scale parameters")
    total = 0.0
    for tag_val, w in ((BULK_P, 1.0), (BULK_M, 1.0), (CHAN, 1.0 / gc.eps)):
        mask_f = (gf.tag == tag_val).astype(float)
        restricted, _ = project_dense(gc, gf, gf.cells_dense(fine.values), mask_f)
        sel = gc.cell_tag == tag_val
        dv = coarse.values[sel] - restricted[gc.cell_i[sel], gc.cell_j[sel]]
        total += w * float(np.dot(gc.cell_vol[sel], dv**2))
    return float(np.sqrt(total))
