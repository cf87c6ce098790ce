"""Three-channel heightmap: bilinear sampling, normals, point-cloud gridding, CSV I/O."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels as K

DEFAULT_ELASTICITY = 1000.0
DEFAULT_DAMPING = 50.0


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny or self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid needs nx, ny >= 2 (got {self.nx}x{self.ny})")
        if not (self.resolution > 0 and math.isfinite(self.resolution)):
            raise ValueError("resolution must be positive")
        ox, oy = self.origin
        if not (math.isfinite(ox) and math.isfinite(oy)):
            raise ValueError("origin must be finite")
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))
        object.__setattr__(self, "resolution", float(self.resolution))
        object.__setattr__(self, "origin", (float(ox), float(oy)))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """World x and y of every cell center, each shaped (nx, ny)."""
        xs = self.origin[0] + self.resolution * np.arange(self.nx)
        ys = self.origin[1] + self.resolution * np.arange(self.ny)
        return np.meshgrid(xs, ys, indexing="ij")


@dataclass(frozen=True, eq=False)
class HeightMap:
    """Regular grid of height, elasticity and damping; cell (i, j) sits at
    ``origin + resolution * (i, j)``."""

    grid: GridSpec
    h: np.ndarray
    e: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        for name in ("h", "e", "d"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != self.grid.shape:
                raise ValueError(f"channel {name} has shape {arr.shape}, expected {self.grid.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"channel {name} contains non-finite values")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.e < 0) or np.any(self.d < 0):
            raise ValueError("elasticity and damping must be non-negative")
        channels = np.stack([self.h, self.e, self.d])
        channels.setflags(write=False)
        object.__setattr__(self, "channels", channels)

    @classmethod
    def flat(cls, grid: GridSpec, height=0.0, elasticity=DEFAULT_ELASTICITY,
             damping=DEFAULT_DAMPING) -> "HeightMap":
        shape = grid.shape
        return cls(grid, np.full(shape, float(height)), np.full(shape, float(elasticity)),
                   np.full(shape, float(damping)))

    @property
    def nx(self) -> int:
        return self.grid.nx

    @property
    def ny(self) -> int:
        return self.grid.ny

    @property
    def resolution(self) -> float:
        return self.grid.resolution

    @property
    def origin(self) -> tuple[float, float]:
        return self.grid.origin

    def replace(self, **channels) -> "HeightMap":
        kw = dict(h=self.h, e=self.e, d=self.d)
        kw.update(channels)
        return HeightMap(self.grid, **kw)

    def __eq__(self, other):
        if not isinstance(other, HeightMap):
            return NotImplemented
        return (self.grid == other.grid and np.array_equal(self.h, other.h)
                and np.array_equal(self.e, other.e) and np.array_equal(self.d, other.d))


@dataclass(frozen=True)
class TerrainSample:
    h: float
    e: float
    d: float
    n: np.ndarray
    dh_dx: float = 0.0
    dh_dy: float = 0.0
    clamped: bool = False   # query was outside the grid and pulled onto its border
    active: bool = True     # False beyond the half-cell margin: no terrain force


@dataclass(frozen=True)
class BilinearWeights:
    """The four cells (SW, SE, NW, NE) around a query and their weights."""

    indices: np.ndarray   # (4, 2) integer (i, j)
    weights: np.ndarray   # (4,)


@dataclass
class Patch:
    """Vectorised bilinear evaluation for many query points at once."""

    i0: np.ndarray
    j0: np.ndarray
    fu: np.ndarray
    fv: np.ndarray
    weights: np.ndarray      # (N, 4) in SW, SE, NW, NE order
    clamped_x: np.ndarray
    clamped_y: np.ndarray
    active: np.ndarray
    h: np.ndarray
    e: np.ndarray
    d: np.ndarray
    hx: np.ndarray           # dh/dx of the (clamped) interpolant
    hy: np.ndarray
    ex: np.ndarray
    ey: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    hxy: np.ndarray          # d2h/dxdy (zero along clamped axes)

    def cells(self) -> tuple[np.ndarray, np.ndarray]:
        """Row/column indices (N, 4) of the four stencil cells."""
        ii = np.stack([self.i0, self.i0 + 1, self.i0, self.i0 + 1], axis=1)
        jj = np.stack([self.j0, self.j0, self.j0 + 1, self.j0 + 1], axis=1)
        return ii, jj


def locate(grid: GridSpec, x, y):
    """Continuous grid coordinates with clamping; shared by sampling and masks."""
    xy = np.stack([np.asarray(x, dtype=float), np.asarray(y, dtype=float)], axis=-1)
    if not np.isfinite(xy).all():
        raise ValueError("terrain query at a non-finite position")
    lim = np.array([grid.nx - 1.0, grid.ny - 1.0])
    g = (xy - np.array(grid.origin)) / grid.resolution
    r = np.floor(g + 0.5)
    g = np.where(np.abs(g - r) <= K.SNAP, r, g)
    active = ((g >= -0.5) & (g <= lim + 0.5)).all(axis=-1)
    gc = np.minimum(np.maximum(g, 0.0), lim)
    clamped = gc != g
    ij = np.minimum(np.floor(gc), lim - 1.0)
    frac = gc - ij
    ij = ij.astype(np.intp)
    return ij[..., 0], ij[..., 1], frac[..., 0], frac[..., 1], clamped[..., 0], clamped[..., 1], active


def patch_from_rows(rows: np.ndarray) -> Patch:
    """Wrap packed kernel rows (N, T_WIDTH) as a :class:`Patch`."""
    fu, fv = rows[:, K.T_FU], rows[:, K.T_FV]
    gu, gv = 1.0 - fu, 1.0 - fv
    w = np.stack([gu * gv, fu * gv, gu * fv, fu * fv], axis=-1)
    col = lambda c: rows[:, c].copy()
    return Patch(rows[:, K.T_I0].astype(np.intp), rows[:, K.T_J0].astype(np.intp), col(K.T_FU),
                 col(K.T_FV), w, rows[:, K.T_CX] > 0.5, rows[:, K.T_CY] > 0.5,
                 rows[:, K.T_ACTIVE] > 0.5, col(K.T_H), col(K.T_E), col(K.T_D), col(K.T_HX),
                 col(K.T_HY), col(K.T_EX), col(K.T_EY), col(K.T_DX), col(K.T_DY), col(K.T_HXY))


def grid_params(grid: GridSpec) -> np.ndarray:
    return np.array([grid.origin[0], grid.origin[1], grid.resolution])


def patch(hmap: HeightMap, x, y) -> Patch:
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    ys = np.atleast_1d(np.asarray(y, dtype=float))
    if not (np.isfinite(xs).all() and np.isfinite(ys).all()):
        raise ValueError("terrain query at a non-finite position")
    rows = np.empty((len(xs), K.T_WIDTH))
    g = hmap.grid
    K.bilinear_many(hmap.channels, g.origin[0], g.origin[1], g.resolution, xs, ys, rows)
    return patch_from_rows(rows)


def normals(hx, hy) -> np.ndarray:
    q = np.stack([-hx, -hy, np.ones_like(hx)], axis=-1)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def sample(hmap: HeightMap, x: float, y: float) -> TerrainSample:
    """Bilinear h, e, d and the analytic surface normal at world (x, y).

    Queries outside the grid are clamped to its border; beyond half a cell
    past the border the sample is flagged inactive.
    """
    p = patch(hmap, np.array([x]), np.array([y]))
    n = np.array(K.surface_normal(p.hx[0], p.hy[0]))
    return TerrainSample(float(p.h[0]), float(p.e[0]), float(p.d[0]), n,
                         float(p.hx[0]), float(p.hy[0]),
                         bool(p.clamped_x[0] or p.clamped_y[0]), bool(p.active[0]))


def sample_gradient(hmap: HeightMap, x: float, y: float) -> BilinearWeights:
    p = patch(hmap, np.array([x]), np.array([y]))
    ii, jj = p.cells()
    return BilinearWeights(np.stack([ii[0], jj[0]], axis=1), p.weights[0])


# --------------------------------------------------------------------------
# point clouds

def cloud_to_heightmap(points, grid: GridSpec, elasticity=DEFAULT_ELASTICITY,
                       damping=DEFAULT_DAMPING, k: int = 8, power: float = 2.0) -> HeightMap:
    """Grid a point cloud: per-cell mean z, holes filled by inverse-distance
    weighting from the ``k`` nearest occupied cells."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if not np.all(np.isfinite(pts)):
        raise ValueError("point cloud contains non-finite coordinates")
    gi = np.floor((pts[:, 0] - grid.origin[0]) / grid.resolution + 0.5).astype(np.int64)
    gj = np.floor((pts[:, 1] - grid.origin[1]) / grid.resolution + 0.5).astype(np.int64)
    inside = (gi >= 0) & (gi < grid.nx) & (gj >= 0) & (gj < grid.ny)
    if not np.any(inside):
        raise ValueError("no points fall inside the grid")
    cell = gi[inside] * grid.ny + gj[inside]
    z = pts[inside, 2]
    # sorting by (cell, z) fixes the summation order -> permutation invariant
    order = np.lexsort((z, cell))
    cell, z = cell[order], z[order]
    starts = np.flatnonzero(np.r_[True, cell[1:] != cell[:-1]])
    sums = np.add.reduceat(z, starts)
    counts = np.diff(np.r_[starts, len(z)])
    occupied = cell[starts]

    h = np.full(grid.nx * grid.ny, np.nan)
    h[occupied] = sums / counts
    empty = np.flatnonzero(np.isnan(h))
    if len(empty):
        occ_xy = np.stack(np.divmod(occupied, grid.ny), axis=1).astype(float)
        emp_xy = np.stack(np.divmod(empty, grid.ny), axis=1).astype(float)
        kk = min(k, len(occupied))
        dist, idx = cKDTree(occ_xy).query(emp_xy, k=kk)
        dist = dist.reshape(len(empty), kk)
        idx = idx.reshape(len(empty), kk)
        wts = 1.0 / dist**power
        h[empty] = np.sum(wts * h[occupied][idx], axis=1) / np.sum(wts, axis=1)
    h = h.reshape(grid.shape)
    return HeightMap(grid, h, np.full(grid.shape, float(elasticity)), np.full(grid.shape, float(damping)))


def read_cloud(path) -> np.ndarray:
    if not Path(path).read_text().strip():
        raise ValueError(f"{path}: empty point cloud")
    pts = np.loadtxt(path, ndmin=2)
    if pts.shape[1] != 3:
        raise ValueError(f"{path}: expected 3 columns (x y z), got {pts.shape[1]}")
    return pts


def write_cloud(points, path) -> None:
    with open(path, "w") as f:
        for p in np.asarray(points, dtype=float):
            f.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")


# --------------------------------------------------------------------------
# CSV format: first line carries nx,ny,resolution,origin_x,origin_y;
# then one "i,j,h,e,d" line per cell, i major.

def format_heightmap(hmap: HeightMap) -> str:
    g = hmap.grid
    lines = [f"{g.nx},{g.ny},{g.resolution:.17g},{g.origin[0]:.17g},{g.origin[1]:.17g}"]
    for i in range(g.nx):
        for j in range(g.ny):
            lines.append(f"{i},{j},{hmap.h[i, j]:.17g},{hmap.e[i, j]:.17g},{hmap.d[i, j]:.17g}")
    return "\n".join(lines) + "\n"


def save_heightmap(hmap: HeightMap, path) -> None:
    Path(path).write_text(format_heightmap(hmap))


def parse_heightmap(text: str, source: str = "<string>") -> HeightMap:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{source}: empty heightmap file")
    head = lines[0].split(",")
    try:
        nx, ny = int(head[0]), int(head[1])
        res, ox, oy = float(head[2]), float(head[3]), float(head[4])
    except (IndexError, ValueError) as exc:
        raise ValueError(f"{source}:1: malformed header {lines[0]!r}") from exc
    grid = GridSpec(nx, ny, res, (ox, oy))
    if len(lines) - 1 != nx * ny:
        raise ValueError(f"{source}: expected {nx * ny} cell lines, found {len(lines) - 1}")
    chans = np.empty((3, nx, ny))
    seen = np.zeros((nx, ny), dtype=bool)
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        try:
            i, j = int(parts[0]), int(parts[1])
            vals = [float(p) for p in parts[2:5]]
            if len(parts) != 5 or not (0 <= i < nx and 0 <= j < ny):
                raise ValueError
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: malformed cell line {line!r}") from exc
        chans[:, i, j] = vals
        seen[i, j] = True
    if not seen.all():
        raise ValueError(f"{source}: missing cells")
    return HeightMap(grid, chans[0], chans[1], chans[2])


def load_heightmap(path) -> HeightMap:
    return parse_heightmap(Path(path).read_text(), str(path))
