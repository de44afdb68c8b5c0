"""Cross-section discretisation and the transverse operators.

The cross-section is sampled on a uniform square lattice of spacing ``h``
anchored at the lower-left corner of its bounding box. Lattice points strictly
inside the shape are unknowns; every other lattice point is a Dirichlet node
carrying the value zero. Unknowns are ordered lexicographically by
``(x2, x1)``, i.e. row-major with ``x1`` varying fastest.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
import shapely

from .errors import DegenerateShape, EmptyGrid

MIN_NODES = 9


@dataclass(frozen=True)
class CrossSectionShape:
    """Bounded cross-section, placed relative to the rotation axis.

    ``rectangle`` and ``ellipse`` are centred on ``offset``; polygon vertices
    are given in axis coordinates and then translated by ``offset``.
    """

    kind: str
    params: tuple
    offset: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("rectangle", "ellipse", "polygon"):
            raise DegenerateShape(f"unknown shape kind {self.kind!r}")
        if self.kind in ("rectangle", "ellipse"):
            if len(self.params) != 2 or min(self.params) <= 0:
                raise DegenerateShape(f"{self.kind} needs two positive extents, got {self.params}")
        else:
            poly = self._polygon()
            if not poly.is_valid or poly.area <= 0:
                raise DegenerateShape("polygon must be simple, closed and have nonzero area")

    @classmethod
    def rectangle(cls, width, height, offset=(0.0, 0.0)):
        return cls("rectangle", (float(width), float(height)), tuple(map(float, offset)))

    @classmethod
    def ellipse(cls, a, b, offset=(0.0, 0.0)):
        return cls("ellipse", (float(a), float(b)), tuple(map(float, offset)))

    @classmethod
    def polygon(cls, vertices, offset=(0.0, 0.0)):
        verts = tuple((float(x), float(y)) for x, y in vertices)
        if len(verts) < 3:
            raise DegenerateShape("polygon needs at least three vertices")
        return cls("polygon", verts, tuple(map(float, offset)))

    @classmethod
    def unit_square(cls):
        """The square (0, 1)^2 in axis coordinates."""
        return cls.rectangle(1.0, 1.0, offset=(0.5, 0.5))

    def _polygon(self):
        ox, oy = self.offset
        return shapely.Polygon([(x + ox, y + oy) for x, y in self.params])

    def bounds(self):
        """Return ``(xmin, ymin, xmax, ymax)``."""
        ox, oy = self.offset
        if self.kind == "polygon":
            return tuple(self._polygon().bounds)
        a, b = self.params
        if self.kind == "rectangle":
            a, b = a / 2, b / 2
        return (ox - a, oy - b, ox + a, oy + b)

    def contains(self, x, y, margin=0.0):
        """Strict membership test, vectorised over coordinate arrays."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ox, oy = self.offset
        if self.kind == "rectangle":
            a, b = self.params[0] / 2, self.params[1] / 2
            return (np.abs(x - ox) < a - margin) & (np.abs(y - oy) < b - margin)
        if self.kind == "ellipse":
            a, b = self.params
            r = ((x - ox) / a) ** 2 + ((y - oy) / b) ** 2
            return r < 1.0 - margin / min(a, b)
        poly = self._polygon()
        inside = shapely.contains_xy(poly, x, y)
        if margin > 0:
            dist = shapely.distance(poly.exterior, shapely.points(x, y))
            inside &= dist > margin
        return inside

    def boundary_samples(self, n=4096):
        ox, oy = self.offset
        if self.kind == "ellipse":
            t = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
            a, b = self.params
            return np.column_stack([ox + a * np.cos(t), oy + b * np.sin(t)])
        if self.kind == "rectangle":
            x0, y0, x1, y1 = self.bounds()
            return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
        return np.asarray(self._polygon().exterior.coords)

    @property
    def is_centered_disk(self):
        return (
            self.kind == "ellipse"
            and np.isclose(self.params[0], self.params[1])
            and np.allclose(self.offset, 0.0)
        )


@dataclass(frozen=True, eq=False)
class CrossSectionGrid:
    shape: CrossSectionShape
    spacing: float
    origin: tuple
    lattice_shape: tuple  # (ny, nx) including the Dirichlet frame
    mask: np.ndarray = field(repr=False)  # bool (ny, nx), True for unknowns
    index: np.ndarray = field(repr=False)  # int (ny, nx), -1 outside

    @property
    def n_nodes(self):
        return int(self.mask.sum())

    @cached_property
    def coordinates(self):
        """Interior node coordinates, shape (n_nodes, 2), in unknown order."""
        iy, ix = np.nonzero(self.mask)
        x0, y0 = self.origin
        return np.column_stack([x0 + ix * self.spacing, y0 + iy * self.spacing])

    @cached_property
    def lattice_indices(self):
        iy, ix = np.nonzero(self.mask)
        return iy, ix

    def node_of(self, point):
        """Row index of the unknown at ``point``; raises KeyError if absent."""
        x0, y0 = self.origin
        ix = int(round((point[0] - x0) / self.spacing))
        iy = int(round((point[1] - y0) / self.spacing))
        ny, nx = self.lattice_shape
        if 0 <= iy < ny and 0 <= ix < nx and self.index[iy, ix] >= 0:
            return int(self.index[iy, ix])
        raise KeyError(point)

    def grid_function(self, func):
        """Sample ``func(x1, x2)`` at the interior nodes."""
        xy = self.coordinates
        return np.asarray(func(xy[:, 0], xy[:, 1]), dtype=float)

    @property
    def cell_area(self):
        return self.spacing**2


def build_grid(shape: CrossSectionShape, h: float) -> CrossSectionGrid:
    """Lattice of spacing ``h`` restricted to the interior of ``shape``."""
    if not h > 0:
        raise ValueError("grid spacing must be positive")
    xmin, ymin, xmax, ymax = shape.bounds()
    if not (xmax > xmin and ymax > ymin):
        raise DegenerateShape("shape has empty interior")
    # one extra lattice line on each side so every unknown has four classified neighbours
    nx = int(np.floor((xmax - xmin) / h + 1e-9)) + 3
    ny = int(np.floor((ymax - ymin) / h + 1e-9)) + 3
    origin = (xmin - h, ymin - h)
    xs = origin[0] + h * np.arange(nx)
    ys = origin[1] + h * np.arange(ny)
    X, Y = np.meshgrid(xs, ys)
    mask = shape.contains(X, Y, margin=1e-9 * h)
    mask[0, :] = mask[-1, :] = False
    mask[:, 0] = mask[:, -1] = False
    n = int(mask.sum())
    if n == 0:
        raise EmptyGrid(f"no interior nodes at h={h}")
    if n < MIN_NODES:
        raise EmptyGrid(f"only {n} interior nodes at h={h}; need at least {MIN_NODES}")
    index = np.full(mask.shape, -1, dtype=np.int64)
    index[mask] = np.arange(n)  # C order == lexicographic in (x2, x1)
    return CrossSectionGrid(shape, float(h), origin, (ny, nx), mask, index)


@dataclass(frozen=True, eq=False)
class TransverseOperators:
    grid: CrossSectionGrid
    laplacian_t: sp.csr_matrix = field(repr=False)
    dphi: sp.csr_matrix = field(repr=False)
    moment_bound: float
    dphi_boundary: str = "dirichlet"

    @property
    def n(self):
        return self.grid.n_nodes

    @cached_property
    def lambda1(self):
        """Lowest eigenvalue of the discrete Dirichlet Laplacian."""
        A = self.laplacian_t
        if A.shape[0] <= 600:
            return float(np.linalg.eigvalsh(A.toarray())[0])
        vals = spla.eigsh(A.tocsc(), k=1, sigma=0.0, which="LM",
                          v0=np.ones(A.shape[0]), return_eigenvectors=False)
        return float(vals[0])

    @cached_property
    def gradient(self):
        """Forward-difference gradients (Dx, Dy) with Dirichlet closure.

        ``Dx.T @ Dx + Dy.T @ Dy`` reproduces ``laplacian_t`` exactly.
        """
        return _forward_differences(self.grid)


def _neighbour(grid, iy, ix, dy, dx):
    ny, nx = grid.lattice_shape
    jy, jx = iy + dy, ix + dx
    ok = (jy >= 0) & (jy < ny) & (jx >= 0) & (jx < nx)
    out = np.full(iy.shape, -1, dtype=np.int64)
    out[ok] = grid.index[jy[ok], jx[ok]]
    return out


def _forward_differences(grid):
    n = grid.n_nodes
    h = grid.spacing
    iy, ix = grid.lattice_indices
    mats = []
    for dy, dx in ((0, 1), (1, 0)):
        # one edge per (node, forward neighbour) plus edges entering from Dirichlet nodes
        fwd = _neighbour(grid, iy, ix, dy, dx)
        back = _neighbour(grid, iy, ix, -dy, -dx)
        r, c, v = [], [], []
        e = 0
        for i in range(n):
            if back[i] < 0:
                r.append(e); c.append(i); v.append(1.0 / h)
                e += 1
            r.append(e); c.append(i); v.append(-1.0 / h)
            if fwd[i] >= 0:
                r.append(e); c.append(fwd[i]); v.append(1.0 / h)
            e += 1
        mats.append(sp.csr_matrix((v, (r, c)), shape=(e, n)))
    return tuple(mats)


def _laplacian(grid):
    n = grid.n_nodes
    h2 = grid.spacing**2
    iy, ix = grid.lattice_indices
    rows = [np.arange(n)]
    cols = [np.arange(n)]
    vals = [np.full(n, 4.0 / h2)]
    for dy, dx in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        nb = _neighbour(grid, iy, ix, dy, dx)
        ok = nb >= 0
        rows.append(np.nonzero(ok)[0])
        cols.append(nb[ok])
        vals.append(np.full(int(ok.sum()), -1.0 / h2))
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    A.sort_indices()
    return A


def _first_derivative(grid, axis, boundary):
    """Centred difference along ``axis`` (0 -> x1, 1 -> x2)."""
    n = grid.n_nodes
    h = grid.spacing
    iy, ix = grid.lattice_indices
    step = (0, 1) if axis == 0 else (1, 0)
    p1 = _neighbour(grid, iy, ix, *step)
    m1 = _neighbour(grid, iy, ix, -step[0], -step[1])
    rows, cols, vals = [], [], []

    def add(mask, col, val):
        rows.append(np.nonzero(mask)[0])
        cols.append(col[mask])
        vals.append(np.full(int(mask.sum()), val))

    both = (p1 >= 0) & (m1 >= 0)
    if boundary == "dirichlet":
        # exterior neighbours carry the Dirichlet value 0
        add(p1 >= 0, p1, 0.5 / h)
        add(m1 >= 0, m1, -0.5 / h)
    elif boundary == "one_sided":
        add(both, p1, 0.5 / h)
        add(both, m1, -0.5 / h)
        p2 = _neighbour(grid, iy, ix, 2 * step[0], 2 * step[1])
        m2 = _neighbour(grid, iy, ix, -2 * step[0], -2 * step[1])
        idx = np.arange(n)
        fwd = (m1 < 0) & (p1 >= 0)
        fwd2 = fwd & (p2 >= 0)
        add(fwd2, idx, -1.5 / h)
        add(fwd2, p1, 2.0 / h)
        add(fwd2, p2, -0.5 / h)
        fwd1 = fwd & (p2 < 0)
        add(fwd1, idx, -1.0 / h)
        add(fwd1, p1, 1.0 / h)
        bwd = (p1 < 0) & (m1 >= 0)
        bwd2 = bwd & (m2 >= 0)
        add(bwd2, idx, 1.5 / h)
        add(bwd2, m1, -2.0 / h)
        add(bwd2, m2, 0.5 / h)
        bwd1 = bwd & (m2 < 0)
        add(bwd1, idx, 1.0 / h)
        add(bwd1, m1, -1.0 / h)
    else:
        raise ValueError(f"unknown dphi boundary treatment {boundary!r}")
    D = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    D.sum_duplicates()
    return D


def assemble_transverse(grid: CrossSectionGrid, dphi_boundary="dirichlet") -> TransverseOperators:
    """Five-point ``-Delta_t`` and ``d_phi = x1 d2 - x2 d1`` on ``grid``.

    With ``dphi_boundary="dirichlet"`` (default) the centred stencil reads
    zero at exterior neighbours, which keeps ``dphi`` exactly antisymmetric on
    rectangles. ``"one_sided"`` switches to second-order one-sided stencils at
    boundary-adjacent nodes instead.
    """
    lap = _laplacian(grid)
    d1 = _first_derivative(grid, 0, dphi_boundary)
    d2 = _first_derivative(grid, 1, dphi_boundary)
    xy = grid.coordinates
    dphi = sp.diags(xy[:, 0]) @ d2 - sp.diags(xy[:, 1]) @ d1
    dphi = sp.csr_matrix(dphi)
    dphi.eliminate_zeros()
    pts = grid.shape.boundary_samples()
    moment = float(np.max(np.sum(pts**2, axis=1)))
    return TransverseOperators(grid, lap, dphi, moment, dphi_boundary)


@dataclass(frozen=True, eq=False)
class PolarGrid:
    """Cell-centred polar grid on a centred disk.

    Unknowns sit at ``r_i = (i + 1/2) dr``, ``i < nr``, and ``phi_j = j dphi``,
    ring by ring, and carry the value ``sqrt(r_i dr dphi) f(r_i, phi_j)`` so
    that the Euclidean inner product is the L^2 one (``cell_area == 1``).
    """

    shape: CrossSectionShape
    radius: float
    nr: int
    nphi: int

    @property
    def dr(self):
        return self.radius / (self.nr + 0.5)

    @property
    def dangle(self):
        return 2 * np.pi / self.nphi

    @property
    def spacing(self):
        return self.dr

    @property
    def n_nodes(self):
        return self.nr * self.nphi

    @property
    def cell_area(self):
        return 1.0

    @cached_property
    def radii(self):
        return (np.arange(self.nr) + 0.5) * self.dr

    @cached_property
    def weights(self):
        """Quadrature weight ``r dr dphi`` of every unknown."""
        return np.repeat(self.radii * self.dr * self.dangle, self.nphi)

    @cached_property
    def coordinates(self):
        r = np.repeat(self.radii, self.nphi)
        phi = np.tile(np.arange(self.nphi) * self.dangle, self.nr)
        return np.column_stack([r * np.cos(phi), r * np.sin(phi)])

    def grid_function(self, func):
        """Sample ``func(x1, x2)`` and apply the ``sqrt`` weights."""
        xy = self.coordinates
        return np.asarray(func(xy[:, 0], xy[:, 1]), dtype=float) * np.sqrt(self.weights)


def build_polar_grid(shape: CrossSectionShape, nr: int, nphi: int) -> PolarGrid:
    if not shape.is_centered_disk:
        raise DegenerateShape("polar grids need a disk centred at the origin")
    if nr < 3 or nphi < 4 or nphi % 2:
        raise EmptyGrid("polar grid needs nr >= 3 and an even nphi >= 4")
    return PolarGrid(shape, float(shape.params[0]), int(nr), int(nphi))


def _angular_derivative(nphi, dangle):
    """Fourier differentiation matrix on ``nphi`` equispaced angles, Nyquist mode dropped."""
    m = np.fft.fftfreq(nphi, d=1.0 / nphi)
    m[nphi // 2] = 0.0
    E = np.fft.fft(np.eye(nphi), axis=0)
    D = np.fft.ifft(1j * m[:, None] * E, axis=0).real
    D = 0.5 * (D - D.T)
    return D * (2 * np.pi / (nphi * dangle))


def assemble_polar(grid: PolarGrid) -> TransverseOperators:
    """Symmetric polar ``-Delta_t`` and the exact ring-wise ``d_phi``."""
    nr, nphi, dr, da = grid.nr, grid.nphi, grid.dr, grid.dangle
    r = grid.radii
    w = r * dr * da
    n = grid.n_nodes
    idx = np.arange(n).reshape(nr, nphi)
    rows, cols, vals = [], [], []

    def edge(a, b, coef):
        # adds coef * (f_a - f_b)^2 to the form; b < 0 means a Dirichlet node
        rows.append(a); cols.append(a); vals.append(coef)
        if b is not None:
            rows.extend([b, a, b]); cols.extend([b, b, a]); vals.extend([coef, -coef, -coef])

    for i in range(nr):
        rface = (i + 1) * dr
        radial = rface * da / dr
        ang = dr / (r[i] * da)
        for j in range(nphi):
            a = idx[i, j]
            edge(a, idx[i + 1, j] if i + 1 < nr else None, radial)
            edge(a, idx[i, (j + 1) % nphi], ang)
    K = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    s = 1.0 / np.sqrt(np.repeat(w, nphi))
    lap = sp.csr_matrix(sp.diags(s) @ K @ sp.diags(s))
    lap.sort_indices()
    D = _angular_derivative(nphi, da)
    dphi = sp.csr_matrix(sp.kron(sp.identity(nr), sp.csr_matrix(D)))
    dphi.eliminate_zeros()
    return TransverseOperators(grid, lap, dphi, grid.radius**2, "polar")


def dump_operators(ops: TransverseOperators, stream):
    """Write node coordinates and both matrices as triplet text."""
    g = ops.grid
    stream.write(f"# grid spacing {g.spacing!r} nodes {g.n_nodes}\n")
    stream.write("# nodes: index x1 x2\n")
    for i, (x, y) in enumerate(g.coordinates):
        stream.write(f"{i} {x:.17g} {y:.17g}\n")
    for name, M in (("laplacian_t", ops.laplacian_t), ("dphi", ops.dphi)):
        C = M.tocoo()
        stream.write(f"# {name} {C.shape[0]} {C.shape[1]} {C.nnz}: row col value\n")
        for r, c, v in zip(C.row, C.col, C.data):
            stream.write(f"{r} {c} {v:.17g}\n")
