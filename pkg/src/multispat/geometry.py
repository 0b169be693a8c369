"""Planar meshes, barycentric projectors and dual (Voronoi) integration weights."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import shapely
from scipy.spatial import Delaunay, Voronoi, cKDTree

from ._validation import check_points, check_positive
from .exceptions import InvalidGeometryError

__all__ = [
    "Polygon",
    "Mesh",
    "Projector",
    "polygon_area",
    "build_mesh",
    "grid_mesh",
    "projector_matrix",
    "dual_weights",
]


def _signed_area(ring: np.ndarray) -> float:
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _strip_closing(ring: np.ndarray) -> np.ndarray:
    if len(ring) > 1 and np.array_equal(ring[0], ring[-1]):
        return ring[:-1]
    return ring


@dataclass(frozen=True, eq=False)
class Polygon:
    """Simple polygon with optional holes.

    Rings are stored with the outer ring counter-clockwise and holes clockwise,
    whatever orientation they were given in.
    """

    vertices: np.ndarray
    holes: tuple = ()

    def __post_init__(self):
        outer = _strip_closing(np.asarray(self.vertices, dtype=float))
        holes = tuple(_strip_closing(np.asarray(h, dtype=float)) for h in self.holes)
        for ring in (outer, *holes):
            if ring.ndim != 2 or ring.shape[1] != 2 or len(ring) < 3:
                raise InvalidGeometryError("polygon rings need at least 3 vertices")
            if not np.all(np.isfinite(ring)):
                raise InvalidGeometryError("polygon has non-finite coordinates")
            if abs(_signed_area(ring)) == 0.0:
                raise InvalidGeometryError("polygon ring has zero area")
        if _signed_area(outer) < 0:
            outer = outer[::-1]
        holes = tuple(h[::-1] if _signed_area(h) > 0 else h for h in holes)
        object.__setattr__(self, "vertices", outer)
        object.__setattr__(self, "holes", holes)
        geom = shapely.Polygon(outer, holes)
        if not geom.is_valid:
            raise InvalidGeometryError(
                f"polygon is not simple: {shapely.is_valid_reason(geom)}"
            )
        object.__setattr__(self, "_shape", geom)

    @property
    def shape(self) -> shapely.Polygon:
        return self._shape

    @property
    def rings(self):
        return (self.vertices, *self.holes)

    @property
    def bounds(self):
        return self._shape.bounds

    def contains(self, points) -> np.ndarray:
        """Boolean mask of points in the closed polygon."""
        pts = check_points(points)
        return shapely.covers(self._shape, shapely.points(pts))

    @classmethod
    def square(cls, x0=0.0, y0=0.0, side=1.0):
        return cls([(x0, y0), (x0 + side, y0), (x0 + side, y0 + side), (x0, y0 + side)])


def polygon_area(p: Polygon) -> float:
    """Shoelace area of the outer ring minus the areas of the holes."""
    return abs(_signed_area(p.vertices)) - sum(abs(_signed_area(h)) for h in p.holes)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Planar triangulation.

    Attributes
    ----------
    vertices : (N_v, 2) array
    triangles : (M, 3) int array of counter-clockwise vertex indices
    boundary_flags : (N_v,) bool array, True for vertices in the outer extension
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_flags: np.ndarray = None

    def __post_init__(self):
        v = check_points(self.vertices, "vertices")
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise InvalidGeometryError("triangle index out of range")
        a = _triangle_signed_areas(v, t)
        if np.any(a == 0.0):
            raise InvalidGeometryError("mesh has a zero-area triangle")
        t = np.where((a < 0)[:, None], t[:, [0, 2, 1]], t)
        flags = (
            np.zeros(len(v), dtype=bool)
            if self.boundary_flags is None
            else np.asarray(self.boundary_flags, dtype=bool)
        )
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "boundary_flags", flags)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def triangle_areas(self) -> np.ndarray:
        return _triangle_signed_areas(self.vertices, self.triangles)

    @property
    def area(self) -> float:
        return float(self.triangle_areas().sum())

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs."""
        t = self.triangles
        e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def triangle_edge_lengths(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return np.stack(
            [
                np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
                np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
                np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
            ],
            axis=1,
        )


def _triangle_signed_areas(v, t) -> np.ndarray:
    p = v[t]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def grid_mesh(x0, x1, y0, y1, nx, ny) -> Mesh:
    """Structured mesh on a rectangle: ``nx`` by ``ny`` cells, each split in two."""
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[1:, :-1].ravel()
    tris = np.vstack([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return Mesh(verts, tris)


def _densify_ring(ring: np.ndarray, h: float) -> np.ndarray:
    out = []
    n = len(ring)
    for i in range(n):
        p, q = ring[i], ring[(i + 1) % n]
        k = max(1, int(np.ceil(np.linalg.norm(q - p) / h - 1e-9)))
        s = np.arange(k)[:, None] / k
        out.append(p + s * (q - p))
    return np.vstack(out)


LATTICE_FILL = 0.85


def _lattice(bounds, h: float) -> np.ndarray:
    """Equilateral triangular lattice with spacing ``h`` covering ``bounds``."""
    x0, y0, x1, y1 = bounds
    dy = h * np.sqrt(3.0) / 2.0
    rows = np.arange(y0, y1 + dy, dy)
    pts = []
    for i, y in enumerate(rows):
        xs = np.arange(x0 + (h / 2.0 if i % 2 else 0.0), x1 + h, h)
        pts.append(np.column_stack([xs, np.full(len(xs), y)]))
    return np.vstack(pts)


def _add_spaced(existing: list, candidates: np.ndarray, min_dist: float) -> None:
    """Append candidates that are farther than ``min_dist`` from every kept point."""
    if len(candidates) == 0:
        return
    base = np.vstack(existing)
    far = cKDTree(base).query(candidates)[0] > min_dist
    cand = candidates[far]
    if len(cand) == 0:
        return
    # candidates come from a lattice with spacing above min_dist; no mutual check needed
    existing.append(cand)


def build_mesh(
    boundary: Polygon,
    seed_points=None,
    max_edge_inner: float = 1.0,
    max_edge_outer: float | None = None,
    cutoff: float = 0.0,
    offset_outer: float | None = None,
    max_iter: int = 60,
) -> Mesh:
    """Triangulate a polygonal domain plus an outer extension ring.

    Boundary rings are densified to ``max_edge_inner``, seed points are inserted
    unless they fall within ``cutoff`` of an existing vertex, the interior and the
    extension ring (width ``offset_outer``) are filled with triangular lattices,
    and the Delaunay triangulation of all points is refined by longest-edge
    midpoint insertion until triangles overlapping the domain have edges no longer
    than ``max_edge_inner`` and the remaining triangles no longer than
    ``max_edge_outer``.
    """
    if not isinstance(boundary, Polygon):
        boundary = Polygon(boundary)
    h_in = check_positive(max_edge_inner, "max_edge_inner")
    h_out = h_in if max_edge_outer is None else check_positive(max_edge_outer, "max_edge_outer")
    h_out = max(h_out, h_in)
    cutoff = check_positive(cutoff, "cutoff", allow_zero=True)
    offset = h_out if offset_outer is None else check_positive(
        offset_outer, "offset_outer", allow_zero=True
    )
    seeds = check_points([] if seed_points is None else seed_points, "seed_points")

    dom = boundary.shape
    ext = dom.buffer(offset, quad_segs=4) if offset > 0 else dom

    pts = [np.vstack([_densify_ring(r, h_in) for r in boundary.rings])]
    for s in seeds:
        base = np.vstack(pts)
        if np.min(np.linalg.norm(base - s, axis=1)) > cutoff:
            pts.append(s[None, :])
    gap = 0.5 * h_in
    # midpoints inserted into the fill lattice form cocircular rectangles whose
    # diagonals are 2/sqrt(3) times the spacing; keep those under the bound
    lat = _lattice(dom.bounds, LATTICE_FILL * h_in)
    inside = shapely.contains_xy(dom, lat[:, 0], lat[:, 1])
    lat = lat[inside]
    lat = lat[shapely.distance(dom.boundary, shapely.points(lat)) > gap]
    _add_spaced(pts, lat, max(gap, cutoff))
    if offset > 0:
        ring = np.vstack(
            [_densify_ring(np.asarray(r.coords)[:-1], h_out) for r in [ext.exterior]]
        )
        pts.append(ring)
        lat = _lattice(ext.bounds, LATTICE_FILL * h_out)
        keep = shapely.contains_xy(ext, lat[:, 0], lat[:, 1]) & ~shapely.covers(
            dom, shapely.points(lat)
        )
        lat = lat[keep]
        pl = shapely.points(lat)
        far = (shapely.distance(dom, pl) > 0.5 * h_out) & (
            shapely.distance(ext.exterior, pl) > 0.5 * h_out
        )
        _add_spaced(pts, lat[far], 0.5 * h_out)
    points = np.unique(np.vstack(pts), axis=0)

    ext_test = ext.buffer(1e-9 * h_in)
    for _ in range(max_iter):
        tri = Delaunay(points)
        t = tri.simplices
        p = points[t]
        area = np.abs(_triangle_signed_areas(points, t))
        # qhull keeps flat triangles over collinear hull points; drop them
        longest = np.max(np.linalg.norm(p - np.roll(p, 1, axis=1), axis=2), axis=1)
        solid = area > 1e-9 * longest**2
        t, p = t[solid], p[solid]
        polys = shapely.polygons(p)
        cen = p.mean(axis=1)
        overlaps_dom = shapely.intersects(polys, dom) & ~shapely.touches(polys, dom)
        keep = overlaps_dom | shapely.contains_xy(ext_test, cen[:, 0], cen[:, 1])
        t, p, overlaps_dom = t[keep], p[keep], overlaps_dom[keep]
        lens = np.stack(
            [
                np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
                np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
                np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
            ],
            axis=1,
        )
        limit = np.where(overlaps_dom, h_in, h_out)[:, None] * (1 + 1e-9)
        too_long = lens > limit
        if not too_long.any():
            break
        # longest edge of every offending triangle is split at its midpoint
        worst = np.argmax(np.where(too_long, lens, -1.0), axis=1)
        bad = too_long.any(axis=1)
        a = t[bad, worst[bad]]
        b = t[bad, (worst[bad] + 1) % 3]
        e = np.unique(np.sort(np.column_stack([a, b]), axis=1), axis=0)
        mids = 0.5 * (points[e[:, 0]] + points[e[:, 1]])
        points = np.vstack([points, mids])
    else:
        raise InvalidGeometryError("mesh refinement did not terminate")

    used = np.unique(t)
    remap = -np.ones(len(points), dtype=np.int64)
    remap[used] = np.arange(len(used))
    verts = points[used]
    flags = ~shapely.covers(dom, shapely.points(verts))
    return Mesh(verts, remap[t], flags)


@dataclass(frozen=True, eq=False)
class Projector:
    """Sparse barycentric interpolation matrix with out-of-domain flags."""

    matrix: sp.csr_matrix
    outside: np.ndarray = field(default=None)

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, other):
        return self.matrix @ other


def projector_matrix(mesh: Mesh, locations, tol: float = 1e-10) -> Projector:
    """Barycentric coordinates of each location within its containing triangle.

    Locations outside every triangle get an all-zero row and ``outside`` set.
    """
    loc = check_points(locations, "locations")
    n, m = len(loc), len(mesh.triangles)
    v = mesh.vertices
    t = mesh.triangles
    p0 = v[t[:, 0]]
    T = np.stack([v[t[:, 1]] - p0, v[t[:, 2]] - p0], axis=2)  # columns are edge vectors
    Tinv = np.linalg.inv(T)

    def bary(pts, cand):
        rel = pts[:, None, :] - p0[cand]
        l12 = np.einsum("nkij,nkj->nki", Tinv[cand], rel)
        return np.concatenate([1.0 - l12.sum(axis=2, keepdims=True), l12], axis=2)

    tri_of = -np.ones(n, dtype=np.int64)
    coords = np.zeros((n, 3))
    if n and m:
        k = min(12, m)
        cen = v[t].mean(axis=1)
        _, cand = cKDTree(cen).query(loc, k=k)
        cand = np.asarray(cand).reshape(n, k)
        lam = bary(loc, cand)
        ok = lam.min(axis=2) >= -tol
        hit = ok.any(axis=1)
        first = np.argmax(ok, axis=1)
        rows = np.nonzero(hit)[0]
        tri_of[rows] = cand[rows, first[rows]]
        coords[rows] = lam[rows, first[rows]]
        for i in np.nonzero(~hit)[0]:
            lam_all = bary(loc[i:i + 1], np.arange(m)[None, :])[0]
            inside = np.nonzero(lam_all.min(axis=1) >= -tol)[0]
            if len(inside):
                tri_of[i] = inside[0]
                coords[i] = lam_all[inside[0]]
    found = tri_of >= 0
    coords = np.clip(coords, 0.0, 1.0)
    coords[coords < 1e-12] = 0.0
    sums = coords.sum(axis=1)
    coords[found] /= sums[found, None]
    rows = np.repeat(np.arange(n)[found], 3)
    cols = t[tri_of[found]].ravel()
    vals = coords[found].ravel()
    nz = vals != 0.0
    A = sp.csr_matrix((vals[nz], (rows[nz], cols[nz])), shape=(n, mesh.n_vertices))
    return Projector(A, ~found)


def dual_weights(mesh: Mesh, domain: Polygon) -> np.ndarray:
    """Area of each vertex's Voronoi cell intersected with the domain."""
    if not isinstance(domain, Polygon):
        domain = Polygon(domain)
    v = mesh.vertices
    x0, y0, x1, y1 = domain.bounds
    vx0, vy0 = v.min(axis=0)
    vx1, vy1 = v.max(axis=0)
    cx, cy = 0.5 * (min(x0, vx0) + max(x1, vx1)), 0.5 * (min(y0, vy0) + max(y1, vy1))
    span = max(x1 - x0, y1 - y0, vx1 - vx0, vy1 - vy0)
    # far sentinels make every mesh vertex's cell bounded
    far = 10.0 * span
    sentinels = np.array(
        [[cx - far, cy - far], [cx + far, cy - far], [cx + far, cy + far], [cx - far, cy + far]]
    )
    vor = Voronoi(np.vstack([v, sentinels]))
    cells = []
    for i in range(len(v)):
        region = vor.regions[vor.point_region[i]]
        poly = vor.vertices[region]
        ang = np.arctan2(poly[:, 1] - v[i, 1], poly[:, 0] - v[i, 0])
        cells.append(shapely.Polygon(poly[np.argsort(ang)]))
    inter = shapely.intersection(np.array(cells, dtype=object), domain.shape)
    return np.asarray(shapely.area(inter), dtype=float)
