import numpy as np
import pytest
import shapely
from hypothesis import given, settings
from hypothesis import strategies as st

from multispat import io
from multispat.exceptions import InvalidGeometryError, ParseError
from multispat.geometry import (
    Mesh,
    Polygon,
    build_mesh,
    dual_weights,
    grid_mesh,
    polygon_area,
    projector_matrix,
)

L_SHAPE = [(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)]


def _inner_edges(mesh, domain):
    tri = mesh.vertices[mesh.triangles]
    polys = shapely.polygons(tri)
    dom = domain.shape
    inner = shapely.intersects(polys, dom) & ~shapely.touches(polys, dom)
    return mesh.triangle_edge_lengths()[inner]


class TestPolygon:
    def test_unit_square_area(self, unit_square):
        assert polygon_area(unit_square) == 1.0

    def test_orientation_does_not_change_area(self):
        assert polygon_area(Polygon(L_SHAPE[::-1])) == polygon_area(Polygon(L_SHAPE))

    def test_l_shape_area(self):
        assert polygon_area(Polygon(L_SHAPE)) == pytest.approx(3.0, abs=1e-12)

    def test_hole_area_is_subtracted(self):
        hole = [(0.25, 0.25), (0.75, 0.25), (0.75, 0.75), (0.25, 0.75)]
        p = Polygon([(0, 0), (1, 0), (1, 1), (0, 1)], holes=(hole,))
        assert polygon_area(p) == pytest.approx(0.75)

    @pytest.mark.parametrize("ring", [[(0, 0), (1, 0)], [(0, 0), (1, 0), (2, 0)]])
    def test_degenerate_ring(self, ring):
        with pytest.raises(InvalidGeometryError):
            Polygon(ring)

    def test_self_intersecting_ring(self):
        with pytest.raises(InvalidGeometryError):
            Polygon([(0, 0), (1, 1), (1, 0), (0, 1)])


class TestBuildMesh:
    def test_unit_square_edges_and_cover(self, unit_square):
        mesh = build_mesh(unit_square, max_edge_inner=0.5)
        assert _inner_edges(mesh, unit_square).max() <= 0.5 + 1e-9
        union = shapely.union_all(shapely.polygons(mesh.vertices[mesh.triangles]))
        assert union.buffer(1e-9).covers(unit_square.shape)
        assert np.all(mesh.triangle_areas() > 0)

    def test_two_vertex_boundary(self):
        with pytest.raises(InvalidGeometryError):
            build_mesh(np.array([[0.0, 0.0], [1.0, 0.0]]), max_edge_inner=0.5)

    def test_seed_is_a_vertex(self, unit_square):
        mesh = build_mesh(unit_square, seed_points=[(0.3, 0.7)], max_edge_inner=0.2, cutoff=0.0)
        assert np.any(np.all(mesh.vertices == (0.3, 0.7), axis=1))

    def test_seeds_within_cutoff_merge(self, unit_square):
        seeds = [(0.5, 0.5), (0.5 + 1e-4, 0.5)]
        mesh = build_mesh(unit_square, seed_points=seeds, max_edge_inner=0.3, cutoff=0.01)
        d = np.linalg.norm(mesh.vertices - (0.5, 0.5), axis=1)
        assert np.sum(d < 0.01) == 1

    def test_outer_extension(self, unit_square):
        mesh = build_mesh(unit_square, max_edge_inner=0.2, max_edge_outer=0.4, offset_outer=0.3)
        assert mesh.boundary_flags.any()
        x0, y0 = mesh.vertices.min(axis=0)
        x1, y1 = mesh.vertices.max(axis=0)
        assert x0 < -0.2 and y0 < -0.2 and x1 > 1.2 and y1 > 1.2
        assert mesh.triangle_edge_lengths().max() <= 0.4 + 1e-9

    def test_halving_max_edge_is_monotone(self):
        dom = Polygon(L_SHAPE)
        coarse = build_mesh(dom, max_edge_inner=0.4)
        fine = build_mesh(dom, max_edge_inner=0.2)
        assert _inner_edges(fine, dom).max() <= _inner_edges(coarse, dom).max()
        assert fine.n_vertices > coarse.n_vertices

    @pytest.mark.parametrize("h", [0.2, 0.1, 0.05])
    def test_refinement_terminates_with_wide_extension(self, h):
        dom = Polygon.square(-2.0, -2.0, 4.0)
        mesh = build_mesh(dom, max_edge_inner=h, max_edge_outer=2 * h, offset_outer=1.0)
        assert _inner_edges(mesh, dom).max() <= h * (1 + 1e-9)
        assert mesh.triangle_edge_lengths().max() <= 2 * h * (1 + 1e-9)

    def test_mesh_rejects_zero_area_triangle(self):
        with pytest.raises(InvalidGeometryError):
            Mesh(np.array([[0, 0], [1, 0], [2, 0]], dtype=float), np.array([[0, 1, 2]]))

    def test_triangles_are_counter_clockwise(self):
        m = Mesh(np.array([[0, 0], [1, 0], [0, 1]], dtype=float), np.array([[0, 2, 1]]))
        assert m.triangle_areas()[0] == pytest.approx(0.5)
        assert list(m.triangles[0]) == [0, 1, 2]


class TestProjector:
    def test_vertex_location(self, square_mesh):
        k = 7
        A = projector_matrix(square_mesh, square_mesh.vertices[k]).matrix.toarray()
        expected = np.zeros(square_mesh.n_vertices)
        expected[k] = 1.0
        np.testing.assert_array_equal(A[0], expected)

    def test_centroid(self, square_mesh):
        tri = square_mesh.triangles[3]
        c = square_mesh.vertices[tri].mean(axis=0)
        row = projector_matrix(square_mesh, c).matrix.toarray()[0]
        np.testing.assert_allclose(row[tri], 1 / 3, atol=1e-12)
        assert np.count_nonzero(row) == 3

    def test_outside_location(self, square_mesh):
        P = projector_matrix(square_mesh, [(10.0, 10.0), (0.5, 0.5)])
        assert P.outside.tolist() == [True, False]
        assert P.matrix[0].nnz == 0

    def test_partition_of_unity_and_reconstruction(self, square_mesh, rng):
        pts = rng.uniform(0, 1, size=(1000, 2))
        P = projector_matrix(square_mesh, pts)
        A = P.matrix
        assert not P.outside.any()
        np.testing.assert_allclose(np.asarray(A.sum(axis=1)).ravel(), 1.0, atol=1e-12)
        assert A.data.min() >= 0 and A.data.max() <= 1
        assert np.all(np.diff(A.indptr) <= 3) and np.all(np.diff(A.indptr) >= 1)
        np.testing.assert_allclose(A @ square_mesh.vertices, pts, atol=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0, 1), st.floats(0, 1))
    def test_rows_sum_to_one(self, x, y):
        mesh = _property_mesh()
        row = projector_matrix(mesh, (x, y)).matrix
        assert abs(row.sum() - 1.0) <= 1e-12
        np.testing.assert_allclose(row @ mesh.vertices, [[x, y]], atol=1e-10)


_CACHE = {}


def _property_mesh():
    if "m" not in _CACHE:
        _CACHE["m"] = build_mesh(Polygon.square(), max_edge_inner=0.25)
    return _CACHE["m"]


class TestDualWeights:
    @pytest.mark.parametrize(
        "domain, h",
        [
            (Polygon.square(), 0.2),
            (Polygon(L_SHAPE), 0.3),
            (Polygon([(0, 0), (3, 0), (2, 2), (0, 1)]), 0.25),
        ],
    )
    def test_sum_to_area(self, domain, h):
        mesh = build_mesh(domain, max_edge_inner=h, max_edge_outer=2 * h)
        w = dual_weights(mesh, domain)
        assert np.all(w >= 0)
        assert abs(w.sum() - polygon_area(domain)) <= 1e-9 * polygon_area(domain)

    def test_extension_vertices_far_from_domain(self, unit_square):
        mesh = build_mesh(unit_square, max_edge_inner=0.2, max_edge_outer=0.3, offset_outer=0.6)
        w = dual_weights(mesh, unit_square)
        far = shapely.distance(unit_square.shape, shapely.points(mesh.vertices)) > 0.35
        assert far.any()
        assert np.all(w[far] == 0.0)

    def test_grid_interior_cell(self):
        h = 0.25
        mesh = grid_mesh(0.0, 4.0, 0.0, 4.0, 16, 16)
        w = dual_weights(mesh, Polygon.square(0.0, 0.0, 4.0))
        interior = np.all((mesh.vertices > 0.5) & (mesh.vertices < 3.5), axis=1)
        np.testing.assert_allclose(w[interior], h * h, atol=1e-9)


class TestPolygonIO:
    def test_round_trip(self, tmp_path):
        p = Polygon([(0.1, 0.2), (1.0 / 3.0, 0.0), (1.0, 1.0)],
                    holes=([(0.3, 0.3), (0.35, 0.3), (0.33, 0.32)],))
        path = tmp_path / "poly.txt"
        path.write_text(io.format_polygon(p))
        q = io.read_polygon(path)
        np.testing.assert_array_equal(q.vertices, p.vertices)
        np.testing.assert_array_equal(q.holes[0], p.holes[0])

    def test_malformed_line_reports_line_number(self):
        with pytest.raises(ParseError) as err:
            io.parse_polygon("0 0\n1 0\n1 1 1\n0 1\n")
        assert err.value.line == 3

    def test_mesh_round_trip(self, tmp_path, square_mesh):
        io.write_mesh(square_mesh, tmp_path)
        m = io.read_mesh(tmp_path)
        np.testing.assert_array_equal(m.vertices, square_mesh.vertices)
        np.testing.assert_array_equal(m.triangles, square_mesh.triangles)
        np.testing.assert_array_equal(m.boundary_flags, square_mesh.boundary_flags)
