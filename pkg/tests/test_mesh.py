import numpy as np
import pytest

from ensmhd.mesh import (
    Marker,
    barycentric_refine,
    build_step_channel,
    build_structured_square,
)


def edge_occurrences(triangles):
    edges = np.concatenate(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]], axis=0
    )
    edges = np.sort(edges, axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return counts


class TestStructuredSquare:
    def test_smallest_mesh(self):
        mesh = build_structured_square(1)
        assert mesh.num_triangles == 2
        assert mesh.num_vertices == 4

    def test_reference_resolution(self):
        mesh = build_structured_square(4)
        assert mesh.num_triangles == 32
        assert mesh.h == pytest.approx(np.sqrt(2) / 4)
        # h measured along an axis-aligned edge is 1/4
        lengths = np.linalg.norm(
            mesh.vertices[mesh.triangles[:, 1]] - mesh.vertices[mesh.triangles[:, 0]], axis=1
        )
        assert lengths.min() == pytest.approx(0.25)

    def test_scaled_extent_count(self):
        mesh = build_structured_square(2, extent=((-1.0, 1.0), (-1.0, 1.0)))
        assert mesh.num_triangles == 2 * 2**2
        assert mesh.total_area == pytest.approx(4.0)

    def test_invalid_subdivisions(self):
        with pytest.raises(ValueError):
            build_structured_square(0)

    def test_orientation_positive(self):
        mesh = build_structured_square(3)
        assert np.all(mesh.signed_areas() > 0)

    def test_boundary_edges_unique_to_one_triangle(self):
        mesh = build_structured_square(3)
        counts = edge_occurrences(mesh.triangles)
        boundary_count = (counts == 1).sum()
        assert boundary_count == len(mesh.boundary_edges)
        assert np.all(counts <= 2)

    def test_boundary_vertices_on_square(self):
        mesh = build_structured_square(5)
        pts = mesh.vertices[np.unique(mesh.boundary_edges)]
        on_edge = (
            np.isclose(pts[:, 0], 0.0, atol=1e-12)
            | np.isclose(pts[:, 0], 1.0, atol=1e-12)
            | np.isclose(pts[:, 1], 0.0, atol=1e-12)
            | np.isclose(pts[:, 1], 1.0, atol=1e-12)
        )
        assert on_edge.all()

    def test_per_side_markers(self):
        mesh = build_structured_square(4, extent=((-1, 1), (-1, 1)), per_side_markers=True)
        lid = mesh.boundary_markers == int(Marker.LID)
        mids = 0.5 * (
            mesh.vertices[mesh.boundary_edges[:, 0]] + mesh.vertices[mesh.boundary_edges[:, 1]]
        )
        assert np.all(np.isclose(mids[lid, 1], 1.0))
        assert lid.sum() == 4
        assert np.all(mesh.boundary_markers[~lid] == int(Marker.WALL))


class TestBarycentricRefine:
    def test_two_triangle_square(self):
        mesh = barycentric_refine(build_structured_square(1))
        assert mesh.num_triangles == 6
        assert mesh.num_vertices == 6  # 4 corners + one barycenter per parent

    def test_triples_count_and_area(self):
        parent = build_structured_square(4)
        child = barycentric_refine(parent)
        assert child.num_triangles == 96
        assert child.total_area == pytest.approx(parent.total_area, rel=1e-13)

    def test_child_areas_are_thirds(self):
        parent = build_structured_square(2, extent=((0, 2), (0, 1)))
        child = barycentric_refine(parent)
        parent_areas = np.repeat(parent.areas(), 3)
        assert np.allclose(child.areas(), parent_areas / 3.0, rtol=1e-13)

    def test_markers_preserved(self):
        parent = build_structured_square(3, per_side_markers=True)
        child = barycentric_refine(parent)
        assert np.array_equal(child.boundary_edges, parent.boundary_edges)
        assert np.array_equal(child.boundary_markers, parent.boundary_markers)

    def test_orientation_positive(self):
        child = barycentric_refine(build_structured_square(3))
        assert np.all(child.signed_areas() > 0)

    def test_area_invariant_under_repeated_refinement(self):
        mesh = build_structured_square(2)
        total = mesh.total_area
        for _ in range(3):
            mesh = barycentric_refine(mesh)
            assert mesh.total_area == pytest.approx(total, rel=1e-13)


class TestConformity:
    @pytest.mark.parametrize("mesh_fn", [
        lambda: build_structured_square(3),
        lambda: barycentric_refine(build_structured_square(2)),
        lambda: build_step_channel(0.9),
    ])
    def test_no_hanging_vertices(self, mesh_fn):
        mesh = mesh_fn()
        counts = edge_occurrences(mesh.triangles)
        assert np.all((counts == 1) | (counts == 2))
        # no vertex strictly inside another triangle's edge
        edges = np.concatenate(
            [mesh.triangles[:, [0, 1]], mesh.triangles[:, [1, 2]], mesh.triangles[:, [2, 0]]]
        )
        edges = np.unique(np.sort(edges, axis=1), axis=0)
        a = mesh.vertices[edges[:, 0]]
        b = mesh.vertices[edges[:, 1]]
        for vid, p in enumerate(mesh.vertices):
            keep = (edges[:, 0] != vid) & (edges[:, 1] != vid)
            d = b[keep] - a[keep]
            t = np.einsum("ij,ij->i", p - a[keep], d) / np.einsum("ij,ij->i", d, d)
            cross = (p[0] - a[keep][:, 0]) * d[:, 1] - (p[1] - a[keep][:, 1]) * d[:, 0]
            interior_hit = (np.abs(cross) < 1e-12) & (t > 1e-10) & (t < 1 - 1e-10)
            assert not interior_hit.any()


class TestStepChannel:
    def test_total_area(self):
        mesh = build_step_channel(0.9)
        assert mesh.total_area == pytest.approx(399.0, rel=1e-12)

    def test_step_corners_present(self):
        mesh = build_step_channel(0.9)
        for corner in ((5.0, 0.0), (5.0, 1.0), (6.0, 1.0), (6.0, 0.0)):
            dist = np.linalg.norm(mesh.vertices - np.array(corner), axis=1)
            assert dist.min() < 1e-12

    def test_markers(self):
        mesh = build_step_channel(0.9)
        mids = 0.5 * (
            mesh.vertices[mesh.boundary_edges[:, 0]] + mesh.vertices[mesh.boundary_edges[:, 1]]
        )
        inlet = mesh.boundary_markers == int(Marker.INLET)
        outlet = mesh.boundary_markers == int(Marker.OUTLET)
        assert np.all(np.isclose(mids[inlet, 0], 0.0))
        assert np.all(np.isclose(mids[outlet, 0], 40.0))
        assert inlet.sum() == 10 and outlet.sum() == 10
        on_left = np.isclose(mids[:, 0], 0.0)
        assert np.all(mesh.boundary_markers[on_left] == int(Marker.INLET))
        # step faces are walls
        on_step_top = np.isclose(mids[:, 1], 1.0) & (mids[:, 0] > 5.0) & (mids[:, 0] < 6.0)
        assert on_step_top.any()
        assert np.all(mesh.boundary_markers[on_step_top] == int(Marker.WALL))

    def test_diameter_bound(self):
        h_target = 0.9
        mesh = build_step_channel(h_target)
        assert mesh.h <= 2.0 * h_target + 1e-12

    def test_unresolvable_step_rejected(self):
        with pytest.raises(ValueError):
            build_step_channel(1.0)
        with pytest.raises(ValueError):
            build_step_channel(-0.5)

    def test_refinable(self):
        mesh = build_step_channel(0.9)
        child = barycentric_refine(mesh)
        assert child.num_triangles == 3 * mesh.num_triangles
        assert child.total_area == pytest.approx(399.0, rel=1e-12)
