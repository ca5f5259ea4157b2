import numpy as np
import pytest

from oracles import uv_sphere_mesh
from rfdkit.errors import DataError
from rfdkit.geometry import canonical_align, point_in_mesh, voxelize_mesh
from rfdkit.meshing import (
    _CASE_TABLE,
    dense_field_extract,
    marching_cubes,
    mesh_to_world,
    mise_extract,
    normalize_to_unit_aabb,
)


def sphere_field(radius=0.4):
    def evaluate(pts):
        return radius - np.linalg.norm(pts, axis=1)
    return evaluate


def canonical_soup(mesh):
    """Orientation-free, order-free triangle array for equality checks."""
    tris = mesh.triangles()
    tris = np.sort(tris.reshape(len(tris), 3, 3), axis=1)
    flat = tris.reshape(len(tris), 9)
    return flat[np.lexsort(flat.T[::-1])]


class TestCaseTable:
    def test_empty_and_full_cases_emit_nothing(self):
        assert len(_CASE_TABLE[0]) == 0
        assert len(_CASE_TABLE[255]) == 0

    def test_every_other_case_emits_triangles(self):
        for case in range(1, 255):
            assert len(_CASE_TABLE[case]) > 0

    def test_complementary_cases_have_equal_triangle_counts(self):
        for case in range(256):
            assert len(_CASE_TABLE[case]) == len(_CASE_TABLE[255 - case])

    def test_crossing_pairs_straddle_the_surface(self):
        for case in range(256):
            inside = np.array([(case >> c) & 1 for c in range(8)], dtype=bool)
            for tri in _CASE_TABLE[case]:
                for a, b in tri:
                    assert inside[a] != inside[b]


class TestMarchingCubes:
    def test_single_interior_corner_is_a_closed_surface(self):
        values = np.zeros((3, 3, 3))
        values[1, 1, 1] = 1.0
        mesh = marching_cubes(values, level=0.5, origin=(0, 0, 0), spacing=1.0)
        assert mesh.n_faces > 0
        assert mesh.is_watertight()
        assert mesh.euler_characteristic() == 2
        assert 0.0 < mesh.volume() < 8.0

    def test_random_fields_are_watertight_and_positive(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            values = rng.normal(size=(6, 6, 6))
            values[0, :, :] = values[-1, :, :] = -3.0
            values[:, 0, :] = values[:, -1, :] = -3.0
            values[:, :, 0] = values[:, :, -1] = -3.0
            mesh = marching_cubes(values, level=0.0, origin=(0, 0, 0), spacing=1.0)
            if mesh.n_faces == 0:
                continue
            assert mesh.is_watertight()
            assert mesh.volume() > 0.0
            assert mesh.euler_characteristic() % 2 == 0

    def test_sphere_volume_within_two_percent(self):
        mesh, _ = dense_field_extract(sphere_field(0.4), resolution=64, level=0.0)
        assert mesh.is_watertight()
        assert mesh.euler_characteristic() == 2
        true = 4.0 / 3.0 * np.pi * 0.4 ** 3
        assert abs(mesh.volume() - true) / true < 0.02

    def test_extracted_sphere_agrees_with_containment_tests(self):
        mesh, _ = dense_field_extract(sphere_field(0.4), resolution=32, level=0.0)
        grid = voxelize_mesh(mesh, origin=(-0.5, -0.5, -0.5), voxel_size=1 / 32, dims=(32, 32, 32))
        xs = grid.centers_axis(0)
        centers = np.stack(np.meshgrid(xs, xs, xs, indexing="ij"), axis=-1).reshape(-1, 3)
        analytic = (np.linalg.norm(centers, axis=1) < 0.4).reshape(grid.dims)
        mismatch = np.mean(analytic != grid.occupancy)
        assert mismatch < 0.01

    def test_rejects_flat_grids(self):
        from rfdkit.errors import ShapeMismatchError
        with pytest.raises(ShapeMismatchError):
            marching_cubes(np.zeros((1, 4, 4)), 0.5)


class TestMise:
    def test_matches_dense_extraction_exactly(self):
        dense_mesh, n_dense = dense_field_extract(sphere_field(0.4), resolution=32, level=0.0)
        mise_mesh, n_mise = mise_extract(sphere_field(0.4), level=0.0, coarse=8, fine=32)
        assert np.array_equal(canonical_soup(dense_mesh), canonical_soup(mise_mesh))
        assert n_mise < n_dense

    def test_evaluation_budget_at_full_resolution(self):
        _, n_eval = mise_extract(sphere_field(0.4), level=0.0, coarse=16, fine=128)
        assert n_eval < 0.15 * 129 ** 3

    def test_flood_recovers_thin_tilted_slab(self):
        # half-thickness 0.008 is far below the coarse spacing of 1/16, and
        # the tilt makes the slab invisible to most coarse cells; the flood
        # must walk it out from the few seeded ones.
        def slab(pts):
            return 0.008 - np.abs(pts[:, 2] - 0.2 * pts[:, 0])

        mise_mesh, _ = mise_extract(slab, level=0.0, coarse=16, fine=64)
        dense_mesh, _ = dense_field_extract(slab, resolution=64, level=0.0)
        assert dense_mesh.n_faces > 0
        assert np.array_equal(canonical_soup(dense_mesh), canonical_soup(mise_mesh))

    def test_resolution_validation(self):
        with pytest.raises(DataError):
            mise_extract(sphere_field(), coarse=10, fine=64)
        with pytest.raises(DataError):
            mise_extract(sphere_field(), coarse=16, fine=48)


class TestPlacement:
    def test_mesh_to_world_round_trip_and_volume(self):
        mesh = uv_sphere_mesh(radius=0.5, stacks=8, slices=12)
        center = np.array([0.4, -1.2, 0.9])
        heading = 0.77
        scale = np.array([1.5, 0.8, 2.0])
        world = mesh_to_world(mesh, center, heading, scale)
        assert np.isclose(world.volume(), mesh.volume() * scale.prod(), rtol=1e-9)
        back = canonical_align(world.vertices, center, heading) / scale
        assert np.allclose(back, mesh.vertices, atol=1e-9)

    def test_normalize_to_unit_aabb(self):
        mesh = uv_sphere_mesh(radius=0.3, stacks=6, slices=8).transformed(
            translation=np.array([2.0, -1.0, 0.5]), scale=np.array([2.0, 1.0, 0.25]))
        unit = normalize_to_unit_aabb(mesh)
        lo, hi = unit.aabb()
        assert np.allclose(lo, -0.5, atol=1e-12)
        assert np.allclose(hi, 0.5, atol=1e-12)
