"""Tests for structured fracture-conforming meshing and the interface grid.

Expected element/facet counts for the small lattices are derived by hand
from the construction rule (power-of-two rows/columns, two triangles per
cell); interval intersections are checked against an enumerated oracle.
"""

import math

import numpy as np
import pytest

from fracdg.geometry import ApertureProfile, FractureFrame
from fracdg.mesh import (
    BOUNDARY,
    FRACTURE,
    GAMMA_1,
    GAMMA_2,
    INTERIOR,
    Mesh,
    SIDE_1,
    SIDE_2,
    _classify,
    _extract_facets,
    build_bulk_mesh,
    build_interface_grid,
    classify_facets,
    intersect_partitions,
    mesh_quality,
)

FRAME = FractureFrame.vertical_line(0.5)
UNIT = ((0.0, 0.0), (1.0, 1.0))


def manual_mesh(vertices, elements):
    vertices = np.asarray(vertices, dtype=float)
    elements = np.asarray(elements, dtype=np.int64)
    facets, fe = _extract_facets(elements)
    cls = _classify(facets, fe, set(), set())
    return Mesh(vertices=vertices, elements=elements,
                subdomain=np.full(len(elements), SIDE_1, dtype=np.int8),
                mode="manual", facets=facets, facet_elements=fe,
                facet_class=cls, lattices=(), frame=FRAME,
                profile=ApertureProfile.constant(0.05, 0.05), h_target=1.0)


class TestFacetExtraction:
    def test_two_triangle_square(self):
        mesh = manual_mesh([[0, 0], [1, 0], [1, 1], [0, 1]],
                           [[0, 1, 2], [0, 2, 3]])
        counts = classify_facets(mesh)
        assert counts["interior"] == 1
        assert counts["exterior-boundary"] == 4
        assert counts["gamma-side-1"] == counts["gamma-side-2"] == 0

    def test_rejects_overshared_edge(self):
        with pytest.raises(ValueError, match="more than two"):
            _extract_facets(np.array([[0, 1, 2], [0, 1, 3], [0, 1, 4]]))


class TestQuality:
    def test_unit_right_triangle(self):
        mesh = manual_mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
        q = mesh_quality(mesh)
        assert q["h_max"] == pytest.approx(math.sqrt(2.0))
        assert q["h_min"] == pytest.approx(math.sqrt(2.0))
        assert q["min_angle"] == pytest.approx(45.0)

    def test_uniform_rectified_mesh(self):
        prof = ApertureProfile.constant(0.05, 0.05)
        mesh = build_bulk_mesh(UNIT, prof, "rectified", 0.25, FRAME)
        q = mesh_quality(mesh)
        assert q["h_max"] == pytest.approx(q["h_min"])


class TestRectifiedMesh:
    PROF = ApertureProfile.constant(0.05, 0.05)

    def test_counts_h_quarter(self):
        # 4 rows, 2 columns per side: 2 * (4*2*2) = 32 triangles,
        # per side 30 facets of which 4 lie on the interface
        mesh = build_bulk_mesh(UNIT, self.PROF, "rectified", 0.25, FRAME)
        assert mesh.n_elements == 32
        counts = classify_facets(mesh)
        assert counts["gamma-side-1"] == 4
        assert counts["gamma-side-2"] == 4
        assert counts["exterior-boundary"] == 16
        assert counts["interior"] == 36
        assert mesh.n_facets == 60

    def test_sides_disconnected_and_walls_on_gamma(self):
        mesh = build_bulk_mesh(UNIT, self.PROF, "rectified", 0.25, FRAME)
        for cls in (GAMMA_1, GAMMA_2):
            ids = mesh.facets_of_class(cls)
            x = mesh.vertices[mesh.facets[ids]][:, :, 0]
            np.testing.assert_allclose(x, 0.5, atol=1e-15)
            # one-sided facets with the matching subdomain tag
            assert np.all(mesh.facet_elements[ids, 1] == -1)
        tags1 = mesh.subdomain[mesh.facet_elements[mesh.facets_of_class(GAMMA_1), 0]]
        tags2 = mesh.subdomain[mesh.facet_elements[mesh.facets_of_class(GAMMA_2), 0]]
        assert np.all(tags1 == SIDE_1)
        assert np.all(tags2 == SIDE_2)

    def test_tiles_unit_square(self):
        mesh = build_bulk_mesh(UNIT, self.PROF, "rectified", 0.25, FRAME)
        assert mesh.element_volumes().sum() == pytest.approx(1.0, abs=1e-12)

    def test_positive_volumes(self):
        mesh = build_bulk_mesh(UNIT, self.PROF, "rectified", 1.0 / 8.0, FRAME)
        assert mesh.element_volumes().min() > 0.0


class TestFullMesh:
    def test_constant_aperture_partition(self):
        prof = ApertureProfile.constant(0.1, 0.1)
        mesh = build_bulk_mesh(UNIT, prof, "full", 0.25, FRAME)
        tags = set(np.unique(mesh.subdomain))
        assert tags == {SIDE_1, SIDE_2, FRACTURE}
        assert mesh.element_volumes().sum() == pytest.approx(1.0, abs=1e-12)

    def test_fracture_layer_count(self):
        prof = ApertureProfile.constant(0.1, 0.1)
        mesh = build_bulk_mesh(UNIT, prof, "full", 0.25, FRAME,
                               fracture_layers=4)
        # 4 rows of 4 fracture columns, two triangles each
        assert int(np.sum(mesh.subdomain == FRACTURE)) == 32

    def test_wall_facets_between_matrix_and_slab(self):
        prof = ApertureProfile.sinusoidal(0.05)
        mesh = build_bulk_mesh(UNIT, prof, "full", 0.125, FRAME)
        counts = classify_facets(mesh)
        assert counts["gamma-side-1"] == 8
        assert counts["gamma-side-2"] == 8
        for cls, tag in ((GAMMA_1, SIDE_1), (GAMMA_2, SIDE_2)):
            for f in mesh.facets_of_class(cls):
                e0, e1 = mesh.facet_elements[f]
                assert e1 >= 0
                assert {int(mesh.subdomain[e0]), int(mesh.subdomain[e1])} == \
                    {tag, FRACTURE}

    def test_slab_volume_matches_trapezoid_aperture(self):
        prof = ApertureProfile.sinusoidal(0.1, asymmetry="symmetric")
        mesh = build_bulk_mesh(UNIT, prof, "full", 1.0 / 16.0, FRAME)
        ys = mesh.lattices[0].ys
        d = prof.d1_fn(ys) + prof.d2_fn(ys)
        gap = np.trapezoid(d, ys) if hasattr(np, "trapezoid") else np.trapz(d, ys)
        slab = mesh.element_volumes()[mesh.subdomain == FRACTURE].sum()
        assert slab == pytest.approx(gap, abs=1e-12)


class TestCurvedReducedMesh:
    def test_wall_vertices_snap_to_profile(self):
        prof = ApertureProfile.sinusoidal(1e-3)
        mesh = build_bulk_mesh(UNIT, prof, "curved-reduced", 1.0 / 32.0, FRAME)
        ids = mesh.facets_of_class(GAMMA_1)
        verts = mesh.vertices[np.unique(mesh.facets[ids])]
        np.testing.assert_allclose(verts[:, 0],
                                   0.5 - prof.d1_fn(verts[:, 1]), atol=1e-12)
        ids = mesh.facets_of_class(GAMMA_2)
        verts = mesh.vertices[np.unique(mesh.facets[ids])]
        np.testing.assert_allclose(verts[:, 0],
                                   0.5 + prof.d2_fn(verts[:, 1]), atol=1e-12)

    def test_volume_conservation_against_meshed_gap(self):
        # the meshed walls are piecewise linear, so the unmeshed gap is
        # exactly the trapezoid-rule aperture integral
        prof = ApertureProfile.sinusoidal(0.1, asymmetry="symmetric")
        for h in (1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0):
            mesh = build_bulk_mesh(UNIT, prof, "curved-reduced", h, FRAME)
            ys = mesh.lattices[0].ys
            d = prof.d1_fn(ys) + prof.d2_fn(ys)
            gap = np.trapezoid(d, ys) if hasattr(np, "trapezoid") else np.trapz(d, ys)
            vol = mesh.element_volumes().sum()
            assert vol == pytest.approx(1.0 - gap, abs=1e-12)

    def test_volume_approaches_analytic_gap(self):
        # full periods of the oscillation: analytic gap = 2 d0
        prof = ApertureProfile.sinusoidal(0.1, asymmetry="symmetric")
        mesh = build_bulk_mesh(UNIT, prof, "curved-reduced", 1.0 / 64.0, FRAME)
        vol = mesh.element_volumes().sum()
        # trapezoid error <= |d''|_inf h^2 / 12 * |Gamma|
        bound = 0.05 * (8.0 * math.pi) ** 2 * (1.0 / 64.0) ** 2 / 12.0
        assert abs(vol - (1.0 - 0.2)) < bound

    def test_anisotropic_reference_spacing(self):
        prof = ApertureProfile.sinusoidal(0.01)
        mesh = build_bulk_mesh(UNIT, prof, "curved-reduced", 1.0 / 32.0, FRAME,
                               h_target_normal=1.0 / 8.0)
        lat1 = mesh.lattices[0]
        assert lat1.n_rows == 32
        assert lat1.n_cols == 4

    def test_rejects_wall_exiting_domain(self):
        prof = ApertureProfile.constant(0.6, 0.1)
        with pytest.raises(ValueError, match="exits the domain"):
            build_bulk_mesh(UNIT, prof, "curved-reduced", 0.25, FRAME)
        prof = ApertureProfile.constant(0.1, 0.6)
        with pytest.raises(ValueError, match="exits the domain"):
            build_bulk_mesh(UNIT, prof, "full", 0.25, FRAME)


class TestBuildErrors:
    PROF = ApertureProfile.constant(0.05, 0.05)

    def test_bad_mode(self):
        with pytest.raises(ValueError, match="mode"):
            build_bulk_mesh(UNIT, self.PROF, "unstructured", 0.25, FRAME)

    def test_bad_h(self):
        with pytest.raises(ValueError, match="positive"):
            build_bulk_mesh(UNIT, self.PROF, "rectified", -0.1, FRAME)

    def test_frame_outside_domain(self):
        frame = FractureFrame.vertical_line(1.5)
        with pytest.raises(ValueError, match="outside"):
            build_bulk_mesh(UNIT, self.PROF, "rectified", 0.25, frame)

    def test_zero_fracture_layers(self):
        with pytest.raises(ValueError, match="layers"):
            build_bulk_mesh(UNIT, self.PROF, "full", 0.25, FRAME,
                            fracture_layers=0)

    def test_profile_range_mismatch(self):
        prof = ApertureProfile.constant(0.05, 0.05, t_range=(0.0, 2.0))
        with pytest.raises(ValueError, match="range"):
            build_bulk_mesh(UNIT, prof, "rectified", 0.25, FRAME)


class TestRefinementNesting:
    def test_rectified_h_max_exactly_halves(self):
        prof = ApertureProfile.constant(0.05, 0.05)
        q1 = mesh_quality(build_bulk_mesh(UNIT, prof, "rectified", 0.25, FRAME))
        q2 = mesh_quality(build_bulk_mesh(UNIT, prof, "rectified", 0.125, FRAME))
        assert q2["h_max"] == pytest.approx(0.5 * q1["h_max"], rel=1e-14)

    def test_constant_full_h_max_exactly_halves(self):
        prof = ApertureProfile.constant(0.1, 0.1)
        q1 = mesh_quality(build_bulk_mesh(UNIT, prof, "full", 0.25, FRAME))
        q2 = mesh_quality(build_bulk_mesh(UNIT, prof, "full", 0.125, FRAME))
        assert q2["h_max"] == pytest.approx(0.5 * q1["h_max"], rel=1e-14)

    @pytest.mark.parametrize("asymmetry,d0", [("antisymmetric", 0.01),
                                              ("symmetric", 0.1)])
    def test_curved_h_max_halving_approaches_half(self, asymmetry, d0):
        # wall vertices are snapped to the analytic graphs, so finer meshes
        # sample the wall slope closer to its supremum; the halving ratio
        # therefore exceeds 1/2 while the wall is under-resolved and
        # approaches it from above under refinement
        prof = ApertureProfile.sinusoidal(d0, asymmetry=asymmetry)
        hs = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0]
        hmax = [mesh_quality(build_bulk_mesh(UNIT, prof, "curved-reduced",
                                             h, FRAME))["h_max"] for h in hs]
        ratios = [hmax[i + 1] / hmax[i] for i in range(len(hmax) - 1)]
        for a, b in zip(ratios, ratios[1:]):
            assert b <= a + 1e-12
        assert all(r >= 0.5 - 1e-12 for r in ratios)
        assert ratios[-1] <= 0.51


class TestIntervalIntersection:
    def test_oracle_halves_against_thirds(self):
        breaks, idx1, idx2 = intersect_partitions(
            [0.0, 0.5, 1.0], [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0], 1e-12)
        np.testing.assert_allclose(breaks, [0.0, 1.0 / 3.0, 0.5, 2.0 / 3.0, 1.0])
        np.testing.assert_array_equal(idx1, [0, 0, 1, 1])
        np.testing.assert_array_equal(idx2, [0, 1, 1, 2])

    def test_identical_partitions(self):
        b = [0.0, 0.25, 0.5, 0.75, 1.0]
        breaks, idx1, idx2 = intersect_partitions(b, b, 1e-12)
        np.testing.assert_allclose(breaks, b)
        np.testing.assert_array_equal(idx1, [0, 1, 2, 3])
        np.testing.assert_array_equal(idx2, [0, 1, 2, 3])

    def test_single_interval_per_side(self):
        breaks, idx1, idx2 = intersect_partitions([0.0, 1.0], [0.0, 1.0], 1e-12)
        assert len(breaks) == 2
        np.testing.assert_array_equal(idx1, [0])

    def test_slivers_are_fused(self):
        eps = 1e-14
        breaks, idx1, idx2 = intersect_partitions(
            [0.0, 0.5, 1.0], [0.0, 0.5 + eps, 1.0], 1e-12)
        np.testing.assert_allclose(breaks, [0.0, 0.5, 1.0], atol=1e-13)
        assert len(idx1) == 2

    def test_rejects_mismatched_ranges(self):
        with pytest.raises(ValueError, match="range"):
            intersect_partitions([0.0, 0.5], [0.0, 1.0], 1e-12)


class TestInterfaceGrid:
    def test_rectified_grid_matches_wall_facets(self):
        prof = ApertureProfile.constant(0.05, 0.05)
        mesh = build_bulk_mesh(UNIT, prof, "rectified", 0.25, FRAME)
        grid = build_interface_grid(mesh)
        assert grid.n_elements == 4
        np.testing.assert_allclose(grid.t_breaks, np.linspace(0, 1, 5))
        assert grid.measure == pytest.approx(1.0, abs=1e-12)
        # pairing: one facet per side per element, tags match
        assert len(np.unique(grid.facet1)) == 4
        assert len(np.unique(grid.facet2)) == 4
        assert np.all(mesh.subdomain[grid.belem1] == SIDE_1)
        assert np.all(mesh.subdomain[grid.belem2] == SIDE_2)

    def test_projected_grid_measures_gamma(self):
        prof = ApertureProfile.sinusoidal(0.1, asymmetry="symmetric")
        mesh = build_bulk_mesh(UNIT, prof, "curved-reduced", 1.0 / 16.0, FRAME)
        grid = build_interface_grid(mesh)
        assert grid.lengths.sum() == pytest.approx(1.0, abs=1e-12)
        assert grid.measure == pytest.approx(1.0, abs=1e-12)

    def test_full_mode_pairing_targets_matrix_elements(self):
        prof = ApertureProfile.constant(0.1, 0.1)
        mesh = build_bulk_mesh(UNIT, prof, "full", 0.25, FRAME)
        grid = build_interface_grid(mesh, mode="projected")
        assert np.all(mesh.subdomain[grid.belem1] == SIDE_1)
        assert np.all(mesh.subdomain[grid.belem2] == SIDE_2)

    def test_full_mode_needs_explicit_request(self):
        prof = ApertureProfile.constant(0.1, 0.1)
        mesh = build_bulk_mesh(UNIT, prof, "full", 0.25, FRAME)
        with pytest.raises(ValueError, match="no reduced interface"):
            build_interface_grid(mesh)

    def test_pairing_roundtrip_through_wall_chord(self):
        prof = ApertureProfile.sinusoidal(0.1)
        mesh = build_bulk_mesh(UNIT, prof, "curved-reduced", 1.0 / 8.0, FRAME)
        grid = build_interface_grid(mesh)
        from fracdg.geometry import project_to_gamma
        for k in range(grid.n_elements):
            t = 0.5 * (grid.t_breaks[k] + grid.t_breaks[k + 1])
            for fid in (grid.facet1[k], grid.facet2[k]):
                va, vb = mesh.vertices[mesh.facets[fid]]
                if va[1] > vb[1]:
                    va, vb = vb, va
                lam = (t - va[1]) / (vb[1] - va[1])
                assert 0.0 <= lam <= 1.0
                point = va + lam * (vb - va)
                back = FRAME.tangential(project_to_gamma(point, FRAME))
                assert back == pytest.approx(t, abs=1e-12)

    def test_element_lookup(self):
        prof = ApertureProfile.constant(0.05, 0.05)
        mesh = build_bulk_mesh(UNIT, prof, "rectified", 0.25, FRAME)
        grid = build_interface_grid(mesh)
        assert grid.element_of_t(0.10) == 0
        assert grid.element_of_t(0.80) == 3
        assert grid.element_of_t(0.0) == 0
        assert grid.element_of_t(1.0) == 3
