"""Tests for the orchestration layer: presets, variants, end-to-end runs.

The no-contrast configuration (unit permeability everywhere, linear
boundary data) has the exact solution p = 1 - x1 with midline pressure
1/2 for the full model and for every reduced variant, which pins down the
whole pipeline including trace evaluation.  Degenerate constant-aperture
runs must collapse variants I and II-R onto each other.
"""

import dataclasses
import logging

import numpy as np
import pytest

from fracdg import assembly as asm
from fracdg import models
from fracdg.geometry import ApertureProfile


class TestVariantTable:
    def test_flag_table(self):
        rows = {
            "full": (False, False, False),
            "I": (False, True, True),
            "I-R": (True, True, False),
            "II": (False, False, True),
            "II-R": (True, False, False),
        }
        for name, flags in rows.items():
            v = models.ModelVariant.of(name)
            assert (v.uses_rectified_bulk,
                    v.gradient_terms_in_transport,
                    v.gradient_terms_in_coupling) == flags
            assert v.name == name
        assert models.ModelVariant.of("full").is_full
        assert not models.ModelVariant.of("I").is_full

    def test_passthrough_and_unknown(self):
        v = models.ModelVariant.of("II")
        assert models.ModelVariant.of(v) is v
        with pytest.raises(ValueError, match="unknown model"):
            models.ModelVariant.of("III")

    def test_transport_gating_matches_assembly_variants(self):
        # the assembler includes the wall-trace transport form exactly for
        # the variants whose flag says so
        for name in ("I", "I-R", "II", "II-R"):
            v = models.ModelVariant.of(name)
            assert (name in ("I", "I-R")) == v.gradient_terms_in_transport


class TestPresets:
    def test_perp_asym_data(self):
        p = models.preset_by_name("perp-asym", d0=0.1)
        np.testing.assert_allclose(p.k_f, 0.5 * np.eye(2))
        np.testing.assert_allclose(p.k1, np.eye(2))
        assert p.xi == pytest.approx(2.0 / 3.0)
        assert p.q is None and p.q_gamma is None
        assert p.profile.d1_fn(1.0 / 16.0) == pytest.approx(0.15)
        assert p.profile.d2_fn(1.0 / 16.0) == pytest.approx(0.05)
        x = np.array([[0.25, 0.7]])
        assert p.g(x)[0] == pytest.approx(0.75)
        gg = p.gamma_data()
        assert gg(0.37) == pytest.approx(0.5)

    def test_perp_sym_data(self):
        p = models.preset_by_name("perp-sym", d0=0.1)
        t = np.linspace(0.0, 1.0, 101)
        np.testing.assert_allclose(p.profile.d1_fn(t), p.profile.d2_fn(t))
        d = p.profile.d1_fn(t) + p.profile.d2_fn(t)
        assert d.min() == pytest.approx(0.1, abs=1e-3)
        assert d.max() == pytest.approx(0.3, abs=1e-3)
        np.testing.assert_allclose(p.gamma_reference(t), 0.5)

    def test_tangential_data(self):
        p = models.preset_by_name("tangential", d0=0.1)
        np.testing.assert_allclose(p.k_f, 2.0 * np.eye(2))
        gg = p.gamma_data()
        for t in (0.0, 0.25, 1.0):
            assert gg(t) == pytest.approx(1.0 - t, abs=1e-14)
        x = np.array([[0.5, 0.0], [0.5, 1.0], [0.0, 0.3]])
        np.testing.assert_allclose(p.g(x), [1.0, 0.0, 0.0], atol=1e-15)

    def test_manufactured_consistency(self):
        # source equals the negative Laplacian of the exact field
        p = models.preset_by_name("manufactured")
        assert p.exact_pressure is not None
        x = np.array([[0.3, 0.6]])
        eps = 1e-5
        lap = 0.0
        for dim in range(2):
            shift = np.zeros(2)
            shift[dim] = eps
            lap += (p.exact_pressure(x + shift)[0]
                    + p.exact_pressure(x - shift)[0]
                    - 2.0 * p.exact_pressure(x)[0]) / eps**2
        assert p.q(x)[0] == pytest.approx(-lap, rel=1e-4)
        np.testing.assert_allclose(p.g(x), p.exact_pressure(x))

    def test_unknown_preset(self):
        with pytest.raises(ValueError, match="unknown preset"):
            models.preset_by_name("tilted")

    def test_constant_aperture_preset(self):
        p = models.constant_aperture_preset(0.05)
        assert p.profile.is_constant
        assert p.name == "custom"


class TestMeshModeResolution:
    def test_auto(self):
        wavy = ApertureProfile.sinusoidal(0.1)
        flat = ApertureProfile.constant(0.05, 0.05)
        V = models.ModelVariant.of
        assert models.resolve_mesh_mode(V("I"), wavy) == "curved-reduced"
        assert models.resolve_mesh_mode(V("II"), wavy) == "curved-reduced"
        assert models.resolve_mesh_mode(V("I-R"), wavy) == "rectified"
        assert models.resolve_mesh_mode(V("II-R"), wavy) == "rectified"
        assert models.resolve_mesh_mode(V("II-R"), flat) == "curved-reduced"
        assert models.resolve_mesh_mode(V("I"), flat) == "curved-reduced"

    def test_explicit_and_invalid(self):
        wavy = ApertureProfile.sinusoidal(0.1)
        v = models.ModelVariant.of("I-R")
        assert models.resolve_mesh_mode(v, wavy, "rectified") == "rectified"
        with pytest.raises(ValueError, match="mesh mode"):
            models.resolve_mesh_mode(v, wavy, "flattened")


class TestRunFull:
    def test_no_contrast_recovers_linear_field(self):
        preset = models.constant_aperture_preset(0.05)
        sol = models.run_full(preset, 0.25)
        assert sol.report.converged
        assert sol.report.method == "CG"
        rng = np.random.default_rng(11)
        pts = rng.random((40, 2))
        np.testing.assert_allclose(sol.evaluate(pts), 1.0 - pts[:, 0],
                                   atol=1e-8)

    def test_evaluate_rejects_outside_points(self):
        preset = models.constant_aperture_preset(0.05)
        sol = models.run_full(preset, 0.25)
        with pytest.raises(ValueError, match="outside"):
            sol.evaluate(np.array([[1.4, 0.2]]))

    def test_variant_property(self):
        preset = models.constant_aperture_preset(0.05)
        sol = models.run_full(preset, 0.25)
        assert sol.variant.is_full


class TestRunReduced:
    def test_rejects_full_variant(self):
        preset = models.constant_aperture_preset()
        with pytest.raises(ValueError, match="run_full"):
            models.run_reduced(preset, "full", 0.25)

    def test_constant_aperture_exact_state(self):
        # no contrast: exact bulk pressure 1 - x1, midline pressure 1/2,
        # wall traces offset by the half-apertures
        preset = models.constant_aperture_preset(0.05)
        sol = models.run_reduced(preset, "I", 0.25)
        t = np.linspace(0.02, 0.98, 9)
        np.testing.assert_allclose(sol.evaluate_interface(t), 0.5,
                                   atol=1e-9)
        np.testing.assert_allclose(sol.wall_trace(1, t), 0.55, atol=1e-9)
        np.testing.assert_allclose(sol.wall_trace(2, t), 0.45, atol=1e-9)
        pts = np.array([[0.2, 0.3], [0.8, 0.9], [0.44, 0.5]])
        np.testing.assert_allclose(sol.evaluate_bulk(pts),
                                   1.0 - pts[:, 0], atol=1e-9)

    def test_constant_aperture_variants_agree(self):
        preset = models.constant_aperture_preset(0.05, k_f=0.5 * np.eye(2))
        sols = [models.run_reduced(preset, v, 0.25)
                for v in ("I", "II-R")]
        np.testing.assert_allclose(sols[0].bulk_coefficients,
                                   sols[1].bulk_coefficients, atol=1e-10)
        np.testing.assert_allclose(sols[0].iface_coefficients,
                                   sols[1].iface_coefficients, atol=1e-10)

    def test_reassembly_is_bit_identical(self):
        preset = models.preset_by_name("perp-asym", d0=0.1)
        sys1 = models.prepare_reduced(preset, "I", 0.25)[-1]
        sys2 = models.prepare_reduced(preset, "I", 0.25)[-1]
        a1, a2 = sys1.matrix.tocsr(), sys2.matrix.tocsr()
        assert np.array_equal(a1.data, a2.data)
        assert np.array_equal(a1.indices, a2.indices)
        assert np.array_equal(a1.indptr, a2.indptr)
        assert np.array_equal(sys1.rhs, sys2.rhs)

    def test_gap_points_rejected_for_wall_conforming_mesh(self):
        preset = models.constant_aperture_preset(0.05)
        sol = models.run_reduced(preset, "I", 0.25)
        with pytest.raises(ValueError, match="outside"):
            sol.evaluate_bulk(np.array([[0.5, 0.3]]))

    def test_perp_sym_interface_stays_near_half(self):
        preset = models.preset_by_name("perp-sym", d0=0.1)
        sol = models.run_reduced(preset, "I", 0.125)
        assert sol.wellposedness.satisfied
        t = np.linspace(0.01, 0.99, 33)
        dev = np.abs(sol.evaluate_interface(t) - 0.5).max()
        assert dev < 0.05

    def test_wellposedness_violation_warns(self, caplog):
        preset = models.preset_by_name("perp-sym", d0=0.2)
        with caplog.at_level(logging.WARNING, logger="fracdg.models"):
            sol = models.run_reduced(preset, "I", 0.25)
        assert not sol.wellposedness.satisfied
        assert any("wellposedness" in r.message for r in caplog.records)

    def test_min_max_sanity_band(self):
        # q = 0 and boundary data within [0, 1]: discrete fields stay
        # inside the data range up to a 5% overshoot
        preset = models.preset_by_name("perp-asym", d0=0.1)
        for variant in ("I", "II-R"):
            sol = models.run_reduced(preset, variant, 0.125)
            cent = sol.mesh.vertices[sol.mesh.elements].mean(axis=1)
            vals = sol.evaluate_bulk(cent)
            assert vals.min() > -0.05 and vals.max() < 1.05
            pg = sol.evaluate_interface(np.linspace(0.01, 0.99, 41))
            assert pg.min() > -0.05 and pg.max() < 1.05

    def test_explicit_rectified_mesh_with_wall_variant_fails(self):
        preset = models.preset_by_name("perp-asym", d0=0.1)
        with pytest.raises(ValueError, match="wall-conforming"):
            models.run_reduced(preset, "I", 0.25, mesh_mode="rectified")

    def test_solver_report_attached(self):
        preset = models.preset_by_name("perp-asym", d0=0.1)
        sol = models.run_reduced(preset, "II", 0.25)
        assert sol.report.method == "direct-LU"
        assert sol.report.relative_residual <= 1e-10


class TestEffectiveVelocity:
    def test_zero_for_flat_constant_state(self):
        preset = models.constant_aperture_preset(0.05)
        sol = models.run_reduced(preset, "II-R", 0.25)
        u = models.effective_velocity(sol, np.linspace(0.05, 0.95, 7))
        assert np.abs(u).max() < 1e-8

    def test_constant_aperture_linear_interface(self):
        # constant aperture: velocity reduces to -K d p', here with
        # p_gamma = t, d = 0.1 and tangential permeability 1
        preset = models.constant_aperture_preset(0.05)
        sol = models.run_reduced(preset, "II-R", 0.25)
        lin = asm.interpolate_interface(sol.grid, sol.iface_space,
                                        lambda t: np.asarray(t, float))
        sol = dataclasses.replace(sol, iface_coefficients=lin)
        u = models.effective_velocity(sol, np.array([0.3, 0.6]))
        np.testing.assert_allclose(u, [[0.0, -0.1], [0.0, -0.1]],
                                   atol=1e-10)

    def test_scalar_argument_shape(self):
        preset = models.constant_aperture_preset(0.05)
        sol = models.run_reduced(preset, "II-R", 0.25)
        u = models.effective_velocity(sol, 0.4)
        assert u.shape == (2,)

    def test_transport_flag_changes_velocity(self):
        preset = models.preset_by_name("perp-sym", d0=0.1)
        sol1 = models.run_reduced(preset, "I", 0.125)
        sol2 = dataclasses.replace(sol1,
                                   variant=models.ModelVariant.of("II"))
        t = np.linspace(0.05, 0.95, 11)
        u1 = models.effective_velocity(sol1, t)
        u2 = models.effective_velocity(sol2, t)
        assert np.abs(u1 - u2).max() > 1e-4
