import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spechom.errors import GeometryMismatchError, MaskError
from spechom.lattice import (
    Environment,
    Topology,
    apply_operator,
    axis_coordinates,
    builtin_checkerboard4,
    cell_average_axi,
    divergence_star,
    domain_extents,
    energy_average,
    environment_from_conductances,
    gradient,
    homogeneous_environment,
    local_drift,
    product_average,
    read_environment,
    tile_to_box,
    tile_to_torus,
    uniform_mask,
    unit_direction,
    write_environment,
)
from spechom.solver import exact_homogenized, solve_exact_corrector

from conftest import random_environment, random_field


E1 = np.array([1.0, 0.0])


class TestEnvironment:
    def test_bounds_validated(self):
        cond = np.full((2, 2, 2), 0.5)
        with pytest.raises(ValueError, match="escapes bounds"):
            Environment((2, 2), Topology.TORUS, cond, 1.0, 2.0)

    def test_bad_bounds_rejected(self):
        cond = np.ones((2, 2, 2))
        with pytest.raises(ValueError, match="alpha"):
            Environment((2, 2), Topology.TORUS, cond, 0.0, 1.0)
        with pytest.raises(ValueError, match="alpha"):
            Environment((2, 2), Topology.TORUS, cond, 2.0, 1.0)

    def test_shape_validated(self):
        with pytest.raises(ValueError, match="shape"):
            Environment((2, 3), Topology.TORUS, np.ones((2, 2, 2)), 1.0, 1.0)

    def test_conductances_frozen(self, env44):
        with pytest.raises(ValueError):
            env44.conductances[0, 0, 0] = 3.0

    def test_field_geometry_checked(self, env44):
        with pytest.raises(GeometryMismatchError):
            gradient(env44, np.zeros((3, 3)))
        with pytest.raises(GeometryMismatchError):
            divergence_star(env44, np.zeros((4, 4, 3)))


class TestGradient:
    def test_constant_field_on_torus(self, env44):
        g = gradient(env44, np.full((4, 4), 3.7))
        assert np.all(g == 0.0)

    def test_linear_ramp_wraps(self):
        env = homogeneous_environment((4, 4))
        x1 = np.arange(4.0)[:, None] * np.ones((1, 4))
        g = gradient(env, x1)
        expected = np.ones((4, 4))
        expected[3, :] = -3.0  # wrap seam
        assert np.array_equal(g[..., 0], expected)
        assert np.all(g[..., 1] == 0.0)

    def test_box_impulse_support(self):
        env = homogeneous_environment((5, 5), Topology.BOX)
        u = np.zeros((5, 5))
        u[2, 2] = 1.0
        g = gradient(env, u)
        assert np.count_nonzero(g) == 4  # 2d entries

    def test_finite_output(self, env44):
        g = gradient(env44, random_field(env44, 1))
        assert np.all(np.isfinite(g))


class TestDivergenceStar:
    def test_zero_field(self, env44):
        assert np.all(divergence_star(env44, np.zeros((4, 4, 2))) == 0.0)

    def test_telescoping_on_torus(self, env44):
        u = random_field(env44, 7)
        total = divergence_star(env44, gradient(env44, u)).sum()
        assert abs(total) < 1e-12 * np.abs(u).sum()

    def test_constant_flux_homogeneous(self):
        env = homogeneous_environment((4, 4), value=2.5)
        v = env.conductances * E1
        assert np.all(divergence_star(env, v) == 0.0)


class TestApplyOperator:
    def test_constant_field_scaled_by_mu(self, env44):
        out = apply_operator(env44, 0.7, np.full((4, 4), 2.0))
        assert np.allclose(out, 1.4, rtol=0, atol=1e-14)

    def test_reduces_to_graph_laplacian(self):
        env = homogeneous_environment((4, 4))
        u = random_field(env, 3)
        out = apply_operator(env, 0.0, u)
        lap = 4.0 * u
        for axis in range(2):
            lap -= np.roll(u, 1, axis=axis) + np.roll(u, -1, axis=axis)
        assert np.allclose(out, lap, rtol=1e-14, atol=1e-14)

    def test_negative_mu_rejected(self, env44):
        with pytest.raises(ValueError, match="mu"):
            apply_operator(env44, -0.1, np.zeros((4, 4)))

    def test_dense_matrix_symmetric_psd(self, env44):
        from conftest import dense_from_stencil

        mat = dense_from_stencil(env44, 0.0)
        assert np.allclose(mat, mat.T, rtol=0, atol=1e-12)
        eigenvalues, vectors = np.linalg.eigh(mat)
        assert eigenvalues[0] > -1e-12 * eigenvalues[-1]
        # kernel at mu=0 is the constants
        kernel = vectors[:, 0]
        assert np.allclose(kernel, kernel[0], rtol=0, atol=1e-10)

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_symmetry_of_quadratic_form(self, seed):
        env = random_environment((3, 4), seed)
        rng = np.random.default_rng(seed + 1)
        u = rng.standard_normal(env.extents)
        v = rng.standard_normal(env.extents)
        left = float(np.vdot(v, apply_operator(env, 0.3, u)))
        right = float(np.vdot(u, apply_operator(env, 0.3, v)))
        scale = max(abs(left), abs(right), 1e-30)
        assert abs(left - right) <= 1e-12 * scale


class TestAdjointness:
    @given(seed=st.integers(0, 2**32 - 1), dim=st.integers(1, 3))
    @settings(max_examples=25, deadline=None)
    def test_summation_by_parts(self, seed, dim):
        extents = (3, 4, 5)[:dim]
        env = random_environment(extents, seed)
        rng = np.random.default_rng(seed + 2)
        u = rng.standard_normal(env.extents)
        v = rng.standard_normal(env.extents + (dim,))
        left = float(np.vdot(v, gradient(env, u)))
        right = -float(np.vdot(divergence_star(env, v), u))
        assert abs(left - right) <= 1e-12 * max(abs(left), 1.0)

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_ellipticity(self, seed):
        env = random_environment((4, 4), seed, lo=1.5, hi=7.0)
        u = np.random.default_rng(seed).standard_normal(env.extents)
        g = gradient(env, u)
        energy = float(np.sum(g * env.conductances * g))
        grad_sq = float(np.vdot(g, g))
        assert env.alpha * grad_sq - 1e-10 <= energy <= env.beta * grad_sq + 1e-10


class TestLocalDrift:
    def test_homogeneous_vanishes(self):
        env = homogeneous_environment((4, 4), value=3.0)
        assert np.all(local_drift(env, E1) == 0.0)

    def test_torus_sums_to_zero(self, env44):
        drift = local_drift(env44, np.array([0.6, 0.8]))
        assert abs(drift.sum()) < 1e-12 * np.abs(drift).sum()

    def test_two_by_two_hand_values(self):
        # Horizontal conductances alternate along axis 1 / axis 0; the
        # drift in direction e1 is the backward difference along axis 0.
        cond = np.ones((2, 2, 2))
        cond[..., 0] = np.array([[1.0, 2.0], [1.0, 2.0]])
        env = environment_from_conductances(cond)
        assert np.array_equal(local_drift(env, E1), np.zeros((2, 2)))
        cond2 = np.ones((2, 2, 2))
        cond2[..., 0] = np.array([[1.0, 1.0], [2.0, 2.0]])
        env2 = environment_from_conductances(cond2)
        assert np.array_equal(
            local_drift(env2, E1), np.array([[-1.0, -1.0], [1.0, 1.0]])
        )

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_equals_divergence_of_constant_flux(self, seed):
        env = random_environment((4, 3), seed)
        xi = np.array([0.3, -1.2])
        v = env.conductances * xi
        assert np.array_equal(local_drift(env, xi), divergence_star(env, v))


class TestAverages:
    def test_energy_of_zero_fields_homogeneous(self):
        env = homogeneous_environment((4, 4), value=2.0)
        zero = np.zeros((4, 4))
        value = energy_average(env, E1, zero, zero, uniform_mask(env))
        assert value == pytest.approx(2.0, rel=1e-15)

    def test_product_mode_normalization(self, env44):
        ones = np.ones((4, 4))
        assert product_average(ones, ones, uniform_mask(env44)) == pytest.approx(
            1.0, rel=1e-14
        )

    def test_unnormalized_mask_rejected(self, env44):
        bad = np.full((4, 4), 0.9 / 16)
        zero = np.zeros((4, 4))
        with pytest.raises(MaskError, match="sums"):
            energy_average(env44, E1, zero, zero, bad)
        with pytest.raises(MaskError):
            product_average(zero, zero, bad)

    def test_negative_mask_rejected(self, env44):
        mask = uniform_mask(env44).copy()
        mask[0, 0] = -mask[0, 0]
        mask[1, 1] += 2 / 16
        with pytest.raises(MaskError, match="nonnegative"):
            energy_average(env44, E1, mask, mask, mask)

    def test_exact_corrector_energy_matches_ahom(self, env44):
        phi = solve_exact_corrector(env44, E1)
        energy = energy_average(env44, E1, phi, phi, uniform_mask(env44))
        assert energy == pytest.approx(exact_homogenized(env44, E1), rel=1e-13)


class TestGeometryHelpers:
    def test_axis_coordinates_torus_centered(self):
        env = homogeneous_environment((4,), Topology.TORUS)
        assert list(axis_coordinates(env)[0]) == [0, 1, -2, -1]

    def test_axis_coordinates_box_centered(self):
        env = homogeneous_environment((5,), Topology.BOX)
        assert list(axis_coordinates(env)[0]) == [-2, -1, 0, 1, 2]

    def test_domain_extents(self):
        assert domain_extents(homogeneous_environment((6, 6))) == (6, 6)
        assert domain_extents(homogeneous_environment((7, 7), Topology.BOX)) == (5, 5)

    def test_unit_direction(self):
        xi = unit_direction([3.0, 4.0], 2)
        assert np.allclose(xi, [0.6, 0.8])
        with pytest.raises(ValueError):
            unit_direction([0.0, 0.0], 2)
        with pytest.raises(ValueError):
            unit_direction([1.0], 2)

    def test_cell_average_axi(self, env44):
        expected = float(np.mean(env44.conductances[..., 0]))
        assert cell_average_axi(env44, E1) == pytest.approx(expected, rel=1e-15)


class TestTiling:
    def test_box_sees_periodic_medium(self):
        cell = builtin_checkerboard4()
        box = tile_to_box(cell, 9)
        assert box.extents == (11, 11)  # interior {-4..4} plus the shell
        coords = axis_coordinates(box)
        for i1, c1 in enumerate(coords[0]):
            for i2, c2 in enumerate(coords[1]):
                expected = cell.conductances[c1 % 4, c2 % 4]
                assert np.array_equal(box.conductances[i1, i2], expected)

    def test_torus_tiling_periodic(self):
        cell = builtin_checkerboard4()
        torus = tile_to_torus(cell, (8, 12))
        assert torus.extents == (8, 12)
        assert np.array_equal(torus.conductances[4:8, 0:4], cell.conductances)
        with pytest.raises(ValueError, match="multiple"):
            tile_to_torus(cell, (9, 8))

    def test_tiling_preserves_exact_coefficient(self):
        cell = builtin_checkerboard4()
        torus = tile_to_torus(cell, (8, 8))
        a_cell = exact_homogenized(cell, E1)
        a_big = exact_homogenized(torus, E1)
        assert a_big == pytest.approx(a_cell, rel=1e-11)


class TestTextFormat:
    def test_round_trip_bit_exact(self, tmp_path, env44):
        path = tmp_path / "env.txt"
        write_environment(env44, path)
        back = read_environment(path)
        assert back.extents == env44.extents
        assert back.topology == env44.topology
        assert back.alpha == env44.alpha and back.beta == env44.beta
        assert np.array_equal(back.conductances, env44.conductances)

    def test_header_format(self, tmp_path):
        env = homogeneous_environment((2, 3), Topology.BOX, value=1.5)
        path = tmp_path / "env.txt"
        write_environment(env, path)
        header = path.read_text().splitlines()[0]
        assert header == "2 2 3 box 1.5 1.5"

    def test_malformed_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("2 2 2 torus 1 2\n1 1\n")
        with pytest.raises(ValueError, match="site lines"):
            read_environment(path)
        path.write_text("nonsense\n")
        with pytest.raises(ValueError):
            read_environment(path)
