import numpy as np
import pytest

from spechom.errors import ConvergenceError
from spechom.lattice import (
    Topology,
    apply_operator,
    environment_from_conductances,
    homogeneous_environment,
    local_drift,
    tile_to_box,
    uniform_mask,
    energy_average,
)
from spechom.scheme import estimate
from spechom.solver import (
    Preconditioner,
    SolveConfig,
    _pcg,
    _pin_shell,
    exact_homogenized,
    solve_corrector_set,
    solve_exact_corrector,
    solve_modified_corrector,
)

from conftest import (
    dense_dirichlet_from_stencil,
    dense_from_stencil,
    random_environment,
)

E1 = np.array([1.0, 0.0])


class TestSolveConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            SolveConfig(rel_tolerance=0.0)
        with pytest.raises(ValueError):
            SolveConfig(rel_tolerance=1.5)
        with pytest.raises(ValueError):
            SolveConfig(max_iterations=0)

    def test_default_iteration_cap(self):
        assert SolveConfig().iteration_cap(10000) == 50 * 100 + 1000
        assert SolveConfig(max_iterations=7).iteration_cap(10000) == 7


class TestModifiedCorrector:
    def test_homogeneous_gives_zero(self):
        env = homogeneous_environment((6, 6), value=2.0)
        phi = solve_modified_corrector(env, 0.5, E1)
        assert np.all(phi == 0.0)

    def test_residual_contract(self, env44):
        drift = local_drift(env44, E1)
        phi = solve_modified_corrector(env44, 0.1, E1)
        residual = apply_operator(env44, 0.1, phi) - drift
        assert np.linalg.norm(residual) <= 1e-12 * np.linalg.norm(drift)

    def test_matches_dense_direct_solve(self, env44):
        mat = dense_from_stencil(env44, 0.1)
        drift = local_drift(env44, E1)
        reference = np.linalg.solve(mat, drift.ravel()).reshape(env44.extents)
        phi = solve_modified_corrector(env44, 0.1, E1)
        assert np.linalg.norm(phi - reference) <= 1e-10 * np.linalg.norm(reference)

    def test_box_matches_dense_dirichlet_solve(self):
        env = random_environment((7, 7), seed=5, topology=Topology.BOX)
        mat, idx = dense_dirichlet_from_stencil(env, 0.2)
        drift = _pin_shell(env, local_drift(env, E1)).ravel()
        reference = np.zeros(env.nsites)
        reference[idx] = np.linalg.solve(mat, drift[idx])
        phi = solve_modified_corrector(env, 0.2, E1)
        assert np.linalg.norm(phi.ravel() - reference) <= 1e-10 * np.linalg.norm(reference)

    def test_box_shell_stays_zero(self):
        env = random_environment((6, 6), seed=9, topology=Topology.BOX)
        phi = solve_modified_corrector(env, 0.3, E1)
        assert np.all(phi[0, :] == 0.0) and np.all(phi[-1, :] == 0.0)
        assert np.all(phi[:, 0] == 0.0) and np.all(phi[:, -1] == 0.0)

    def test_invalid_mu(self, env44):
        with pytest.raises(ValueError, match="mu"):
            solve_modified_corrector(env44, 0.0, E1)

    def test_nonconvergence_reports_residual(self, env44):
        config = SolveConfig(rel_tolerance=1e-12, max_iterations=2)
        with pytest.raises(ConvergenceError) as exc:
            solve_modified_corrector(env44, 1e-6, E1, config)
        assert exc.value.residual > 0
        assert exc.value.iterations == 2
        assert "level 0" in str(exc.value)

    def test_no_preconditioner_agrees(self, env44):
        plain = SolveConfig(preconditioner=Preconditioner.NONE)
        a = solve_modified_corrector(env44, 0.1, E1, plain)
        b = solve_modified_corrector(env44, 0.1, E1)
        assert np.linalg.norm(a - b) <= 1e-9 * np.linalg.norm(b)


class TestCorrectorSet:
    def test_k1_equals_single_solve(self, env44):
        single = solve_modified_corrector(env44, 0.2, E1)
        ladder = solve_corrector_set(env44, 0.2, 1, E1)
        assert np.array_equal(single, ladder.fields[0])

    def test_level_one_solves_doubled_mu(self, env44):
        ladder = solve_corrector_set(env44, 0.2, 3, E1)
        direct = solve_modified_corrector(env44, 0.4, E1)
        assert np.linalg.norm(ladder.fields[1] - direct) <= 1e-9 * np.linalg.norm(direct)

    def test_residuals_within_tolerance(self, env44):
        ladder = solve_corrector_set(env44, 0.05, 4, E1)
        drift = local_drift(env44, E1)
        for i, phi in enumerate(ladder.fields):
            res = apply_operator(env44, 0.05 * 2**i, phi) - drift
            assert np.linalg.norm(res) <= 1e-12 * np.linalg.norm(drift)
        assert max(ladder.residuals) <= 1e-12

    def test_resolvent_chain_identity(self, env44):
        # c_1/mu * (phi_mu - phi_2mu) solves (mu+L) u = phi_2mu.
        mu = 0.3
        ladder = solve_corrector_set(env44, mu, 2, E1)
        chained = (ladder.fields[0] - ladder.fields[1]) / mu
        residual = apply_operator(env44, mu, chained) - ladder.fields[1]
        drift_norm = np.linalg.norm(local_drift(env44, E1))
        assert np.linalg.norm(residual) <= 10 * 1e-12 * drift_norm

    def test_truncated_and_shifted(self, env44):
        ladder = solve_corrector_set(env44, 0.1, 3, E1)
        head = ladder.truncated(2)
        assert head.k == 2 and head.mu == 0.1
        tail = ladder.shifted(1)
        assert tail.k == 2 and tail.mu == pytest.approx(0.2)
        assert np.array_equal(tail.fields[0], ladder.fields[1])
        with pytest.raises(ValueError):
            ladder.truncated(4)
        with pytest.raises(ValueError):
            ladder.shifted(3)

    def test_invalid_k(self, env44):
        with pytest.raises(ValueError, match="k"):
            solve_corrector_set(env44, 0.1, 0, E1)


class TestExactHomogenized:
    def test_homogeneous_cell(self):
        env = homogeneous_environment((5, 5), value=2.5)
        assert exact_homogenized(env, E1) == pytest.approx(2.5, rel=1e-14)

    def test_layered_harmonic_mean(self):
        # Layers stacked along axis 1; conductance across layers depends
        # only on the layer index, so the exact coefficient in e2 is the
        # harmonic mean of the per-layer values (series resistors).
        vertical = np.array([1.0, 4.0, 2.0, 8.0])
        cond = np.empty((4, 4, 2))
        cond[..., 0] = 3.0
        cond[..., 1] = vertical[None, :] * np.ones((4, 1))
        env = environment_from_conductances(cond)
        harmonic = 4.0 / np.sum(1.0 / vertical)
        value = exact_homogenized(env, np.array([0.0, 1.0]))
        assert value == pytest.approx(harmonic, rel=1e-12)

    def test_matches_dense_least_squares(self, env44):
        mat = dense_from_stencil(env44, 0.0)
        drift = local_drift(env44, E1).ravel()
        reference, *_ = np.linalg.lstsq(mat, drift, rcond=None)
        phi = reference.reshape(env44.extents)
        energy = energy_average(env44, E1, phi, phi, uniform_mask(env44))
        assert exact_homogenized(env44, E1) == pytest.approx(energy, rel=1e-12)

    def test_bounds(self):
        for seed in range(5):
            env = random_environment((4, 4), seed=seed, lo=2.0, hi=9.0)
            value = exact_homogenized(env, E1)
            assert 2.0 - 1e-10 <= value <= 9.0 + 1e-10

    def test_box_rejected(self):
        env = homogeneous_environment((5, 5), Topology.BOX)
        with pytest.raises(ValueError, match="torus"):
            exact_homogenized(env, E1)

    def test_corrector_is_mean_zero(self, env44):
        phi = solve_exact_corrector(env44, E1)
        assert abs(phi.mean()) <= 1e-12 * np.abs(phi).max()


class TestMuMonotonicity:
    def test_k1_decreases_to_ahom(self, env44):
        ahom = exact_homogenized(env44, E1)
        values = [
            estimate(env44, mu, 1, E1).value for mu in (0.4, 0.2, 0.1, 0.05, 0.025)
        ]
        assert all(v >= ahom - 1e-12 for v in values)
        assert all(a >= b - 1e-13 for a, b in zip(values, values[1:]))
        assert values[-1] - ahom < values[0] - ahom


class TestDirichletVsPeriodic:
    def test_box_estimate_approaches_torus_value(self):
        cell = random_environment((4, 4), seed=12, lo=1.0, hi=4.0)
        mu = 0.4
        torus_value = estimate(cell, mu, 1, E1).value
        gaps = []
        for cells in (4, 8, 16):
            box = tile_to_box(cell, 4 * cells)
            rep = estimate(box, mu, 1, E1, length=4 * cells / 3.0)
            gaps.append(abs(rep.value - torus_value))
        assert gaps[-1] < gaps[0]
        assert gaps[-1] < 1e-4 * abs(torus_value)


class TestPcgInternals:
    def test_residual_history_non_increasing(self, env44):
        drift = local_drift(env44, E1)
        _, _, _, history = _pcg(
            lambda v: apply_operator(env44, 0.01, v),
            drift,
            None,
            1e-13 * np.linalg.norm(drift),
            5000,
            None,
            project=False,
        )
        assert all(a >= b for a, b in zip(history, history[1:]))

    def test_zero_rhs_short_circuits(self, env44):
        x, res, iters, _ = _pcg(
            lambda v: apply_operator(env44, 0.1, v),
            np.zeros(env44.extents),
            None,
            0.0,
            100,
            None,
            project=False,
        )
        assert np.all(x == 0.0) and res == 0.0 and iters == 0
