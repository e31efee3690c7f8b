import numpy as np
import pytest
from sklearn.base import clone

from stochrom import (
    ConstantControl,
    CosineControl,
    InferenceConfig,
    SdeOperatorInference,
    TimeGrid,
    TrainingRun,
    ZeroControl,
    assemble_cov_residuals,
    assemble_drift_dataset,
    factorize_diffusion,
    galerkin_project,
    infer_rom,
    infer_rom_from_ensembles,
    solve_diffusion_lsq,
    solve_drift_lsq,
)
from stochrom.inference import DriftDataset, khatri_rao_columns, merge_drift_datasets
from stochrom.moments import exact_moments, finite_difference_derivative

from helpers import random_stable_system, recovery_benchmark_runs


class TestKhatriRao:
    def test_columns_are_kron_products(self, rng):
        u = rng.standard_normal((2, 5))
        e = rng.standard_normal((3, 5))
        k = khatri_rao_columns(u, e)
        assert k.shape == (6, 5)
        for i in range(5):
            np.testing.assert_array_equal(k[:, i], np.kron(u[:, i], e[:, i]))

    def test_dataset_verifies_bilinear_block(self, rng):
        e = rng.standard_normal((2, 6))
        u = rng.standard_normal((1, 6))
        good = np.vstack([e, u, khatri_rao_columns(u, e)])
        DriftDataset(good, np.zeros((2, 6)), reduced_dim=2, input_dim=1)
        bad = good.copy()
        bad[-1, 0] += 0.5
        with pytest.raises(ValueError, match="Kronecker"):
            DriftDataset(bad, np.zeros((2, 6)), reduced_dim=2, input_dim=1)


class TestAssembleDriftDataset:
    def test_stationary_constant_data(self):
        grid = TimeGrid(4, 0.1)
        means = np.tile([2.0, -1.0], (5, 1))
        control = ConstantControl([3.0])
        ds = assemble_drift_dataset(means, control, grid, InferenceConfig())
        expected_col = np.array([2.0, -1.0, 3.0, 6.0, -3.0])
        for i in range(ds.num_columns):
            np.testing.assert_allclose(ds.data_matrix[:, i], expected_col)
        np.testing.assert_allclose(ds.rhs, 0.0, atol=1e-14)

    def test_zero_control_flagged(self):
        grid = TimeGrid(4, 0.1)
        means = np.linspace(0, 1, 5).reshape(-1, 1)
        with pytest.warns(UserWarning, match="rank"):
            ds = assemble_drift_dataset(means, ZeroControl(1), grid)
        assert np.count_nonzero(ds.data_matrix[1:]) == 0

    def test_linear_mean_gives_constant_rhs(self):
        grid = TimeGrid(6, 0.05)
        v = np.array([1.5, -0.5])
        means = np.outer(grid.times, v)
        ds = assemble_drift_dataset(means, ConstantControl([1.0]), grid)
        for i in range(ds.num_columns):
            np.testing.assert_allclose(ds.rhs[:, i], v, rtol=1e-12)

    def test_endpoint_dropping(self):
        grid = TimeGrid(5, 0.1)
        means = np.random.default_rng(0).standard_normal((6, 2))
        keep = assemble_drift_dataset(
            means, ConstantControl([1.0]), grid, InferenceConfig(drop_endpoint_rows=False)
        )
        drop = assemble_drift_dataset(
            means, ConstantControl([1.0]), grid, InferenceConfig(drop_endpoint_rows=True)
        )
        assert keep.num_columns == 6
        assert drop.num_columns == 4
        np.testing.assert_array_equal(drop.data_matrix, keep.data_matrix[:, 1:-1])

    def test_condition_number_logged(self, rng):
        grid = TimeGrid(10, 0.1)
        means = rng.standard_normal((11, 2))
        ds = assemble_drift_dataset(means, CosineControl(1.0, 2.0, 1.0), grid)
        assert np.isfinite(ds.condition_number)
        assert ds.condition_number >= 1.0


class TestSolveDriftLsq:
    def build_dataset(self, rng, r=3, m=1, cols=60, operators=None):
        e = rng.standard_normal((r, cols))
        u = rng.standard_normal((m, cols))
        d = np.vstack([e, u, khatri_rao_columns(u, e)])
        if operators is None:
            operators = rng.standard_normal((r, r + m + m * r))
        rhs = operators @ d
        return DriftDataset(d, rhs, reduced_dim=r, input_dim=m), operators

    def test_exact_recovery(self, rng):
        ds, true_ops = self.build_dataset(rng)
        sol = solve_drift_lsq(ds)
        est = np.hstack([sol.drift_linear, sol.drift_input, *sol.drift_bilinear])
        np.testing.assert_allclose(est, true_ops, rtol=1e-9)
        assert not sol.rank_deficient

    def test_zero_rhs_gives_zero_operators(self, rng):
        ds, _ = self.build_dataset(rng)
        ds = DriftDataset(ds.data_matrix, np.zeros_like(ds.rhs), 3, 1)
        for cfg in (InferenceConfig(), InferenceConfig(gamma1=0.5, gamma2=0.2)):
            sol = solve_drift_lsq(ds, cfg)
            np.testing.assert_allclose(sol.drift_linear, 0.0, atol=1e-12)
            np.testing.assert_allclose(sol.drift_input, 0.0, atol=1e-12)

    def test_tikhonov_matches_normal_equations_oracle(self, rng):
        r, m, cols = 3, 1, 51
        ds, _ = self.build_dataset(rng, r=r, m=m, cols=cols)
        gamma1, gamma2 = 0.1, 0.01
        sol = solve_drift_lsq(ds, InferenceConfig(gamma1=gamma1, gamma2=gamma2))
        est = np.hstack([sol.drift_linear, sol.drift_input, *sol.drift_bilinear])
        d = ds.data_matrix
        penalty = np.diag([gamma1] * (r + m) + [gamma2] * (m * r))
        oracle = ds.rhs @ d.T @ np.linalg.inv(d @ d.T + penalty)
        np.testing.assert_allclose(est, oracle, atol=1e-8)

    def test_rank_deficient_minimum_norm(self, rng):
        r, m = 2, 1
        e = np.zeros((r, 10))
        u = rng.standard_normal((m, 10))
        d = np.vstack([e, u, khatri_rao_columns(u, e)])
        ds = DriftDataset(d, np.zeros((r, 10)), r, m)
        with pytest.warns(UserWarning, match="rank deficient"):
            sol = solve_drift_lsq(ds)
        assert sol.rank_deficient
        assert np.isfinite(sol.residual_norm)

    def test_merge_concatenates_columns(self, rng):
        ds1, _ = self.build_dataset(rng, cols=10)
        ds2, _ = self.build_dataset(rng, cols=15)
        merged = merge_drift_datasets([ds1, ds2])
        assert merged.num_columns == 25
        np.testing.assert_array_equal(merged.data_matrix[:, :10], ds1.data_matrix)


class TestCovResiduals:
    def test_zero_covariances_zero_residuals(self):
        grid = TimeGrid(4, 0.1)
        covs = np.zeros((5, 2, 2))
        res = assemble_cov_residuals(
            covs, covs, np.eye(2), (np.zeros((2, 2)),), ConstantControl([1.0]), grid
        )
        assert res.shape == (3, 2, 2)
        assert np.count_nonzero(res) == 0

    def test_exact_trajectory_recovers_noise_covariance(self):
        system = random_stable_system(3, seed=2)
        grid = TimeGrid(20, 0.01)
        control = ConstantControl([0.4])
        from stochrom.moments import integrate_covariance_ode

        covs = integrate_covariance_ode(system, control, grid, substeps=10)
        inhom = system.noise_covariance()
        # exact derivatives straight from the governing dynamics
        dcovs = np.empty_like(covs)
        for i, t in enumerate(grid.times):
            psi = system.drift_state_matrix(control(t))
            dcovs[i] = psi @ covs[i] + covs[i] @ psi.T + inhom
        res = assemble_cov_residuals(
            covs,
            dcovs,
            system.drift_linear,
            system.drift_bilinear,
            control,
            grid,
        )
        for s in res:
            np.testing.assert_allclose(s, inhom, rtol=1e-9, atol=1e-12)

    def test_scalar_fd_residual_close_to_noise_variance(self):
        grid = TimeGrid(1000, 1e-3)
        covs = ((1.0 - np.exp(-2.0 * grid.times)) / 2.0).reshape(-1, 1, 1)
        dcovs = finite_difference_derivative(covs, grid.step_size).values
        res = assemble_cov_residuals(
            covs, dcovs, np.array([[-1.0]]), (np.zeros((1, 1)),), ZeroControl(1), grid
        )
        assert np.abs(res - 1.0).max() <= 1e-4

    def test_index_set_matches_drift_dataset(self):
        grid = TimeGrid(9, 0.1)
        covs = np.random.default_rng(0).standard_normal((10, 2, 2))
        covs = (covs + covs.transpose(0, 2, 1)) / 2
        dcovs = finite_difference_derivative(covs, grid.step_size).values
        kept = assemble_cov_residuals(
            covs, dcovs, np.eye(2), (np.zeros((2, 2)),), ZeroControl(1), grid,
            drop_endpoints=True,
        )
        full = assemble_cov_residuals(
            covs, dcovs, np.eye(2), (np.zeros((2, 2)),), ZeroControl(1), grid,
            drop_endpoints=False,
        )
        assert kept.shape[0] == 8 and full.shape[0] == 10
        np.testing.assert_array_equal(kept, full[1:-1])


class TestDiffusionLsq:
    def test_single_residual_returned(self, rng):
        s = rng.standard_normal((3, 3))
        np.testing.assert_array_equal(solve_diffusion_lsq([s]), s)

    def test_opposite_residuals_cancel(self, rng):
        s = rng.standard_normal((2, 2))
        np.testing.assert_allclose(solve_diffusion_lsq([s, -s]), 0.0, atol=1e-16)

    def test_matches_gradient_descent_oracle(self, rng):
        residuals = rng.standard_normal((5, 3, 3))
        closed = solve_diffusion_lsq(residuals)

        # iterative minimization of sum ||S_i - H||_F^2
        h = np.zeros((3, 3))
        lr = 0.05
        for _ in range(2000):
            grad = 2.0 * sum(h - s for s in residuals)
            h = h - lr * grad
        np.testing.assert_allclose(closed, h, atol=1e-6)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            solve_diffusion_lsq(np.zeros((0, 2, 2)))


class TestFactorizeDiffusion:
    def test_identity_keeps_full_dimension(self):
        fact = factorize_diffusion(np.eye(4))
        assert fact.noise_dim == 4
        np.testing.assert_allclose(fact.diffusion @ fact.diffusion.T, np.eye(4), atol=1e-12)
        np.testing.assert_array_equal(fact.noise_correlation, np.eye(4))

    def test_threshold_truncates_small_and_negative(self):
        fact = factorize_diffusion(np.diag([4.0, 0.002, -0.001]), truncation_fraction=1e-3)
        assert fact.noise_dim == 1
        np.testing.assert_allclose(np.abs(fact.diffusion[:, 0]), [2.0, 0.0, 0.0], atol=1e-14)
        assert fact.diffusion[0, 0] == 2.0  # sign convention
        assert sorted(fact.truncated_eigenvalues) == [-0.001, 0.002]

    def test_antisymmetric_part_discarded(self):
        fact = factorize_diffusion(np.array([[1.0, 0.2], [-0.2, 1.0]]))
        assert fact.noise_dim == 2
        np.testing.assert_allclose(fact.diffusion @ fact.diffusion.T, np.eye(2), atol=1e-12)

    def test_nonpositive_spectrum_gives_deterministic_model(self):
        with pytest.warns(UserWarning, match="deterministic"):
            fact = factorize_diffusion(-np.eye(3))
        assert fact.noise_dim == 0
        assert fact.diffusion.shape == (3, 0)
        assert fact.deterministic

    def test_reconstruction_matches_kept_spectrum_exactly(self, rng):
        h = rng.standard_normal((4, 4))
        fact = factorize_diffusion(h)
        sym = (h + h.T) / 2
        eigvals, eigvecs = np.linalg.eigh(sym)
        order = np.argsort(eigvals)[::-1]
        eigvals, eigvecs = eigvals[order], eigvecs[:, order]
        keep = eigvals > 1e-3 * eigvals[0]
        recon = (eigvecs[:, keep] * eigvals[keep]) @ eigvecs[:, keep].T
        np.testing.assert_allclose(
            fact.diffusion @ fact.diffusion.T, recon, atol=1e-12
        )


class TestInferRom:
    def test_exact_regime_recovery_small(self):
        system = random_stable_system(3, seed=5)
        grid = TimeGrid(500, 2e-3)
        runs = []
        for ctrl, seed in [
            (ConstantControl([0.7]), 1),
            (ConstantControl([-0.4]), 2),
            (ZeroControl(1), 3),
        ]:
            import dataclasses

            sys_i = dataclasses.replace(
                system, initial_mean=np.random.default_rng(seed).standard_normal(3)
            )
            runs.append(TrainingRun(exact_moments(sys_i, ctrl, grid, 10), ctrl))
        rom = infer_rom(runs, grid)
        np.testing.assert_allclose(rom.drift_linear, system.drift_linear, atol=5e-5)
        np.testing.assert_allclose(rom.drift_input, system.drift_input, atol=5e-5)
        np.testing.assert_allclose(
            rom.drift_bilinear[0], system.drift_bilinear[0], atol=5e-5
        )
        np.testing.assert_allclose(
            rom.diffusion @ rom.diffusion.T,
            system.noise_covariance(),
            atol=1e-5,
        )
        assert rom.noise_dim == 2

    def test_projector_consistency_under_rotation(self, rng):
        """Rotating the basis rotates coefficients but not lifted moments."""
        from stochrom import SeedPolicy, sample_ensemble

        system = random_stable_system(6, seed=12)
        grid = TimeGrid(200, 5e-3)
        policy = SeedPolicy(4)
        controls = [ConstantControl([0.8]), ConstantControl([-0.5]), ZeroControl(1)]
        ensembles = [
            sample_ensemble(system, ctrl, grid, 64, policy, f"rot-{i}")
            for i, ctrl in enumerate(controls)
        ]
        v = np.linalg.qr(rng.standard_normal((6, 3)))[0]
        q = np.linalg.qr(rng.standard_normal((3, 3)))[0]
        rom_v = infer_rom_from_ensembles(ensembles, controls, v)
        rom_vq = infer_rom_from_ensembles(ensembles, controls, v @ q)

        test_control = CosineControl(1.0, 3.0, grid.horizon)
        m_v = exact_moments(rom_v.to_system(), test_control, grid, 4)
        m_vq = exact_moments(rom_vq.to_system(), test_control, grid, 4)
        lifted_v = m_v.means @ v.T
        lifted_vq = m_vq.means @ (v @ q).T
        np.testing.assert_allclose(lifted_v, lifted_vq, atol=1e-8)
        cov_v = np.einsum("ij,tjk,lk->til", v, m_v.covariances, v)
        cov_vq = np.einsum(
            "ij,tjk,lk->til", v @ q, m_vq.covariances, v @ q
        )
        np.testing.assert_allclose(cov_v, cov_vq, atol=1e-8)

    def test_inconsistent_run_dimensions_rejected(self):
        grid = TimeGrid(4, 0.1)
        from stochrom.moments import MomentTrajectory

        t1 = MomentTrajectory(np.zeros((5, 2)), np.zeros((5, 2, 2)), grid)
        t2 = MomentTrajectory(np.zeros((5, 3)), np.zeros((5, 3, 3)), grid)
        runs = [
            TrainingRun(t1, ZeroControl(1)),
            TrainingRun(t2, ZeroControl(1)),
        ]
        with pytest.raises(ValueError, match="inconsistent"):
            infer_rom(runs, grid)

    def test_diagnostics_recorded(self):
        system = random_stable_system(2, seed=9)
        grid = TimeGrid(100, 0.01)
        runs = [
            TrainingRun(exact_moments(system, ConstantControl([0.5]), grid, 4),
                        ConstantControl([0.5])),
            TrainingRun(exact_moments(system, ConstantControl([-0.5]), grid, 4),
                        ConstantControl([-0.5])),
        ]
        rom = infer_rom(runs, grid, InferenceConfig(gamma1=0.01))
        diag = rom.diagnostics
        assert diag["gamma1"] == 0.01
        assert diag["num_runs"] == 2
        assert np.isfinite(diag["condition_number"])
        assert "drift_residual_norm" in diag


class TestEstimatorFacade:
    def test_fit_exposes_rom(self):
        system = random_stable_system(2, seed=3)
        grid = TimeGrid(200, 5e-3)
        runs = [
            TrainingRun(exact_moments(system, ConstantControl([0.6]), grid, 4),
                        ConstantControl([0.6])),
            TrainingRun(exact_moments(system, ZeroControl(1), grid, 4), ZeroControl(1)),
        ]
        est = SdeOperatorInference().fit(runs)
        assert est.rom_.reduced_dim == 2
        moments = est.predict_moments(ConstantControl([0.6]), grid,
                                      initial_mean=system.initial_mean)
        assert moments.means.shape == (201, 2)

    def test_sklearn_params(self):
        est = SdeOperatorInference(gamma1=0.5, truncation_fraction=1e-2)
        assert est.get_params()["gamma1"] == 0.5
        cloned = clone(est)
        assert cloned.get_params()["truncation_fraction"] == 1e-2

    def test_unfitted_predict_raises(self):
        with pytest.raises(RuntimeError, match="not fitted"):
            SdeOperatorInference().predict_moments(ZeroControl(1), TimeGrid(2, 0.1))


class TestRecoveryBenchmark:
    def test_shared_helper_builds_consistent_setup(self):
        system, controls, means = recovery_benchmark_runs()
        assert system.state_dim == 5
        assert len(controls) == len(means) == 4
