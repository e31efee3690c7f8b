import numpy as np
import pytest
from sklearn.base import clone

from stochrom import (
    PodBasis,
    ReductionBasis,
    SnapshotEnsemble,
    TimeGrid,
    basis_from_gram,
    build_moment_snapshot_matrix,
    build_state_snapshot_matrix,
    check_span_containment,
    compute_basis,
)
from stochrom.moments import MomentTrajectory
from stochrom.subspace import moment_column_weights, truncate_to_rank


def make_ensemble(states, step_size=0.1):
    states = np.asarray(states, dtype=float)
    return SnapshotEnsemble(
        states=states,
        grid=TimeGrid(states.shape[1] - 1, step_size),
        input_id="zero:m=1",
        seed_info={},
    )


class TestStateSnapshotMatrix:
    def test_single_path_two_times(self):
        states = np.array([[[1.0, 2.0], [3.0, 4.0]]])  # one path, two times
        snap = build_state_snapshot_matrix([make_ensemble(states)])
        np.testing.assert_array_equal(snap, [[1.0, 3.0], [2.0, 4.0]])

    def test_two_ensembles_documented_order(self):
        # order: (ensemble, time, path)
        e1 = make_ensemble(np.arange(8.0).reshape(2, 2, 2))
        e2 = make_ensemble(np.arange(8.0, 16.0).reshape(2, 2, 2))
        snap = build_state_snapshot_matrix([e1, e2])
        assert snap.shape == (2, 8)
        # first ensemble, time 0: paths 0 then 1
        np.testing.assert_array_equal(snap[:, 0], [0.0, 1.0])
        np.testing.assert_array_equal(snap[:, 1], [4.0, 5.0])
        # first ensemble, time 1
        np.testing.assert_array_equal(snap[:, 2], [2.0, 3.0])
        # second ensemble starts at column 4
        np.testing.assert_array_equal(snap[:, 4], [8.0, 9.0])

    def test_gram_matches_double_loop_oracle(self, rng):
        states = rng.standard_normal((5, 2, 3))
        snap = build_state_snapshot_matrix([make_ensemble(states)])
        cols = snap.shape[1]
        gram = np.empty((cols, cols))
        for i in range(cols):
            for j in range(cols):
                gram[i, j] = float(np.dot(snap[:, i], snap[:, j]))
        np.testing.assert_allclose(snap.T @ snap, gram, rtol=1e-12)

    def test_dimension_mismatch_rejected(self):
        e1 = make_ensemble(np.zeros((1, 2, 3)))
        e2 = make_ensemble(np.zeros((1, 2, 4)))
        with pytest.raises(ValueError, match="inconsistent"):
            build_state_snapshot_matrix([e1, e2])


class TestMomentSnapshotMatrix:
    def grid(self, steps):
        return TimeGrid(steps, 0.1)

    def test_zero_moments_zero_matrix(self):
        traj = MomentTrajectory(np.zeros((3, 2)), np.zeros((3, 2, 2)), self.grid(2))
        mat = build_moment_snapshot_matrix([traj])
        assert mat.shape == (2, 3 + 6)
        assert np.count_nonzero(mat) == 0

    def test_single_time_arrangement(self):
        means = np.array([[1.0, 0.0], [1.0, 0.0]])
        covs = np.stack([np.eye(2), np.eye(2)])
        traj = MomentTrajectory(means, covs, self.grid(1))
        mat = build_moment_snapshot_matrix([traj])
        # means block then covariance blocks
        np.testing.assert_array_equal(mat[:, :2], means.T)
        np.testing.assert_array_equal(mat[:, 2:4], np.eye(2))
        np.testing.assert_array_equal(mat[:, 4:6], np.eye(2))

    def test_zero_covariances_add_no_rank(self, rng):
        means = rng.standard_normal((4, 3))
        covs = np.zeros((4, 3, 3))
        traj = MomentTrajectory(means, covs, self.grid(3))
        mat = build_moment_snapshot_matrix([traj])
        assert np.linalg.matrix_rank(mat) == np.linalg.matrix_rank(means.T)


class TestComputeBasis:
    def test_identity_matrix_gives_standard_basis(self):
        basis = compute_basis(np.eye(4), 2)
        np.testing.assert_allclose(basis.matrix, np.eye(4)[:, :2], atol=1e-12)
        np.testing.assert_allclose(basis.singular_values, np.ones(4))

    def test_column_scaling_orders_directions(self):
        mat = np.diag([3.0, 1.0])
        basis = compute_basis(mat, 1)
        np.testing.assert_allclose(basis.matrix[:, 0], [1.0, 0.0], atol=1e-14)

    def test_eckart_young_energy(self, rng):
        mat = rng.standard_normal((6, 20))
        r = 3
        basis = compute_basis(mat, r)
        v = basis.matrix
        residual = np.linalg.norm(mat - v @ (v.T @ mat)) ** 2
        tail = np.sum(basis.singular_values[r:] ** 2)
        np.testing.assert_allclose(residual, tail, rtol=1e-9)

    def test_energy_identity(self, rng):
        mat = rng.standard_normal((5, 12))
        basis = compute_basis(mat, 2)
        np.testing.assert_allclose(
            np.linalg.norm(mat) ** 2, np.sum(basis.singular_values**2), rtol=1e-9
        )

    def test_sign_convention_deterministic(self, rng):
        mat = rng.standard_normal((6, 9))
        basis = compute_basis(mat, 4)
        for j in range(4):
            col = basis.matrix[:, j]
            assert col[np.argmax(np.abs(col))] > 0

    def test_rank_exceeded_warns(self, rng):
        u = rng.standard_normal((6, 2))
        mat = u @ rng.standard_normal((2, 10))  # rank 2
        with pytest.warns(UserWarning, match="numerical rank"):
            compute_basis(mat, 4)

    def test_r_out_of_bounds(self, rng):
        with pytest.raises(ValueError):
            compute_basis(rng.standard_normal((3, 5)), 0)
        with pytest.raises(ValueError):
            compute_basis(rng.standard_normal((3, 5)), 4)

    def test_permutation_invariance_of_projector(self, rng):
        mat = rng.standard_normal((7, 15))
        basis = compute_basis(mat, 3)
        perm = rng.permutation(15)
        basis_p = compute_basis(mat[:, perm], 3)
        p1 = basis.matrix @ basis.matrix.T
        p2 = basis_p.matrix @ basis_p.matrix.T
        np.testing.assert_allclose(p1, p2, atol=1e-10)

    def test_column_weights_emphasize_blocks(self):
        mat = np.array([[1.0, 0.0], [0.0, 2.0]])
        weights = np.array([10.0, 0.1])
        basis = compute_basis(mat, 1, column_weights=weights)
        np.testing.assert_allclose(basis.matrix[:, 0], [1.0, 0.0], atol=1e-12)

    def test_moment_column_weights_layout(self):
        w = moment_column_weights(3, 2, mean_scale=2.0, covariance_scale=0.5)
        assert w.shape == (3 + 9,)
        assert set(w[:3]) == {2.0}
        assert set(w[3:]) == {0.5}


class TestGramRoute:
    def test_matches_svd_route(self, rng):
        mat = rng.standard_normal((6, 40))
        direct = compute_basis(mat, 3)
        grammed = basis_from_gram(mat @ mat.T, 3)
        p1 = direct.matrix @ direct.matrix.T
        p2 = grammed.matrix @ grammed.matrix.T
        np.testing.assert_allclose(p1, p2, atol=1e-9)
        np.testing.assert_allclose(
            direct.singular_values, grammed.singular_values, rtol=1e-9, atol=1e-12
        )

    def test_rejects_nonsquare(self, rng):
        with pytest.raises(ValueError):
            basis_from_gram(rng.standard_normal((3, 4)), 1)


class TestSpanContainment:
    def test_self_containment(self, rng):
        basis = compute_basis(rng.standard_normal((6, 10)), 3)
        report = check_span_containment(basis, basis)
        np.testing.assert_allclose(report.residuals, 0.0, atol=1e-12)
        assert report.contained

    def test_orthogonal_direction_residual_one(self):
        outer = ReductionBasis(np.eye(4)[:, :2], np.array([2.0, 1.0]))
        inner = ReductionBasis(np.eye(4)[:, 3:4], np.array([1.0]))
        report = check_span_containment(inner, outer)
        np.testing.assert_allclose(report.residuals, [1.0], atol=1e-14)
        assert not report.contained

    def test_mean_subspace_contained_in_state_subspace(self, rng):
        # averaging is a column operation: mean columns live in the state span
        states = rng.standard_normal((8, 4, 6))
        ens = make_ensemble(states)
        snap = build_state_snapshot_matrix([ens])
        state_basis = compute_basis(snap, min(snap.shape))
        means = states.mean(axis=0).T  # (n, s+1)
        mean_basis = compute_basis(means, np.linalg.matrix_rank(means))
        mean_basis = truncate_to_rank(mean_basis)
        report = check_span_containment(mean_basis, state_basis, tol=1e-8)
        assert report.contained

    def test_row_dimension_mismatch(self):
        a = ReductionBasis(np.eye(3)[:, :1], np.array([1.0]))
        b = ReductionBasis(np.eye(4)[:, :1], np.array([1.0]))
        with pytest.raises(ValueError):
            check_span_containment(a, b)


class TestReductionBasis:
    def test_orthonormality_enforced(self):
        with pytest.raises(ValueError, match="orthonormal"):
            ReductionBasis(np.ones((3, 2)), np.array([1.0, 0.5]))

    def test_descending_singular_values_enforced(self):
        with pytest.raises(ValueError, match="descending"):
            ReductionBasis(np.eye(3)[:, :1], np.array([1.0, 2.0]))

    def test_truncated(self):
        basis = ReductionBasis(np.eye(4)[:, :3], np.array([3.0, 2.0, 1.0, 0.0]))
        smaller = basis.truncated(2)
        assert smaller.dim == 2
        np.testing.assert_array_equal(smaller.singular_values, basis.singular_values)

    def test_numerical_rank(self):
        basis = ReductionBasis(
            np.eye(4)[:, :2], np.array([1.0, 1e-5, 1e-12, 0.0])
        )
        assert basis.numerical_rank() == 2


class TestPodBasisEstimator:
    def test_fit_transform_inverse(self, rng):
        mat = rng.standard_normal((6, 30))
        pod = PodBasis(num_vectors=2).fit(mat)
        reduced = pod.transform(mat)
        assert reduced.shape == (2, 30)
        lifted = pod.inverse_transform(reduced)
        assert lifted.shape == mat.shape
        # projection property: transform of lifted data is unchanged
        np.testing.assert_allclose(pod.transform(lifted), reduced, atol=1e-12)

    def test_get_params_and_clone(self):
        pod = PodBasis(num_vectors=3, rank_tol=1e-8)
        params = pod.get_params()
        assert params["num_vectors"] == 3
        cloned = clone(pod)
        assert cloned.get_params()["rank_tol"] == 1e-8

    def test_unfitted_raises(self):
        with pytest.raises(RuntimeError, match="not fitted"):
            PodBasis().transform(np.eye(2))

    def test_fit_from_gram(self, rng):
        mat = rng.standard_normal((5, 25))
        a = PodBasis(num_vectors=2).fit(mat)
        b = PodBasis(num_vectors=2).fit_from_gram(mat @ mat.T)
        np.testing.assert_allclose(
            a.basis_.matrix @ a.basis_.matrix.T,
            b.basis_.matrix @ b.basis_.matrix.T,
            atol=1e-9,
        )
