import numpy as np
import pytest

import cgmix.cg_filter as cgf
import cgmix.simulate as sim
from cgmix.kde import solve_bandwidth_1d

from _linear import linear_spec, ou_pair_spec, scalar_riccati_spec


def make_path(spec, seed, dt, t_end, L=1):
    init = sim.InitialCondition.gaussian(
        np.zeros(spec.n_total), np.full(spec.n_total, 0.25)
    )
    return sim.simulate_ensemble(spec, init, L=L, dt=dt, t_end=t_end, seed=seed)


def textbook_kalman_bucy(F, H, Q, R_obs, c, d, uI, dt, m0, P0):
    """Continuous-time Kalman-Bucy equations stepped with forward Euler.

    State: dm = (F m + c) dt + K (dz - (H m + d) dt), K = P H' R^{-1}
    Cov:   dP = (F P + P F' + Q - K R K') dt
    Written in standard filter notation, independent of the production code.
    """
    m = np.array(m0, dtype=float)
    P = np.array(P0, dtype=float)
    R_inv = np.linalg.inv(R_obs)
    means = [m.copy()]
    covs = [P.copy()]
    for k in range(uI.shape[0] - 1):
        dz = uI[k + 1] - uI[k]
        K = P @ H.T @ R_inv
        m = m + (F @ m + c) * dt + K @ (dz - (H @ m + d) * dt)
        P = P + (F @ P + P @ F.T + Q - K @ R_obs @ K.T) * dt
        means.append(m.copy())
        covs.append(P.copy())
    return np.array(means), np.array(covs)


class TestRiccati:
    def test_scalar_fixed_point(self):
        spec = scalar_riccati_spec()
        paths = make_path(spec, seed=1, dt=1e-3, t_end=20.0)
        snaps = cgf.run_filter_ensemble(
            spec,
            paths,
            np.zeros((1, 1)),
            np.array([[[0.3]]]),
            snapshot_times=[20.0],
        )
        target = np.sqrt(2.0) - 1.0
        assert abs(snaps.covs[0, 0, 0, 0] - target) < 1e-8

    def test_decoupled_cov_reaches_half_identity(self):
        # no coupling to the observations: plain Lyapunov relaxation to I/2
        spec = linear_spec(
            "decoupled",
            [[0.0]],
            np.zeros((1, 2)),
            np.zeros((2, 1)),
            -np.eye(2),
            [[1.0]],
            np.eye(2),
        )
        paths = make_path(spec, seed=2, dt=1e-3, t_end=15.0)
        snaps = cgf.run_filter_ensemble(
            spec, paths, np.zeros((1, 2)), np.array([np.diag([0.9, 0.1])]), [15.0]
        )
        assert np.allclose(snaps.covs[0, 0], 0.5 * np.eye(2), atol=1e-7)

    def test_frozen_covariance(self):
        spec = linear_spec(
            "frozen", [[-1.0]], [[0.0]], [[0.0]], [[0.0]], [[1.0]], [[0.0]]
        )
        paths = make_path(spec, seed=3, dt=1e-3, t_end=1.0)
        start = np.array([[[0.37]]])
        snaps = cgf.run_filter_ensemble(spec, paths, np.zeros((1, 1)), start, [1.0])
        assert snaps.covs[0, 0, 0, 0] == pytest.approx(0.37, abs=1e-14)

    def test_path_independence_of_covariance(self):
        spec = scalar_riccati_spec()
        covs = []
        for seed in (4, 5):
            paths = make_path(spec, seed=seed, dt=1e-3, t_end=5.0)
            snaps = cgf.run_filter_ensemble(
                spec, paths, np.zeros((1, 1)), np.array([[[0.2]]]), [2.5, 5.0]
            )
            covs.append(snaps.covs)
        assert np.allclose(covs[0], covs[1], atol=1e-13)

    def test_initial_covariance_is_forgotten(self):
        spec = scalar_riccati_spec()
        paths = make_path(spec, seed=6, dt=1e-3, t_end=10.0)
        ends = []
        for eps in (1e-6, 1e-2):
            snaps = cgf.run_filter_ensemble(
                spec, paths, np.zeros((1, 1)), np.array([[[eps]]]), [10.0]
            )
            ends.append(snaps.covs[0, 0, 0, 0])
        assert abs(ends[0] - ends[1]) < 1e-6


class TestAgainstKalmanOracle:
    def test_constant_coefficient_two_hidden(self):
        from _linear import full_linear_3d

        spec, F_full, noise = full_linear_3d()
        dt = 1e-3
        paths = make_path(spec, seed=8, dt=dt, t_end=10.0)
        m0 = np.array([0.2, -0.1])
        P0 = np.array([[0.5, 0.1], [0.1, 0.4]])
        snaps = cgf.run_filter_ensemble(
            spec, paths, m0[None, :], P0[None, :, :], [2.0, 10.0]
        )

        F = F_full[1:, 1:]
        c_mat = F_full[1:, :1]
        H = F_full[:1, 1:]
        A = F_full[:1, :1]
        Q = np.diag(noise[1:] ** 2)
        R_obs = np.array([[noise[0] ** 2]])
        uI = paths.uI_paths[0]
        # observed-state-dependent offsets enter through the path
        m, P = np.array(m0), np.array(P0)
        R_inv = np.linalg.inv(R_obs)
        store = {}
        for k in range(uI.shape[0] - 1):
            t = paths.times[k]
            dz = uI[k + 1] - uI[k]
            K = P @ H.T @ R_inv
            c = (c_mat @ uI[k]).ravel()
            d = (A @ uI[k]).ravel()
            m = m + (F @ m + c) * dt + K @ (dz - (H @ m + d) * dt)
            P = P + (F @ P + P @ F.T + Q - K @ R_obs @ K.T) * dt
            for t_want in (2.0, 10.0):
                if abs((t + dt) - t_want) < dt / 2:
                    store[t_want] = (m.copy(), P.copy())
        for s, t_want in enumerate((2.0, 10.0)):
            m_ref, P_ref = store[t_want]
            assert np.allclose(snaps.means[s, 0], m_ref, atol=1e-6)
            assert np.allclose(snaps.covs[s, 0], P_ref, atol=1e-6)

    def test_scalar_oracle_helper(self):
        spec = scalar_riccati_spec()
        dt = 1e-3
        paths = make_path(spec, seed=9, dt=dt, t_end=10.0)
        snaps = cgf.run_filter_ensemble(
            spec, paths, np.array([[0.1]]), np.array([[[0.3]]]), [10.0]
        )
        means, covs = textbook_kalman_bucy(
            F=np.array([[-1.0]]),
            H=np.array([[1.0]]),
            Q=np.array([[1.0]]),
            R_obs=np.array([[1.0]]),
            c=np.zeros(1),
            d=np.zeros(1),
            uI=paths.uI_paths[0],
            dt=dt,
            m0=np.array([0.1]),
            P0=np.array([[0.3]]),
        )
        assert abs(snaps.means[0, 0, 0] - means[-1, 0]) < 1e-6
        assert abs(snaps.covs[0, 0, 0, 0] - covs[-1, 0, 0]) < 1e-6


class TestStepMechanics:
    def test_single_step_matches_batch(self):
        spec = scalar_riccati_spec()
        state = cgf.ConditionalGaussianState(np.array([0.2]), np.array([[0.4]]), 0.0)
        out = cgf.filter_step(spec, state, 0.0, np.array([0.5]), np.array([0.01]), 1e-2)
        assert out.t == pytest.approx(1e-2)
        assert np.isfinite(out.mean).all()
        assert out.cov[0, 0] > 0

    def test_symmetry_and_psd(self):
        spec = linear_spec(
            "skewed",
            [[0.0]],
            [[2.0, -1.0]],
            np.zeros((2, 1)),
            [[-0.5, 3.0], [-3.0, -0.5]],
            [[0.7]],
            np.diag([0.5, 0.2]),
        )
        paths = make_path(spec, seed=10, dt=1e-3, t_end=3.0)
        snaps = cgf.run_filter_ensemble(
            spec, paths, np.zeros((1, 2)), np.array([np.eye(2)]), [1.0, 3.0]
        )
        for s in range(2):
            C = snaps.covs[s, 0]
            assert np.array_equal(C, C.T)
            assert np.linalg.eigvalsh(C)[0] >= 0
        assert snaps.max_clamp_violation < 1e-8

    def test_singular_observation_noise_rejected(self):
        spec = linear_spec(
            "singular", [[0.0]], [[1.0]], [[0.0]], [[-1.0]], [[0.0]], [[1.0]]
        )
        paths = make_path(spec, seed=11, dt=1e-2, t_end=0.1)
        with pytest.raises(ValueError, match="singular"):
            cgf.run_filter_ensemble(
                spec, paths, np.zeros((1, 1)), np.array([[[0.1]]]), [0.1]
            )

    def test_state_validation(self):
        with pytest.raises(ValueError, match="symmetric"):
            cgf.ConditionalGaussianState(
                np.zeros(2), np.array([[1.0, 0.5], [-0.5, 1.0]]), 0.0
            )
        with pytest.raises(ValueError, match="eigenvalue"):
            cgf.ConditionalGaussianState(
                np.zeros(2), np.array([[1.0, 0.0], [0.0, -0.5]]), 0.0
            )
        state = cgf.ConditionalGaussianState(np.zeros(1), np.array([[0.2]]), 0.5)
        assert state.cov.shape == (1, 1)

    def test_run_filter_wrapper(self):
        spec = scalar_riccati_spec()
        paths = make_path(spec, seed=12, dt=1e-3, t_end=2.0)
        init = cgf.ConditionalGaussianState(np.array([0.0]), np.array([[0.2]]), 0.0)
        states = cgf.run_filter(spec, paths.uI_paths[0], paths.times, init, [1.0, 2.0])
        snaps = cgf.run_filter_ensemble(
            spec, paths, np.zeros((1, 1)), np.array([[[0.2]]]), [1.0, 2.0]
        )
        for s, st in enumerate(states):
            assert np.allclose(st.mean, snaps.means[s, 0], atol=1e-14)
            assert np.allclose(st.cov, snaps.covs[s, 0], atol=1e-14)
        assert cgf.run_filter(spec, paths.uI_paths[0], paths.times, init, []) == []

    def test_thinning(self):
        spec = scalar_riccati_spec()
        paths = make_path(spec, seed=13, dt=5e-4, t_end=4.0)
        full = cgf.run_filter_ensemble(
            spec, paths, np.zeros((1, 1)), np.array([[[0.2]]]), [4.0]
        )
        thin = cgf.run_filter_ensemble(
            spec, paths, np.zeros((1, 1)), np.array([[[0.2]]]), [4.0], thin=4
        )
        # covariance approaches the same fixed point, coarser but close
        assert abs(full.covs[0, 0, 0, 0] - thin.covs[0, 0, 0, 0]) < 1e-3
        with pytest.raises(ValueError, match="thinned"):
            cgf.run_filter_ensemble(
                spec, paths, np.zeros((1, 1)), np.array([[[0.2]]]), [4.0 - 5e-4], thin=4
            )


class TestInitStates:
    def test_point_mode_explicit_epsilon(self):
        means, covs = cgf.init_states(
            np.array([[1.0, 2.0]]), cgf.FilterInit("point_with_epsilon", 1e-4)
        )
        assert np.allclose(means, [[1.0, 2.0]])
        assert np.allclose(covs[0], np.diag([1e-4, 1e-4]))

    def test_point_mode_default_scales_with_spread(self, rng):
        samples = np.column_stack([rng.normal(0, 10, 400), rng.normal(0, 0.1, 400)])
        _, covs = cgf.init_states(samples, cgf.FilterInit("point_with_epsilon"))
        diag = covs[0].diagonal()
        assert diag[0] == pytest.approx(1e-4 * samples[:, 0].var(), rel=1e-12)
        assert diag[1] >= 1e-6

    def test_kde_mode_matches_bandwidth_rule(self, rng):
        samples = rng.standard_normal((500, 2))
        means, covs = cgf.init_states(samples, cgf.FilterInit("kde_diagonal"))
        assert np.array_equal(means, samples)
        for j in range(2):
            h = solve_bandwidth_1d(samples[:, j])
            assert covs[0, j, j] == pytest.approx(h**2, rel=1e-12)

    def test_kde_mode_degenerate_fallback(self):
        samples = np.array([[1.0, 2.0]])  # single member
        _, covs = cgf.init_states(samples, cgf.FilterInit("kde_diagonal"))
        assert np.allclose(covs[0], np.diag([1e-6, 1e-6]))
        flat = np.column_stack([np.full(50, 3.0), np.linspace(0, 1, 50)])
        _, covs = cgf.init_states(flat, cgf.FilterInit("kde_diagonal"))
        assert covs[0, 0, 0] == pytest.approx(1e-6)  # constant dimension
        assert covs[0, 1, 1] > 1e-6  # spread dimension uses its bandwidth

    def test_validation(self):
        with pytest.raises(ValueError):
            cgf.FilterInit("bogus")
        with pytest.raises(ValueError):
            cgf.FilterInit("point_with_epsilon", -1.0)


def test_clamp_violations_negligible_for_builtin_models():
    """Explicit stepping may graze indefiniteness; it must stay at rounding
    scale for every built-in model at its default step."""
    from cgmix.models import build_model

    cases = [
        ("l63", 1e-3, [0.0, 0.0, 0.0], [1.0, 1.0, 1.0]),
        ("climate4d", 1e-3, [0.0] * 4, [0.1] * 4),
        ("triad3:I", 1e-3, [0.5, 1.0, 1.0], [0.1] * 3),
        ("triad3:III", 5e-4, [0.5, 1.0, 1.0], [0.1] * 3),
        ("turb6d", 1e-3, [0.0] * 6, [0.01] * 6),
    ]
    for mid, dt, mean, var in cases:
        spec = build_model(mid)
        init = sim.InitialCondition.gaussian(mean, var)
        paths = sim.simulate_ensemble(spec, init, L=50, dt=dt, t_end=0.5, seed=17)
        means0, covs0 = cgf.init_states(
            paths.uII_samples[:, 0, :], cgf.FilterInit("kde_diagonal")
        )
        snaps = cgf.run_filter_ensemble(spec, paths, means0, covs0, [0.5])
        assert snaps.max_clamp_violation < 1e-8, mid


def test_snapshot_json_roundtrip(tmp_path):
    spec = ou_pair_spec()
    paths = make_path(spec, seed=14, dt=1e-2, t_end=0.5)
    snaps = cgf.run_filter_ensemble(
        spec, paths, np.zeros((1, 1)), np.array([[[0.3]]]), [0.25, 0.5]
    )
    target = tmp_path / "states.json"
    cgf.save_states(snaps, target)
    loaded = cgf.load_states(target)
    assert np.allclose(loaded.times, snaps.times)
    assert np.allclose(loaded.means, snaps.means, atol=1e-15)
    assert np.allclose(loaded.covs, snaps.covs, atol=1e-15)
