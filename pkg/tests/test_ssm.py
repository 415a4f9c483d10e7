import logging

import numpy as np
import pytest

from models.ssm import (
    COVARIANCE_FLOOR,
    GaussianBelief,
    InitialBelief,
    SsmParams,
    _floor_covariance,
    em_fit,
    em_fit_full,
    kalman_filter,
    kalman_smooth,
    kalman_summary,
    log_likelihood,
    predict_step,
    simulate,
    stationary_initial,
    update_step,
)
from utils.errors import InputError, NumericError

DEFAULT = SsmParams.scalar(A=1.0, C=1.0, Q=1.0, R=5.0)


def joint_posteriors(ys, A, C, Q, R, mu0, s0):
    """Filtered and smoothed moments of a scalar model by conditioning the full joint Gaussian."""
    T = len(ys)
    # z_t = A^t z_0 + sum_{s<=t} A^(t-s) w_s over u = (z_0, w_1..w_T)
    L = np.zeros((T, T + 1))
    for t in range(1, T + 1):
        L[t - 1, 0] = A ** t
        for s in range(1, t + 1):
            L[t - 1, s] = A ** (t - s)
    cov_u = np.diag([s0] + [Q] * T)
    mean_u = np.array([mu0] + [0.0] * T)
    mz, Szz = L @ mean_u, L @ cov_u @ L.T
    my, Syy, Szy = C * mz, C * C * Szz + R * np.eye(T), C * Szz

    def condition(k):
        gain = Szy[:, :k] @ np.linalg.inv(Syy[:k, :k])
        return mz + gain @ (ys[:k] - my[:k]), Szz - gain @ Szy[:, :k].T

    filtered = [condition(t) for t in range(1, T + 1)]
    f_means = np.array([filtered[t][0][t] for t in range(T)])
    f_vars = np.array([filtered[t][1][t, t] for t in range(T)])
    s_mean, s_cov = condition(T)
    return f_means, f_vars, s_mean, np.diag(s_cov)


class TestParams:
    def test_scalar_defaults(self):
        params = SsmParams.scalar()
        assert params.n == params.m == 1
        assert params.as_dict() == {"A": [[1.0]], "C": [[1.0]], "Q": [[1.0]], "R": [[5.0]]}

    @pytest.mark.parametrize("kwargs", [{"Q": -1.0}, {"R": -0.5}])
    def test_negative_variance_rejected(self, kwargs):
        with pytest.raises(InputError):
            SsmParams.scalar(**kwargs)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(InputError):
            SsmParams(A=np.eye(2), C=np.ones((1, 3)), Q=np.eye(2), R=[[1.0]])

    def test_asymmetric_covariance_rejected(self):
        with pytest.raises(InputError):
            SsmParams(A=np.eye(2), C=np.eye(2), Q=[[1.0, 0.5], [0.0, 1.0]], R=np.eye(2))

    def test_arrays_are_read_only(self):
        with pytest.raises(ValueError):
            DEFAULT.A[0, 0] = 3.0

    def test_replace(self):
        assert DEFAULT.replace(A=[[2.0]]).A[0, 0] == 2.0
        assert DEFAULT.A[0, 0] == 1.0


class TestFilter:
    def test_hand_trace(self):
        result = kalman_filter([2.0, 4.0], DEFAULT, InitialBelief(mean=[2.0], cov=[[2.0]]))
        means = [b.mean[0] for b in result.beliefs]
        covs = [b.cov[0, 0] for b in result.beliefs]
        assert means == pytest.approx([2.0, 172 / 63], abs=1e-9)
        assert covs == pytest.approx([1.875, 115 / 63], abs=1e-9)
        assert result.stats[0].gain[0, 0] == pytest.approx(0.375)
        assert result.stats[1].innovation_cov[0, 0] == pytest.approx(7.875)
        assert result.stats[1].residual[0] == pytest.approx(2.0)

    def test_log_likelihood_is_innovation_form(self):
        ll = log_likelihood([2.0, 4.0], DEFAULT, InitialBelief(mean=[2.0], cov=[[2.0]]))
        expected = -0.5 * (np.log(2 * np.pi * 8.0)) - 0.5 * (np.log(2 * np.pi * 7.875) + 4.0 / 7.875)
        assert ll == pytest.approx(expected, abs=1e-12)

    def test_predict_then_update_matches_filter(self):
        init = InitialBelief(mean=[1.0], cov=[[0.5]])
        belief, _ = update_step(predict_step(init, DEFAULT), 3.0, DEFAULT, step=1)
        assert belief.mean == pytest.approx(kalman_filter([3.0], DEFAULT, init).beliefs[0].mean)

    def test_tiny_observation_noise_tracks_observations(self):
        ys = np.array([1.0, 5.0, -2.0, 0.5, 7.0])
        params = SsmParams.scalar(Q=1.0, R=1e-12)
        means, _ = kalman_summary(ys, params, InitialBelief.from_first_observation(ys[0]), "filter")
        assert means[:, 0] == pytest.approx(ys, abs=1e-8)

    def test_covariances_stay_psd(self, rng):
        ys = rng.normal(0, 10, size=50)
        result = kalman_filter(ys, SsmParams.scalar(A=0.7, Q=0.01, R=100.0), InitialBelief(mean=[0.0], cov=[[1.0]]))
        assert all(b.cov[0, 0] >= 0 for b in result.beliefs)

    def test_singular_innovation_reports_step(self):
        params = SsmParams.scalar(Q=0.0, R=0.0)
        with pytest.raises(NumericError) as excinfo:
            kalman_filter([1.0, 2.0], params, InitialBelief(mean=[0.0], cov=[[0.0]]))
        assert excinfo.value.step == 1
        assert "t=1" in str(excinfo.value)

    @pytest.mark.parametrize("ys", [[], [1.0, float("nan")], [[1.0, 2.0]]])
    def test_bad_observations(self, ys):
        with pytest.raises(InputError):
            kalman_filter(ys, DEFAULT, InitialBelief(mean=[0.0], cov=[[1.0]]))

    def test_belief_dimension_checked(self):
        with pytest.raises(InputError):
            kalman_filter([1.0], DEFAULT, InitialBelief(mean=[0.0, 0.0], cov=np.eye(2)))


class TestSmoother:
    def test_hand_trace(self):
        result = kalman_smooth([2.0, 4.0], DEFAULT, InitialBelief(mean=[2.0], cov=[[2.0]]))
        assert [b.mean[0] for b in result.smoothed] == pytest.approx([156 / 63, 172 / 63], abs=1e-9)
        assert len(result.gains) == 1
        assert result.gains[0].gain[0, 0] == pytest.approx(1.875 / 2.875, abs=1e-12)

    def test_last_step_equals_filter(self, rng):
        ys = rng.normal(size=12)
        init = InitialBelief(mean=[0.0], cov=[[2.0]])
        filtered = kalman_filter(ys, DEFAULT, init).beliefs[-1]
        smoothed = kalman_smooth(ys, DEFAULT, init).smoothed[-1]
        assert smoothed.mean == pytest.approx(filtered.mean)
        assert smoothed.cov == pytest.approx(filtered.cov)

    def test_single_step(self):
        init = InitialBelief(mean=[1.0], cov=[[2.0]])
        result = kalman_smooth([3.0], DEFAULT, init)
        assert result.gains == []
        assert result.smoothed[0].mean == pytest.approx(kalman_filter([3.0], DEFAULT, init).beliefs[0].mean)

    def test_smoothed_variance_never_exceeds_filtered(self, rng):
        for _ in range(20):
            ys = rng.normal(0, 3, size=rng.integers(2, 15))
            init = InitialBelief(mean=[ys[0]], cov=[[2.0]])
            f_vars, s_vars = [
                np.array([b.cov[0, 0] for b in beliefs])
                for beliefs in (kalman_filter(ys, DEFAULT, init).beliefs, kalman_smooth(ys, DEFAULT, init).smoothed)
            ]
            assert np.all(s_vars <= f_vars + 1e-12)

    def test_smoothing_reduces_total_variation_of_noise(self, rng):
        reduced = 0
        for _ in range(100):
            ys = rng.normal(5.0, np.sqrt(5.0), size=30)
            means, _ = kalman_summary(ys, DEFAULT, InitialBelief.from_first_observation(ys[0]))
            reduced += np.abs(np.diff(means[:, 0])).sum() < np.abs(np.diff(ys)).sum()
        assert reduced == 100

    def test_summary_shapes_multivariate(self, rng):
        params = SsmParams(A=[[1.0, 1.0], [0.0, 1.0]], C=[[1.0, 0.0]], Q=0.1 * np.eye(2), R=[[2.0]])
        means, stds = kalman_summary(rng.normal(size=8), params, GaussianBelief(mean=[0.0, 0.0], cov=np.eye(2)))
        assert means.shape == stds.shape == (8, 2)
        assert np.all(stds > 0)

    def test_unknown_method(self):
        with pytest.raises(InputError):
            kalman_summary([1.0], DEFAULT, InitialBelief(mean=[0.0], cov=[[1.0]]), "forward")

    def test_constant_latent_gives_constant_means(self):
        ys = [1.0, 2.0, 0.5]
        params = SsmParams.scalar(A=1.0, Q=0.0, R=5.0)
        result = kalman_smooth(ys, params, InitialBelief(mean=[0.0], cov=[[2.0]]))
        expected = (sum(ys) / 5.0) / (1 / 2.0 + len(ys) / 5.0)
        assert [b.mean[0] for b in result.smoothed] == pytest.approx([expected] * 3, abs=1e-9)

    def test_covariances_symmetric_multivariate(self, rng):
        params = SsmParams(
            A=[[0.9, 0.2, 0.0], [0.0, 0.8, 0.1], [0.05, 0.0, 0.7]],
            C=[[1.0, 0.0, 0.5], [0.0, 1.0, -0.3]],
            Q=[[0.3, 0.1, 0.0], [0.1, 0.2, 0.05], [0.0, 0.05, 0.4]],
            R=[[1.0, 0.2], [0.2, 0.5]],
        )
        ys = rng.normal(size=(40, 2))
        init = InitialBelief(mean=np.zeros(3), cov=np.eye(3))
        beliefs = kalman_filter(ys, params, init).beliefs + kalman_smooth(ys, params, init).smoothed
        assert max(np.max(np.abs(b.cov - b.cov.T)) for b in beliefs) <= 1e-9
        assert all(np.all(np.diag(b.cov) >= 0) for b in beliefs)


class TestJointGaussianEquivalence:
    def test_random_small_problems(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            T = int(rng.integers(1, 5))
            A = rng.uniform(-1.5, 1.5)
            C = rng.uniform(0.5, 2.0) * rng.choice([-1.0, 1.0])
            Q, R, s0 = rng.uniform(0.1, 3.0), rng.uniform(0.1, 5.0), rng.uniform(0.1, 3.0)
            mu0 = rng.normal(0.0, 2.0)
            ys = rng.normal(0.0, 3.0, size=T)
            params = SsmParams.scalar(A=A, C=C, Q=Q, R=R)
            init = InitialBelief(mean=[mu0], cov=[[s0]])

            f_means, f_vars, s_means, s_vars = joint_posteriors(ys, A, C, Q, R, mu0, s0)
            filtered = kalman_filter(ys, params, init).beliefs
            smoothed = kalman_smooth(ys, params, init).smoothed
            assert [b.mean[0] for b in filtered] == pytest.approx(f_means, abs=1e-8)
            assert [b.cov[0, 0] for b in filtered] == pytest.approx(f_vars, abs=1e-8)
            assert [b.mean[0] for b in smoothed] == pytest.approx(s_means, abs=1e-8)
            assert [b.cov[0, 0] for b in smoothed] == pytest.approx(s_vars, abs=1e-8)


class TestEm:
    def _sequences(self, rng, count=10, length=25):
        params = SsmParams.scalar(A=0.8, Q=1.0, R=2.0)
        init = InitialBelief(mean=[3.0], cov=[[1.0]])
        return [
            (simulate(params, init, length, int(seed))[1][:, 0], init)
            for seed in rng.integers(0, 2 ** 31, size=count)
        ]

    def test_zero_iterations(self, rng):
        fitted, trace = em_fit(self._sequences(rng, 3), DEFAULT, n_iter=0)
        assert all(np.array_equal(getattr(fitted, name), getattr(DEFAULT, name)) for name in "ACQR")
        assert len(trace) == 1

    def test_trace_is_non_decreasing(self, rng):
        for which in ({"A", "C", "Q", "R"}, {"Q", "R"}, {"A"}, {"C", "R"}):
            _, trace = em_fit(self._sequences(rng), DEFAULT, n_iter=15, which=which)
            assert len(trace) == 16
            assert np.all(np.diff(trace) >= -1e-8)

    def test_length_one_sequences(self, rng):
        sequences = [(np.array([y]), InitialBelief(mean=[0.0], cov=[[2.0]])) for y in rng.normal(0, 2, size=20)]
        _, trace = em_fit(sequences, DEFAULT, n_iter=5, which={"Q", "R"})
        assert np.all(np.isfinite(trace))
        assert np.all(np.diff(trace) >= -1e-8)

    def test_unselected_parameters_untouched(self, rng):
        fitted, _ = em_fit(self._sequences(rng), DEFAULT, n_iter=5, which={"Q"})
        assert fitted.A[0, 0] == 1.0 and fitted.C[0, 0] == 1.0 and fitted.R[0, 0] == 5.0
        assert fitted.Q[0, 0] != 1.0

    def test_unknown_parameter(self, rng):
        with pytest.raises(InputError):
            em_fit(self._sequences(rng, 2), DEFAULT, which={"B"})

    def test_no_sequences(self):
        with pytest.raises(InputError):
            em_fit([], DEFAULT)

    def test_initial_beliefs_frozen_by_default(self, rng):
        sequences = self._sequences(rng, 3)
        result = em_fit_full(sequences, DEFAULT, n_iter=3)
        assert [b.mean[0] for b in result.initial_beliefs] == [init.mean[0] for _, init in sequences]

    def test_initial_beliefs_updated_on_request(self, rng):
        sequences = self._sequences(rng, 3)
        result = em_fit_full(sequences, DEFAULT, n_iter=3, update_initial=True)
        assert [b.mean[0] for b in result.initial_beliefs] != [init.mean[0] for _, init in sequences]
        assert np.all(np.diff(result.loglik_trace) >= -1e-8)

    def test_parallel_e_step_matches_serial(self, rng):
        sequences = self._sequences(rng, 4)
        serial, serial_trace = em_fit(sequences, DEFAULT, n_iter=3)
        parallel, parallel_trace = em_fit(sequences, DEFAULT, n_iter=3, n_jobs=2)
        assert parallel.A == pytest.approx(serial.A)
        assert parallel_trace == pytest.approx(serial_trace)

    def test_floor_degenerate_covariance(self, caplog):
        with caplog.at_level(logging.WARNING, logger="emotion_dynamics"):
            floored = _floor_covariance(np.array([[-1e-4]]), "R")
        assert floored[0, 0] == pytest.approx(COVARIANCE_FLOOR)
        assert "degenerate R" in caplog.text


class TestSimulation:
    def test_reproducible(self):
        init = InitialBelief(mean=[0.0], cov=[[1.0]])
        z1, y1 = simulate(DEFAULT, init, 10, seed=3)
        z2, y2 = simulate(DEFAULT, init, 10, seed=3)
        assert z1.shape == y1.shape == (10, 1)
        assert np.array_equal(z1, z2) and np.array_equal(y1, y2)

    def test_observation_noise_variance(self):
        params = SsmParams.scalar(A=0.9, C=1.0, Q=0.5, R=2.0)
        z, y = simulate(params, stationary_initial(params), 100_000, seed=5)
        assert np.var(y - z @ params.C.T) == pytest.approx(2.0, rel=0.05)

    def test_noise_free_is_fixed_point(self):
        params = SsmParams.scalar(A=1.0, C=1.0, Q=0.0, R=0.0)
        z, y = simulate(params, InitialBelief(mean=[3.0], cov=[[0.0]]), 20, seed=1)
        assert np.all(z == 3.0) and np.all(y == 3.0)

    def test_stationary_initial(self):
        belief = stationary_initial(SsmParams.scalar(A=0.9, Q=0.5))
        assert belief.mean[0] == 0.0
        assert belief.cov[0, 0] == pytest.approx(0.5 / (1 - 0.81))

    def test_stationary_needs_stable_dynamics(self):
        with pytest.raises(InputError):
            stationary_initial(DEFAULT)

    def test_invalid_length(self):
        with pytest.raises(InputError):
            simulate(DEFAULT, InitialBelief(mean=[0.0], cov=[[1.0]]), 0, seed=1)
