import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afdmsim.channel import DelayDopplerProfile, SparsityModel, apply_channel, sample_gains, sample_profile
from afdmsim.daft import AfdmParams, add_prefix, daft, idaft, remove_prefix
from afdmsim.errors import ConfigurationError, InfeasibleTargetError
from afdmsim.estimator import (
    AfdmTrialConfig,
    build_measurement_matrix,
    calibrate_pilot_count,
    expected_mse,
    incoherent_slots,
    max_pilots,
    mmse_estimate,
    place_pilots,
    qpsk,
    reconstruct_taps,
    run_afdm_trial,
    snr_to_noise,
)

from conftest import random_frame


def posterior_mean(y, A, s_a, s_w):
    """Gaussian conditional mean written in observation space."""
    cov_yy = s_a * A @ A.conj().T + s_w * np.eye(A.shape[0])
    return s_a * A.conj().T @ np.linalg.solve(cov_yy, y)


def received_pilots(x, scheme, channel, params):
    rx = apply_channel(add_prefix(idaft(x, params), params), channel, params)
    return daft(remove_prefix(rx, params), params)[scheme.observation_set]


class TestPlacement:
    def test_single_pilot_window(self, small_model, small_params):
        s = place_pilots(small_params, small_model, 1)
        W = (small_model.L - 1) * small_params.P + 2 * small_model.Q + 1
        assert s.observation_set.size == W == s.window

    def test_sets_partition_frame(self, small_model, small_params):
        s = place_pilots(small_params, small_model, 3)
        parts = np.concatenate([s.pilot_indices, s.guard_zero_indices, s.data_indices])
        np.testing.assert_array_equal(np.sort(parts), np.arange(small_params.N))

    def test_data_stays_outside_guard_zones(self, small_model, small_params):
        s = place_pilots(small_params, small_model, 4)
        W = s.window
        for p in s.pilot_indices:
            dist = np.abs((s.data_indices - p + small_params.N // 2) % small_params.N - small_params.N // 2)
            assert dist.min() >= W

    def test_zone_energy_keeps_frame_energy(self, small_model, small_params):
        s = place_pilots(small_params, small_model, 2)
        energy = np.sum(np.abs(s.pilot_values) ** 2) + s.data_indices.size
        assert energy == pytest.approx(small_params.N, abs=2 * (2 * s.window - 1))
        assert np.abs(s.pilot_values[0]) ** 2 == pytest.approx(2 * s.window - 1)

    @pytest.mark.parametrize("energy,value", [("unit", 1.0), ("window", 8.0), (4.0, 4.0)])
    def test_energy_options(self, small_model, small_params, energy, value):
        s = place_pilots(small_params, small_model, 1, pilot_energy=energy)
        assert np.abs(s.pilot_values[0]) ** 2 == pytest.approx(value)

    def test_random_phases(self, small_model, small_params, rng):
        s = place_pilots(small_params, small_model, 3, rng=rng)
        assert not np.allclose(np.angle(s.pilot_values), 0)
        np.testing.assert_allclose(np.abs(s.pilot_values), np.sqrt(2 * s.window - 1))

    def test_too_many_pilots(self, small_model, small_params):
        G = max_pilots(small_params, small_model)
        place_pilots(small_params, small_model, G)
        with pytest.raises(ConfigurationError, match="maximum feasible M"):
            place_pilots(small_params, small_model, G + 1)

    def test_even_spacing(self, small_model, small_params):
        s = place_pilots(small_params, small_model, 4, spacing="even")
        np.testing.assert_array_equal(s.pilot_indices, [0, 64, 128, 192])
        with pytest.raises(ConfigurationError):
            place_pilots(small_params, small_model, 1, spacing="bogus")

    def test_incoherent_selection_is_nested(self):
        slots = np.arange(40) * 10
        a = incoherent_slots(40, slots, 5, 400, 6)
        b = incoherent_slots(40, slots, 8, 400, 6)
        np.testing.assert_array_equal(a, b[:5])
        assert len(set(b)) == 8

    def test_even_spacing_aliases_delays(self):
        # two paths on one DAFT bin with delays M apart are indistinguishable
        params = AfdmParams(64, P=1, L_cpp=4)
        model = SparsityModel("type1", L=5, Q=2, p_d=0.5, p_D=0.5)
        grid = np.zeros((5, 5), dtype=bool)
        grid[0, 2 + 2] = True
        grid[2, 2 + 0] = True
        prof = DelayDopplerProfile(grid)
        even = build_measurement_matrix(place_pilots(params, model, 2, spacing="even"), prof, params)
        inc = build_measurement_matrix(place_pilots(params, model, 2), prof, params)
        assert np.linalg.matrix_rank(even.entries) == 1
        assert np.linalg.matrix_rank(inc.entries) == 2


class TestMeasurementModel:
    @pytest.mark.parametrize("N", [64, 256])
    def test_keystone(self, N, rng):
        model = SparsityModel("type2", L=4, Q=2, p_d=0.7, p_D=0.5)
        for P in (1, 2):
            params = AfdmParams(N, P=P, L_cpp=3)
            prof = sample_profile(model, rng)
            if prof.n_active == 0:
                continue
            ch = sample_gains(prof, model, rng)
            s = place_pilots(params, model, 1 + N // 256)
            y = received_pilots(s.pilot_frame(), s, ch, params)
            Mp = build_measurement_matrix(s, prof, params)
            assert np.linalg.norm(y - Mp.entries @ ch.gains) <= 1e-8 * np.linalg.norm(y)

    def test_data_does_not_reach_observations(self, rng, small_model, small_params):
        prof = DelayDopplerProfile(np.ones((4, 5), dtype=bool))
        ch = sample_gains(prof, small_model, rng)
        s = place_pilots(small_params, small_model, 2)
        x = s.pilot_frame()
        y0 = received_pilots(x, s, ch, small_params)
        x[s.data_indices] = qpsk(rng, s.data_indices.size)
        y1 = received_pilots(x, s, ch, small_params)
        np.testing.assert_allclose(y1, y0, atol=1e-10)

    def test_columns_follow_profile_order(self, small_model, small_params):
        grid = np.zeros((4, 5), dtype=bool)
        grid[1, 0] = grid[3, 4] = True
        Mp = build_measurement_matrix(place_pilots(small_params, small_model, 1), DelayDopplerProfile(grid), small_params)
        np.testing.assert_array_equal(Mp.delays, [1, 3])
        np.testing.assert_array_equal(Mp.dopplers, [-2, 2])
        assert Mp.shape == (8, 2)

    def test_empty_profile_rejected(self, small_model, small_params):
        with pytest.raises(ConfigurationError):
            build_measurement_matrix(
                place_pilots(small_params, small_model, 1), DelayDopplerProfile(np.zeros((4, 5), bool)), small_params
            )


class TestMmse:
    def test_matches_posterior_mean(self, rng):
        for _ in range(20):
            n, m = rng.integers(1, 7), rng.integers(6, 41)
            A = random_frame(rng, m, n)
            y = random_frame(rng, m)
            s_a, s_w = rng.uniform(0.1, 2), rng.uniform(0.01, 1)
            est = mmse_estimate(y, A, s_a, s_w)
            np.testing.assert_allclose(est.alpha_hat, posterior_mean(y, A, s_a, s_w), atol=1e-8)

    def test_error_covariance_trace(self, rng):
        A = random_frame(rng, 12, 4)
        est = mmse_estimate(np.zeros(12), A, 0.5, 0.1)
        assert est.expected_mse == pytest.approx(expected_mse(A, 0.5, 0.1))

    def test_empirical_mse_matches_expectation(self, rng):
        A = random_frame(rng, 10, 4)
        s_a, s_w = 0.5, 0.2
        errs = []
        for _ in range(4000):
            a = np.sqrt(s_a / 2) * random_frame(rng, 4)
            y = A @ a + np.sqrt(s_w / 2) * random_frame(rng, 10)
            errs.append(mmse_estimate(y, A, s_a, s_w, a).mse)
        assert np.mean(errs) == pytest.approx(expected_mse(A, s_a, s_w), rel=0.06)

    def test_noiseless_full_rank_is_exact(self, rng):
        A = random_frame(rng, 8, 3)
        a = random_frame(rng, 3)
        est = mmse_estimate(A @ a, A, 1.0, 0.0, a)
        assert est.mse < 1e-20 and not est.used_pinv

    def test_noiseless_rank_deficient_uses_pinv(self, rng):
        A = random_frame(rng, 8, 2)
        A = np.hstack([A, A[:, :1]])
        est = mmse_estimate(A @ np.ones(3), A, 1.0, 0.0)
        assert est.rank_deficient and est.used_pinv
        np.testing.assert_allclose(A @ est.alpha_hat, A @ np.ones(3), atol=1e-10)
        assert expected_mse(A, 1.0, 0.0) == pytest.approx(1.0)

    def test_length_mismatch(self, rng):
        with pytest.raises(ConfigurationError):
            mmse_estimate(np.zeros(3), random_frame(rng, 4, 2), 1.0, 0.1)


class TestCalibration:
    def test_search_matches_direct_construction(self, rng):
        model = SparsityModel("type1", L=6, Q=2, p_d=0.5, p_D=0.5)
        params = AfdmParams(512, P=1, L_cpp=5)
        prof = sample_profile(model, rng)
        while prof.n_active == 0:
            prof = sample_profile(model, rng)
        M = calibrate_pilot_count(1e-3, 20, model, params, prof)
        mse = expected_mse(
            build_measurement_matrix(place_pilots(params, model, M), prof, params), model.sigma_alpha_sq, 0.01
        )
        assert mse <= 1e-3
        if M > 1:
            prev = build_measurement_matrix(place_pilots(params, model, M - 1), prof, params)
            assert expected_mse(prev, model.sigma_alpha_sq, 0.01) > 1e-3

    def test_monte_carlo_calibration_is_seeded(self):
        model = SparsityModel("type1", L=6, Q=2, p_d=0.5, p_D=0.5)
        params = AfdmParams(512, P=1, L_cpp=5)
        prof = DelayDopplerProfile(np.ones((6, 5), dtype=bool))
        a = calibrate_pilot_count(1e-2, 20, model, params, prof, trials=20, rng=np.random.default_rng(4))
        b = calibrate_pilot_count(1e-2, 20, model, params, prof, trials=20, rng=np.random.default_rng(4))
        assert a == b >= 5

    def test_infeasible_target(self):
        model = SparsityModel("type1", L=6, Q=2, p_d=0.5, p_D=0.5)
        params = AfdmParams(128, P=1, L_cpp=5)
        prof = DelayDopplerProfile(np.ones((6, 5), dtype=bool))
        with pytest.raises(InfeasibleTargetError) as info:
            calibrate_pilot_count(1e-9, 0, model, params, prof)
        assert info.value.best_M >= 1 and info.value.best_mse > 1e-9

    def test_empty_profile_needs_no_pilots(self, small_model, small_params):
        prof = DelayDopplerProfile(np.zeros((4, 5), dtype=bool))
        assert calibrate_pilot_count(1e-3, 20, small_model, small_params, prof) == 0


class TestTrial:
    def test_parseval_and_noiseless(self, rng):
        model = SparsityModel("type1", L=8, Q=3, p_d=0.5, p_D=0.5)
        params = AfdmParams(1024, P=1, L_cpp=7)
        for r in run_afdm_trial(AfdmTrialConfig(model, params, snr_db=[10, 300]), rng):
            assert abs(r.tap_mse - r.mse) <= 1e-10 * max(1.0, r.mse)
        assert r.mse < 1e-20 or r.n_active == 0

    def test_fixed_M(self, rng):
        model = SparsityModel("type1", L=8, Q=3, p_d=0.5, p_D=0.5)
        params = AfdmParams(1024, P=1, L_cpp=7)
        (r,) = run_afdm_trial(AfdmTrialConfig(model, params, M=3), rng)
        assert r.M == 3 and r.overhead_samples == 3 * 14

    def test_reconstruct_taps_matches_channel(self, rng, small_model):
        prof = DelayDopplerProfile(np.ones((4, 5), dtype=bool))
        ch = sample_gains(prof, small_model, rng)
        np.testing.assert_allclose(reconstruct_taps(ch.gains, prof, 64), ch.taps(np.arange(64), 64), atol=1e-12)

    def test_snr_conversion(self):
        assert snr_to_noise(20) == pytest.approx(0.01)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), P=st.integers(1, 3), M=st.integers(1, 3))
def test_keystone_property(seed, P, M):
    rng = np.random.default_rng(seed)
    model = SparsityModel("type2", L=3, Q=1, p_d=0.8, p_D=0.6)
    params = AfdmParams(128, P=P, L_cpp=2)
    prof = sample_profile(model, rng)
    if prof.n_active == 0:
        return
    ch = sample_gains(prof, model, rng)
    s = place_pilots(params, model, M, rng=rng)
    y = received_pilots(s.pilot_frame(), s, ch, params)
    Mp = build_measurement_matrix(s, prof, params)
    np.testing.assert_allclose(y, Mp.entries @ ch.gains, atol=1e-9 * np.linalg.norm(y))


def test_identity_path_column_is_pilot(small_model, small_params):
    grid = np.zeros((4, 5), dtype=bool)
    grid[0, 2] = True
    s = place_pilots(small_params, small_model, 2)
    Mp = build_measurement_matrix(s, DelayDopplerProfile(grid), small_params)
    np.testing.assert_allclose(Mp.entries[:, 0], s.pilot_frame()[s.observation_set], atol=1e-12)


def test_huge_noise_returns_prior_mean(rng):
    A = random_frame(rng, 10, 3)
    est = mmse_estimate(random_frame(rng, 10), A, 1.0, 1e12)
    assert np.max(np.abs(est.alpha_hat)) < 1e-9


def test_high_snr_calibration_hits_minimum():
    from afdmsim.analysis import min_pilots

    model = SparsityModel("type1", L=60, Q=15, p_d=0.2, p_D=0.2)
    params = AfdmParams(8192, P=1, L_cpp=59)
    rng = np.random.default_rng(8)
    for _ in range(5):
        prof = sample_profile(model, rng)
        M = calibrate_pilot_count(1e-2, 80, model, params, prof)
        assert M == max(1, min_pilots(prof, 1)) or prof.n_active == 0


def test_calibrated_M_non_increasing_in_snr():
    model = SparsityModel("type1", L=60, Q=15, p_d=0.2, p_D=0.2)
    params = AfdmParams(8192, P=1, L_cpp=59)
    rng = np.random.default_rng(12)
    for _ in range(4):
        prof = sample_profile(model, rng)
        Ms = [calibrate_pilot_count(1e-3, snr, model, params, prof) for snr in (18, 20, 25, 30)]
        assert Ms == sorted(Ms, reverse=True)


def test_expected_mse_below_prior():
    model = SparsityModel("type1", L=60, Q=15, p_d=0.2, p_D=0.2)
    params = AfdmParams(8192, P=1, L_cpp=59)
    rng = np.random.default_rng(13)
    for M in (1, 3, 6):
        prof = sample_profile(model, rng)
        Mp = build_measurement_matrix(place_pilots(params, model, M), prof, params)
        for snr in (-10, 0, 20):
            assert expected_mse(Mp, model.sigma_alpha_sq, snr_to_noise(snr)) <= prof.n_active * model.sigma_alpha_sq
