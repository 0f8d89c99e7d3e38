import itertools
import math

import numpy as np
import pytest
from scipy.optimize import linprog

from services.channel import ChannelSpec, generate_channel, rsnr
from services.errors import ConditioningError, ConfigurationError, DivergenceError
from services.estimator import (
    BihtConfig,
    biht_support,
    complex_support,
    estimate_biht_linear,
    estimate_channel,
    estimate_least_squares,
    estimate_oracle,
    hard_threshold,
    one_bit_observation,
    step_size,
    strongest_per_pair,
)
from services.pilot import MeasurementModel, build_measurement_model, generate_pilots


def test_hard_threshold_prefers_lower_index_on_ties():
    values = np.array([1.0, -3.0, 3.0, 2.0])
    np.testing.assert_array_equal(hard_threshold(values, 1), [0.0, -3.0, 0.0, 0.0])
    np.testing.assert_array_equal(hard_threshold(values, 2), [0.0, -3.0, 3.0, 0.0])


def test_biht_on_identity_finds_negative_spike():
    obs = np.ones(8)
    obs[3] = -1.0
    result = biht_support(obs, np.eye(8), BihtConfig(sparsity_target=1))
    np.testing.assert_array_equal(result.support, [3])
    assert result.stop_reason == "consistent"
    assert result.iterate[3] == pytest.approx(-1.0)


def test_biht_on_mirrored_identity_finds_positive_spike():
    matrix = np.vstack((np.eye(8), -np.eye(8)))
    obs = np.ones(16)
    obs[8 + 3] = -1.0
    result = biht_support(obs, matrix, BihtConfig(sparsity_target=1))
    np.testing.assert_array_equal(result.support, [3])
    assert result.iterate[3] == pytest.approx(1.0)
    assert result.iterations == 1


def _sign_consistent(matrix: np.ndarray, obs: np.ndarray, support: tuple) -> bool:
    # Feasibility LP: some v on the support reproduces every sign with a positive margin
    sub = matrix[:, list(support)]
    width = sub.shape[1]
    a_ub = np.hstack((-(obs[:, None] * sub), np.ones((obs.size, 1))))
    c = np.zeros(width + 1)
    c[-1] = -1.0
    bounds = [(-1.0, 1.0)] * width + [(None, 1.0)]
    solution = linprog(c, A_ub=a_ub, b_ub=np.zeros(obs.size), bounds=bounds, method="highs")
    return bool(solution.status == 0 and -solution.fun > 1e-9)


def test_biht_support_is_sign_consistent_on_real_toeplitz():
    pilots = generate_pilots(1, 200, 20, seed=13)
    model = build_measurement_model(pilots, nt=1, nr=1, n=20)
    matrix = model.toeplitz_blocks[0]
    h = np.zeros(20)
    h[[4, 15]] = [1.0, -0.7]
    obs = np.where(matrix @ h >= 0, 1.0, -1.0)

    # Tap 4 dominates every row, so sign data cannot single out the second tap
    consistent = {pair for pair in itertools.combinations(range(20), 2) if _sign_consistent(matrix, obs, pair)}
    assert (4, 15) in consistent
    assert all(4 in pair for pair in consistent)

    result = biht_support(obs, matrix, BihtConfig(sparsity_target=2))
    assert tuple(result.support) in consistent
    assert np.linalg.norm(result.iterate) == pytest.approx(1.0)


def test_biht_support_is_invariant_to_positive_scaling():
    pilots = generate_pilots(1, 150, 30, seed=31)
    model = build_measurement_model(pilots, nt=1, nr=1, n=30)
    h = np.zeros(30, dtype=complex)
    h[[3, 11, 26]] = [0.9 - 0.2j, -0.5 + 0.6j, 0.3 + 0.7j]
    rng = np.random.default_rng(32)
    analog = model.apply(h) + 0.05 * (rng.standard_normal(150) + 1j * rng.standard_normal(150))
    cfg = BihtConfig(sparsity_target=3)

    base = biht_support(one_bit_observation(analog), model.real_operator("joint"), cfg, k_total=6)
    for alpha in (1e-3, 0.5, 40.0):
        scaled = biht_support(one_bit_observation(alpha * analog), model.real_operator("joint"), cfg, k_total=6)
        np.testing.assert_array_equal(scaled.support, base.support)
        np.testing.assert_allclose(scaled.iterate, base.iterate)
    # The linear stage is linear in the observation
    unit = estimate_biht_linear(analog, one_bit_observation(analog), model, cfg)
    tripled = estimate_biht_linear(3.0 * analog, one_bit_observation(3.0 * analog), model, cfg)
    np.testing.assert_array_equal(tripled.support, unit.support)
    np.testing.assert_allclose(tripled.estimate, 3.0 * unit.estimate, atol=1e-12)


def test_biht_step_size_is_scale_free():
    rng = np.random.default_rng(0)
    matrix = rng.standard_normal((120, 30))
    h = np.zeros(30)
    h[[2, 9, 21]] = [1.0, -0.5, 0.8]
    obs = np.where(matrix @ h >= 0, 1.0, -1.0)
    small = biht_support(obs, matrix, BihtConfig(sparsity_target=3, tau=1e-5))
    large = biht_support(obs, matrix, BihtConfig(sparsity_target=3, tau=1.0))
    np.testing.assert_array_equal(small.support, large.support)


def test_auto_step_size_uses_spectral_norm():
    matrix = np.diag([3.0, 1.0, 1.0, 1.0])
    assert step_size(matrix, BihtConfig(sparsity_target=1, tau="auto")) == pytest.approx(9.0 / 2.0)
    assert step_size(matrix, BihtConfig(sparsity_target=1, tau=0.1)) == 0.1


def test_biht_raises_on_non_finite_iterate():
    obs = -np.ones(4)
    with pytest.raises(DivergenceError) as info:
        biht_support(obs, np.eye(4), BihtConfig(sparsity_target=1, tau=math.inf))
    assert info.value.tau == math.inf
    assert info.value.error_code == "DIVERGENCE_ERROR"


def test_biht_rejects_wrong_observation_length():
    with pytest.raises(ConfigurationError):
        biht_support(np.ones(3), np.eye(4), BihtConfig(sparsity_target=1))


def test_biht_records_support_sizes():
    rng = np.random.default_rng(2)
    matrix = rng.standard_normal((50, 40))
    obs = np.where(rng.standard_normal(50) >= 0, 1.0, -1.0)
    result = biht_support(obs, matrix, BihtConfig(sparsity_target=4, max_iters=15, stall_window=3))
    assert 1 <= result.iterations <= 15
    assert len(result.nonzeros_per_iteration) == result.iterations
    assert max(result.nonzeros_per_iteration) <= 4


def test_one_bit_observation_stacks_real_then_imaginary():
    out = one_bit_observation(np.array([1 - 1j, -2 + 0j]))
    np.testing.assert_array_equal(out, [1.0, -1.0, -1.0, 1.0])


def test_complex_support_maps_modulo_and_deduplicates():
    iterate = np.array([0.1, 0.0, 0.6, 0.0, 0.0, 0.7, 0.6, 0.0])
    np.testing.assert_array_equal(complex_support([iterate], 4), [0, 1, 2])
    other = np.array([0.0, 0.0, 0.0, 0.2, 0.0, 0.0, 0.0, 0.0])
    np.testing.assert_array_equal(complex_support([iterate, other], 4), [0, 1, 2, 3])
    assert complex_support([np.zeros(8)], 4).size == 0


def test_strongest_per_pair_trims_each_pair_separately():
    candidates = np.array([0, 1, 2, 5, 6])
    coef = np.array([0.1, 0.5, -0.5j, 2.0, 1.0])
    np.testing.assert_array_equal(strongest_per_pair(candidates, coef, 4, 2), [1, 2, 5, 6])
    # Equal magnitudes keep the lower index
    np.testing.assert_array_equal(strongest_per_pair(candidates, coef, 4, 1), [1, 5])


def test_oracle_is_exact_without_noise(siso_model):
    channel = generate_channel(ChannelSpec(n=32, k=3), seed=4)
    y = siso_model.apply(channel.entries)
    result = estimate_oracle(y, siso_model, channel.support)
    assert result.method == "oracle_linear"
    assert rsnr(channel.entries, result.estimate).db > 200.0


def test_least_squares_is_exact_for_tall_models(siso_model):
    channel = generate_channel(ChannelSpec(n=32, k=3), seed=5)
    result = estimate_least_squares(siso_model.apply(channel.entries), siso_model)
    assert result.support.size == 32
    assert rsnr(channel.entries, result.estimate).db > 150.0


def test_least_squares_is_minimum_norm_when_underdetermined():
    pilots = generate_pilots(2, 20, 16, seed=3)
    model = build_measurement_model(pilots, nt=2, nr=2, n=16)
    rng = np.random.default_rng(8)
    y = rng.standard_normal(40) + 1j * rng.standard_normal(40)
    result = estimate_least_squares(y, model)
    np.testing.assert_allclose(result.estimate, np.linalg.pinv(model.mimo_matrix) @ y, atol=1e-9)


def test_restricted_solve_rejects_oversized_support():
    pilots = generate_pilots(1, 4, 10, seed=0)
    model = build_measurement_model(pilots, nt=1, nr=1, n=10)
    with pytest.raises(ConditioningError) as info:
        estimate_channel(np.zeros(4), model, np.arange(6))
    assert info.value.columns == list(range(6))


def test_restricted_solve_names_the_dependent_columns():
    block = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0], [2.0, 2.0, 0.5]])
    model = MeasurementModel(toeplitz_blocks=block[None], nr=2)
    # Receiver 1 owns columns 3..5; only its duplicated pair is reported
    with pytest.raises(ConditioningError) as info:
        estimate_channel(np.ones(8), model, np.array([0, 2, 3, 4, 5]))
    assert len(info.value.columns) == 1
    assert info.value.columns[0] in (3, 4)


def test_estimate_channel_rejects_wrong_length(siso_model):
    with pytest.raises(ConfigurationError):
        estimate_channel(np.zeros(10), siso_model, np.array([1]))


def test_restricted_residual_satisfies_normal_equations(siso_model):
    rng = np.random.default_rng(40)
    y = rng.standard_normal(128) + 1j * rng.standard_normal(128)
    support = np.array([2, 7, 19, 30])
    result = estimate_channel(y, siso_model, support)
    columns = siso_model.columns(support)
    residual = y - siso_model.apply(result.estimate)
    gradient = columns.conj().T @ residual
    assert np.linalg.norm(gradient) <= 1e-8 * np.linalg.norm(columns) * np.linalg.norm(y)
    assert np.count_nonzero(result.estimate) == support.size


def _three_tap_channel() -> np.ndarray:
    # Neither the real nor the imaginary part is dominated by a single tap
    h = np.zeros(64, dtype=complex)
    h[[5, 30, 50]] = [1.0 + 0.4j, -0.8 + 0.7j, 0.6 - 0.5j]
    return h


def test_biht_linear_recovers_noiseless_complex_channel():
    pilots = generate_pilots(1, 256, 64, seed=17)
    model = build_measurement_model(pilots, nt=1, nr=1, n=64)
    h = _three_tap_channel()
    analog = model.apply(h)

    result = estimate_biht_linear(analog, one_bit_observation(analog), model, BihtConfig(sparsity_target=3))
    np.testing.assert_array_equal(result.support, [5, 30, 50])
    assert rsnr(h, result.estimate).db > 100.0
    assert result.method == "biht_linear"
    assert result.pruned == 0


def test_separate_combining_covers_the_support():
    pilots = generate_pilots(1, 256, 64, seed=17)
    model = build_measurement_model(pilots, nt=1, nr=1, n=64)
    analog = model.apply(_three_tap_channel())

    cfg = BihtConfig(sparsity_target=6, combine="separate")
    result = estimate_biht_linear(analog, one_bit_observation(analog), model, cfg)
    assert {5, 30, 50} <= set(result.support)
    assert result.support.size <= 6
    assert rsnr(_three_tap_channel(), result.estimate).db > 100.0


def test_biht_linear_keeps_at_most_khat_taps_per_pair():
    pilots = generate_pilots(2, 120, 24, seed=35)
    model = build_measurement_model(pilots, nt=2, nr=2, n=24)
    channel = generate_channel(ChannelSpec(n=24, k=3, nt=2, nr=2), seed=36)
    rng = np.random.default_rng(37)
    analog = model.apply(channel.entries) + 0.1 * (rng.standard_normal(240) + 1j * rng.standard_normal(240))

    for khat in (2, 3, 5):
        result = estimate_biht_linear(analog, one_bit_observation(analog), model, BihtConfig(sparsity_target=khat))
        assert result.support.size <= 4 * khat
        assert np.bincount(result.support // 24, minlength=4).max() <= khat
        np.testing.assert_array_equal(np.flatnonzero(result.estimate), result.support)


def test_refinement_is_opt_in_and_prunes_an_overestimated_support():
    pilots = generate_pilots(1, 256, 64, seed=21)
    model = build_measurement_model(pilots, nt=1, nr=1, n=64)
    h = _three_tap_channel()
    rng = np.random.default_rng(23)
    analog = model.apply(h) + 0.01 * (rng.standard_normal(256) + 1j * rng.standard_normal(256))
    obs = one_bit_observation(analog)

    assert BihtConfig(sparsity_target=9).refine is False
    loose = estimate_biht_linear(analog, obs, model, BihtConfig(sparsity_target=9))
    refined = estimate_biht_linear(analog, obs, model, BihtConfig(sparsity_target=9, refine=True))
    assert loose.support.size == 9
    assert loose.pruned == 0
    assert refined.pruned == loose.support.size - refined.support.size > 0
    assert {5, 30, 50} <= set(refined.support)
    assert rsnr(h, refined.estimate).db > rsnr(h, loose.estimate).db
    assert rsnr(h, refined.estimate).db > 25.0


def test_refinement_keeps_one_coefficient_on_pure_noise(siso_model):
    rng = np.random.default_rng(41)
    noise = rng.standard_normal(128) + 1j * rng.standard_normal(128)
    result = estimate_biht_linear(
        noise, one_bit_observation(noise), siso_model, BihtConfig(sparsity_target=4, refine=True, refine_z=50.0)
    )
    assert result.support.size == 1
    assert result.pruned == 3


def test_biht_linear_degrades_monotonically_with_noise(siso_model):
    spec = ChannelSpec(n=32, k=3)
    cfg = BihtConfig(sparsity_target=3)
    levels = [0.005, 0.02, 0.08, 0.3]
    scores = np.zeros((200, len(levels)))
    for trial in range(200):
        channel = generate_channel(spec, seed=[50, trial])
        clean = siso_model.apply(channel.entries)
        rng = np.random.default_rng([51, trial])
        unit_noise = (rng.standard_normal(128) + 1j * rng.standard_normal(128)) / math.sqrt(2.0)
        for column, sigma in enumerate(levels):
            analog = clean + sigma * unit_noise
            result = estimate_biht_linear(analog, one_bit_observation(analog), siso_model, cfg)
            scores[trial, column] = min(rsnr(channel.entries, result.estimate).db, 300.0)
    means = scores.mean(axis=0)
    assert all(later <= earlier + 0.5 for earlier, later in zip(means, means[1:]))
    assert means[0] > means[-1] + 10.0


def test_biht_linear_rejects_wrong_one_bit_length(siso_model):
    with pytest.raises(ConfigurationError):
        estimate_biht_linear(np.zeros(128), np.ones(128), siso_model, BihtConfig(sparsity_target=2))
