import math

import numpy as np
import pytest
from pydantic import ValidationError

from services.channel import (
    ChannelSpec,
    cluster_spans,
    expected_pair_energy,
    generate_channel,
    rsnr,
    support_metrics,
)
from services.errors import ConfigurationError, DomainError


def test_uniform_channel_has_k_taps_per_pair():
    spec = ChannelSpec(n=50, k=4, nt=2, nr=3)
    channel = generate_channel(spec, seed=1)

    assert channel.entries.shape == (300,)
    assert channel.support.size == 24
    np.testing.assert_array_equal(np.flatnonzero(channel.entries), channel.support)
    for tx in range(2):
        for rx in range(3):
            pair = channel.pair(tx, rx)
            assert np.count_nonzero(pair) == 4
            assert np.max(np.abs(pair)) == pytest.approx(1.0)


def test_block_ordering_puts_transmitters_inside_receivers():
    spec = ChannelSpec(n=10, k=1, nt=2, nr=2)
    channel = generate_channel(spec, seed=3)
    assert channel.block_index(1, 0) == 1
    assert channel.block_index(0, 1) == 2
    np.testing.assert_array_equal(channel.pair(1, 1), channel.entries[30:40])


def test_generation_is_deterministic_per_seed():
    spec = ChannelSpec(n=64, k=5)
    first = generate_channel(spec, seed=[0, 0, 5])
    second = generate_channel(spec, seed=[0, 0, 5])
    other = generate_channel(spec, seed=[0, 0, 6])

    np.testing.assert_array_equal(first.entries, second.entries)
    assert not np.array_equal(first.entries, other.entries)


def test_global_normalization_scales_the_whole_vector():
    spec = ChannelSpec(n=20, k=3, nt=2, normalization="global")
    channel = generate_channel(spec, seed=11)
    assert np.max(np.abs(channel.entries)) == pytest.approx(1.0)
    peaks = [np.max(np.abs(channel.pair(tx, 0))) for tx in range(2)]
    assert min(peaks) <= 1.0


def test_unnormalized_channel_keeps_raw_gains():
    spec = ChannelSpec(n=20, k=3, normalize_peak=False)
    channel = generate_channel(spec, seed=2)
    assert np.count_nonzero(channel.entries) == 3


def test_clustered_taps_stay_inside_their_spans():
    spec = ChannelSpec(n=40, k=4, nt=2, support_model="clustered", num_clusters=2, cluster_width=5)
    for seed in range(20):
        channel = generate_channel(spec, seed=seed)
        first, second = np.flatnonzero(channel.pair(0, 0)), np.flatnonzero(channel.pair(1, 0))
        assert first.size == second.size == 4
        # Two taps per cluster, each cluster at most 5 taps wide
        for taps in (first, second):
            assert taps[1] - taps[0] < 5
            assert taps[3] - taps[2] < 5
            assert taps[2] > taps[1]


def test_shared_clusters_reuse_spans_across_pairs():
    spec = ChannelSpec(n=100, k=2, nt=3, support_model="clustered", num_clusters=2, cluster_width=1)
    channel = generate_channel(spec, seed=9)
    # Width 1 with one tap per cluster pins every pair to the same taps
    supports = [tuple(np.flatnonzero(channel.pair(tx, 0))) for tx in range(3)]
    assert len(set(supports)) == 1


def test_cluster_spans_cover_uneven_sizes():
    assert cluster_spans(5, 2, 2) == [3, 2]
    assert cluster_spans(4, 4, 3) == [3, 3, 3, 3]


@pytest.mark.parametrize(
    "kwargs",
    [
        {"n": 4, "k": 5},
        {"n": 20, "k": 4, "support_model": "clustered"},
        {"n": 20, "k": 2, "support_model": "clustered", "num_clusters": 3, "cluster_width": 2},
        {"n": 10, "k": 4, "support_model": "clustered", "num_clusters": 2, "cluster_width": 6},
    ],
)
def test_invalid_geometry_is_rejected(kwargs):
    with pytest.raises(ConfigurationError) as info:
        ChannelSpec(**kwargs)
    assert info.value.error_code == "CONFIGURATION_ERROR"
    assert isinstance(info.value.__cause__, ValidationError)


def test_expected_pair_energy_matches_sampling():
    spec = ChannelSpec(n=20, k=5)
    energies = [np.sum(np.abs(generate_channel(spec, seed=s).entries) ** 2) for s in range(4000)]
    assert expected_pair_energy(spec) == pytest.approx(np.mean(energies), rel=0.02)


def test_expected_pair_energy_limits():
    assert expected_pair_energy(ChannelSpec(n=10, k=1)) == pytest.approx(1.0)
    assert expected_pair_energy(ChannelSpec(n=10, k=3, normalize_peak=False)) == 3.0
    # 1 + E[min/max] of two unit exponentials
    assert expected_pair_energy(ChannelSpec(n=10, k=2)) == pytest.approx(2.0 * math.log(2.0), rel=1e-6)


def test_rsnr_values():
    h = np.array([1.0, 0.0, 0.0], dtype=complex)
    assert rsnr(h, h).db == math.inf
    result = rsnr(h, np.array([0.5, 0.0, 0.0]))
    assert result.linear == pytest.approx(4.0)
    assert result.db == pytest.approx(10 * math.log10(4.0))


def test_normalized_rsnr_removes_scale():
    h = np.array([1.0, -2.0, 0.5j])
    assert rsnr(h, 3.0 * h, normalize=True).db > 200.0
    assert rsnr(h, 3.0 * h).linear == pytest.approx(0.25)


def test_unnormalized_taps_are_standard_complex_gaussian():
    spec = ChannelSpec(n=50, k=5, nt=2, normalize_peak=False)
    channels = [generate_channel(spec, seed=[70, draw]) for draw in range(1000)]
    taps = np.concatenate([channel.entries[channel.support] for channel in channels])
    assert taps.size == 10_000
    assert abs(taps.mean()) < 0.04
    assert np.mean(np.abs(taps) ** 2) == pytest.approx(1.0, abs=0.05)
    # Circular: real and imaginary parts each carry half the power
    assert np.var(taps.real) == pytest.approx(0.5, abs=0.03)
    assert np.var(taps.imag) == pytest.approx(0.5, abs=0.03)


@pytest.mark.parametrize("alpha", [0.0, 0.5, -1.0, 2.0 + 1.0j, 1.0 - 0.1j])
def test_rsnr_of_a_scaled_channel(alpha):
    h = np.array([1.0, -0.3 + 0.2j, 0.0, 0.7j])
    assert rsnr(h, alpha * h).linear == pytest.approx(1.0 / abs(1.0 - alpha) ** 2)


def test_rsnr_rejects_zero_channel_and_length_mismatch():
    with pytest.raises(DomainError):
        rsnr(np.zeros(4), np.ones(4))
    with pytest.raises(DomainError):
        rsnr(np.ones(4), np.ones(3))


def test_support_metrics():
    metrics = support_metrics([1, 4, 7], [4, 7, 9, 10])
    assert not metrics.exact
    assert (metrics.hits, metrics.misses, metrics.false_alarms) == (2, 1, 2)
    assert support_metrics([3, 1], [1, 3]).exact
