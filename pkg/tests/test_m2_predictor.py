"""Tests for the event predictor (M2), its statistics and the k recommendation."""
import os
import sys
import tempfile

import numpy as np
import pytest

# Ensure project root is on path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from imaging.morphology import BinaryVolume
from models.event_sim import EventSimConfig
from models.m2_predictor import (
    EmptyStatsError,
    EventStats,
    M2Config,
    M2Model,
    WindowError,
    event_statistics,
    load_m2,
    m2_infer,
    m2_train,
    recommend_k,
    save_m2,
    statistics_from_lengths,
)

# 13 x 5, 23 x 6, 10 x 8, 4 x 9: mean 6.38, 75th percentile 8.0
ENGINEERED_LENGTHS = [5] * 13 + [6] * 23 + [8] * 10 + [9] * 4


def _small_cfg(**overrides):
    values = dict(window=4, iterations=0, channels=2, hidden=2, kernel=3, seed=3)
    values.update(overrides)
    return M2Config(**values)


def _random_map(frames=6, size=8, seed=0):
    return BinaryVolume((np.random.default_rng(seed).random((frames, size, size)) > 0.7).astype(np.uint8))


def test_statistics_of_two_events():
    stats = statistics_from_lengths([5, 8])
    assert stats.mean == pytest.approx(6.5)
    assert stats.p50 == pytest.approx(6.5)
    assert stats.p75 == pytest.approx(7.25)
    assert stats.count == 2


def test_statistics_of_equal_lengths():
    stats = statistics_from_lengths([4, 4, 4, 4])
    assert (stats.mean, stats.std, stats.p50, stats.p75) == (4.0, 0.0, 4.0, 4.0)


def test_nearest_rank_percentile_rule():
    stats = statistics_from_lengths([5, 8], percentile_rule="nearest")
    assert stats.p75 == 8.0


def test_unknown_percentile_rule():
    with pytest.raises(ValueError, match="midpoint"):
        statistics_from_lengths([1, 2], percentile_rule="midpoint")


def test_no_lengths_gives_empty_statistics():
    stats = statistics_from_lengths([])
    assert stats.empty
    assert stats.count == 0


def test_format_uses_fixed_decimals():
    stats = statistics_from_lengths(ENGINEERED_LENGTHS)
    assert stats.format("mean", "p75") == "6.38 / 8.0"


def test_recommend_k_from_engineered_statistics():
    rec = recommend_k(statistics_from_lengths(ENGINEERED_LENGTHS))
    assert rec.k == 8
    assert rec.lower_bound == 7
    assert (rec.frames_primary, rec.frames_alternate) == (14, 18)


def test_recommend_k_never_drops_below_the_mean():
    rec = recommend_k(EventStats(mean=9.0, std=0.0, p50=8.0, p75=8.0, count=3))
    assert rec.k == 9


def test_recommend_k_rounds_the_percentile_half_up():
    assert recommend_k(EventStats(mean=6.0, std=0.0, p50=8.0, p75=8.4, count=3)).k == 8
    assert recommend_k(EventStats(mean=6.0, std=0.0, p50=8.0, p75=8.5, count=3)).k == 9


def test_recommend_k_needs_events():
    with pytest.raises(EmptyStatsError):
        recommend_k(statistics_from_lengths([]))


def test_event_statistics_thresholds_strictly():
    """Exactly 0.5 everywhere is below the strict threshold and yields no region."""
    stats = event_statistics(np.full((5, 6, 6), 0.5))
    assert stats.empty


def test_event_statistics_measures_temporal_length():
    e_prime = np.zeros((10, 6, 6))
    e_prime[2:7, 1:3, 1:3] = 0.9
    e_prime[4:6, 4, 4] = 0.8
    stats = event_statistics(e_prime)
    assert sorted(stats.lengths) == [2, 5]


def test_window_longer_than_map_is_rejected():
    with pytest.raises(WindowError, match="6-frame"):
        m2_train(_random_map(frames=6), EventSimConfig(), _small_cfg(window=7))


def test_infer_shape_range_and_purity():
    model = M2Model.initialize(_small_cfg(), np.random.default_rng(0))
    y = _random_map()
    first = m2_infer(model, y)
    second = m2_infer(model, y)
    assert first.shape == y.shape
    assert ((first > 0) & (first < 1)).all()
    np.testing.assert_array_equal(first, second)


def test_training_is_deterministic():
    cfg = _small_cfg(iterations=4)
    y = _random_map(frames=8)
    sim = EventSimConfig(probability=0.8, length_min=1, length_max=3)
    _, first = m2_train(y, sim, cfg)
    _, second = m2_train(y, sim, cfg)
    assert first.losses == second.losses
    assert first.window_starts == second.window_starts
    assert all(0 <= s <= 8 - cfg.window for s in first.window_starts)


def test_checkpoint_round_trip_preserves_predictions():
    cfg = _small_cfg()
    model = M2Model.initialize(cfg, np.random.default_rng(5))
    y = _random_map()
    with tempfile.TemporaryDirectory() as tmp:
        save_m2(model, tmp, cfg)
        restored = load_m2(tmp)
    np.testing.assert_array_equal(m2_infer(model, y), m2_infer(restored, y))


@pytest.mark.slow
def test_training_without_events_learns_silence():
    """With probability 0 every target is empty, so predictions must fall toward 0."""
    cfg = _small_cfg(window=4, iterations=300, channels=4, hidden=4)
    y = _random_map(frames=8)
    model, _ = m2_train(y, EventSimConfig(probability=0.0), cfg)
    assert m2_infer(model, y).mean() < 0.1


def test_short_fast_training_without_events_pushes_predictions_down():
    """Same claim as above on the smallest shapes, with a large step so it runs in the default suite."""
    cfg = _small_cfg(iterations=150, learning_rate=0.05)
    y = _random_map(frames=6, size=6)
    model, _ = m2_train(y, EventSimConfig(probability=0.0), cfg)
    assert m2_infer(model, y).mean() < 0.1
