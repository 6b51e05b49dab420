"""Tests for the mitosis detector (M3): labels, windows, forward pass and detection."""
import os
import sys
import tempfile
from unittest.mock import patch

import numpy as np
import pytest

# Ensure project root is on path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from imaging.annotations import AnnotationError, AnnotationSet
from imaging.frames import FrameSequence
from imaging.morphology import BinaryVolume
from models.m3_detector import (
    M3Config,
    M3Model,
    MitosisLabelVolume,
    SequenceLengthError,
    build_labels,
    detection_volume,
    detections_from_volume,
    load_m3,
    m3_detect,
    m3_forward,
    m3_train,
    save_m3,
    window_starts,
)
from numerics.tensor import Tensor


def _small_cfg(**overrides):
    values = dict(k=4, iterations=0, hidden=2, decoder_width=2, kernel=3, seed=5)
    values.update(overrides)
    return M3Config(**values)


def _random_sequence(frames=6, size=8, seed=0):
    return FrameSequence(np.random.default_rng(seed).random((frames, size, size)).astype(np.float32))


def _constant_forward(value):
    """Stand-in for m3_forward that emits ``value`` everywhere."""
    def forward(window, model, train_mode, rng=None):
        _, height, width = np.asarray(window).shape
        return [Tensor(np.full((1, height, width), value)) for _ in range(len(window))]
    return forward


def test_empty_annotations_give_empty_labels():
    labels = build_labels(AnnotationSet(), (5, 16, 16), 1)
    assert labels.volume.is_empty()


def test_annotation_grows_into_7_cube():
    labels = build_labels(AnnotationSet.from_tuples([(10, 10, 10)]), (20, 20, 20), 1)
    assert labels.volume.count() == 7 ** 3
    assert labels.volume.voxels[7:14, 7:14, 7:14].all()


def test_annotation_at_first_frame_is_clipped_in_time():
    labels = build_labels(AnnotationSet.from_tuples([(0, 10, 10)]), (20, 20, 20), 1)
    assert labels.volume.count() == 4 * 7 * 7
    assert labels.volume.voxels[:4].any(axis=(1, 2)).all()


def test_annotations_are_downscaled_by_integer_division():
    labels = build_labels(AnnotationSet.from_tuples([(5, 21, 30)]), (10, 63, 64), 2)
    assert labels.volume.shape == (10, 32, 32)
    assert labels.volume.voxels[5, 10, 15] == 1
    assert labels.volume.voxels[5, 7:14, 12:19].all()


def test_out_of_range_annotation_names_its_row():
    points = AnnotationSet.from_tuples([(1, 1, 1), (9, 1, 1)])
    with pytest.raises(AnnotationError, match="row 2"):
        build_labels(points, (5, 8, 8), 1)


def test_forward_outputs_lie_in_unit_interval_and_are_pure():
    model = M3Model.initialize(_small_cfg(), np.random.default_rng(0))
    window = _random_sequence(frames=4).frames
    first = m3_forward(window, model, train_mode=False)
    second = m3_forward(window, model, train_mode=False)
    assert len(first) == 4
    for a, b in zip(first, second):
        assert a.dims == (1, 8, 8)
        assert ((a.data > 0) & (a.data < 1)).all()
        np.testing.assert_array_equal(a.data, b.data)


def test_mirrored_model_on_reversed_window_reverses_outputs():
    model = M3Model.initialize(_small_cfg(), np.random.default_rng(1))
    window = _random_sequence(frames=4, seed=2).frames
    original = [out.data for out in m3_forward(window, model, train_mode=False)]
    mirrored = [out.data for out in m3_forward(window[::-1], model.mirrored(), train_mode=False)]
    for a, b in zip(original, mirrored[::-1]):
        np.testing.assert_allclose(a, b, atol=1e-6)


def test_mirrored_model_does_not_share_parameters():
    model = M3Model.initialize(_small_cfg(), np.random.default_rng(1))
    twin = model.mirrored()
    twin.forward.gates.kernels.data[...] = 0.0
    assert model.backward.gates.kernels.data.any()


def test_forward_rejects_wrong_window_length():
    model = M3Model.initialize(_small_cfg(), np.random.default_rng(0))
    with pytest.raises(SequenceLengthError, match="k = 4"):
        m3_forward(_random_sequence(frames=5).frames, model, train_mode=False)


def test_training_needs_k_frames():
    seq = _random_sequence(frames=3)
    labels = MitosisLabelVolume(BinaryVolume.empty(3, 8, 8))
    with pytest.raises(SequenceLengthError):
        m3_train(seq, labels, _small_cfg(iterations=1))


def test_training_rejects_mismatched_labels():
    seq = _random_sequence(frames=6)
    labels = MitosisLabelVolume(BinaryVolume.empty(6, 4, 4))
    with pytest.raises(SequenceLengthError, match="labels"):
        m3_train(seq, labels, _small_cfg(iterations=1))


def test_training_on_exactly_k_frames_reuses_one_window():
    seq = _random_sequence(frames=4)
    labels = MitosisLabelVolume(BinaryVolume.empty(4, 8, 8))
    _, trace = m3_train(seq, labels, _small_cfg(iterations=8))
    assert trace.window_starts == [0] * 8


def test_training_is_deterministic():
    seq = _random_sequence(frames=7)
    labels = build_labels(AnnotationSet.from_tuples([(3, 4, 4)]), (7, 8, 8), 1)
    cfg = _small_cfg(iterations=5)
    _, first = m3_train(seq, labels, cfg)
    _, second = m3_train(seq, labels, cfg)
    assert first.losses == second.losses
    assert first.window_starts == second.window_starts


@pytest.mark.parametrize("frames, k, stride, expected", [
    (10, 4, 2, [0, 2, 4, 6]),
    (11, 4, 2, [0, 2, 4, 6, 7]),
    (4, 4, 2, [0]),
    (9, 3, 1, [0, 1, 2, 3, 4, 5, 6]),
])
def test_window_starts_cover_the_tail(frames, k, stride, expected):
    assert window_starts(frames, k, stride) == expected


def test_window_starts_need_k_frames():
    with pytest.raises(SequenceLengthError):
        window_starts(3, 4)


def test_detection_volume_counts_window_coverage():
    """7 frames, k=4, stride 2: windows start at 0, 2 and 3."""
    model = M3Model.initialize(_small_cfg(), np.random.default_rng(0))
    with patch("models.m3_detector.m3_forward", side_effect=_constant_forward(0.9)):
        summed = detection_volume(model, _random_sequence(frames=7), stride=2)
    assert summed[:, 0, 0].tolist() == [1, 1, 2, 3, 2, 2, 1]


def test_all_zero_model_detects_nothing():
    model = M3Model.initialize(_small_cfg(), np.random.default_rng(0))
    with patch("models.m3_detector.m3_forward", side_effect=_constant_forward(0.0)):
        detections = m3_detect(model, _random_sequence(frames=7), downscale_factor=2)
    assert len(detections) == 0


def test_single_block_gives_one_detection_at_its_center():
    summed = np.zeros((12, 20, 20), dtype=np.int32)
    summed[2:9, 5:12, 8:15] = 2
    detections = detections_from_volume(summed, downscale_factor=2, frame_offset=100)
    assert [p.as_tuple() for p in detections] == [(105, 16, 22)]


def test_detection_is_independent_of_worker_count():
    model = M3Model.initialize(_small_cfg(), np.random.default_rng(3))
    seq = _random_sequence(frames=9)
    np.testing.assert_array_equal(detection_volume(model, seq, workers=1), detection_volume(model, seq, workers=3))


def test_checkpoint_round_trip_keeps_k_and_outputs():
    cfg = _small_cfg()
    model = M3Model.initialize(cfg, np.random.default_rng(4))
    window = _random_sequence(frames=4).frames
    with tempfile.TemporaryDirectory() as tmp:
        save_m3(model, tmp, cfg, extra={"train_start": 12})
        restored, manifest = load_m3(tmp)
    assert restored.k == 4
    assert manifest["train_start"] == 12
    for a, b in zip(m3_forward(window, model, False), m3_forward(window, restored, False)):
        np.testing.assert_array_equal(a.data, b.data)


@pytest.mark.slow
def test_training_on_empty_labels_learns_silence():
    seq = _random_sequence(frames=8, size=12)
    labels = MitosisLabelVolume(BinaryVolume.empty(8, 12, 12))
    model, _ = m3_train(seq, labels, _small_cfg(iterations=1000, hidden=4, decoder_width=4))
    outputs = m3_forward(seq.frames[:4], model, train_mode=False)
    assert np.mean([out.data.mean() for out in outputs]) < 0.05


def test_short_fast_training_on_empty_labels_pushes_outputs_down():
    """Same claim as above on the smallest shapes, with a large step so it runs in the default suite."""
    seq = _random_sequence(frames=4, size=6)
    labels = MitosisLabelVolume(BinaryVolume.empty(4, 6, 6))
    model, _ = m3_train(seq, labels, _small_cfg(k=3, iterations=150, learning_rate=0.05))
    outputs = m3_forward(seq.frames[:3], model, train_mode=False)
    assert np.mean([out.data.mean() for out in outputs]) < 0.05


def test_scaled_centers_stay_inside_the_original_frame():
    summed = np.zeros((2, 3, 3), dtype=np.int32)
    summed[0, 2, 2] = 1
    assert [p.as_tuple() for p in detections_from_volume(summed, downscale_factor=4)] == [(0, 8, 8)]
    clipped = detections_from_volume(summed, downscale_factor=4, frame_shape=(7, 6))
    assert [p.as_tuple() for p in clipped] == [(0, 6, 5)]
