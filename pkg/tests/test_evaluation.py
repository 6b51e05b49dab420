"""Tests for tolerance matching and precision / recall / F1."""
import os
import sys
from functools import lru_cache

import numpy as np
import pytest

# Ensure project root is on path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from analyzers.detection_metrics import (
    compute_metrics,
    evaluate,
    f1_score,
    match,
    matched_points,
    optimal_true_positives,
)
from imaging.annotations import AnnotationSet, DetectionSet


def _points(tuples, kind=AnnotationSet):
    return kind.from_tuples(tuples)


def _brute_force_true_positives(detections, annotations, spatial_tol, temporal_tol):
    """Largest one-to-one matching, by exhaustive search over annotation subsets."""
    det, ann = detections.as_array(), annotations.as_array()

    def feasible(i, j):
        dt = abs(int(det[i, 0]) - int(ann[j, 0]))
        return dt <= temporal_tol and np.hypot(*(det[i, 1:] - ann[j, 1:])) <= spatial_tol

    @lru_cache(maxsize=None)
    def best(i, used):
        if i == len(det):
            return 0
        result = best(i + 1, used)
        for j in range(len(ann)):
            if not used & (1 << j) and feasible(i, j):
                result = max(result, 1 + best(i + 1, used | (1 << j)))
        return result

    return best(0, 0)


def _random_instance(rng, max_points=8, size=60, frames=12):
    def draw(kind):
        n = int(rng.integers(0, max_points + 1))
        return kind.from_tuples(zip(rng.integers(0, frames, n), rng.integers(0, size, n), rng.integers(0, size, n)))
    return draw(DetectionSet), draw(AnnotationSet)


def test_detection_on_annotation_is_matched():
    result = match(_points([(4, 20, 20)], DetectionSet), _points([(4, 20, 20)]))
    assert result.pairs == [(0, 0)]


def test_spatial_tolerance_is_inclusive_and_strict_beyond():
    annotations = _points([(4, 20, 20)])
    assert match(_points([(4, 20, 30)], DetectionSet), annotations).tp == 1
    assert match(_points([(4, 20, 31)], DetectionSet), annotations).tp == 0


def test_temporal_tolerance():
    detections, annotations = _points([(7, 5, 5)], DetectionSet), _points([(4, 5, 5)])
    assert match(detections, annotations, temporal_tol=1).tp == 0
    assert match(detections, annotations, temporal_tol=3).tp == 1


def test_closer_of_two_detections_wins():
    detections = _points([(4, 20, 26), (4, 20, 22)], DetectionSet)
    annotations = _points([(4, 20, 20)])
    result = match(detections, annotations)
    assert result.pairs == [(1, 0)]
    assert result.unmatched_detections == [0]
    assert optimal_true_positives(detections, annotations) == result.tp


def test_spatial_distance_breaks_ties_before_time():
    detections = _points([(5, 20, 20)], DetectionSet)
    annotations = _points([(5, 20, 23), (4, 20, 22)])
    assert match(detections, annotations).pairs == [(0, 1)]


def test_matched_pairs_respect_both_tolerances():
    rng = np.random.default_rng(0)
    for _ in range(200):
        detections, annotations = _random_instance(rng)
        result = match(detections, annotations, temporal_tol=3)
        used = [i for i, _ in result.pairs], [j for _, j in result.pairs]
        assert len(set(used[0])) == len(used[0]) and len(set(used[1])) == len(used[1])
        for det, ann in matched_points(result, detections, annotations):
            assert abs(det.frame - ann.frame) <= 3
            assert np.hypot(det.row - ann.row, det.col - ann.col) <= 10
        assert result.tp + result.fp == len(detections)
        assert result.tp + result.fn == len(annotations)


def test_greedy_matching_against_exhaustive_optimum():
    """Greedy never beats the optimum and stays within one match of it."""
    rng = np.random.default_rng(2024)
    agree = 0
    trials = 300
    for _ in range(trials):
        detections, annotations = _random_instance(rng)
        for th in (1, 3):
            optimum = _brute_force_true_positives(detections, annotations, 10, th)
            assert optimal_true_positives(detections, annotations, 10, th) == optimum
            greedy = match(detections, annotations, 10, th).tp
            assert optimum - 1 <= greedy <= optimum
            agree += greedy == optimum
    assert agree >= 0.9 * 2 * trials


def test_metrics_do_not_depend_on_input_order():
    detections = _points([(3, 10, 10), (8, 40, 40), (15, 70, 12), (20, 5, 90)], DetectionSet)
    annotations = _points([(3, 12, 11), (9, 44, 40), (30, 70, 70)])
    reference = compute_metrics(match(detections, annotations))
    shuffled = compute_metrics(match(DetectionSet(detections.points[::-1]), AnnotationSet(annotations.points[::-1])))
    assert (reference.tp, reference.fp, reference.fn) == (shuffled.tp, shuffled.fp, shuffled.fn) == (2, 2, 1)


def test_raising_a_tolerance_never_loses_optimal_matches():
    rng = np.random.default_rng(9)
    for _ in range(100):
        detections, annotations = _random_instance(rng)
        assert optimal_true_positives(detections, annotations, 10, 3) >= \
            optimal_true_positives(detections, annotations, 10, 1)
        assert optimal_true_positives(detections, annotations, 15, 1) >= \
            optimal_true_positives(detections, annotations, 10, 1)


@pytest.mark.parametrize("precision, recall, expected, tolerance", [
    (0.924, 0.840, 0.880, 5e-4),
    (0.959, 0.861, 0.908, 5e-4),
    (0.0, 0.0, 0.0, 0.0),
])
def test_f1_score(precision, recall, expected, tolerance):
    assert f1_score(precision, recall) == pytest.approx(expected, abs=tolerance)


def test_no_detections_no_annotations_gives_zero_metrics():
    metrics = compute_metrics(match(DetectionSet(), AnnotationSet()))
    assert (metrics.precision, metrics.recall, metrics.f1) == (0.0, 0.0, 0.0)
    assert (metrics.tp, metrics.fp, metrics.fn) == (0, 0, 0)


def test_no_detections_gives_all_false_negatives():
    metrics = compute_metrics(match(DetectionSet(), _points([(1, 1, 1), (2, 2, 2)])))
    assert (metrics.precision, metrics.recall, metrics.fn) == (0.0, 0.0, 2)


def test_evaluate_reports_both_temporal_tolerances():
    detections = _points([(7, 5, 5), (2, 30, 30)], DetectionSet)
    annotations = _points([(5, 5, 5), (2, 31, 30)])
    strict, loose = evaluate(detections, annotations)
    assert strict.to_dict() == {"th": 1, "precision": 0.5, "recall": 0.5, "f1": 0.5, "tp": 1, "fp": 1, "fn": 1}
    assert (loose.th, loose.tp, loose.f1) == (3, 2, 1.0)
