"""Tolerance-based matching of detected events to annotations, and P/R/F1."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from imaging.annotations import AnnotationSet, EventPoint

SPATIAL_TOLERANCE = 10.0


@dataclass
class MatchResult:
    """One-to-one pairs as (detection index, annotation index)."""
    pairs: List[Tuple[int, int]] = field(default_factory=list)
    unmatched_detections: List[int] = field(default_factory=list)
    unmatched_annotations: List[int] = field(default_factory=list)
    spatial_tolerance: float = SPATIAL_TOLERANCE
    temporal_tolerance: int = 1

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return len(self.unmatched_detections)

    @property
    def fn(self) -> int:
        return len(self.unmatched_annotations)


@dataclass
class Metrics:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    th: int
    spatial_tolerance: float = SPATIAL_TOLERANCE

    def to_dict(self) -> Dict[str, Any]:
        return {"th": self.th, "precision": self.precision, "recall": self.recall, "f1": self.f1,
                "tp": self.tp, "fp": self.fp, "fn": self.fn}


def _feasibility(detections: AnnotationSet, annotations: AnnotationSet, spatial_tol: float,
                 temporal_tol: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    det, ann = detections.as_array(), annotations.as_array()
    distance = cdist(det[:, 1:].astype(float), ann[:, 1:].astype(float))
    dt = np.abs(det[:, :1] - ann[:, 0][None, :])
    return (distance <= spatial_tol) & (dt <= temporal_tol), distance, dt


def match(detections: AnnotationSet, annotations: AnnotationSet,
          spatial_tol: float = SPATIAL_TOLERANCE, temporal_tol: int = 1) -> MatchResult:
    """Greedy nearest-first one-to-one matching.

    Candidate pairs need |dt| <= temporal_tol and Euclidean distance <=
    spatial_tol; they are accepted in order of (distance, |dt|, detection
    index, annotation index).
    """
    if len(detections) == 0 or len(annotations) == 0:
        return MatchResult([], list(range(len(detections))), list(range(len(annotations))),
                           spatial_tol, temporal_tol)
    feasible, distance, dt = _feasibility(detections, annotations, spatial_tol, temporal_tol)
    det_idx, ann_idx = np.nonzero(feasible)
    order = np.lexsort((ann_idx, det_idx, dt[det_idx, ann_idx], distance[det_idx, ann_idx]))

    used_det, used_ann = set(), set()
    pairs = []
    for i, j in zip(det_idx[order], ann_idx[order]):
        if i in used_det or j in used_ann:
            continue
        used_det.add(int(i))
        used_ann.add(int(j))
        pairs.append((int(i), int(j)))
    return MatchResult(
        pairs=sorted(pairs),
        unmatched_detections=[i for i in range(len(detections)) if i not in used_det],
        unmatched_annotations=[j for j in range(len(annotations)) if j not in used_ann],
        spatial_tolerance=spatial_tol,
        temporal_tolerance=temporal_tol,
    )


def optimal_true_positives(detections: AnnotationSet, annotations: AnnotationSet,
                           spatial_tol: float = SPATIAL_TOLERANCE, temporal_tol: int = 1) -> int:
    """Size of a maximum one-to-one matching under the same tolerances."""
    if len(detections) == 0 or len(annotations) == 0:
        return 0
    feasible, _, _ = _feasibility(detections, annotations, spatial_tol, temporal_tol)
    rows, cols = linear_sum_assignment(feasible.astype(int), maximize=True)
    return int(feasible[rows, cols].sum())


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def compute_metrics(result: MatchResult) -> Metrics:
    tp, fp, fn = result.tp, result.fp, result.fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return Metrics(precision, recall, f1_score(precision, recall), tp, fp, fn,
                   result.temporal_tolerance, result.spatial_tolerance)


def evaluate(detections: AnnotationSet, annotations: AnnotationSet, spatial_tol: float = SPATIAL_TOLERANCE,
             temporal_tolerances: Tuple[int, ...] = (1, 3)) -> List[Metrics]:
    """Metrics for each temporal tolerance."""
    return [compute_metrics(match(detections, annotations, spatial_tol, th)) for th in temporal_tolerances]


def matched_points(result: MatchResult, detections: AnnotationSet,
                   annotations: AnnotationSet) -> List[Tuple[EventPoint, EventPoint]]:
    return [(detections.points[i], annotations.points[j]) for i, j in result.pairs]
