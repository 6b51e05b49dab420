"""Machine-readable stage outputs: JSON documents, length histograms, sweep tables."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from analyzers.detection_metrics import Metrics
from models.m2_predictor import EventStats, KRecommendation

PathLike = Union[str, Path]
MISSING_CELL = "-"


def write_json(path: PathLike, payload: Any) -> Path:
    """Stable JSON: sorted keys, two-space indent, trailing newline."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def read_json(path: PathLike) -> Any:
    return json.loads(Path(path).read_text())


def stats_payload(predicted: EventStats, reference: Optional[EventStats] = None) -> Dict[str, Any]:
    """Predicted stats as flat top-level keys; the simulator's true stats, if any, under ``ground_truth``."""
    payload: Dict[str, Any] = predicted.to_dict()
    if reference is not None:
        payload["ground_truth"] = reference.to_dict()
    return payload


def write_event_stats(path: PathLike, predicted: EventStats, reference: Optional[EventStats] = None) -> Path:
    return write_json(path, stats_payload(predicted, reference))


def write_length_histogram(path: PathLike, lengths: Sequence[int]) -> Path:
    """``length,count`` rows for every observed temporal length, ascending."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values, counts = np.unique(np.asarray(lengths, dtype=np.int64), return_counts=True)
    pd.DataFrame({"length": values, "count": counts}).to_csv(path, index=False, lineterminator="\n")
    return path


def write_k_recommendation(path: PathLike, recommendation: KRecommendation) -> Path:
    return write_json(path, recommendation.to_dict())


def write_metrics(path: PathLike, metrics: Iterable[Metrics]) -> Path:
    return write_json(path, [m.to_dict() for m in metrics])


def format_metrics(metrics: Metrics) -> str:
    return (f"th={metrics.th}: P={metrics.precision:.3f} R={metrics.recall:.3f} F1={metrics.f1:.3f} "
            f"(tp={metrics.tp}, fp={metrics.fp}, fn={metrics.fn})")


def sweep_frame(rows: List[Mapping[str, Any]]) -> pd.DataFrame:
    """Long-form sweep results: one row per (k, frames, th)."""
    columns = ["k", "frames", "th", "events", "precision", "recall", "f1", "tp", "fp", "fn"]
    return pd.DataFrame(list(rows), columns=columns).sort_values(["th", "k", "frames"], kind="stable")


def pivot_sweep(results: pd.DataFrame, th: int, k_values: Sequence[int],
                frame_values: Sequence[int]) -> pd.DataFrame:
    """k x frames table of F1 at one tolerance; cells with frames < k hold '-'."""
    subset = results[results["th"] == th].set_index(["k", "frames"])["f1"]
    table = pd.DataFrame(index=pd.Index(list(k_values), name="k"),
                         columns=[str(f) for f in frame_values], dtype=object)
    for k in k_values:
        for frames in frame_values:
            if frames < k or (k, frames) not in subset.index:
                table.loc[k, str(frames)] = MISSING_CELL
            else:
                table.loc[k, str(frames)] = f"{subset.loc[(k, frames)]:.3f}"
    return table


def write_sweep(directory: PathLike, results: pd.DataFrame, k_values: Sequence[int],
                frame_values: Sequence[int], tolerances: Sequence[int],
                event_counts: Mapping[int, int]) -> List[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = [directory / "results.csv"]
    results.to_csv(written[0], index=False, lineterminator="\n")
    for th in tolerances:
        path = directory / f"table_th{th}.csv"
        pivot_sweep(results, th, k_values, frame_values).to_csv(path, lineterminator="\n")
        written.append(path)
    counts = pd.DataFrame({"frames": list(event_counts), "events": list(event_counts.values())})
    written.append(directory / "events.csv")
    counts.to_csv(written[-1], index=False, lineterminator="\n")
    return written
