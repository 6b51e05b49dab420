"""Event point lists (annotations and detections) and their ``frame,row,col`` CSV form."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, List, Tuple, Union

import numpy as np
import pandas as pd

COLUMNS = ["frame", "row", "col"]


class AnnotationError(ValueError):
    """Raised for malformed or out-of-range event points."""
    pass


@dataclass(frozen=True)
class EventPoint:
    frame: int
    row: int
    col: int

    def as_tuple(self) -> Tuple[int, int, int]:
        return self.frame, self.row, self.col


@dataclass
class AnnotationSet:
    """Event points at original resolution, 0-based frame index."""
    points: List[EventPoint] = field(default_factory=list)

    @classmethod
    def from_tuples(cls, tuples: Iterable[Tuple[int, int, int]]) -> "AnnotationSet":
        return cls([EventPoint(int(f), int(r), int(c)) for f, r, c in tuples])

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self) -> Iterator[EventPoint]:
        return iter(self.points)

    def as_array(self) -> np.ndarray:
        return np.array([p.as_tuple() for p in self.points], dtype=np.int64).reshape(-1, 3)

    def within(self, start: int, stop: int) -> "AnnotationSet":
        """Points with start <= frame < stop, re-indexed so ``start`` becomes frame 0."""
        return type(self)([EventPoint(p.frame - start, p.row, p.col)
                           for p in self.points if start <= p.frame < stop])

    def shifted(self, frames: int) -> "AnnotationSet":
        return type(self)([EventPoint(p.frame + frames, p.row, p.col) for p in self.points])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.as_array(), columns=COLUMNS)


class DetectionSet(AnnotationSet):
    """Detected event centers at original resolution."""
    pass


def read_points_csv(path: Union[str, Path], kind: type = AnnotationSet) -> AnnotationSet:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Point file not found: {path}")
    try:
        table = pd.read_csv(path)
    except pd.errors.EmptyDataError as e:
        raise AnnotationError(f"{path.name}: empty file, expected header 'frame,row,col'") from e
    if list(table.columns) != COLUMNS:
        raise AnnotationError(f"{path.name}: header {list(table.columns)} is not 'frame,row,col'")
    points = []
    for row_number, record in enumerate(table.itertuples(index=False), start=1):
        try:
            values = tuple(pd.to_numeric(pd.Series([record.frame, record.row, record.col]), errors="raise"))
        except (TypeError, ValueError) as e:
            raise AnnotationError(f"{path.name}: row {row_number} is not numeric: {tuple(record)}") from e
        if any(pd.isna(v) or float(v) != int(v) or int(v) < 0 for v in values):
            raise AnnotationError(f"{path.name}: row {row_number} is not three non-negative integers: {values}")
        points.append(EventPoint(*(int(v) for v in values)))
    return kind(points)


def write_points_csv(points: AnnotationSet, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    points.to_frame().to_csv(path, index=False, lineterminator="\n")
    return path
