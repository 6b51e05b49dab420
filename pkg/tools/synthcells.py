"""Synthetic phase-contrast-like cell videos with planted mitoses and exact ground truth.

Cells are dark discs with a bright halo on a mid-gray background. A cell in
mitosis turns into a bright compact blob, then into two bright overlapping
daughters, and leaves the normal-cell mask for the whole event. The first
frame after the event shows the daughters apart and carries the annotation.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
from skimage.draw import disk

from imaging.annotations import AnnotationSet, EventPoint, read_points_csv, write_points_csv
from imaging.frames import FrameSequence, save_sequence
from imaging.morphology import BinaryVolume
from numerics.ctn import load_ctn, save_ctn

HALO_WIDTH = 2
PLACEMENT_RETRIES = 1000
AXIS_ATTEMPTS = 8
BLOB_SCALE = 0.6
OVERLAP_SEPARATIONS = (0.5, 0.85)
DISJOINT_GAP = 3.0


class OvercrowdingError(RuntimeError):
    """Raised when no free position is left for a cell."""

    def __init__(self, message: str, frame: int):
        super().__init__(message)
        self.frame = frame


@dataclass
class SceneConfig:
    height: int = 96
    width: int = 128
    frames: int = 160
    cells: int = 25
    radius_min: float = 6.0
    radius_max: float = 9.0
    step_sigma: float = 0.5
    mitosis_rate: float = 0.01
    length_min: int = 4
    length_max: int = 9
    background: float = 0.55
    interior_contrast: float = 0.25
    halo_contrast: float = 0.3
    noise_sigma: float = 0.02
    growth_rate: float = 0.25
    death_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.length_min < 2 or self.length_min > self.length_max:
            raise ValueError(f"event lengths need 2 <= min <= max, got [{self.length_min}, {self.length_max}]")
        if not 0 < self.radius_min <= self.radius_max:
            raise ValueError(f"radius range must be positive and ordered, got [{self.radius_min}, {self.radius_max}]")
        for name in ("mitosis_rate", "death_rate", "step_sigma", "noise_sigma", "growth_rate"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")

    @classmethod
    def from_section(cls, section: Mapping[str, Any], seed: int) -> "SceneConfig":
        known = {f.name for f in fields(cls)}
        return cls(seed=seed, **{k: v for k, v in section.items() if k in known})


@dataclass
class EventSpan:
    kind: str
    cell: int
    start: int
    end: int
    point: Optional[Tuple[int, int, int]] = None

    @property
    def length(self) -> int:
        return self.end - self.start + 1


@dataclass
class GroundTruth:
    annotations: AnnotationSet
    normal_mask: BinaryVolume
    events: List[EventSpan] = field(default_factory=list)

    def mitosis_lengths(self) -> List[int]:
        return [e.length for e in self.events if e.kind == "mitosis"]


@dataclass
class _Cell:
    ident: int
    row: float
    col: float
    radius: float
    target_radius: float
    normal_since: int
    kind: str = "normal"
    start: int = 0
    length: int = 0
    axis: Tuple[float, float] = (0.0, 0.0)
    daughter_radii: Tuple[float, float] = (0.0, 0.0)

    @property
    def extent(self) -> float:
        """Radius of the footprint the cell may occupy, halo included."""
        if self.kind == "mitosis":
            return self.radius + DISJOINT_GAP / 2 + 2 * HALO_WIDTH
        if self.kind == "death":
            return self.radius * 1.5 + HALO_WIDTH
        return self.radius + HALO_WIDTH


class _Scene:
    def __init__(self, cfg: SceneConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.cells: List[_Cell] = []
        self.next_ident = 0
        self.events: List[EventSpan] = []
        self.open_events: Dict[int, EventSpan] = {}
        self.points: List[EventPoint] = []

    def _fits(self, row: float, col: float, extent: float, ignore: Tuple[int, ...] = ()) -> bool:
        cfg = self.cfg
        if not (extent <= row <= cfg.height - 1 - extent and extent <= col <= cfg.width - 1 - extent):
            return False
        for other in self.cells:
            if other.ident in ignore:
                continue
            if math.hypot(row - other.row, col - other.col) < extent + other.extent:
                return False
        return True

    def _new_cell(self, row: float, col: float, radius: float, target: float, frame: int) -> _Cell:
        cell = _Cell(self.next_ident, row, col, radius, target, normal_since=frame)
        self.next_ident += 1
        return cell

    def seed_cells(self) -> None:
        cfg = self.cfg
        for _ in range(cfg.cells):
            for _ in range(PLACEMENT_RETRIES):
                radius = float(self.rng.uniform(cfg.radius_min, cfg.radius_max))
                row = float(self.rng.uniform(0, cfg.height - 1))
                col = float(self.rng.uniform(0, cfg.width - 1))
                if self._fits(row, col, radius + HALO_WIDTH):
                    self.cells.append(self._new_cell(row, col, radius, radius, 0))
                    break
            else:
                raise OvercrowdingError(
                    f"No room for cell {len(self.cells) + 1} of {cfg.cells} in a {cfg.height}x{cfg.width} frame", 0)

    def _daughter_centers(self, cell: _Cell, separation: float) -> Tuple[Tuple[float, float], Tuple[float, float]]:
        dr, dc = cell.axis
        half = separation / 2
        return (cell.row - dr * half, cell.col - dc * half), (cell.row + dr * half, cell.col + dc * half)

    def finish_events(self, frame: int) -> None:
        survivors: List[_Cell] = []
        for cell in self.cells:
            if cell.kind == "normal" or frame < cell.start + cell.length:
                survivors.append(cell)
                continue
            span = self.open_events.pop(cell.ident)
            if cell.kind == "death":
                continue
            r1, r2 = cell.daughter_radii
            first, second = self._daughter_centers(cell, r1 + r2 + DISJOINT_GAP)
            for (row, col), radius in ((first, r1), (second, r2)):
                target = float(self.rng.uniform(self.cfg.radius_min, self.cfg.radius_max))
                survivors.append(self._new_cell(row, col, radius, target, frame))
            point = (frame, int(np.clip(math.floor(cell.row + 0.5), 0, self.cfg.height - 1)),
                     int(np.clip(math.floor(cell.col + 0.5), 0, self.cfg.width - 1)))
            span.point = point
            self.points.append(EventPoint(*point))
        self.cells = survivors

    def _plan_mitosis(self, cell: _Cell, frame: int) -> bool:
        cfg = self.cfg
        length = int(self.rng.integers(cfg.length_min, cfg.length_max + 1))
        if frame + length > cfg.frames - 1:
            return False
        radii = tuple(float(cell.radius / 2 * self.rng.uniform(0.9, 1.1)) for _ in range(2))
        for _ in range(AXIS_ATTEMPTS):
            angle = float(self.rng.uniform(0, np.pi))
            cell.axis = (math.sin(angle), math.cos(angle))
            centers = self._daughter_centers(cell, radii[0] + radii[1] + DISJOINT_GAP)
            if all(self._fits(row, col, r + HALO_WIDTH, ignore=(cell.ident,))
                   for (row, col), r in zip(centers, radii)):
                cell.kind, cell.start, cell.length, cell.daughter_radii = "mitosis", frame, length, radii
                return True
        return False

    def start_events(self, frame: int) -> None:
        cfg = self.cfg
        if frame == 0:
            return
        for cell in self.cells:
            if cell.kind != "normal" or cell.normal_since >= frame:
                continue
            if cfg.death_rate > 0 and self.rng.random() < cfg.death_rate:
                length = int(self.rng.integers(cfg.length_min, cfg.length_max + 1))
                if frame + length <= cfg.frames - 1 and self._fits(cell.row, cell.col, cell.radius * 1.5 + HALO_WIDTH,
                                                                    ignore=(cell.ident,)):
                    cell.kind, cell.start, cell.length = "death", frame, length
            elif self.rng.random() < cfg.mitosis_rate:
                self._plan_mitosis(cell, frame)
            if cell.kind != "normal":
                span = EventSpan(cell.kind, cell.ident, frame, frame + cell.length - 1)
                self.events.append(span)
                self.open_events[cell.ident] = span

    def render(self, frame: int) -> Tuple[np.ndarray, np.ndarray]:
        cfg = self.cfg
        shape = (cfg.height, cfg.width)
        image = np.full(shape, cfg.background, dtype=np.float64)
        mask = np.zeros(shape, dtype=np.uint8)
        bright = cfg.background + cfg.halo_contrast
        dark = cfg.background - cfg.interior_contrast
        for cell in self.cells:
            center = (cell.row, cell.col)
            if cell.kind == "normal":
                image[disk(center, cell.radius + HALO_WIDTH, shape=shape)] = bright
                interior = disk(center, cell.radius, shape=shape)
                image[interior] = dark
                mask[interior] = 1
            elif cell.kind == "mitosis":
                step = frame - cell.start
                overlap_step = step - (cell.length - len(OVERLAP_SEPARATIONS))
                if overlap_step < 0:
                    image[disk(center, max(cell.radius * BLOB_SCALE, 2.0), shape=shape)] = bright
                    continue
                r1, r2 = cell.daughter_radii
                centers = self._daughter_centers(cell, (r1 + r2) * OVERLAP_SEPARATIONS[overlap_step])
                for daughter, radius in zip(centers, (r1, r2)):
                    image[disk(daughter, radius, shape=shape)] = bright
            else:
                step = frame - cell.start
                fade = (step + 1) / (cell.length + 1)
                swollen = cell.radius * (1.0 + 0.5 * step / max(cell.length - 1, 1))
                image[disk(center, swollen, shape=shape)] = dark + (cfg.background - dark) * fade
        image += self.rng.normal(0.0, cfg.noise_sigma, size=shape)
        return np.clip(image, 0.0, 1.0), mask

    def move(self) -> None:
        cfg = self.cfg
        for cell in self.cells:
            if cell.kind != "normal":
                continue
            if cell.radius < cell.target_radius:
                grown = min(cell.target_radius, cell.radius + cfg.growth_rate)
                if self._fits(cell.row, cell.col, grown + HALO_WIDTH, ignore=(cell.ident,)):
                    cell.radius = grown
            if cfg.step_sigma <= 0:
                continue
            d_row, d_col = self.rng.normal(0.0, cfg.step_sigma, size=2)
            row = _reflect(cell.row + d_row, cell.extent, cfg.height - 1 - cell.extent)
            col = _reflect(cell.col + d_col, cell.extent, cfg.width - 1 - cell.extent)
            if self._fits(row, col, cell.extent, ignore=(cell.ident,)):
                cell.row, cell.col = row, col


def _reflect(value: float, low: float, high: float) -> float:
    if high <= low:
        return (low + high) / 2
    if value < low:
        value = 2 * low - value
    if value > high:
        value = 2 * high - value
    return float(min(max(value, low), high))


def simulate(cfg: SceneConfig) -> Tuple[FrameSequence, GroundTruth]:
    """Render ``cfg.frames`` frames; the same config always yields identical output."""
    scene = _Scene(cfg, np.random.default_rng(cfg.seed))
    scene.seed_cells()
    frames = np.zeros((cfg.frames, cfg.height, cfg.width), dtype=np.float32)
    masks = np.zeros((cfg.frames, cfg.height, cfg.width), dtype=np.uint8)
    for t in range(cfg.frames):
        scene.finish_events(t)
        scene.start_events(t)
        frames[t], masks[t] = scene.render(t)
        scene.move()
    truth = GroundTruth(AnnotationSet(scene.points), BinaryVolume(masks), scene.events)
    return FrameSequence(frames, source_id=f"synthcells:seed{cfg.seed}"), truth


def save_scene(seq: FrameSequence, truth: GroundTruth, directory: Union[str, Path],
               cfg: Optional[SceneConfig] = None) -> Path:
    """video/ PGM frames, annotations.csv, normal_mask.ctn and ground_truth.json."""
    directory = Path(directory)
    save_sequence(seq, directory / "video")
    write_points_csv(truth.annotations, directory / "annotations.csv")
    save_ctn(directory / "normal_mask.ctn", truth.normal_mask.voxels)
    payload: Dict[str, Any] = {
        "config": asdict(cfg) if cfg else None,
        "events": [{**asdict(e), "length": e.length} for e in truth.events],
    }
    path = directory / "ground_truth.json"
    path.write_text(json.dumps(payload, indent=2))
    return path


def load_ground_truth(directory: Union[str, Path]) -> GroundTruth:
    directory = Path(directory)
    payload = json.loads((directory / "ground_truth.json").read_text())
    events = [EventSpan(e["kind"], e["cell"], e["start"], e["end"],
                        tuple(e["point"]) if e["point"] is not None else None)
              for e in payload["events"]]
    return GroundTruth(read_points_csv(directory / "annotations.csv"),
                       BinaryVolume(load_ctn(directory / "normal_mask.ctn")), events)
