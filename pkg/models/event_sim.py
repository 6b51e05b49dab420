"""Artificial ground truth for M2: cut parts out of cell trajectories to emulate events."""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from imaging.morphology import BinaryVolume
from imaging.regions import label_regions
from numerics.ctn import save_ctn


class EmptyMapWarning(UserWarning):
    """The normal-cell map handed to the simulator holds no cells."""
    pass


@dataclass
class EventSimConfig:
    probability: float = 0.3
    length_min: int = 2
    length_max: int = 10
    min_flank: int = 1
    link_overlap: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"event probability must lie in [0, 1], got {self.probability}")
        if not 1 <= self.length_min <= self.length_max:
            raise ValueError(f"removal lengths need 1 <= min <= max, got [{self.length_min}, {self.length_max}]")
        if self.min_flank < 0:
            raise ValueError(f"min_flank must be >= 0, got {self.min_flank}")

    @classmethod
    def from_section(cls, section: Mapping[str, Any], seed: int, link_overlap: int = 1) -> "EventSimConfig":
        return cls(probability=section["probability"], length_min=section["length_min"],
                   length_max=section["length_max"], min_flank=section["min_flank"],
                   link_overlap=link_overlap, seed=seed)

    @property
    def mean_length(self) -> float:
        return (self.length_min + self.length_max) / 2.0


@dataclass
class Removal:
    region: int
    start: int
    end: int

    @property
    def length(self) -> int:
        return self.end - self.start + 1


@dataclass
class TrainingPair:
    """Context c (cells in their normal stage) and events e; c + e equals the source map."""
    context: BinaryVolume
    events: BinaryVolume
    removals: List[Removal] = field(default_factory=list)


def generate_pair(y: BinaryVolume, cfg: EventSimConfig, rng: Optional[np.random.Generator] = None,
                  forced: Optional[Mapping[int, Tuple[int, int]]] = None) -> TrainingPair:
    """Remove a random interior interval from a random subset of trajectories.

    ``forced`` maps a region index (in label order) to an explicit
    [start, end] interval and bypasses the random draw for that region.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    if y.is_empty():
        warnings.warn("generate_pair got an empty normal-cell map", EmptyMapWarning, stacklevel=2)
        return TrainingPair(BinaryVolume(y.voxels.copy()), BinaryVolume(np.zeros_like(y.voxels)))

    flank = cfg.min_flank
    events = np.zeros_like(y.voxels)
    removals: List[Removal] = []
    for index, region in enumerate(label_regions(y, cfg.link_overlap)):
        if forced is not None and index in forced:
            start, end = forced[index]
        else:
            if region.temporal_length < 2 * flank + 2:
                continue
            if rng.random() >= cfg.probability:
                continue
            interior_first = region.first_frame + flank
            interior_last = region.last_frame - flank
            drawn = int(rng.integers(cfg.length_min, cfg.length_max + 1))
            length = min(drawn, interior_last - interior_first + 1)
            start = int(rng.integers(interior_first, interior_last - length + 2))
            end = start + length - 1
        inside = (region.voxels[:, 0] >= start) & (region.voxels[:, 0] <= end)
        t, r, c = region.voxels[inside].T
        events[t, r, c] = 1
        removals.append(Removal(index, int(start), int(end)))
    context = y.voxels - events
    return TrainingPair(BinaryVolume(context), BinaryVolume(events), removals)


def save_pair(pair: TrainingPair, directory: Union[str, Path], seed: int) -> Path:
    """Two ``.ctn`` volumes plus a JSON sidecar with the seed and removal intervals."""
    directory = Path(directory)
    save_ctn(directory / "context.ctn", pair.context.voxels)
    save_ctn(directory / "events.ctn", pair.events.voxels)
    sidecar: Dict[str, Any] = {"seed": seed, "removals": [asdict(r) for r in pair.removals]}
    path = directory / "pair.json"
    path.write_text(json.dumps(sidecar, indent=2))
    return path
