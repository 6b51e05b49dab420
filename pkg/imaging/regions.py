"""Spatio-temporal regions: 2D components per frame merged across frames by overlap."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np
from scipy import ndimage

from imaging.morphology import SQUARE_3X3, BinaryVolume


class DisjointSet:
    """Union-find with path compression and union by rank."""

    def __init__(self, size: int):
        self.parent = list(range(size))
        self.rank = [0] * size

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, x: int, y: int) -> None:
        x_root, y_root = self.find(x), self.find(y)
        if x_root == y_root:
            return
        if self.rank[x_root] < self.rank[y_root]:
            x_root, y_root = y_root, x_root
        self.parent[y_root] = x_root
        if self.rank[x_root] == self.rank[y_root]:
            self.rank[x_root] += 1


@dataclass
class Region3D:
    """One connected voxel set; ``voxels`` is an N x 3 array of (t, row, col)."""
    voxels: np.ndarray
    first_frame: int
    last_frame: int
    footprints: Dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def temporal_length(self) -> int:
        return self.last_frame - self.first_frame + 1

    @property
    def size(self) -> int:
        return int(self.voxels.shape[0])

    @classmethod
    def from_voxels(cls, voxels: np.ndarray) -> "Region3D":
        voxels = np.asarray(voxels, dtype=np.int64).reshape(-1, 3)
        if voxels.shape[0] == 0:
            raise ValueError("Region3D needs at least one voxel")
        voxels = voxels[np.lexsort((voxels[:, 2], voxels[:, 1], voxels[:, 0]))]
        frames = voxels[:, 0]
        footprints = {int(t): voxels[frames == t, 1:] for t in np.unique(frames)}
        return cls(voxels, int(frames.min()), int(frames.max()), footprints)

    def sort_key(self) -> Tuple[int, int, int]:
        return self.first_frame, int(self.voxels[:, 1].min()), int(self.voxels[:, 2].min())


def label_regions(vol: BinaryVolume, min_overlap: int = 1) -> List[Region3D]:
    """Label 8-connected 2D components, then merge components in consecutive
    frames that share at least ``min_overlap`` pixel positions."""
    voxels = vol.voxels
    frames = voxels.shape[0]
    labels = np.zeros(voxels.shape, dtype=np.int64)
    offset = 0
    for t in range(frames):
        frame_labels, count = ndimage.label(voxels[t], structure=SQUARE_3X3)
        labels[t] = np.where(frame_labels > 0, frame_labels + offset, 0)
        offset += count
    if offset == 0:
        return []

    components = DisjointSet(offset + 1)
    for t in range(frames - 1):
        both = (labels[t] > 0) & (labels[t + 1] > 0)
        if not both.any():
            continue
        pairs = np.stack([labels[t][both], labels[t + 1][both]], axis=1)
        unique_pairs, counts = np.unique(pairs, axis=0, return_counts=True)
        for (a, b), shared in zip(unique_pairs, counts):
            if shared >= min_overlap:
                components.union(int(a), int(b))

    coords = np.argwhere(labels > 0)
    flat_labels = labels[labels > 0]
    roots = np.array([components.find(int(label)) for label in range(offset + 1)])
    region_ids = roots[flat_labels]
    order = np.argsort(region_ids, kind="stable")
    region_ids, coords = region_ids[order], coords[order]
    boundaries = np.flatnonzero(np.diff(region_ids)) + 1
    regions = [Region3D.from_voxels(group) for group in np.split(coords, boundaries)]
    return sorted(regions, key=Region3D.sort_key)


def region_lengths(vol: BinaryVolume, min_overlap: int = 1) -> List[int]:
    return [region.temporal_length for region in label_regions(vol, min_overlap)]


def mass_center(region: Region3D) -> Tuple[int, int, int]:
    """Mean voxel coordinate, rounded half-up on each axis."""
    if region.size == 0:
        raise ValueError("mass_center of an empty region")
    means = region.voxels.mean(axis=0)
    frame, row, col = (int(np.floor(m + 0.5)) for m in means)
    return frame, row, col
