"""Binarization, erosion and 3D dilation on binary volumes."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import ndimage

from numerics.tensor import Tensor

SQUARE_3X3 = np.ones((3, 3), dtype=bool)
CUBE_3X3X3 = np.ones((3, 3, 3), dtype=bool)


@dataclass
class BinaryVolume:
    """T x H x W voxels that are exactly 0 or 1."""
    voxels: np.ndarray

    def __post_init__(self):
        voxels = np.asarray(self.voxels)
        if voxels.ndim == 2:
            voxels = voxels[None]
        if voxels.ndim != 3:
            raise ValueError(f"BinaryVolume needs T x H x W, got {voxels.shape}")
        if voxels.size and not np.isin(voxels, (0, 1)).all():
            raise ValueError("BinaryVolume values must be exactly 0 or 1")
        self.voxels = voxels.astype(np.uint8)

    @classmethod
    def empty(cls, frames: int, height: int, width: int) -> "BinaryVolume":
        return cls(np.zeros((frames, height, width), dtype=np.uint8))

    @property
    def shape(self):
        return self.voxels.shape

    def count(self) -> int:
        return int(self.voxels.sum())

    def is_empty(self) -> bool:
        return not self.voxels.any()

    def window(self, start: int, length: int) -> "BinaryVolume":
        return BinaryVolume(self.voxels[start:start + length])


def binary_mask(values: Union[Tensor, np.ndarray], threshold: float) -> np.ndarray:
    """1 where value > threshold (strict), else 0."""
    data = values.data if isinstance(values, Tensor) else np.asarray(values)
    return (data > threshold).astype(np.uint8)


def binarize(values: Union[Tensor, np.ndarray], threshold: float) -> BinaryVolume:
    return BinaryVolume(binary_mask(values, threshold))


def erode2d(frame: np.ndarray) -> np.ndarray:
    """Keep a pixel iff its whole 3x3 neighbourhood is set; outside the frame counts as 0."""
    return ndimage.binary_erosion(frame, structure=SQUARE_3X3, border_value=0).astype(np.uint8)


def dilate2d(frame: np.ndarray) -> np.ndarray:
    return ndimage.binary_dilation(frame, structure=SQUARE_3X3, border_value=0).astype(np.uint8)


def dilate3d(vol: BinaryVolume, iterations: int) -> BinaryVolume:
    """Grow by the full 3x3x3 element ``iterations`` times, clipped at the borders."""
    if iterations < 0:
        raise ValueError(f"iterations must be >= 0, got {iterations}")
    if iterations == 0 or vol.is_empty():
        return BinaryVolume(vol.voxels.copy())
    grown = ndimage.binary_dilation(vol.voxels, structure=CUBE_3X3X3, iterations=iterations, border_value=0)
    return BinaryVolume(grown.astype(np.uint8))
