"""Frame sequences: PGM directory I/O, block-mean downscaling and the six augmentations."""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

FRAME_PATTERN = re.compile(r"^frame_(\d{5})\.pgm$")
AUGMENTATIONS = ("original", "hflip", "vflip", "rot90", "rot180", "rot270")


class FrameLoadError(ValueError):
    """Raised when a frame directory cannot be read as a sequence."""
    pass


@dataclass
class FrameSequence:
    """T x H x W grayscale frames with values in [0, 1]."""
    frames: np.ndarray
    frame_rate: Optional[float] = None
    source_id: str = ""

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 3 or self.frames.shape[0] < 1:
            raise ValueError(f"FrameSequence needs T x H x W with T >= 1, got {self.frames.shape}")
        if self.frames.size and (self.frames.min() < 0.0 or self.frames.max() > 1.0):
            raise ValueError(f"FrameSequence {self.source_id!r} has values outside [0, 1]")

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    def slice(self, start: int, stop: int) -> "FrameSequence":
        return FrameSequence(self.frames[start:stop], self.frame_rate, f"{self.source_id}[{start}:{stop}]")

    def with_frames(self, frames: np.ndarray, suffix: str) -> "FrameSequence":
        return FrameSequence(frames, self.frame_rate, f"{self.source_id}:{suffix}")


def read_pgm(path: Union[str, Path]) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as image:
            if image.format != "PPM" or image.mode != "L":
                raise FrameLoadError(f"{path.name}: not an 8-bit grayscale PGM (format {image.format}, mode {image.mode})")
            return np.asarray(image, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        raise FrameLoadError(f"{path.name}: malformed PGM ({e})") from e


def write_pgm(path: Union[str, Path], frame: np.ndarray) -> None:
    pixels = np.clip(np.rint(np.asarray(frame) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(pixels).save(path, format="PPM")


def load_sequence(directory: Union[str, Path], frame_rate: Optional[float] = None) -> FrameSequence:
    """Read ``frame_%05d.pgm`` files with contiguous indices from 0; v -> v/255."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FrameLoadError(f"Frame directory not found: {directory}")
    indexed: Dict[int, Path] = {}
    for path in directory.iterdir():
        match = FRAME_PATTERN.match(path.name)
        if match:
            indexed[int(match.group(1))] = path
    if not indexed:
        raise FrameLoadError(f"No frame_%05d.pgm files in {directory}")
    frames: List[np.ndarray] = []
    for index in range(max(indexed) + 1):
        if index not in indexed:
            raise FrameLoadError(f"Missing frame_{index:05d}.pgm in {directory}")
        pixels = read_pgm(indexed[index])
        if frames and pixels.shape != frames[0].shape:
            raise FrameLoadError(
                f"{indexed[index].name}: dims {pixels.shape} differ from frame_00000.pgm {frames[0].shape}"
            )
        frames.append(pixels)
    return FrameSequence(np.stack(frames).astype(np.float32) / 255.0, frame_rate, str(directory))


def save_sequence(seq: FrameSequence, directory: Union[str, Path]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for index, frame in enumerate(seq.frames):
        write_pgm(directory / f"frame_{index:05d}.pgm", frame)
    return directory


def downscale_array(volume: np.ndarray, factor: int) -> np.ndarray:
    """Block mean over the two trailing axes, edge-replicating to a multiple of ``factor``."""
    if factor < 1:
        raise ValueError(f"downscale factor must be >= 1, got {factor}")
    if factor == 1:
        return np.array(volume, dtype=np.float32)
    height, width = volume.shape[-2:]
    pad_h, pad_w = (-height) % factor, (-width) % factor
    if pad_h or pad_w:
        pads = [(0, 0)] * (volume.ndim - 2) + [(0, pad_h), (0, pad_w)]
        volume = np.pad(volume, pads, mode="edge")
    h, w = volume.shape[-2] // factor, volume.shape[-1] // factor
    blocks = volume.reshape(volume.shape[:-2] + (h, factor, w, factor))
    return blocks.mean(axis=(-3, -1), dtype=np.float64).astype(np.float32)


def downscale(seq: FrameSequence, factor: int) -> FrameSequence:
    return seq.with_frames(downscale_array(seq.frames, factor), f"down{factor}")


def upscale_repeat(volume: np.ndarray, factor: int) -> np.ndarray:
    """Nearest-neighbour replication over the two trailing axes."""
    return np.repeat(np.repeat(volume, factor, axis=-2), factor, axis=-1)


_TRANSFORMS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "original": lambda v: v,
    "hflip": lambda v: np.flip(v, axis=-1),
    "vflip": lambda v: np.flip(v, axis=-2),
    "rot90": lambda v: np.rot90(v, 1, axes=(-2, -1)),
    "rot180": lambda v: np.rot90(v, 2, axes=(-2, -1)),
    "rot270": lambda v: np.rot90(v, 3, axes=(-2, -1)),
}
_INVERSES = {"original": "original", "hflip": "hflip", "vflip": "vflip",
             "rot90": "rot270", "rot180": "rot180", "rot270": "rot90"}


def apply_augmentation(volume: np.ndarray, name: str) -> np.ndarray:
    """Apply one augmentation framewise (counter-clockwise rotations)."""
    if name not in _TRANSFORMS:
        raise ValueError(f"Unknown augmentation {name!r}; expected one of {AUGMENTATIONS}")
    return np.ascontiguousarray(_TRANSFORMS[name](volume))


def invert_augmentation(volume: np.ndarray, name: str) -> np.ndarray:
    return apply_augmentation(volume, _INVERSES[name])


def augment(seq: FrameSequence) -> List[FrameSequence]:
    """original, h-flip, v-flip, rot90, rot180, rot270 of the whole sequence."""
    return [seq.with_frames(apply_augmentation(seq.frames, name), name) for name in AUGMENTATIONS]
