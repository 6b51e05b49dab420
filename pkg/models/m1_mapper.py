"""M1: unsupervised extraction of the normal-cell map from raw frames.

A convolutional autoencoder whose bottleneck is forced to one active feature
map per pixel (channel softmax + winner-take-all). During training one random
map is dropped and uniform noise is added, so each map has to carry a
structurally distinct part of the image. The map that looks like separate,
round cell interiors becomes the normal-cell map.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
from skimage.measure import label, regionprops

from imaging.frames import AUGMENTATIONS, FrameSequence, apply_augmentation
from imaging.morphology import BinaryVolume, binary_mask, erode2d
from models.training import StepResult, TrainingTrace, run_training, spawn_generators
from numerics.checkpoint import load_checkpoint, restore_into, save_checkpoint
from numerics.layers import (
    LayerParams,
    add_uniform_noise,
    binary_cross_entropy,
    channel_softmax_wta,
    conv2d,
    drop_channel,
)
from numerics.optim import OptimizerState
from numerics.tensor import Tensor, no_grad
from utils.progress import ProgressTracker


class DegenerateModelError(RuntimeError):
    """Raised when no feature map carries any structure."""
    pass


@dataclass
class M1Config:
    n: int = 6
    widths: Tuple[int, int] = (16, 16)
    kernel: int = 5
    iterations: int = 4000
    noise: float = 0.2
    channel_drop: bool = True
    learning_rate: float = 1e-3
    decay: float = 0.9
    area_min: int = 4
    area_max: int = 400
    compactness: float = 0.5
    sample_frames: int = 8
    seed: int = 0

    @classmethod
    def from_section(cls, section: Mapping[str, Any], seed: int) -> "M1Config":
        known = {f.name for f in fields(cls)}
        values = {k: v for k, v in section.items() if k in known}
        values["widths"] = tuple(values.get("widths", cls.widths))
        return cls(seed=seed, **values)


@dataclass
class M1Model:
    encoder: List[LayerParams]
    decoder: List[LayerParams]
    n: int
    noise: float = 0.2
    channel_drop: bool = True
    selected_channel: Optional[int] = None
    activated: List[int] = field(default_factory=list)

    @classmethod
    def initialize(cls, cfg: M1Config, rng: np.random.Generator) -> "M1Model":
        w0, w1 = cfg.widths
        k = cfg.kernel
        encoder = [
            LayerParams.create("enc0", 1, w0, k, rng),
            LayerParams.create("enc1", w0, w1, k, rng),
            LayerParams.create("enc2", w1, cfg.n, k, rng),
        ]
        decoder = [
            LayerParams.create("dec0", cfg.n, w1, k, rng),
            LayerParams.create("dec1", w1, w0, k, rng),
            LayerParams.create("dec2", w0, 1, 1, rng),
        ]
        return cls(encoder, decoder, cfg.n, cfg.noise, cfg.channel_drop)

    def parameters(self) -> Dict[str, Tensor]:
        named: Dict[str, Tensor] = {}
        for layer in self.encoder + self.decoder:
            named.update(layer.named())
        return named


def encode(model: M1Model, x: np.ndarray) -> Tensor:
    """Feature maps h (n x H x W), one-hot per pixel when n >= 2."""
    out = Tensor(np.asarray(x)[None])
    out = conv2d(out, model.encoder[0], "sigmoid")
    out = conv2d(out, model.encoder[1], "sigmoid")
    logits = conv2d(out, model.encoder[2])
    if model.n == 1:
        return logits.sigmoid()
    return channel_softmax_wta(logits)


def decode(model: M1Model, h: Tensor) -> Tensor:
    out = conv2d(h, model.decoder[0], "sigmoid")
    out = conv2d(out, model.decoder[1], "sigmoid")
    return conv2d(out, model.decoder[2], "sigmoid")


def m1_forward(model: M1Model, x: np.ndarray, rng: Optional[np.random.Generator],
               train_mode: bool) -> Tuple[Tensor, Tensor]:
    """Encode, (in training) drop one map and add noise, decode.

    Returns the feature maps h and the reconstruction x' (1 x H x W).
    """
    h = encode(model, x)
    decoder_input = h
    if train_mode:
        if model.channel_drop and model.n > 1:
            decoder_input, _ = drop_channel(decoder_input, rng)
        if model.noise > 0:
            decoder_input = add_uniform_noise(decoder_input, model.noise, rng)
    return h, decode(model, decoder_input)


def m1_train(seq: FrameSequence, cfg: M1Config,
             progress: Optional[ProgressTracker] = None) -> Tuple[M1Model, TrainingTrace]:
    """Minimize the reconstruction BCE, cycling over frames and their augmentations."""
    init_rng, train_rng = spawn_generators(cfg.seed, 2)
    model = M1Model.initialize(cfg, init_rng)
    augmented = [apply_augmentation(seq.frames, name) for name in AUGMENTATIONS]
    frames = len(seq)

    def step(iteration: int) -> StepResult:
        which = iteration % len(AUGMENTATIONS)
        x = augmented[which][(iteration // len(AUGMENTATIONS)) % frames]
        _, reconstruction = m1_forward(model, x, train_rng, train_mode=True)
        loss = binary_cross_entropy(x[None], reconstruction)
        return StepResult(loss, x.size, augmentation=AUGMENTATIONS[which])

    opt = OptimizerState(learning_rate=cfg.learning_rate, decay=cfg.decay)
    trace = run_training(model.parameters(), step, cfg.iterations, opt, progress, "M1")
    return model, trace


def feature_maps(model: M1Model, frame: np.ndarray) -> np.ndarray:
    with no_grad():
        return encode(model, frame).data


def _sample_indices(frames: int, wanted: int) -> np.ndarray:
    return np.unique(np.linspace(0, frames - 1, min(wanted, frames)).round().astype(int))


def _round_component_count(mask: np.ndarray, cfg: M1Config) -> int:
    count = 0
    for region in regionprops(label(mask, connectivity=2)):
        if not cfg.area_min <= region.area <= cfg.area_max or region.perimeter <= 0:
            continue
        if 4.0 * np.pi * region.area / region.perimeter ** 2 >= cfg.compactness:
            count += 1
    return count


def channel_scores(model: M1Model, seq: FrameSequence, cfg: M1Config) -> np.ndarray:
    """Mean number of compact, mid-sized components per sampled frame, per channel."""
    indices = _sample_indices(len(seq), cfg.sample_frames)
    scores = np.zeros(model.n)
    populated = np.zeros(model.n, dtype=bool)
    for index in indices:
        h = feature_maps(model, seq.frames[index])
        for channel in range(model.n):
            mask = binary_mask(h[channel], 0.0)
            populated[channel] |= bool(mask.any())
            scores[channel] += _round_component_count(erode2d(mask), cfg)
    if not populated.any():
        raise DegenerateModelError("Every M1 feature map is blank on the sampled frames")
    return scores / len(indices)


def select_cell_channel(model: M1Model, seq: FrameSequence, cfg: M1Config,
                        override: Optional[int] = None) -> int:
    """Pick the feature map of disconnected, round objects; ``override`` wins unconditionally."""
    if override is not None:
        if not 0 <= override < model.n:
            raise ValueError(f"Channel override {override} outside 0..{model.n - 1}")
        return int(override)
    return int(np.argmax(channel_scores(model, seq, cfg)))


def activated_channels(model: M1Model, seq: FrameSequence) -> List[int]:
    """Channels that are nonzero somewhere over the sequence."""
    active = np.zeros(model.n, dtype=bool)
    for frame in seq.frames:
        active |= feature_maps(model, frame).reshape(model.n, -1).any(axis=1)
    return [int(c) for c in np.flatnonzero(active)]


def extract_cell_maps(model: M1Model, seq: FrameSequence, workers: int = 1) -> BinaryVolume:
    """Selected feature map per frame, binarized (> 0) and eroded."""
    if model.selected_channel is None:
        raise ValueError("M1 model has no selected channel; run select_cell_channel first")
    channel = model.selected_channel

    def one_frame(frame: np.ndarray) -> np.ndarray:
        return erode2d(binary_mask(feature_maps(model, frame)[channel], 0.0))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            maps = list(pool.map(one_frame, seq.frames))
    else:
        maps = [one_frame(frame) for frame in seq.frames]
    return BinaryVolume(np.stack(maps))


def save_m1(model: M1Model, directory: Union[str, Path], cfg: M1Config) -> Path:
    meta = {
        "n": model.n,
        "widths": list(cfg.widths),
        "kernel": cfg.kernel,
        "noise": model.noise,
        "selected_channel": model.selected_channel,
        "activated_channels": model.activated,
        "seed": cfg.seed,
        "iterations": cfg.iterations,
    }
    return save_checkpoint(directory, "M1", model.parameters(), meta)


def load_m1(directory: Union[str, Path]) -> M1Model:
    manifest, arrays = load_checkpoint(directory, "M1")
    cfg = M1Config(n=manifest["n"], widths=tuple(manifest["widths"]), kernel=manifest["kernel"],
                   noise=manifest["noise"], seed=manifest["seed"])
    model = M1Model.initialize(cfg, np.random.default_rng(0))
    restore_into(model.parameters(), arrays)
    model.selected_channel = manifest["selected_channel"]
    model.activated = list(manifest.get("activated_channels", []))
    return model
