"""M3: supervised bidirectional-ConvLSTM mitosis detector."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from imaging.annotations import AnnotationError, AnnotationSet, DetectionSet, EventPoint
from imaging.frames import AUGMENTATIONS, FrameSequence, apply_augmentation
from imaging.morphology import BinaryVolume, binarize, binary_mask, dilate3d
from imaging.regions import label_regions, mass_center
from models.training import StepResult, TrainingTrace, run_training, spawn_generators
from numerics.checkpoint import load_checkpoint, restore_into, save_checkpoint
from numerics.layers import (
    ConvLSTMParams,
    ConvLSTMState,
    LayerParams,
    binary_cross_entropy,
    conv2d,
    convlstm_step,
    dropout,
)
from numerics.optim import OptimizerState
from numerics.tensor import Tensor, concat, no_grad, stack_sum
from utils.progress import ProgressTracker

LABEL_DILATIONS = 3
DETECTION_THRESHOLD = 0.5


class SequenceLengthError(ValueError):
    """Raised when a sequence or window does not match the model's k."""
    pass


@dataclass
class M3Config:
    k: int = 8
    iterations: int = 6000
    hidden: int = 16
    decoder_width: int = 16
    kernel: int = 3
    dropout: float = 0.3
    learning_rate: float = 1e-3
    decay: float = 0.9
    stride: int = 2
    workers: int = 1
    seed: int = 0

    @classmethod
    def from_section(cls, section: Mapping[str, Any], seed: int, k: int) -> "M3Config":
        known = {f.name for f in fields(cls)} - {"k", "seed"}
        return cls(k=k, seed=seed, **{key: v for key, v in section.items() if key in known})


@dataclass
class M3Model:
    forward: ConvLSTMParams
    backward: ConvLSTMParams
    decoder: List[LayerParams]
    k: int
    dropout: float = 0.3

    @classmethod
    def initialize(cls, cfg: M3Config, rng: np.random.Generator) -> "M3Model":
        forward = ConvLSTMParams.create("fwd", 1, cfg.hidden, cfg.kernel, rng)
        backward = ConvLSTMParams.create("bwd", 1, cfg.hidden, cfg.kernel, rng)
        decoder = [
            LayerParams.create("dec0", 2 * cfg.hidden, cfg.decoder_width, cfg.kernel, rng),
            LayerParams.create("dec1", cfg.decoder_width, 1, 1, rng),
        ]
        return cls(forward, backward, decoder, cfg.k, cfg.dropout)

    def parameters(self) -> Dict[str, Tensor]:
        named = {**self.forward.named(), **self.backward.named()}
        for layer in self.decoder:
            named.update(layer.named())
        return named

    def mirrored(self) -> "M3Model":
        """Swap the two directions (and the decoder's matching input halves)."""
        n = self.forward.hidden_channels

        def copy_lstm(source: ConvLSTMParams, role: str) -> ConvLSTMParams:
            gates = LayerParams(Tensor(source.gates.kernels.data.copy(), True, f"{role}.kernels"),
                                Tensor(source.gates.biases.data.copy(), True, f"{role}.biases"), role)
            return ConvLSTMParams(gates, source.hidden_channels)

        first = self.decoder[0]
        swapped = np.concatenate([first.kernels.data[:, n:], first.kernels.data[:, :n]], axis=1)
        decoder = [
            LayerParams(Tensor(swapped, True, "dec0.kernels"), Tensor(first.biases.data.copy(), True, "dec0.biases"), "dec0"),
            LayerParams(Tensor(self.decoder[1].kernels.data.copy(), True, "dec1.kernels"),
                        Tensor(self.decoder[1].biases.data.copy(), True, "dec1.biases"), "dec1"),
        ]
        return M3Model(copy_lstm(self.backward, "fwd"), copy_lstm(self.forward, "bwd"), decoder, self.k, self.dropout)


@dataclass
class MitosisLabelVolume:
    volume: BinaryVolume
    provenance: AnnotationSet = field(default_factory=AnnotationSet)


def build_labels(annotations: AnnotationSet, dims: Tuple[int, int, int], downscale_factor: int) -> MitosisLabelVolume:
    """Downscaled annotation voxels, each grown by three 3x3x3 dilations."""
    frames, height, width = dims
    f = downscale_factor
    seeds = np.zeros((frames, -(-height // f), -(-width // f)), dtype=np.uint8)
    for row_number, point in enumerate(annotations, start=1):
        if not (0 <= point.frame < frames and 0 <= point.row < height and 0 <= point.col < width):
            raise AnnotationError(f"annotation row {row_number} {point.as_tuple()} lies outside dims {dims}")
        seeds[point.frame, point.row // f, point.col // f] = 1
    return MitosisLabelVolume(dilate3d(BinaryVolume(seeds), LABEL_DILATIONS), annotations)


def _run_direction(frames: Sequence[np.ndarray], params: ConvLSTMParams) -> List[Tensor]:
    height, width = frames[0].shape
    state = ConvLSTMState.zeros(params.hidden_channels, height, width)
    hidden = []
    for frame in frames:
        state = convlstm_step(Tensor(frame[None]), state, params)
        hidden.append(state.hidden)
    return hidden


def m3_forward(window: np.ndarray, model: M3Model, train_mode: bool,
               rng: Optional[np.random.Generator] = None) -> List[Tensor]:
    """Per-frame mitosis probabilities (1 x H x W each) for one k-frame window."""
    window = np.asarray(window, dtype=np.float32)
    if window.shape[0] != model.k:
        raise SequenceLengthError(f"M3 window has {window.shape[0]} frames, model expects k = {model.k}")
    forward_hidden = _run_direction(list(window), model.forward)
    backward_hidden = _run_direction(list(window[::-1]), model.backward)[::-1]
    outputs = []
    for fwd, bwd in zip(forward_hidden, backward_hidden):
        features = dropout(concat([fwd, bwd], axis=0), model.dropout, rng, train_mode)
        decoded = conv2d(features, model.decoder[0], "relu")
        outputs.append(conv2d(decoded, model.decoder[1], "sigmoid"))
    return outputs


def m3_train(seq: FrameSequence, labels: MitosisLabelVolume, cfg: M3Config,
             progress: Optional[ProgressTracker] = None) -> Tuple[M3Model, TrainingTrace]:
    """Uniform k-window starts, round-robin augmentations, summed BCE per window."""
    frames = len(seq)
    if frames < cfg.k:
        raise SequenceLengthError(f"{frames} training frames is fewer than the sequence length k = {cfg.k}")
    if labels.volume.shape != seq.frames.shape:
        raise SequenceLengthError(f"labels {labels.volume.shape} do not match frames {seq.frames.shape}")
    init_rng, window_rng, dropout_rng = spawn_generators(cfg.seed, 3)
    model = M3Model.initialize(cfg, init_rng)

    def step(iteration: int) -> StepResult:
        start = int(window_rng.integers(0, frames - cfg.k + 1))
        name = AUGMENTATIONS[iteration % len(AUGMENTATIONS)]
        x = apply_augmentation(seq.frames[start:start + cfg.k], name)
        z = apply_augmentation(labels.volume.voxels[start:start + cfg.k], name).astype(np.float32)
        outputs = m3_forward(x, model, train_mode=True, rng=dropout_rng)
        loss = stack_sum([binary_cross_entropy(target[None], out) for target, out in zip(z, outputs)])
        return StepResult(loss, z.size, start, name)

    opt = OptimizerState(learning_rate=cfg.learning_rate, decay=cfg.decay)
    trace = run_training(model.parameters(), step, cfg.iterations, opt, progress, "M3")
    return model, trace


def window_starts(frames: int, k: int, stride: int = 2) -> List[int]:
    """0, stride, 2*stride, ... plus a right-aligned final window covering the tail."""
    if frames < k:
        raise SequenceLengthError(f"{frames} frames is fewer than the sequence length k = {k}")
    starts = list(range(0, frames - k + 1, stride))
    if starts[-1] != frames - k:
        starts.append(frames - k)
    return starts


def detection_volume(model: M3Model, seq: FrameSequence, stride: int = 2, workers: int = 1) -> np.ndarray:
    """Sum of the per-window binarized outputs, aligned on the sequence."""
    starts = window_starts(len(seq), model.k, stride)

    def one_window(start: int) -> np.ndarray:
        with no_grad():
            outputs = m3_forward(seq.frames[start:start + model.k], model, train_mode=False)
        return binary_mask(np.stack([out.data[0] for out in outputs]), DETECTION_THRESHOLD)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            masks = list(pool.map(one_window, starts))
    else:
        masks = [one_window(start) for start in starts]
    total = np.zeros(seq.frames.shape, dtype=np.int32)
    for start, mask in zip(starts, masks):
        total[start:start + model.k] += mask
    return total


def detections_from_volume(summed: np.ndarray, downscale_factor: int, frame_offset: int = 0,
                           link_overlap: int = 1, frame_shape: Optional[Tuple[int, int]] = None) -> DetectionSet:
    """One point per 3D region of the nonzero summed volume, at original resolution.

    ``frame_shape`` is the original (H, W); scaled centers are clipped into it
    when H or W is not a multiple of the factor.
    """
    if frame_shape is None:
        frame_shape = (summed.shape[1] * downscale_factor, summed.shape[2] * downscale_factor)
    max_row, max_col = frame_shape[0] - 1, frame_shape[1] - 1
    points = []
    for region in label_regions(binarize(summed, 0), link_overlap):
        frame, row, col = mass_center(region)
        points.append(EventPoint(frame + frame_offset, min(row * downscale_factor, max_row),
                                 min(col * downscale_factor, max_col)))
    return DetectionSet(points)


def m3_detect(model: M3Model, seq: FrameSequence, downscale_factor: int, frame_offset: int = 0,
              stride: int = 2, workers: int = 1, link_overlap: int = 1,
              frame_shape: Optional[Tuple[int, int]] = None) -> DetectionSet:
    summed = detection_volume(model, seq, stride, workers)
    return detections_from_volume(summed, downscale_factor, frame_offset, link_overlap, frame_shape)


def save_m3(model: M3Model, directory: Union[str, Path], cfg: M3Config, extra: Optional[Mapping[str, Any]] = None) -> Path:
    meta = {"k": model.k, "hidden": cfg.hidden, "decoder_width": cfg.decoder_width, "kernel": cfg.kernel,
            "dropout": model.dropout, "seed": cfg.seed, "iterations": cfg.iterations, **(extra or {})}
    return save_checkpoint(directory, "M3", model.parameters(), meta)


def load_m3(directory: Union[str, Path]) -> Tuple[M3Model, Dict[str, Any]]:
    manifest, arrays = load_checkpoint(directory, "M3")
    cfg = M3Config(k=manifest["k"], hidden=manifest["hidden"], decoder_width=manifest["decoder_width"],
                   kernel=manifest["kernel"], dropout=manifest["dropout"])
    model = M3Model.initialize(cfg, np.random.default_rng(0))
    restore_into(model.parameters(), arrays)
    return model, manifest
