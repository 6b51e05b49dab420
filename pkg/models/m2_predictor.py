"""M2: unsupervised prediction of cell-event occurrences from the normal-cell map.

Trained on artificial pairs (context in, removed trajectory parts out); at
inference the real map goes in and the predicted events come out. The
temporal lengths of the predicted event regions give the statistics that fix
the M3 sequence length.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from imaging.frames import AUGMENTATIONS, apply_augmentation
from imaging.morphology import BinaryVolume, binarize
from imaging.regions import label_regions
from models.event_sim import EventSimConfig, generate_pair
from models.training import StepResult, TrainingTrace, run_training, spawn_generators
from numerics.checkpoint import load_checkpoint, restore_into, save_checkpoint
from numerics.layers import (
    ConvLSTMParams,
    ConvLSTMState,
    LayerParams,
    binary_cross_entropy,
    conv2d,
    convlstm_step,
)
from numerics.optim import OptimizerState
from numerics.tensor import Tensor, no_grad, stack_sum
from utils.progress import ProgressTracker

EVENT_THRESHOLD = 0.5
PERCENTILE_METHODS = {"linear": "linear", "nearest": "inverted_cdf"}


class WindowError(ValueError):
    """Raised when a training window does not fit the sequence."""
    pass


class EmptyStatsError(ValueError):
    """Raised when no event region was found to derive k from."""
    pass


@dataclass
class M2Config:
    window: int = 20
    iterations: int = 2000
    channels: int = 16
    hidden: int = 16
    kernel: int = 3
    learning_rate: float = 1e-3
    decay: float = 0.9
    percentile_rule: str = "linear"
    seed: int = 0

    @classmethod
    def from_section(cls, section: Mapping[str, Any], seed: int) -> "M2Config":
        known = {f.name for f in fields(cls)}
        return cls(seed=seed, **{k: v for k, v in section.items() if k in known})


@dataclass
class M2Model:
    encoder: List[LayerParams]
    lstm: ConvLSTMParams
    decoder: List[LayerParams]

    @classmethod
    def initialize(cls, cfg: M2Config, rng: np.random.Generator) -> "M2Model":
        c, k = cfg.channels, cfg.kernel
        encoder = [LayerParams.create("enc0", 1, c, k, rng), LayerParams.create("enc1", c, c, k, rng)]
        lstm = ConvLSTMParams.create("lstm", c, cfg.hidden, k, rng)
        decoder = [LayerParams.create("dec0", cfg.hidden, c, k, rng), LayerParams.create("dec1", c, 1, 1, rng)]
        return cls(encoder, lstm, decoder)

    def parameters(self) -> Dict[str, Tensor]:
        named: Dict[str, Tensor] = {}
        for layer in self.encoder:
            named.update(layer.named())
        named.update(self.lstm.named())
        for layer in self.decoder:
            named.update(layer.named())
        return named


def m2_sequence_forward(model: M2Model, frames: np.ndarray) -> List[Tensor]:
    """Run the encoder, the ConvLSTM from a zero state and the decoder over T frames."""
    _, height, width = frames.shape
    state = ConvLSTMState.zeros(model.lstm.hidden_channels, height, width)
    outputs = []
    for frame in frames:
        features = conv2d(Tensor(frame[None]), model.encoder[0], "relu")
        features = conv2d(features, model.encoder[1], "relu")
        state = convlstm_step(features, state, model.lstm)
        decoded = conv2d(state.hidden, model.decoder[0], "relu")
        outputs.append(conv2d(decoded, model.decoder[1], "sigmoid"))
    return outputs


def sequence_loss(model: M2Model, context: np.ndarray, events: np.ndarray) -> Tensor:
    """BCE of predicted against artificial events, summed over the window."""
    outputs = m2_sequence_forward(model, context.astype(np.float32))
    return stack_sum([binary_cross_entropy(e[None].astype(np.float32), out)
                      for e, out in zip(events, outputs)])


def m2_train(y: BinaryVolume, sim_cfg: EventSimConfig, cfg: M2Config,
             progress: Optional[ProgressTracker] = None) -> Tuple[M2Model, TrainingTrace]:
    """Each iteration draws a fresh artificial pair on a random, augmented window of y."""
    frames = y.shape[0]
    if cfg.window > frames:
        raise WindowError(f"M2 window of {cfg.window} frames exceeds the {frames}-frame map")
    init_rng, window_rng, sim_rng = spawn_generators(cfg.seed, 3)
    model = M2Model.initialize(cfg, init_rng)

    def step(iteration: int) -> StepResult:
        start = int(window_rng.integers(0, frames - cfg.window + 1))
        name = AUGMENTATIONS[iteration % len(AUGMENTATIONS)]
        window = BinaryVolume(apply_augmentation(y.voxels[start:start + cfg.window], name))
        pair = generate_pair(window, sim_cfg, rng=sim_rng)
        loss = sequence_loss(model, pair.context.voxels, pair.events.voxels)
        return StepResult(loss, pair.events.voxels.size, start, name)

    opt = OptimizerState(learning_rate=cfg.learning_rate, decay=cfg.decay)
    trace = run_training(model.parameters(), step, cfg.iterations, opt, progress, "M2")
    return model, trace


def m2_infer(model: M2Model, y: BinaryVolume) -> np.ndarray:
    """Event probabilities e' (T x H x W) from one pass over the whole map."""
    with no_grad():
        outputs = m2_sequence_forward(model, y.voxels.astype(np.float32))
    return np.stack([out.data[0] for out in outputs])


@dataclass
class EventStats:
    mean: float
    std: float
    p50: float
    p75: float
    count: int
    lengths: List[int] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return self.count == 0

    def format(self, *names: str) -> str:
        """Values joined by ' / '; mean and std with two decimals, percentiles with one."""
        names = names or ("mean", "std", "p50", "p75")
        digits = {"mean": 2, "std": 2, "p50": 1, "p75": 1}
        return " / ".join(f"{getattr(self, n):.{digits[n]}f}" for n in names)

    def to_dict(self) -> Dict[str, Any]:
        return {"mean": self.mean, "std": self.std, "p50": self.p50, "p75": self.p75, "count": self.count}


def statistics_from_lengths(lengths: Sequence[int], percentile_rule: str = "linear") -> EventStats:
    lengths = [int(v) for v in lengths]
    if not lengths:
        return EventStats(0.0, 0.0, 0.0, 0.0, 0, [])
    if percentile_rule not in PERCENTILE_METHODS:
        raise ValueError(f"Unknown percentile rule {percentile_rule!r}")
    values = np.asarray(lengths, dtype=np.float64)
    p50, p75 = np.percentile(values, [50, 75], method=PERCENTILE_METHODS[percentile_rule])
    return EventStats(float(values.mean()), float(values.std()), float(p50), float(p75), len(lengths), lengths)


def event_statistics(e_prime: np.ndarray, percentile_rule: str = "linear", link_overlap: int = 1) -> EventStats:
    """Binarize at 0.5 (strict), link into 3D regions and summarize their temporal lengths."""
    regions = label_regions(binarize(e_prime, EVENT_THRESHOLD), link_overlap)
    return statistics_from_lengths([r.temporal_length for r in regions], percentile_rule)


@dataclass
class KRecommendation:
    k: int
    lower_bound: int
    frames_primary: int
    frames_alternate: int

    def to_dict(self) -> Dict[str, int]:
        return {"k": self.k, "lower_bound": self.lower_bound,
                "frames_primary": self.frames_primary, "frames_alternate": self.frames_alternate}


def recommend_k(stats: EventStats) -> KRecommendation:
    """k = round-half-up(p75), raised to ceil(mean); annotate k + 6 frames (k + 10 as the roomier budget)."""
    if stats.empty:
        raise EmptyStatsError("No predicted events; cannot recommend a sequence length")
    lower_bound = math.ceil(round(stats.mean, 9))
    k = max(int(math.floor(stats.p75 + 0.5)), lower_bound)
    return KRecommendation(k=k, lower_bound=lower_bound, frames_primary=k + 6, frames_alternate=k + 10)


def save_m2(model: M2Model, directory: Union[str, Path], cfg: M2Config) -> Path:
    meta = {"channels": cfg.channels, "hidden": cfg.hidden, "kernel": cfg.kernel,
            "window": cfg.window, "seed": cfg.seed, "iterations": cfg.iterations}
    return save_checkpoint(directory, "M2", model.parameters(), meta)


def load_m2(directory: Union[str, Path]) -> M2Model:
    manifest, arrays = load_checkpoint(directory, "M2")
    cfg = M2Config(channels=manifest["channels"], hidden=manifest["hidden"], kernel=manifest["kernel"])
    model = M2Model.initialize(cfg, np.random.default_rng(0))
    restore_into(model.parameters(), arrays)
    return model
