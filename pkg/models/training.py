"""Training loop shared by M1, M2 and M3."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Mapping, NamedTuple, Optional

import numpy as np

from numerics.optim import OptimizerState, rmsprop_update
from numerics.tensor import NumericFailure, Tensor
from utils.progress import ProgressTracker


class StepResult(NamedTuple):
    loss: Tensor
    elements: int
    window_start: Optional[int] = None
    augmentation: Optional[str] = None


@dataclass
class TrainingTrace:
    """Per-iteration loss (mean per element) and the sampling decisions behind it."""
    losses: List[float] = field(default_factory=list)
    window_starts: List[int] = field(default_factory=list)
    augmentations: List[str] = field(default_factory=list)

    def mean_loss(self, start: int, stop: int) -> float:
        return float(np.mean(self.losses[start:stop]))


def spawn_generators(seed: int, count: int) -> List[np.random.Generator]:
    """Independent generators derived from one seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def run_training(params: Mapping[str, Tensor], step: Callable[[int], StepResult], iterations: int,
                 opt: OptimizerState, progress: Optional[ProgressTracker] = None,
                 description: str = "training") -> TrainingTrace:
    """Run ``iterations`` RMSProp steps on the loss produced by ``step(i)``.

    Raises NumericFailure naming the iteration when the loss is not finite.
    """
    progress = progress or ProgressTracker(verbose=False)
    trace = TrainingTrace()
    bar = progress.iterations(iterations, description)
    for iteration in bar:
        for p in params.values():
            p.zero_grad()
        result = step(iteration)
        value = result.loss.item()
        if not np.isfinite(value):
            raise NumericFailure(f"{description}: non-finite loss at iteration {iteration}", iteration)
        result.loss.backward()
        rmsprop_update(params, {name: p.grad for name, p in params.items()}, opt)
        trace.losses.append(value / max(result.elements, 1))
        if result.window_start is not None:
            trace.window_starts.append(result.window_start)
        if result.augmentation is not None:
            trace.augmentations.append(result.augmentation)
        if iteration % 50 == 0:
            bar.set_postfix(loss=f"{trace.losses[-1]:.4f}")
    return trace
