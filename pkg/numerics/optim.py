"""Xavier initialization and the RMSProp update."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Sequence, Union

import numpy as np

from numerics.tensor import ShapeError, Tensor

SeedLike = Union[int, np.random.Generator]


def _generator(seed: SeedLike) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def xavier_init(shape: Sequence[int], seed: SeedLike) -> Tensor:
    """Uniform samples in +-sqrt(6 / (fan_in + fan_out))."""
    shape = tuple(int(s) for s in shape)
    if not shape or any(s < 1 for s in shape):
        raise ShapeError(f"xavier_init needs positive extents, got {shape}")
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    if len(shape) == 1:
        fan_in = fan_out = shape[0]
    else:
        fan_in, fan_out = shape[1] * receptive, shape[0] * receptive
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(_generator(seed).uniform(-bound, bound, size=shape))


@dataclass
class OptimizerState:
    learning_rate: float = 1e-3
    decay: float = 0.9
    epsilon: float = 1e-8
    accumulators: Dict[str, np.ndarray] = field(default_factory=dict)


def rmsprop_update(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray],
                   opt: OptimizerState) -> Mapping[str, Tensor]:
    """acc <- decay*acc + (1-decay)*g^2 ; p <- p - lr*g/sqrt(acc + eps).

    Parameters without a gradient entry are left untouched.
    """
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != param.dims:
            raise ShapeError(f"gradient for {name} has dims {grad.shape}, parameter has {param.dims}")
        acc = opt.accumulators.get(name)
        if acc is None:
            acc = np.zeros(param.dims, dtype=np.float64)
        acc = opt.decay * acc + (1.0 - opt.decay) * np.square(grad, dtype=np.float64)
        opt.accumulators[name] = acc
        step = opt.learning_rate * grad / np.sqrt(acc + opt.epsilon)
        param.data = (param.data - step).astype(param.data.dtype)
    return params
