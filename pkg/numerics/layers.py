"""Neural layers shared by the three models: convolution, ConvLSTM, WTA, dropout, BCE."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from numerics.optim import xavier_init
from numerics.tensor import ShapeError, Tensor, concat

BCE_EPSILON = 1e-7
ACTIVATIONS = ("sigmoid", "tanh", "relu", "none")


@dataclass
class LayerParams:
    """Kernels (out x in x kH x kW) and biases (out) of one convolution."""
    kernels: Tensor
    biases: Tensor
    role: str

    def __post_init__(self):
        if self.kernels.data.ndim != 4:
            raise ShapeError(f"{self.role}: kernels must be out x in x kH x kW, got {self.kernels.dims}")
        k_h, k_w = self.kernels.dims[2:]
        if k_h % 2 == 0 or k_w % 2 == 0:
            raise ShapeError(f"{self.role}: kernel extents must be odd, got {k_h}x{k_w}")
        if self.biases.dims != (self.kernels.dims[0],):
            raise ShapeError(
                f"{self.role}: biases {self.biases.dims} do not match {self.kernels.dims[0]} output channels"
            )

    @classmethod
    def create(cls, role: str, in_channels: int, out_channels: int, kernel: int,
               rng: np.random.Generator) -> "LayerParams":
        """Xavier-uniform kernels, zero biases."""
        kernels = xavier_init((out_channels, in_channels, kernel, kernel), rng)
        kernels.requires_grad = True
        kernels.name = f"{role}.kernels"
        biases = Tensor(np.zeros(out_channels), requires_grad=True, name=f"{role}.biases")
        return cls(kernels=kernels, biases=biases, role=role)

    @property
    def in_channels(self) -> int:
        return self.kernels.dims[1]

    @property
    def out_channels(self) -> int:
        return self.kernels.dims[0]

    def named(self) -> Dict[str, Tensor]:
        return {f"{self.role}.kernels": self.kernels, f"{self.role}.biases": self.biases}


def _im2col(x: np.ndarray, k_h: int, k_w: int) -> np.ndarray:
    channels, height, width = x.shape
    padded = np.pad(x, ((0, 0), (k_h // 2, k_h // 2), (k_w // 2, k_w // 2)))
    windows = sliding_window_view(padded, (k_h, k_w), axis=(1, 2))
    return windows.transpose(1, 2, 0, 3, 4).reshape(height * width, channels * k_h * k_w)


def _col2im(cols: np.ndarray, shape: Tuple[int, int, int], k_h: int, k_w: int) -> np.ndarray:
    channels, height, width = shape
    patches = cols.reshape(height, width, channels, k_h, k_w)
    padded = np.zeros((channels, height + k_h - 1, width + k_w - 1), dtype=cols.dtype)
    for i in range(k_h):
        for j in range(k_w):
            padded[:, i:i + height, j:j + width] += patches[:, :, :, i, j].transpose(2, 0, 1)
    return padded[:, k_h // 2:k_h // 2 + height, k_w // 2:k_w // 2 + width]


def apply_activation(t: Tensor, activation: str) -> Tensor:
    if activation == "sigmoid":
        return t.sigmoid()
    if activation == "tanh":
        return t.tanh()
    if activation == "relu":
        return t.relu()
    if activation == "none":
        return t
    raise ValueError(f"Unknown activation {activation!r}; expected one of {ACTIVATIONS}")


def conv2d(x: Tensor, params: LayerParams, activation: str = "none") -> Tensor:
    """Zero-padded, stride-1 cross-correlation; output keeps the input's H x W."""
    x = Tensor.lift(x)
    if x.data.ndim != 3 or x.dims[0] != params.in_channels:
        raise ShapeError(
            f"conv2d {params.role}: input {x.dims} does not fit kernels {params.kernels.dims}"
        )
    out_c, in_c, k_h, k_w = params.kernels.dims
    _, height, width = x.dims
    cols = _im2col(x.data, k_h, k_w)
    weights = params.kernels.data.reshape(out_c, -1)
    out = (weights @ cols.T).reshape(out_c, height, width) + params.biases.data[:, None, None]

    def backward(g):
        g_flat = g.reshape(out_c, -1)
        g_x = _col2im(g_flat.T @ weights, x.dims, k_h, k_w) if x.requires_grad else None
        return (
            g_x,
            (g_flat @ cols).reshape(params.kernels.dims),
            g_flat.sum(axis=1),
        )

    linear = Tensor.from_op(out, (x, params.kernels, params.biases), backward)
    return apply_activation(linear, activation)


@dataclass
class ConvLSTMState:
    hidden: Tensor
    cell: Tensor

    def __post_init__(self):
        if self.hidden.dims != self.cell.dims:
            raise ShapeError(f"hidden {self.hidden.dims} and cell {self.cell.dims} differ")

    @classmethod
    def zeros(cls, channels: int, height: int, width: int) -> "ConvLSTMState":
        return cls(Tensor.zeros(channels, height, width), Tensor.zeros(channels, height, width))


@dataclass
class ConvLSTMParams:
    """Gate convolution over the stacked [input, hidden] channels.

    Output channels are ordered input, forget, output and candidate gates, so a
    single convolution computes conv(x) + conv(hidden) + bias for all four.
    """
    gates: LayerParams
    hidden_channels: int

    def __post_init__(self):
        if self.gates.out_channels != 4 * self.hidden_channels:
            raise ShapeError(
                f"{self.gates.role}: {self.gates.out_channels} gate channels for "
                f"{self.hidden_channels} hidden channels"
            )

    @classmethod
    def create(cls, role: str, in_channels: int, hidden_channels: int, kernel: int,
               rng: np.random.Generator) -> "ConvLSTMParams":
        gates = LayerParams.create(role, in_channels + hidden_channels, 4 * hidden_channels, kernel, rng)
        return cls(gates=gates, hidden_channels=hidden_channels)

    @property
    def input_channels(self) -> int:
        return self.gates.in_channels - self.hidden_channels

    def named(self) -> Dict[str, Tensor]:
        return self.gates.named()


def convlstm_step(x: Tensor, state: ConvLSTMState, params: ConvLSTMParams) -> ConvLSTMState:
    """One peephole-free ConvLSTM update."""
    x = Tensor.lift(x)
    hidden_dims = state.hidden.dims
    if hidden_dims[0] != params.hidden_channels or hidden_dims[1:] != x.dims[1:]:
        raise ShapeError(
            f"{params.gates.role}: state {hidden_dims} does not fit input {x.dims} "
            f"with {params.hidden_channels} hidden channels"
        )
    n = params.hidden_channels
    gates = conv2d(concat([x, state.hidden], axis=0), params.gates)
    input_gate = gates[0:n].sigmoid()
    forget_gate = gates[n:2 * n].sigmoid()
    output_gate = gates[2 * n:3 * n].sigmoid()
    candidate = gates[3 * n:4 * n].tanh()
    cell = forget_gate * state.cell + input_gate * candidate
    return ConvLSTMState(hidden=output_gate * cell.tanh(), cell=cell)


def channel_softmax_wta(h: Tensor) -> Tensor:
    """Per-pixel softmax over channels, keeping only the winning channel.

    Ties go to the lowest channel index. The backward pass is straight-through
    on the winner mask: only the surviving channel's softmax receives gradient.
    """
    h = Tensor.lift(h)
    if h.data.ndim != 3 or h.dims[0] < 2:
        raise ShapeError(f"channel_softmax_wta needs n >= 2 channels x H x W, got {h.dims}")
    shifted = h.data - h.data.max(axis=0, keepdims=True)
    exps = np.exp(shifted)
    probs = exps / exps.sum(axis=0, keepdims=True)
    winner = np.argmax(probs, axis=0)
    mask = np.zeros_like(probs)
    np.put_along_axis(mask, winner[None], 1.0, axis=0)

    def backward(g):
        g_probs = g * mask
        return (probs * (g_probs - (g_probs * probs).sum(axis=0, keepdims=True)),)

    return Tensor.from_op(probs * mask, (h,), backward)


def drop_channel(h: Tensor, rng: np.random.Generator) -> Tuple[Tensor, int]:
    """Zero one uniformly chosen channel."""
    index = int(rng.integers(h.dims[0]))
    keep = np.ones((h.dims[0], 1, 1), dtype=h.data.dtype)
    keep[index] = 0.0
    return h * keep, index


def add_uniform_noise(h: Tensor, amplitude: float, rng: np.random.Generator) -> Tensor:
    return h + rng.uniform(-amplitude, amplitude, size=h.dims)


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator], train: bool) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-rate) in training, identity otherwise."""
    if not train or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    keep = (rng.random(x.dims) >= rate) / (1.0 - rate)
    return x * keep


def binary_cross_entropy(target: Union[Tensor, np.ndarray], output: Tensor,
                         epsilon: float = BCE_EPSILON) -> Tensor:
    """Summed BCE, with ``output`` clamped to [epsilon, 1 - epsilon]."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if t.shape != output.dims:
        raise ShapeError(f"binary_cross_entropy: target {t.shape} vs output {output.dims}")
    o = output.data.astype(np.float64)
    inside = (o >= epsilon) & (o <= 1.0 - epsilon)
    clamped = np.clip(o, epsilon, 1.0 - epsilon)
    loss = -np.sum(t * np.log(clamped) + (1.0 - t) * np.log(1.0 - clamped))

    def backward(g):
        local = (-t / clamped + (1.0 - t) / (1.0 - clamped)) * inside
        return ((g * local).astype(output.data.dtype),)

    return Tensor.from_op(np.asarray(loss), (output,), backward)
