"""Tests for tensors, layers, the optimizer and tensor files."""
import os
import sys
import tempfile
import warnings

import numpy as np
import pytest

# Ensure project root is on path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from numerics.checkpoint import load_checkpoint, restore_into, save_checkpoint
from numerics.ctn import CtnFormatError, decode_ctn, encode_ctn, load_ctn, save_ctn
from numerics.layers import (
    LayerParams,
    binary_cross_entropy,
    channel_softmax_wta,
    conv2d,
    dropout,
)
from numerics.optim import OptimizerState, rmsprop_update, xavier_init
from numerics.tensor import ShapeError, Tensor, no_grad, precision


def _layer(kernels, biases, role="layer"):
    return LayerParams(Tensor(kernels, True, f"{role}.kernels"), Tensor(biases, True, f"{role}.biases"), role)


def test_conv2d_single_center_tap_is_identity():
    """A 3x3 kernel with only the center set to 1 copies its input."""
    kernels = np.zeros((1, 1, 3, 3))
    kernels[0, 0, 1, 1] = 1.0
    x = np.arange(25, dtype=np.float32).reshape(1, 5, 5) / 25
    out = conv2d(Tensor(x), _layer(kernels, np.zeros(1)))
    np.testing.assert_allclose(out.data, x, atol=1e-6)


def test_conv2d_ones_kernel_counts_neighbours_with_zero_padding():
    """All-ones 3x3 on an all-ones 3x3 input: corner 4, edge 6, center 9."""
    out = conv2d(Tensor(np.ones((1, 3, 3))), _layer(np.ones((1, 1, 3, 3)), np.zeros(1)))
    np.testing.assert_allclose(out.data[0], [[4, 6, 4], [6, 9, 6], [4, 6, 4]])


def test_conv2d_rejects_channel_mismatch():
    """Input channels must match the kernels' input channels."""
    layer = _layer(np.ones((2, 3, 3, 3)), np.zeros(2))
    with pytest.raises(ShapeError, match=r"\(2, 4, 4\)"):
        conv2d(Tensor(np.ones((2, 4, 4))), layer)


def test_layer_params_reject_even_kernels():
    with pytest.raises(ShapeError, match="odd"):
        _layer(np.ones((1, 1, 2, 2)), np.zeros(1))


def test_channel_softmax_wta_keeps_one_channel_per_pixel():
    """Exactly one nonzero channel per pixel, holding its softmax value."""
    rng = np.random.default_rng(3)
    h = channel_softmax_wta(Tensor(rng.normal(size=(4, 6, 6))))
    assert ((h.data > 0).sum(axis=0) == 1).all()
    assert (h.data.max(axis=0) >= 0.25).all()


def test_channel_softmax_wta_ties_go_to_lowest_index():
    h = channel_softmax_wta(Tensor(np.zeros((3, 2, 2))))
    assert (h.data[0] > 0).all()
    assert not h.data[1:].any()
    np.testing.assert_allclose(h.data[0], 1.0 / 3.0, rtol=1e-6)


def test_channel_softmax_wta_needs_two_channels():
    with pytest.raises(ShapeError):
        channel_softmax_wta(Tensor(np.zeros((1, 2, 2))))


def test_binary_cross_entropy_clamps_extremes():
    """output 0 with target 1 costs -log(1e-7) and stays finite."""
    loss = binary_cross_entropy(np.ones((1, 1, 1)), Tensor(np.zeros((1, 1, 1))))
    assert np.isfinite(loss.item())
    assert loss.item() == pytest.approx(-np.log(1e-7), rel=1e-5)


def test_binary_cross_entropy_shape_mismatch():
    with pytest.raises(ShapeError):
        binary_cross_entropy(np.ones((1, 2, 2)), Tensor(np.ones((1, 3, 3)) * 0.5))


def test_dropout_is_identity_outside_training():
    x = Tensor(np.ones((2, 3, 3)))
    assert dropout(x, 0.5, None, train=False) is x


def test_dropout_scales_survivors():
    rng = np.random.default_rng(0)
    out = dropout(Tensor(np.ones((4, 16, 16))), 0.25, rng, train=True)
    values = np.unique(out.data)
    assert set(np.round(values, 5)) <= {0.0, round(1 / 0.75, 5)}


def test_no_grad_builds_no_tape():
    w = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        out = (w * 2.0).sum()
    assert not out.requires_grad


def test_precision_context_switches_dtype():
    with precision(np.float64):
        assert Tensor(np.ones(2)).data.dtype == np.float64
    assert Tensor(np.ones(2)).data.dtype == np.float32


def test_shared_subexpression_gradient_accumulates():
    """d/dw of (w*w + w) is 2w + 1 when w feeds two branches."""
    w = Tensor(np.array([3.0]), requires_grad=True)
    ((w * w) + w).sum().backward()
    np.testing.assert_allclose(w.grad, [7.0])


def test_xavier_init_bounds_and_determinism():
    a = xavier_init((8, 4, 3, 3), 11)
    b = xavier_init((8, 4, 3, 3), 11)
    bound = np.sqrt(6.0 / (4 * 9 + 8 * 9))
    assert np.abs(a.data).max() <= bound
    np.testing.assert_array_equal(a.data, b.data)


def test_xavier_init_rejects_empty_extent():
    with pytest.raises(ShapeError):
        xavier_init((0, 3), 0)


def test_rmsprop_first_step():
    """With acc starting at zero the first step is lr * g / sqrt(0.1 g^2 + eps)."""
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True, name="p")
    grad = np.array([0.5, -1.0], dtype=np.float32)
    opt = OptimizerState(learning_rate=0.01, decay=0.9)
    rmsprop_update({"p": p}, {"p": grad}, opt)
    expected = np.array([1.0, -2.0]) - 0.01 * grad / np.sqrt(0.1 * grad ** 2 + 1e-8)
    np.testing.assert_allclose(p.data, expected, rtol=1e-5)


def test_rmsprop_zero_gradient_leaves_parameter():
    p = Tensor(np.array([1.5]), requires_grad=True)
    rmsprop_update({"p": p}, {"p": np.zeros(1, dtype=np.float32)}, OptimizerState())
    np.testing.assert_array_equal(p.data, [1.5])


def test_rmsprop_rejects_mismatched_gradient():
    p = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        rmsprop_update({"p": p}, {"p": np.ones(2)}, OptimizerState())


def test_ctn_header_layout():
    """Magic, rank byte, little-endian dims, then float32 payload."""
    payload = encode_ctn(np.arange(6, dtype=np.float32).reshape(2, 3))
    assert payload[:4] == b"CTN1"
    assert payload[4] == 2
    assert np.frombuffer(payload[5:13], dtype="<u4").tolist() == [2, 3]
    assert len(payload) == 13 + 6 * 4


def test_ctn_rank_zero_holds_one_value():
    array = decode_ctn(encode_ctn(np.array(2.5)))
    assert array.shape == ()
    assert float(array) == 2.5


def test_ctn_rejects_truncated_payload():
    payload = encode_ctn(np.ones((4, 4), dtype=np.float32))
    with pytest.raises(CtnFormatError, match="broken.ctn"):
        decode_ctn(payload[:-3], source="broken.ctn")


def test_ctn_rejects_bad_magic():
    with pytest.raises(CtnFormatError):
        decode_ctn(b"XXXX" + encode_ctn(np.ones(2))[4:])


def test_ctn_file_round_trip_preserves_values():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "volume.ctn")
        volume = np.random.default_rng(1).random((3, 4, 5)).astype(np.float32)
        save_ctn(path, volume)
        np.testing.assert_array_equal(load_ctn(path), volume)


def test_checkpoint_restores_parameters():
    layer = LayerParams.create("enc0", 1, 2, 3, np.random.default_rng(0))
    with tempfile.TemporaryDirectory() as tmp:
        save_checkpoint(tmp, "TEST", layer.named(), {"note": "x"})
        manifest, arrays = load_checkpoint(tmp, "TEST")
        assert manifest["note"] == "x"
        assert "created" in manifest
        fresh = LayerParams.create("enc0", 1, 2, 3, np.random.default_rng(5))
        restore_into(fresh.named(), arrays)
        np.testing.assert_array_equal(fresh.kernels.data, layer.kernels.data)


def test_checkpoint_rejects_wrong_kind():
    layer = LayerParams.create("enc0", 1, 1, 1, np.random.default_rng(0))
    with tempfile.TemporaryDirectory() as tmp:
        save_checkpoint(tmp, "M1", layer.named(), {})
        with pytest.raises(ValueError, match="M2"):
            load_checkpoint(tmp, "M2")


def test_item_of_one_element_array_raises_no_warning():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert Tensor(np.array([[2.5]])).item() == 2.5
        assert Tensor(np.array(1.5)).item() == 1.5
