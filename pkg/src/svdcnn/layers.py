"""Layers for the character-level convolutional classifiers.

Every temporal layer preserves the sequence length (kernel 3, padding 1);
only pooling changes it. Convolutions carry no bias because each one is
followed by a batch normalization whose shift subsumes it.
"""

from __future__ import annotations

import math

import numpy as np

from .autograd import DEFAULT_DTYPE, Tensor
from .functional import (
    add,
    adaptive_avg_pool,
    affine,
    batch_norm_eval,
    batch_norm_train,
    conv1d,
    depthwise_conv1d,
    embedding,
    flatten_features,
    kmax_pool,
    relu,
)

KERNEL_SIZE = 3


def _fan_in_normal(rng, shape, fan_in, dtype, gain: float = 2.0):
    return Tensor(rng.normal(0.0, math.sqrt(gain / fan_in), shape).astype(dtype), requires_grad=True)


def _kaiming(rng, shape, fan_in, dtype):
    return _fan_in_normal(rng, shape, fan_in, dtype, gain=2.0)


class BatchNorm:
    """Per-channel normalization over batch and time, with running statistics.

    ``mode`` is "train" (batch statistics, running stats updated by an
    exponential moving average) or "eval" (running statistics only).
    ``scale_init`` sets the initial per-channel scale; layers wrapped by a
    shortcut start it at zero so a fresh block is the identity map.
    """

    def __init__(
        self,
        channels: int,
        momentum: float = 0.1,
        eps: float = 1e-5,
        dtype=DEFAULT_DTYPE,
        scale_init: float = 1.0,
    ):
        self.gamma = Tensor(np.full(channels, scale_init, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps
        self.mode = "train"

    def forward(self, x: Tensor) -> Tensor:
        if self.mode == "train":
            out, mean, var, count = batch_norm_train(x, self.gamma, self.beta, self.eps)
            m = self.momentum
            self.running_mean += (m * (mean - self.running_mean)).astype(self.running_mean.dtype)
            unbiased = var * (count / (count - 1))
            self.running_var += (m * (unbiased - self.running_var)).astype(self.running_var.dtype)
            return out
        return batch_norm_eval(x, self.gamma, self.beta, self.running_mean, self.running_var, self.eps)

    def named_params(self):
        return [("gamma", self.gamma, "batchnorm"), ("beta", self.beta, "batchnorm")]

    def named_buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]


def batchnorm_forward(x: Tensor, state: BatchNorm) -> Tensor:
    return state.forward(x)


class EmbeddingTable:
    """Character index to dense vector lookup; row 0 is the padding vector."""

    def __init__(self, vocab_size: int, dim: int, rng, dtype=DEFAULT_DTYPE):
        table = rng.normal(0.0, 0.25, (vocab_size, dim)).astype(dtype)
        table[0] = 0.0
        self.table = Tensor(table, requires_grad=True)

    def forward(self, indices) -> Tensor:
        return embedding(indices, self.table)

    def named_params(self):
        return [("table", self.table, "embedding")]

    def named_buffers(self):
        return []


def embedding_forward(indices, table: EmbeddingTable) -> Tensor:
    return table.forward(indices)


class TemporalConvLayer:
    """Kernel-3 temporal convolution + batch norm + ReLU."""

    depth_units = 1

    def __init__(self, in_channels: int, out_channels: int, rng, dtype=DEFAULT_DTYPE, bn_scale_init: float = 1.0):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.weight = _kaiming(rng, (out_channels, in_channels, KERNEL_SIZE), in_channels * KERNEL_SIZE, dtype)
        self.bn = BatchNorm(out_channels, dtype=dtype, scale_init=bn_scale_init)

    def forward(self, x: Tensor) -> Tensor:
        return relu(self.bn.forward(conv1d(x, self.weight, padding=KERNEL_SIZE // 2)))

    def named_params(self):
        return [("weight", self.weight, "conv")] + [(f"bn.{n}", t, c) for n, t, c in self.bn.named_params()]

    def named_buffers(self):
        return [(f"bn.{n}", b) for n, b in self.bn.named_buffers()]


class TdscLayer:
    """Depthwise kernel-3 filter followed by a 1x1 cross-channel mix + BN + ReLU.

    The depthwise/pointwise pair is inseparable and counts as one layer of
    network depth.
    """

    depth_units = 1

    def __init__(self, in_channels: int, out_channels: int, rng, dtype=DEFAULT_DTYPE, bn_scale_init: float = 1.0):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.depthwise = _kaiming(rng, (in_channels, KERNEL_SIZE), KERNEL_SIZE, dtype)
        self.pointwise = _kaiming(rng, (out_channels, in_channels, 1), in_channels, dtype)
        self.bn = BatchNorm(out_channels, dtype=dtype, scale_init=bn_scale_init)

    def forward(self, x: Tensor) -> Tensor:
        h = depthwise_conv1d(x, self.depthwise, padding=KERNEL_SIZE // 2)
        h = conv1d(h, self.pointwise, padding=0)
        return relu(self.bn.forward(h))

    def named_params(self):
        return [
            ("depthwise", self.depthwise, "conv"),
            ("pointwise", self.pointwise, "conv"),
        ] + [(f"bn.{n}", t, c) for n, t, c in self.bn.named_params()]

    def named_buffers(self):
        return [(f"bn.{n}", b) for n, b in self.bn.named_buffers()]


def tdsc_layer(x: Tensor, depthwise: Tensor, pointwise: Tensor, bn: BatchNorm) -> Tensor:
    """Functional form of :class:`TdscLayer` over externally held weights."""
    h = depthwise_conv1d(x, depthwise, padding=KERNEL_SIZE // 2)
    h = conv1d(h, pointwise, padding=0)
    return relu(bn.forward(h))


def temporal_conv_layer(x: Tensor, weight: Tensor, bn: BatchNorm) -> Tensor:
    """Functional form of :class:`TemporalConvLayer` over externally held weights."""
    return relu(bn.forward(conv1d(x, weight, padding=KERNEL_SIZE // 2)))


class ConvBlock:
    """Two temporal layers at a fixed width wrapped by an additive shortcut.

    The first layer maps ``in_channels -> out_channels``, the second keeps
    the width. The shortcut is the identity when the width is unchanged and
    a 1x1 projection otherwise; nothing follows the addition.
    """

    def __init__(self, variant: str, in_channels: int, out_channels: int, rng, dtype=DEFAULT_DTYPE):
        if variant not in ("standard", "tdsc"):
            raise ValueError(f"unknown block variant {variant!r}")
        layer_cls = TemporalConvLayer if variant == "standard" else TdscLayer
        self.variant = variant
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.layer1 = layer_cls(in_channels, out_channels, rng, dtype)
        # Zero scale on the closing normalization makes a fresh block the
        # identity, so activation variance cannot grow with depth at init.
        self.layer2 = layer_cls(out_channels, out_channels, rng, dtype, bn_scale_init=0.0)
        if in_channels != out_channels:
            # The projection is linear (no activation follows), so gain 1
            # keeps the shortcut variance-preserving.
            self.projection = _fan_in_normal(rng, (out_channels, in_channels, 1), in_channels, dtype, gain=1.0)
        else:
            self.projection = None

    def forward(self, x: Tensor) -> Tensor:
        main = self.layer2.forward(self.layer1.forward(x))
        shortcut = x if self.projection is None else conv1d(x, self.projection, padding=0)
        return add(main, shortcut)

    @property
    def depth_units(self) -> int:
        return self.layer1.depth_units + self.layer2.depth_units

    def named_params(self):
        out = [(f"layer1.{n}", t, c) for n, t, c in self.layer1.named_params()]
        out += [(f"layer2.{n}", t, c) for n, t, c in self.layer2.named_params()]
        if self.projection is not None:
            out.append(("projection", self.projection, "conv"))
        return out

    def named_buffers(self):
        out = [(f"layer1.{n}", b) for n, b in self.layer1.named_buffers()]
        out += [(f"layer2.{n}", b) for n, b in self.layer2.named_buffers()]
        return out


def conv_block_forward(x: Tensor, block: ConvBlock) -> Tensor:
    return block.forward(x)


class KmaxLinearHead:
    """k-max pooling into a three-layer fully connected classifier.

    The logit layer starts at zero so untrained logits are exactly zero.
    """

    def __init__(self, channels: int, k: int, hidden: int, n_classes: int, rng, dtype=DEFAULT_DTYPE):
        self.k = k
        flat = channels * k
        self.fc1_weight = _kaiming(rng, (hidden, flat), flat, dtype)
        self.fc1_bias = Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True)
        self.fc2_weight = _kaiming(rng, (hidden, hidden), hidden, dtype)
        self.fc2_bias = Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True)
        self.fc3_weight = Tensor(np.zeros((n_classes, hidden), dtype=dtype), requires_grad=True)
        self.fc3_bias = Tensor(np.zeros(n_classes, dtype=dtype), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        h = flatten_features(kmax_pool(x, self.k))
        h = relu(affine(h, self.fc1_weight, self.fc1_bias))
        h = relu(affine(h, self.fc2_weight, self.fc2_bias))
        return affine(h, self.fc3_weight, self.fc3_bias)

    def named_params(self):
        return [
            ("fc1.weight", self.fc1_weight, "fc"),
            ("fc1.bias", self.fc1_bias, "fc"),
            ("fc2.weight", self.fc2_weight, "fc"),
            ("fc2.bias", self.fc2_bias, "fc"),
            ("fc3.weight", self.fc3_weight, "fc"),
            ("fc3.bias", self.fc3_bias, "fc"),
        ]

    def named_buffers(self):
        return []


class AvgPoolLinearHead:
    """Global average pooling into a single linear classifier.

    The logit layer starts at zero so untrained logits are exactly zero.
    """

    def __init__(self, channels: int, pooled_len: int, n_classes: int, rng, dtype=DEFAULT_DTYPE):
        self.pooled_len = pooled_len
        flat = channels * pooled_len
        self.fc_weight = Tensor(np.zeros((n_classes, flat), dtype=dtype), requires_grad=True)
        self.fc_bias = Tensor(np.zeros(n_classes, dtype=dtype), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        h = flatten_features(adaptive_avg_pool(x, self.pooled_len))
        return affine(h, self.fc_weight, self.fc_bias)

    def named_params(self):
        return [("fc.weight", self.fc_weight, "fc"), ("fc.bias", self.fc_bias, "fc")]

    def named_buffers(self):
        return []
