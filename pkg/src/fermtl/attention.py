"""Attention heads for the emotion branch.

Each head combines a squeeze-excite channel gate with a single-channel
spatial gate, applies both multiplicatively to the feature map, then pools
and projects to the branch feature dimension.  Several heads run in
parallel and their outputs are averaged.
"""

import numpy as np

from .autograd import (
    Tensor,
    conv2d,
    fan_in_uniform,
    global_avg_pool,
    linear,
    matmul,
    mul,
    relu,
    reshape,
    scale,
    sigmoid,
    add,
)
from .errors import ConfigurationError, DimensionError


class ChannelAttentionUnit:
    """Squeeze-excite gate: GAP -> C/r bottleneck -> sigmoid weights per channel."""

    def __init__(self, channels: int, reduction: int, rng, dtype=np.float32):
        if reduction < 1:
            raise ConfigurationError(f"reduction must be >= 1, got {reduction}")
        if channels % reduction:
            raise ConfigurationError(
                f"channels={channels} is not divisible by reduction={reduction}"
            )
        hidden = channels // reduction
        self.channels = channels
        self.reduction = reduction
        self.squeeze = Tensor(fan_in_uniform(rng, (channels, hidden), channels, dtype), requires_grad=True)
        self.excite = Tensor(fan_in_uniform(rng, (hidden, channels), hidden, dtype), requires_grad=True)

    def parameters(self):
        return [("squeeze", self.squeeze), ("excite", self.excite)]


def channel_attention(feat: Tensor, unit: ChannelAttentionUnit) -> Tensor:
    """Per-channel gates in (0,1), shape N x C."""
    pooled = global_avg_pool(feat)
    hidden = relu(matmul(pooled, unit.squeeze))
    return sigmoid(matmul(hidden, unit.excite))


class SpatialAttentionUnit:
    """1x1 bottleneck conv then a 3x3 conv to one sigmoid map per sample."""

    def __init__(self, channels: int, reduction: int, rng, dtype=np.float32):
        hidden = max(channels // reduction, 1)
        self.reduce_kernel = Tensor(
            fan_in_uniform(rng, (hidden, channels, 1, 1), channels, dtype), requires_grad=True
        )
        self.reduce_bias = Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True)
        self.map_kernel = Tensor(
            fan_in_uniform(rng, (1, hidden, 3, 3), hidden * 9, dtype), requires_grad=True
        )
        self.map_bias = Tensor(np.zeros(1, dtype=dtype), requires_grad=True)

    def parameters(self):
        return [
            ("reduce_kernel", self.reduce_kernel),
            ("reduce_bias", self.reduce_bias),
            ("map_kernel", self.map_kernel),
            ("map_bias", self.map_bias),
        ]


def spatial_attention(feat: Tensor, unit: SpatialAttentionUnit) -> Tensor:
    """Attention map in (0,1), shape N x 1 x H x W (same H, W as the input)."""
    hidden = relu(conv2d(feat, unit.reduce_kernel, unit.reduce_bias, stride=1, padding=0))
    return sigmoid(conv2d(hidden, unit.map_kernel, unit.map_bias, stride=1, padding=1))


class CrossAttentionHead:
    """One spatial gate, one channel gate, and a pooled projection to F dims."""

    def __init__(self, channels: int, feature_dim: int, reduction: int, rng, dtype=np.float32):
        self.channels = channels
        self.feature_dim = feature_dim
        self.channel = ChannelAttentionUnit(channels, reduction, rng, dtype)
        self.spatial = SpatialAttentionUnit(channels, reduction, rng, dtype)
        self.project_weight = Tensor(
            fan_in_uniform(rng, (channels, feature_dim), channels, dtype), requires_grad=True
        )
        self.project_bias = Tensor(np.zeros(feature_dim, dtype=dtype), requires_grad=True)

    def parameters(self):
        params = [("channel." + n, p) for n, p in self.channel.parameters()]
        params += [("spatial." + n, p) for n, p in self.spatial.parameters()]
        params += [("project.weight", self.project_weight), ("project.bias", self.project_bias)]
        return params


def cross_attention_head(feat: Tensor, head: CrossAttentionHead, bypass_gates: bool = False) -> Tensor:
    """Gated, pooled, projected head output, shape N x F.

    ``bypass_gates`` skips both gates (as if they were identically 1), which
    reduces the head to pool-then-project; useful as a test identity.
    """
    if bypass_gates:
        attended = feat
    else:
        spatial_map = spatial_attention(feat, head.spatial)
        gates = channel_attention(feat, head.channel)
        n, c = gates.data.shape
        attended = mul(mul(feat, spatial_map), reshape(gates, (n, c, 1, 1)))
    pooled = global_avg_pool(attended)
    return linear(pooled, head.project_weight, head.project_bias)


def multi_head_combine(head_outputs) -> Tensor:
    """Element-wise mean over head outputs.

    Heads are summed in a canonical order (sorted by buffer bytes) so the
    result is exactly invariant to the order the heads are listed in.
    """
    outputs = list(head_outputs)
    if not outputs:
        raise ValueError("multi_head_combine needs at least one head output")
    shape = outputs[0].data.shape
    for i, t in enumerate(outputs[1:], start=1):
        if t.data.shape != shape:
            raise DimensionError(
                f"head output {i} has shape {t.data.shape}, expected {shape}"
            )
    ordered = sorted(outputs, key=lambda t: t.data.tobytes())
    total = ordered[0]
    for t in ordered[1:]:
        total = add(total, t)
    return scale(total, 1.0 / len(outputs))
