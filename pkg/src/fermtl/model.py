"""The dual-branch multi-task network.

Emotion branch: small conv backbone whose final feature map feeds parallel
attention heads; their combined output is the branch feature.  Appearance
branch: a conv backbone (variant-selectable width) whose pooled output is
the branch feature.  Both features are concatenated into a shared fully
connected trunk with two task heads: 6 expression logits and 136 flattened
landmark coordinates.
"""

import json
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import autograd as ag
from .attention import CrossAttentionHead, cross_attention_head, multi_head_combine
from .constants import IMAGE_SIZE, LANDMARK_DIM, NUM_CLASSES, NUM_LANDMARKS
from .errors import ConfigurationError, DimensionError
from .rng import substream

# first three stage widths of the appearance backbone; the last stage always
# equals the branch feature dimension because its pooled map is the feature
VARIANT_WIDTHS = {
    "standard": (8, 16, 32),
    "wide": (12, 24, 48),
    "slim": (6, 12, 24),
}

EMOTION_WIDTHS = (8, 16, 32, 64)


@dataclass
class BackboneConfig:
    variant: str = "standard"
    input_size: int = IMAGE_SIZE
    feature_dim: int = 128
    trunk_width: int = 128
    attention_heads: int = 4
    reduction: int = 4
    emotion_widths: tuple = EMOTION_WIDTHS
    appearance_widths: tuple = None  # default: VARIANT_WIDTHS[variant] + (feature_dim,)

    def resolved_appearance_widths(self) -> tuple:
        if self.appearance_widths is not None:
            return tuple(self.appearance_widths)
        if self.variant not in VARIANT_WIDTHS:
            raise ConfigurationError(
                f"unknown backbone variant '{self.variant}'; expected one of {sorted(VARIANT_WIDTHS)}"
            )
        return VARIANT_WIDTHS[self.variant] + (self.feature_dim,)

    def validate(self):
        if self.variant not in VARIANT_WIDTHS:
            raise ConfigurationError(
                f"unknown backbone variant '{self.variant}'; expected one of {sorted(VARIANT_WIDTHS)}"
            )
        if self.feature_dim < 1 or self.trunk_width < 1:
            raise ConfigurationError("feature_dim and trunk_width must be positive")
        if self.attention_heads < 1:
            raise ConfigurationError(f"attention_heads must be >= 1, got {self.attention_heads}")
        if self.input_size % 16 != 0 or self.input_size < 16:
            raise ConfigurationError(
                f"input_size must be a positive multiple of 16 (four pooling stages), got {self.input_size}"
            )
        if len(self.emotion_widths) != 4:
            raise ConfigurationError("emotion backbone needs exactly 4 stage widths")
        app = self.resolved_appearance_widths()
        if len(app) != 4:
            raise ConfigurationError("appearance backbone needs exactly 4 stage widths")
        if app[-1] != self.feature_dim:
            raise ConfigurationError(
                f"appearance backbone must end at feature_dim={self.feature_dim}, got {app[-1]}"
            )
        c_att = self.emotion_widths[-1]
        if c_att % self.reduction:
            raise ConfigurationError(
                f"emotion feature channels ({c_att}) must be divisible by reduction ({self.reduction})"
            )

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "input_size": self.input_size,
            "feature_dim": self.feature_dim,
            "trunk_width": self.trunk_width,
            "attention_heads": self.attention_heads,
            "reduction": self.reduction,
            "emotion_widths": list(self.emotion_widths),
            "appearance_widths": list(self.resolved_appearance_widths()),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        cfg = cls(
            variant=d["variant"],
            input_size=d["input_size"],
            feature_dim=d["feature_dim"],
            trunk_width=d["trunk_width"],
            attention_heads=d["attention_heads"],
            reduction=d["reduction"],
            emotion_widths=tuple(d["emotion_widths"]),
            appearance_widths=tuple(d["appearance_widths"]),
        )
        cfg.validate()
        return cfg


@dataclass
class Prediction:
    expr_probs: np.ndarray  # (6,), on the simplex
    landmarks: np.ndarray  # (68, 2)


class ConvBackbone:
    """Four conv(3x3, pad 1) + ReLU + maxpool stages."""

    def __init__(self, in_channels, widths, rng, dtype=np.float32):
        self.widths = tuple(widths)
        self.kernels = []
        self.biases = []
        c = in_channels
        for w in self.widths:
            self.kernels.append(
                ag.Tensor(ag.fan_in_uniform(rng, (w, c, 3, 3), c * 9, dtype), requires_grad=True)
            )
            self.biases.append(ag.Tensor(np.zeros(w, dtype=dtype), requires_grad=True))
            c = w

    def forward(self, x: ag.Tensor) -> ag.Tensor:
        for k, b in zip(self.kernels, self.biases):
            x = ag.max_pool2x2(ag.relu(ag.conv2d(x, k, b, stride=1, padding=1)))
        return x

    def parameters(self):
        params = []
        for i, (k, b) in enumerate(zip(self.kernels, self.biases)):
            params.append((f"stage{i}.kernel", k))
            params.append((f"stage{i}.bias", b))
        return params


class MTLNetwork:
    """Dual-branch network with a shared trunk and two task heads."""

    def __init__(self, cfg: BackboneConfig, seed: int, dtype=np.float32):
        cfg = replace(cfg, appearance_widths=cfg.resolved_appearance_widths())
        cfg.validate()
        self.config = cfg
        self.seed = int(seed)
        self.dtype = dtype
        rng = substream(seed, "init")

        f = cfg.feature_dim
        h = cfg.trunk_width
        c_att = cfg.emotion_widths[-1]
        self.emotion_backbone = ConvBackbone(3, cfg.emotion_widths, rng, dtype)
        self.attention_heads = [
            CrossAttentionHead(c_att, f, cfg.reduction, rng, dtype)
            for _ in range(cfg.attention_heads)
        ]
        self.appearance_backbone = ConvBackbone(3, cfg.appearance_widths, rng, dtype)

        def lin(rows, cols):
            w = ag.Tensor(ag.fan_in_uniform(rng, (rows, cols), rows, dtype), requires_grad=True)
            b = ag.Tensor(np.zeros(cols, dtype=dtype), requires_grad=True)
            return w, b

        self.trunk_w0, self.trunk_b0 = lin(2 * f, h)
        self.trunk_w1, self.trunk_b1 = lin(h, h)
        self.expr_w, self.expr_b = lin(h, NUM_CLASSES)
        self.land_w, self.land_b = lin(h, LANDMARK_DIM)
        assert self.expr_w.data.shape[1] == NUM_CLASSES
        assert self.land_w.data.shape[1] == LANDMARK_DIM

    def parameters(self):
        """(name, tensor) pairs in declaration order."""
        params = [("emotion." + n, p) for n, p in self.emotion_backbone.parameters()]
        for i, head in enumerate(self.attention_heads):
            params += [(f"attention.head{i}." + n, p) for n, p in head.parameters()]
        params += [("appearance." + n, p) for n, p in self.appearance_backbone.parameters()]
        params += [
            ("trunk.fc0.weight", self.trunk_w0),
            ("trunk.fc0.bias", self.trunk_b0),
            ("trunk.fc1.weight", self.trunk_w1),
            ("trunk.fc1.bias", self.trunk_b1),
            ("heads.expression.weight", self.expr_w),
            ("heads.expression.bias", self.expr_b),
            ("heads.landmarks.weight", self.land_w),
            ("heads.landmarks.bias", self.land_b),
        ]
        return params

    @property
    def parameter_count(self) -> int:
        return sum(p.data.size for _, p in self.parameters())

    def emotion_features(self, view: ag.Tensor) -> ag.Tensor:
        fmap = self.emotion_backbone.forward(view)
        outputs = [cross_attention_head(fmap, head) for head in self.attention_heads]
        return multi_head_combine(outputs)

    def appearance_features(self, view: ag.Tensor) -> ag.Tensor:
        return ag.global_avg_pool(self.appearance_backbone.forward(view))

    def forward_full(self, emotion_view: ag.Tensor, appearance_view: ag.Tensor):
        """Return (expression logits N x 6, landmark predictions N x 136)."""
        if emotion_view.data.shape != appearance_view.data.shape:
            raise DimensionError(
                f"branch views disagree: emotion {emotion_view.data.shape} vs "
                f"appearance {appearance_view.data.shape}"
            )
        fused = ag.concat(self.emotion_features(emotion_view), self.appearance_features(appearance_view))
        hidden = ag.relu(ag.linear(fused, self.trunk_w0, self.trunk_b0))
        hidden = ag.relu(ag.linear(hidden, self.trunk_w1, self.trunk_b1))
        expr_logits = ag.linear(hidden, self.expr_w, self.expr_b)
        land_pred = ag.linear(hidden, self.land_w, self.land_b)
        return expr_logits, land_pred


def build_model(cfg: BackboneConfig, seed: int, dtype=np.float32) -> MTLNetwork:
    """Deterministically initialized network; same (cfg, seed) gives identical bits."""
    return MTLNetwork(cfg, seed, dtype)


def predict_probs(model: MTLNetwork, images: np.ndarray):
    """Fast path: (probs N x 6, landmarks N x 136) for a clean image batch."""
    t = ag.Tensor(np.asarray(images, dtype=model.dtype))
    logits, land = model.forward_full(t, t)
    return ag.softmax(logits).data, land.data


def predict_expression(model: MTLNetwork, images: np.ndarray):
    """Predictions for a batch of clean images (both branches see the same input)."""
    probs, land = predict_probs(model, images)
    return [
        Prediction(expr_probs=probs[i], landmarks=land[i].reshape(NUM_LANDMARKS, 2))
        for i in range(probs.shape[0])
    ]


# ---------------------------------------------------------------------------
# checkpoint format: "MTL1" magic, u32 version, u32 manifest length, a
# human-readable manifest (config line, then one line per parameter with its
# shape, in declaration order), then raw little-endian float32 buffers in
# manifest order.

CHECKPOINT_MAGIC = b"MTL1"
CHECKPOINT_VERSION = 1


def save_checkpoint(model: MTLNetwork, path):
    params = model.parameters()
    lines = ["config " + json.dumps(model.config.to_dict(), sort_keys=True)]
    for name, p in params:
        dims = "x".join(str(d) for d in p.data.shape)
        lines.append(f"param {name} {dims}")
    lines.append("end")
    manifest = ("\n".join(lines) + "\n").encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(manifest)))
        f.write(manifest)
        for _, p in params:
            f.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def load_checkpoint(path) -> MTLNetwork:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic {blob[:4]!r})")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (mlen,) = struct.unpack_from("<I", blob, 8)
    manifest = blob[12 : 12 + mlen].decode("utf-8").splitlines()
    if not manifest or not manifest[0].startswith("config "):
        raise ValueError(f"{path}: manifest missing config line")
    cfg = BackboneConfig.from_dict(json.loads(manifest[0][len("config ") :]))
    entries = []
    for line in manifest[1:]:
        if line == "end":
            break
        kind, name, dims = line.split(" ")
        if kind != "param":
            raise ValueError(f"{path}: unexpected manifest line {line!r}")
        entries.append((name, tuple(int(d) for d in dims.split("x"))))

    model = MTLNetwork(cfg, seed=0)
    params = model.parameters()
    if len(params) != len(entries):
        raise ValueError(
            f"{path}: manifest lists {len(entries)} parameters, model has {len(params)}"
        )
    offset = 12 + mlen
    for (name, p), (mname, mshape) in zip(params, entries):
        if name != mname or p.data.shape != mshape:
            raise ValueError(
                f"{path}: manifest entry ({mname}, {mshape}) does not match model ({name}, {p.data.shape})"
            )
        nbytes = int(np.prod(mshape)) * 4
        buf = np.frombuffer(blob, dtype="<f4", count=int(np.prod(mshape)), offset=offset)
        p.data = np.ascontiguousarray(buf.reshape(mshape)).astype(np.float32)
        offset += nbytes
    if offset != len(blob):
        raise ValueError(f"{path}: {len(blob) - offset} trailing bytes after parameter buffers")
    return model
