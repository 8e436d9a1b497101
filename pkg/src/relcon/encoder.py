"""1D residual conv encoder with per-example instance norm and global average pooling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ndtensor as nd
from .dataio import Window
from .ndtensor import Tensor


@dataclass
class EncoderHyper:
    stem_width: int = 16
    stem_kernel: int = 7
    kernel_size: int = 3
    stage_widths: tuple = (16, 32, 64)
    stage_blocks: tuple = (2, 2, 2)
    stage_strides: tuple = (2, 2, 2)
    embed_dim: int = 64
    norm_eps: float = 1e-5
    stem_norm: bool = False  # normalizing the stem would make the whole net blind to signal amplitude
    arch_preset: str = "desk"

    def __post_init__(self):
        self.stage_widths = tuple(int(w) for w in self.stage_widths)
        self.stage_blocks = tuple(int(b) for b in self.stage_blocks)
        self.stage_strides = tuple(int(s) for s in self.stage_strides)
        if not (len(self.stage_widths) == len(self.stage_blocks) == len(self.stage_strides)):
            raise nd.ConfigError("stage widths, block counts and strides must have equal length")
        if self.kernel_size % 2 == 0 or self.stem_kernel % 2 == 0:
            raise nd.ConfigError("encoder kernel sizes must be odd")

    @property
    def min_length(self) -> int:
        return int(np.prod(self.stage_strides))

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        for k in ("stage_widths", "stage_blocks", "stage_strides"):
            d[k] = list(d[k])
        return d

    @classmethod
    def desk(cls) -> "EncoderHyper":
        return cls()

    @classmethod
    def full(cls) -> "EncoderHyper":
        # ResNet-34 stage layout
        return cls(stem_width=64, stem_kernel=7, kernel_size=3, stage_widths=(64, 128, 256, 256),
                   stage_blocks=(3, 4, 6, 3), stage_strides=(1, 2, 2, 2), embed_dim=256, arch_preset="full")


class EncoderParams(nd.ParamSet):
    kind = "encoder"
    hyper_cls = EncoderHyper

    @property
    def embed_dim(self) -> int:
        return self.hyper.embed_dim


def _conv_init(rng, k, cin, cout):
    return Tensor(rng.normal(0.0, math.sqrt(2.0 / (k * cin)), size=(k, cin, cout)), True)


def _norm_init(tensors, name, width):
    tensors[f"{name}.gamma"] = Tensor(np.ones(width), True)
    tensors[f"{name}.beta"] = Tensor(np.zeros(width), True)


def init_encoder(hyper: EncoderHyper | None = None, seed: int = 0) -> EncoderParams:
    hyper = hyper or EncoderHyper()
    rng = np.random.default_rng([seed, 31])
    t: dict[str, Tensor] = {}
    t["stem.w"] = _conv_init(rng, hyper.stem_kernel, 3, hyper.stem_width)
    if hyper.stem_norm:
        _norm_init(t, "stem.norm", hyper.stem_width)
    cin = hyper.stem_width
    for s, (width, blocks, stride) in enumerate(zip(hyper.stage_widths, hyper.stage_blocks, hyper.stage_strides)):
        for b in range(blocks):
            p = f"s{s}.b{b}"
            st = stride if b == 0 else 1
            t[f"{p}.conv1.w"] = _conv_init(rng, hyper.kernel_size, cin, width)
            _norm_init(t, f"{p}.norm1", width)
            t[f"{p}.conv2.w"] = _conv_init(rng, hyper.kernel_size, width, width)
            _norm_init(t, f"{p}.norm2", width)
            if st != 1 or cin != width:
                t[f"{p}.proj.w"] = _conv_init(rng, 1, cin, width)
            cin = width
    if cin != hyper.embed_dim:
        t["head.w"] = Tensor(rng.normal(0.0, 1.0 / math.sqrt(cin), size=(cin, hyper.embed_dim)), True)
    return EncoderParams(hyper, t)


def instance_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize each channel over time, separately for every example."""
    mu = nd.mean(x, axis=-2, keepdims=True)
    xc = x - mu
    var = nd.mean(nd.square(xc), axis=-2, keepdims=True)
    return xc / nd.sqrt(var + eps) * gamma + beta


def _residual_block(h: Tensor, params: EncoderParams, p: str, stride: int) -> Tensor:
    t = params.tensors
    eps = params.hyper.norm_eps
    out = nd.conv1d(h, t[f"{p}.conv1.w"], stride=stride)
    out = nd.relu(instance_norm(out, t[f"{p}.norm1.gamma"], t[f"{p}.norm1.beta"], eps))
    out = nd.conv1d(out, t[f"{p}.conv2.w"])
    out = instance_norm(out, t[f"{p}.norm2.gamma"], t[f"{p}.norm2.beta"], eps)
    skip = nd.conv1d(h, t[f"{p}.proj.w"], stride=stride) if f"{p}.proj.w" in t else h
    if skip.shape != out.shape:
        raise nd.ShapeError(f"{p}: skip {skip.shape} and main path {out.shape} disagree")
    return nd.relu(out + skip)


def feature_map(x, params: EncoderParams) -> Tensor:
    """Final (..., T', C) feature map before pooling."""
    hyper = params.hyper
    t = params.tensors
    x = nd.as_tensor(x)
    if x.ndim < 2 or x.shape[-1] != 3:
        raise nd.ShapeError(f"encoder input must be (..., T, 3), got {x.shape}")
    if x.shape[-2] < hyper.min_length:
        raise nd.ShapeError(f"window length {x.shape[-2]} below encoder minimum {hyper.min_length}")
    h = nd.conv1d(x, t["stem.w"])
    if hyper.stem_norm:
        h = instance_norm(h, t["stem.norm.gamma"], t["stem.norm.beta"], hyper.norm_eps)
    h = nd.relu(h)
    for s, (blocks, stride) in enumerate(zip(hyper.stage_blocks, hyper.stage_strides)):
        for b in range(blocks):
            h = _residual_block(h, params, f"s{s}.b{b}", stride if b == 0 else 1)
    return h


def global_average_pool(h) -> Tensor:
    return nd.mean(h, axis=-2)


def encode_tensor(x, params: EncoderParams) -> Tensor:
    """Differentiable embeddings for (..., T, 3) input -> (..., embed_dim)."""
    z = global_average_pool(feature_map(x, params))
    if "head.w" in params.tensors:
        z = nd.matmul(nd.reshape(z, z.shape[:-1] + (1, z.shape[-1])), params.tensors["head.w"])
        z = nd.reshape(z, z.shape[:-2] + (z.shape[-1],))
    return z


def encode(window, params: EncoderParams) -> np.ndarray:
    data = window.data if isinstance(window, Window) else np.asarray(window, dtype=np.float64)
    if data.ndim != 2:
        raise nd.ShapeError(f"encode takes a single (T, 3) window, got {data.shape}")
    with nd.no_grad():
        return encode_tensor(data[None], params).data[0]


def stack_windows(windows) -> np.ndarray:
    arrays = [w.data if isinstance(w, Window) else np.asarray(w, dtype=np.float64) for w in windows]
    if not arrays:
        raise nd.ShapeError("empty batch")
    if len({a.shape for a in arrays}) != 1:
        raise nd.ShapeError("ragged batch: windows differ in shape")
    return np.stack(arrays)


def encode_batch(windows, params: EncoderParams, chunk: int = 256) -> np.ndarray:
    """(B, embed_dim) embeddings; rows never interact."""
    x = stack_windows(windows)
    out = np.empty((len(x), params.embed_dim))
    with nd.no_grad():
        for s in range(0, len(x), chunk):
            out[s:s + chunk] = encode_tensor(x[s:s + chunk], params).data
    return out
