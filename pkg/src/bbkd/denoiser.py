"""The clean-image predictor: a small residual conv net with time conditioning.

The network computes ``p0_hat = p_t + r(p_t, t)`` where the residual branch
is input conv -> N residual blocks -> zero-initialized output conv.  Each
block applies conv, adds a per-channel affine projection of the sinusoidal
step embedding, SiLU, conv, then the skip connection.  Zero-initializing
the output conv makes the fresh network the identity map, which anchors
both optimization and tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class DenoiserConfig:
    base_channels: int = 32
    num_blocks: int = 4
    time_embed_dim: int = 32
    image_channels: int = 1

    def __post_init__(self):
        if min(self.base_channels, self.num_blocks, self.time_embed_dim, self.image_channels) < 1:
            raise ValueError("all denoiser config counts must be >= 1")
        if self.time_embed_dim % 2 != 0:
            raise ValueError(f"time_embed_dim must be even, got {self.time_embed_dim}")


def param_shapes(config: DenoiserConfig) -> dict[str, tuple[int, ...]]:
    """Ordered name -> shape map for every learnable tensor."""
    c = config.base_channels
    shapes: dict[str, tuple[int, ...]] = {
        "conv_in.kernels": (c, config.image_channels, 3, 3),
        "conv_in.bias": (c,),
    }
    for i in range(config.num_blocks):
        shapes[f"block{i}.conv1.kernels"] = (c, c, 3, 3)
        shapes[f"block{i}.conv1.bias"] = (c,)
        shapes[f"block{i}.time.weight"] = (c, config.time_embed_dim)
        shapes[f"block{i}.time.bias"] = (c,)
        shapes[f"block{i}.conv2.kernels"] = (c, c, 3, 3)
        shapes[f"block{i}.conv2.bias"] = (c,)
    shapes["conv_out.kernels"] = (config.image_channels, c, 3, 3)
    shapes["conv_out.bias"] = (config.image_channels,)
    return shapes


def parameter_count(config: DenoiserConfig) -> int:
    return sum(math.prod(s) for s in param_shapes(config).values())


def init_params(config: DenoiserConfig, seed) -> dict[str, np.ndarray]:
    """Fan-in scaled normal init for weights, zero biases, zero output conv.

    Deterministic per seed; accepts an int or a numpy SeedSequence.
    """
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        if name.startswith("conv_out") or name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=np.float64)
        else:
            fan_in = math.prod(shape[1:])
            std = math.sqrt(2.0 / fan_in)
            params[name] = std * rng.standard_normal(shape)
    return params


def validate_params(config: DenoiserConfig, params: Mapping[str, np.ndarray]) -> None:
    expected = param_shapes(config)
    if set(params) != set(expected):
        missing = set(expected) - set(params)
        extra = set(params) - set(expected)
        raise ValueError(f"parameter names do not match config (missing={sorted(missing)}, extra={sorted(extra)})")
    for name, shape in expected.items():
        if tuple(params[name].shape) != shape:
            raise ValueError(f"parameter '{name}' has shape {params[name].shape}, expected {shape}")
        if not np.all(np.isfinite(params[name])):
            raise ValueError(f"parameter '{name}' contains non-finite entries")


def time_embedding(t: int, dim: int, total_steps: int | None = None) -> np.ndarray:
    """Sinusoidal embedding of the step index, interleaved [sin, cos] pairs.

    Frequencies are 10000^(-2i/dim); all entries lie in [-1, 1].  The
    optional total_steps is only a range check on t.
    """
    if dim % 2 != 0:
        raise ValueError(f"embedding dim must be even, got {dim}")
    if total_steps is not None and not 0 <= t <= total_steps:
        raise ValueError(f"step index {t} outside [0, {total_steps}]")
    freqs = 10000.0 ** (-2.0 * np.arange(dim // 2) / dim)
    emb = np.empty(dim, dtype=np.float64)
    emb[0::2] = np.sin(t * freqs)
    emb[1::2] = np.cos(t * freqs)
    return emb


def wrap_params(params: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
    """Wrap parameter arrays as graph leaves for one forward/backward pass."""
    return {name: Tensor(p, requires_grad=True) for name, p in params.items()}


def forward_graph(ptensors: Mapping[str, Tensor], x: Tensor, t: int, config: DenoiserConfig) -> Tensor:
    """Differentiable forward pass; returns the p0 estimate as a graph node."""
    if x.data.ndim != 3 or x.data.shape[0] != config.image_channels:
        raise ad.ShapeError(f"input shape {x.data.shape} incompatible with {config.image_channels} channels")
    _, h, w = x.data.shape
    emb = Tensor(time_embedding(t, config.time_embed_dim))
    hid = ad.conv2d(x, ptensors["conv_in.kernels"], ptensors["conv_in.bias"])
    for i in range(config.num_blocks):
        skip = hid
        hid = ad.conv2d(hid, ptensors[f"block{i}.conv1.kernels"], ptensors[f"block{i}.conv1.bias"])
        tvec = ad.linear(ptensors[f"block{i}.time.weight"], emb, ptensors[f"block{i}.time.bias"])
        hid = ad.add(hid, ad.broadcast_channels(tvec, h, w))
        hid = ad.silu(hid)
        hid = ad.conv2d(hid, ptensors[f"block{i}.conv2.kernels"], ptensors[f"block{i}.conv2.bias"])
        hid = ad.add(hid, skip)
    residual = ad.conv2d(hid, ptensors["conv_out.kernels"], ptensors["conv_out.bias"])
    return ad.add(x, residual)


def predict_x0(params: Mapping[str, np.ndarray], p_t: np.ndarray, t: int, config: DenoiserConfig) -> np.ndarray:
    """Inference-only wrapper: plain array in, plain array out."""
    out = forward_graph(wrap_params(params), Tensor(p_t), t, config)
    return out.data


class Denoiser:
    """Bundles a config with its parameters; ``predict`` is the sampler callback."""

    def __init__(self, config: DenoiserConfig, params: Mapping[str, np.ndarray]):
        validate_params(config, params)
        self.config = config
        self.params = dict(params)

    def predict(self, p_t: np.ndarray, t: int) -> np.ndarray:
        return predict_x0(self.params, p_t, t, self.config)
