"""Tri-modal cross-attention fusion, prompt concatenation and per-frame scoring."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import DataError, DimensionError
from .numkit import ParameterSet, Tensor, as_tensor, concat

# (query stream, key/value stream, output name) in the order the blocks run
PAIRS = (("h", "l", "hl"), ("l", "a", "la"), ("a", "h", "ah"))


@dataclass
class ModalityStreams:
    z_h: Tensor
    z_l: Tensor
    z_a: Tensor

    def check(self) -> None:
        shapes = {self.z_h.shape, self.z_l.shape, self.z_a.shape}
        if len(shapes) != 1:
            raise DimensionError(
                f"fusion: streams must share (…, T, D_m); got h={self.z_h.shape} "
                f"l={self.z_l.shape} a={self.z_a.shape}"
            )


def cross_attention(params: ParameterSet, prefix: str, q_stream: Tensor, kv_stream: Tensor,
                    heads: int, weights_out: list | None = None) -> Tensor:
    """Query stream attends over every frame of the key/value stream, plus residual."""
    q_stream, kv_stream = as_tensor(q_stream), as_tensor(kv_stream)
    if q_stream.shape[-2] != kv_stream.shape[-2]:
        raise DimensionError(
            f"cross attention needs equal frame counts, got {q_stream.shape[-2]} and {kv_stream.shape[-2]}"
        )
    return q_stream + nn.attention(params, prefix, q_stream, kv_stream, heads, weights_out)


def aggregate(z_hl: Tensor, z_la: Tensor, z_ah: Tensor) -> Tensor:
    z_hl, z_la, z_ah = as_tensor(z_hl), as_tensor(z_la), as_tensor(z_ah)
    if not (z_hl.shape == z_la.shape == z_ah.shape):
        raise DimensionError(f"aggregate: shapes differ {z_hl.shape}, {z_la.shape}, {z_ah.shape}")
    return z_hl + z_la + z_ah


def focal_loss(scores: Tensor, labels, alpha: float = 0.25, gamma: float = 2.0) -> Tensor:
    """Mean binary focal loss; scores are probabilities, clamped to [1e-7, 1 - 1e-7]."""
    y = np.asarray(labels, dtype=np.float64)
    if not np.all((y == 0) | (y == 1)):
        raise DataError("focal loss labels must be 0 or 1")
    p = as_tensor(scores).clip(1e-7, 1.0 - 1e-7)
    p_t = p * y + (1.0 - p) * (1.0 - y)
    alpha_t = alpha * y + (1.0 - alpha) * (1.0 - y)
    mod = (1.0 - p_t) ** gamma if gamma != 0 else 1.0
    return (-(alpha_t * mod * p_t.log())).mean()


class FusionModule:
    """Cross-attention pairs -> sum -> concat prompt -> self-attention -> sigmoid."""

    def __init__(self, params: ParameterSet, d_model: int, heads: int, cross_layers: int,
                 self_layers: int, rng: np.random.Generator, self_heads: int | None = None,
                 prefix: str = "fusion"):
        self.params, self.prefix = params, prefix
        self.d_model, self.heads = d_model, heads
        self.self_heads = heads if self_heads is None else self_heads
        self.cross_layers, self.self_layers = cross_layers, self_layers
        nn.check_heads(d_model, heads)
        nn.check_heads(2 * d_model, self.self_heads)
        for _, _, name in PAIRS:
            for i in range(cross_layers):
                nn.init_attention(params, f"{prefix}.x{name}{i}", d_model, heads, rng)
        for i in range(self_layers):
            nn.init_encoder_block(params, f"{prefix}.self{i}", 2 * d_model, self.self_heads, rng)
        nn.init_norm(params, f"{prefix}.ln_out", 2 * d_model)
        nn.init_linear(params, f"{prefix}.cls", 2 * d_model, 1, rng)

    def cross(self, streams: ModalityStreams, weights_out: dict | None = None) -> dict[str, Tensor]:
        src = {"h": streams.z_h, "l": streams.z_l, "a": streams.z_a}
        out = {}
        for q, kv, name in PAIRS:
            x = src[q]
            for i in range(self.cross_layers):
                sink = None if weights_out is None else weights_out.setdefault(name, [])
                x = cross_attention(self.params, f"{self.prefix}.x{name}{i}", x, src[kv], self.heads, sink)
            out[name] = x
        return out

    def logits(self, streams: ModalityStreams, prompt, weights_out: dict | None = None) -> Tensor:
        streams.check()
        prompt = as_tensor(prompt)
        if prompt.shape != streams.z_h.shape:
            raise DimensionError(
                f"fusion: prompt shape {prompt.shape} must equal stream shape {streams.z_h.shape}"
            )
        z = self.cross(streams, weights_out)
        x = concat([aggregate(z["hl"], z["la"], z["ah"]), prompt], axis=-1)
        for i in range(self.self_layers):
            x = nn.encoder_block(self.params, f"{self.prefix}.self{i}", x, self.self_heads)
        x = nn.norm(self.params, f"{self.prefix}.ln_out", x)
        return nn.linear(self.params, f"{self.prefix}.cls", x).reshape(*x.shape[:-1])

    def __call__(self, streams: ModalityStreams, prompt, weights_out: dict | None = None) -> Tensor:
        """Per-frame TTM probabilities, shape (..., T)."""
        return self.logits(streams, prompt, weights_out).sigmoid()


def fuse_forward(fusion: FusionModule, streams: ModalityStreams, prompt) -> Tensor:
    return fusion(streams, prompt)
