"""Layer helpers shared by the encoders and the fusion stack.

Parameters live in a :class:`ParameterSet` under dotted paths; the helpers
here create them (``init_*``) or read them (everything else).
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractError
from .numkit import ParameterSet, Tensor, gelu, layer_norm, softmax


def init_linear(params: ParameterSet, prefix: str, d_in: int, d_out: int,
                rng: np.random.Generator, std: float | None = None, bias: bool = True) -> None:
    std = (1.0 / np.sqrt(d_in)) if std is None else std
    params.add(f"{prefix}.weight", rng.normal(0.0, std, size=(d_in, d_out)))
    if bias:
        params.add(f"{prefix}.bias", np.zeros(d_out))


def linear(params: ParameterSet, prefix: str, x: Tensor) -> Tensor:
    out = x @ params[f"{prefix}.weight"]
    b = f"{prefix}.bias"
    if b in params:
        out = out + params[b]
    return out


def init_norm(params: ParameterSet, prefix: str, d: int) -> None:
    params.add(f"{prefix}.gain", np.ones(d))
    params.add(f"{prefix}.bias", np.zeros(d))


def norm(params: ParameterSet, prefix: str, x: Tensor, eps: float = 1e-5) -> Tensor:
    return layer_norm(x, params[f"{prefix}.gain"], params[f"{prefix}.bias"], eps)


def check_heads(d_model: int, heads: int) -> int:
    if heads < 1 or d_model % heads:
        raise ConfigError(f"model width {d_model} is not divisible by {heads} heads")
    return d_model // heads


def init_attention(params: ParameterSet, prefix: str, d_model: int, heads: int,
                   rng: np.random.Generator, d_kv: int | None = None) -> None:
    check_heads(d_model, heads)
    d_kv = d_model if d_kv is None else d_kv
    init_linear(params, f"{prefix}.q", d_model, d_model, rng)
    init_linear(params, f"{prefix}.k", d_kv, d_model, rng)
    init_linear(params, f"{prefix}.v", d_kv, d_model, rng)
    init_linear(params, f"{prefix}.o", d_model, d_model, rng)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, t, d = x.shape
    return x.reshape(*lead, t, heads, d // heads).swapaxes(-2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, t, dh = x.shape
    return x.swapaxes(-2, -3).reshape(*lead, t, h * dh)


def attention(params: ParameterSet, prefix: str, q_in: Tensor, kv_in: Tensor,
              heads: int, weights_out: list | None = None) -> Tensor:
    """Multi-head scaled dot-product attention, output-projected.

    ``q_in`` is (..., Tq, D) and ``kv_in`` is (..., Tk, D_kv). Scores are
    scaled by 1/sqrt(d_k) with d_k the per-head key width. When
    ``weights_out`` is a list the attention weights (..., H, Tq, Tk) are
    appended to it.
    """
    d_model = params[f"{prefix}.q.weight"].shape[1]
    dk = check_heads(d_model, heads)
    if q_in.shape[:-2] != kv_in.shape[:-2]:
        raise ContractError(f"attention: batch shapes differ {q_in.shape} vs {kv_in.shape}")
    q = _split_heads(linear(params, f"{prefix}.q", q_in), heads)
    k = _split_heads(linear(params, f"{prefix}.k", kv_in), heads)
    v = _split_heads(linear(params, f"{prefix}.v", kv_in), heads)
    w = softmax((q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(dk)), axis=-1)
    if weights_out is not None:
        weights_out.append(w.data)
    return linear(params, f"{prefix}.o", _merge_heads(w @ v))


def init_encoder_block(params: ParameterSet, prefix: str, d_model: int, heads: int,
                       rng: np.random.Generator, ffn_mult: int = 4) -> None:
    init_norm(params, f"{prefix}.ln1", d_model)
    init_attention(params, f"{prefix}.attn", d_model, heads, rng)
    init_norm(params, f"{prefix}.ln2", d_model)
    init_linear(params, f"{prefix}.ff1", d_model, ffn_mult * d_model, rng)
    init_linear(params, f"{prefix}.ff2", ffn_mult * d_model, d_model, rng)


def encoder_block(params: ParameterSet, prefix: str, x: Tensor, heads: int,
                  weights_out: list | None = None) -> Tensor:
    """Pre-norm transformer block: self-attention then GELU feed-forward."""
    h = norm(params, f"{prefix}.ln1", x)
    x = x + attention(params, f"{prefix}.attn", h, h, heads, weights_out)
    h = norm(params, f"{prefix}.ln2", x)
    return x + linear(params, f"{prefix}.ff2", gelu(linear(params, f"{prefix}.ff1", h)))
