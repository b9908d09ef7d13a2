"""Lip branch: patchify, embed with CLS + learnable positions, encode, read CLS."""

from __future__ import annotations

import numpy as np

from . import nn
from .errors import ConfigError, DimensionError, LengthError
from .numkit import ParameterSet, Tensor, as_tensor, concat


def patchify(img: np.ndarray, patch: int) -> np.ndarray:
    """Split (..., H, W, C) images into (..., N, P*P*C) raster-ordered patch rows."""
    img = np.asarray(img)
    if img.ndim < 3:
        raise DimensionError(f"expected (..., H, W, C) image, got shape {img.shape}")
    *lead, H, W, C = img.shape
    if patch < 1 or H % patch or W % patch:
        raise ConfigError(f"image {H}x{W} is not divisible into {patch}x{patch} patches")
    gh, gw = H // patch, W // patch
    x = img.reshape(*lead, gh, patch, gw, patch, C)
    nl = len(lead)
    x = x.transpose(*range(nl), nl, nl + 2, nl + 1, nl + 3, nl + 4)
    return x.reshape(*lead, gh * gw, patch * patch * C)


def unpatchify(rows: np.ndarray, H: int, W: int, C: int, patch: int) -> np.ndarray:
    """Inverse of :func:`patchify`."""
    rows = np.asarray(rows)
    *lead, n, _ = rows.shape
    gh, gw = H // patch, W // patch
    if n != gh * gw:
        raise DimensionError(f"{n} patches cannot tile a {H}x{W} image at patch size {patch}")
    nl = len(lead)
    x = rows.reshape(*lead, gh, gw, patch, patch, C)
    x = x.transpose(*range(nl), nl, nl + 2, nl + 1, nl + 3, nl + 4)
    return x.reshape(*lead, H, W, C)


def embed(patches: Tensor, w_p: Tensor, b_p: Tensor | None, positions: Tensor, cls: Tensor) -> Tensor:
    """Project patches, prepend CLS, add positional rows 0..N.

    ``patches`` is (..., N, P*P*C); result is (..., N+1, D).
    """
    patches = as_tensor(patches)
    n = patches.shape[-2]
    if n + 1 > positions.shape[0]:
        raise LengthError(f"{n} patches + CLS exceed the positional table of {positions.shape[0]} rows")
    if patches.shape[-1] != w_p.shape[0]:
        raise DimensionError(f"patch width {patches.shape[-1]} does not match projection {w_p.shape}")
    z = patches @ w_p
    if b_p is not None:
        z = z + b_p
    lead = patches.shape[:-2]
    d = w_p.shape[1]
    cls_tok = cls.reshape(*([1] * len(lead)), 1, d) + Tensor(np.zeros(lead + (1, d)))
    tokens = concat([cls_tok, z], axis=-2)
    return tokens + positions[0 : n + 1]


def lip_feature(z_enc: Tensor) -> Tensor:
    """The CLS row of an encoded sequence."""
    if z_enc.shape[-2] < 1:
        raise LengthError("encoded sequence is empty")
    return z_enc[..., 0, :]


class LipEncoder:
    """Patch transformer over per-frame lip images, emitting z_l per frame."""

    def __init__(self, params: ParameterSet, image_size: int, channels: int, patch: int,
                 d_model: int, heads: int, layers: int, rng: np.random.Generator,
                 max_len: int = 900, prefix: str = "lip"):
        if image_size % patch:
            raise ConfigError(f"image size {image_size} not divisible by patch {patch}")
        nn.check_heads(d_model, heads)
        n = (image_size // patch) ** 2
        if n + 1 > max_len + 1:
            raise LengthError(f"{n} patches exceed max length {max_len}")
        self.params, self.prefix = params, prefix
        self.patch, self.heads, self.layers = patch, heads, layers
        self.image_size, self.channels, self.d_model = image_size, channels, d_model
        nn.init_linear(params, f"{prefix}.patch", patch * patch * channels, d_model, rng)
        params.add(f"{prefix}.pos", rng.normal(0.0, 0.02, size=(max_len + 1, d_model)))
        params.add(f"{prefix}.cls", rng.normal(0.0, 0.02, size=(d_model,)))
        for i in range(layers):
            nn.init_encoder_block(params, f"{prefix}.enc{i}", d_model, heads, rng)
        nn.init_norm(params, f"{prefix}.ln_out", d_model)

    def embed(self, images: np.ndarray) -> Tensor:
        p = self.params
        rows = patchify(images, self.patch)
        return embed(Tensor(rows), p[f"{self.prefix}.patch.weight"], p[f"{self.prefix}.patch.bias"],
                     p[f"{self.prefix}.pos"], p[f"{self.prefix}.cls"])

    def encode(self, tokens: Tensor, weights_out: list | None = None) -> Tensor:
        if tokens.shape[-1] != self.d_model:
            raise DimensionError(f"token width {tokens.shape[-1]} != model width {self.d_model}")
        for i in range(self.layers):
            tokens = nn.encoder_block(self.params, f"{self.prefix}.enc{i}", tokens, self.heads, weights_out)
        return tokens

    def __call__(self, images: np.ndarray) -> Tensor:
        """(..., H, W, C) float images in [0, 1] -> (..., D) lip features."""
        z = lip_feature(self.encode(self.embed(images)))
        return nn.norm(self.params, f"{self.prefix}.ln_out", z)
