"""Visual missing-modality prompts built from per-frame head-crop presence.

Prompts are binary inputs, never parameters. ``fine`` marks each missing
frame across all feature dims; ``coarse`` activates one half of the feature
dims per sequence depending on whether the missing ratio reaches the
threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError


def fine_grained_prompt(present: np.ndarray, d: int) -> np.ndarray:
    """(B, T) or (T,) presence -> (..., T, d) prompt: 0 where present, 1 where missing."""
    if d < 1:
        raise ConfigError(f"prompt width must be >= 1, got {d}")
    missing = ~np.asarray(present, dtype=bool)
    return np.repeat(missing[..., None].astype(np.float64), d, axis=-1)


def missing_ratio(present: np.ndarray) -> np.ndarray:
    """Fraction of missing frames per sequence (last axis is time)."""
    present = np.asarray(present, dtype=bool)
    T = present.shape[-1]
    if T == 0:
        raise ContractError("missing ratio is undefined for an empty sequence")
    return (T - present.sum(axis=-1)) / T


def coarse_row(delta: float, beta: float, d: int) -> np.ndarray:
    """One prompt row: first half on if delta < beta, second half on otherwise.

    Dimensions are 1-indexed in the rule, so d <= D/2 is the first half.
    """
    if d % 2:
        raise ConfigError(f"coarse prompt needs an even width, got {d}")
    row = np.zeros(d)
    half = d // 2
    if delta < beta:
        row[:half] = 1.0
    else:
        row[half:] = 1.0
    return row


def coarse_grained_prompt(delta, beta: float, d: int, frames: int | None = None) -> np.ndarray:
    """Per-sequence coarse prompt.

    ``delta`` may be a scalar or a (B,) array of missing ratios. Without
    ``frames`` the rows are returned, shape (d,) or (B, d); with it each row
    is broadcast over that many frames.
    """
    delta = np.asarray(delta, dtype=np.float64)
    rows = np.stack([coarse_row(float(x), beta, d) for x in delta.reshape(-1)]).reshape(delta.shape + (d,))
    if frames is None:
        return rows
    return np.repeat(rows[..., None, :], frames, axis=-2)


def adaptive_threshold(history, k: float = 0.0) -> float:
    """mean + k * population std of observed missing ratios, clamped to [0, 1]."""
    h = np.asarray(history, dtype=np.float64).reshape(-1)
    if h.size == 0:
        raise ContractError("adaptive threshold needs a non-empty history")
    return float(np.clip(h.mean() + k * h.std(), 0.0, 1.0))


@dataclass
class ThresholdState:
    k: float = 0.0
    history: list = field(default_factory=list)
    beta: float | None = None

    def observe(self, deltas) -> None:
        if self.beta is not None:
            raise ContractError("threshold is frozen; history can no longer change")
        self.history.extend(float(x) for x in np.asarray(deltas).reshape(-1))

    def freeze(self) -> float:
        self.beta = adaptive_threshold(self.history, self.k)
        return self.beta


PROMPT_MODES = ("none", "fine", "coarse")


def build_prompt(present: np.ndarray, d: int, mode: str, beta: float | None = None) -> np.ndarray:
    """(B, T) presence -> (B, T, d) prompt for the chosen mode.

    ``none`` returns zeros, which is also the all-present fine prompt.
    """
    present = np.asarray(present, dtype=bool)
    if mode == "none":
        return np.zeros(present.shape + (d,))
    if mode == "fine":
        return fine_grained_prompt(present, d)
    if mode == "coarse":
        if beta is None:
            raise ConfigError("coarse prompt needs a threshold")
        return coarse_grained_prompt(missing_ratio(present), beta, d, frames=present.shape[-1])
    raise ConfigError(f"unknown prompt mode {mode!r}; expected one of {PROMPT_MODES}")
