"""Audio front end and the parallel shared-weight audio encoder.

The encoder owns one parameter set. Clean and noise-mixed spectrograms both
pass through it, so weight sharing is structural rather than copied.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import nn
from .errors import ConfigError, ContractError, DimensionError, LengthError
from .numkit import ParameterSet, Tensor, as_tensor, concat, gelu

MEL_FLOOR = 1e-10


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = 16000
    win_ms: float = 25.0
    hop_ms: float = 10.0
    n_fft: int = 512
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 8000.0

    @property
    def win(self) -> int:
        return int(round(self.sample_rate * self.win_ms / 1000.0))

    @property
    def hop(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000.0))

    def n_frames(self, n_samples: int) -> int:
        return (n_samples - self.win) // self.hop + 1


# -- waveform manipulation ----------------------------------------------------


def mix_noise(clean: np.ndarray, noise: np.ndarray, gamma: float,
              rng: np.random.Generator | None = None, clean_rate: int = 16000,
              noise_rate: int = 16000, offset: int | None = None) -> np.ndarray:
    """(1 - gamma) * clean + gamma * noise, clamped to [-1, 1].

    Longer noise is cropped at ``offset`` (random if an rng is given, else 0).
    """
    if clean_rate != noise_rate:
        raise ConfigError(f"sample rate mismatch: clean {clean_rate} Hz, noise {noise_rate} Hz")
    if not 0.0 <= gamma <= 1.0:
        raise ContractError(f"mixing ratio must lie in [0, 1], got {gamma}")
    clean = np.asarray(clean, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    n = clean.shape[-1]
    if noise.shape[-1] < n:
        raise LengthError(f"noise has {noise.shape[-1]} samples, need at least {n}")
    if offset is None:
        offset = int(rng.integers(0, noise.shape[-1] - n + 1)) if rng is not None else 0
    seg = noise[..., offset : offset + n]
    return np.clip((1.0 - gamma) * clean + gamma * seg, -1.0, 1.0)


def signal_power(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean(x * x))


def snr_db(clean: np.ndarray, noise: np.ndarray) -> float:
    return 10.0 * np.log10(signal_power(clean) / signal_power(noise))


def noise_gain_for_snr(clean: np.ndarray, noise: np.ndarray, target_db: float) -> float:
    pc, pn = signal_power(clean), signal_power(noise)
    if pc <= 0:
        raise ContractError("clean signal has zero power")
    if pn <= 0:
        raise ContractError("noise has zero power")
    return float(np.sqrt(pc / (pn * 10.0 ** (target_db / 10.0))))


def scale_noise_to_snr(clean: np.ndarray, noise: np.ndarray, target_db: float) -> np.ndarray:
    """clean + g * noise with g chosen so the clean-to-noise ratio is ``target_db``."""
    clean = np.asarray(clean, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)[..., : clean.shape[-1]]
    return clean + noise_gain_for_snr(clean, noise, target_db) * noise


# -- log-mel front end --------------------------------------------------------


def hz_to_mel(f):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    f = np.asarray(f, dtype=np.float64)
    f_sp = 200.0 / 3
    mels = f / f_sp
    min_log_hz, min_log_mel = 1000.0, 1000.0 / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(f >= min_log_hz, min_log_mel + np.log(np.maximum(f, 1e-12) / min_log_hz) / logstep, mels)


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz, min_log_mel = 1000.0, 1000.0 / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(m >= min_log_mel, min_log_hz * np.exp(logstep * (m - min_log_mel)), f_sp * m)


@lru_cache(maxsize=8)
def mel_filterbank(cfg: MelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Triangular filters (n_mels, n_fft//2+1) and their centre frequencies."""
    fft_freqs = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (fft_freqs[None] - lo) / (mid - lo)
    down = (hi - fft_freqs[None]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb *= (2.0 / (hi - lo))  # equal-area normalization
    return fb, edges[1:-1]


@lru_cache(maxsize=8)
def _window(n: int) -> np.ndarray:
    return np.hanning(n + 1)[:-1]  # periodic Hann


def frame_signal(w: np.ndarray, cfg: MelConfig) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    n = w.shape[-1]
    if n < cfg.win:
        raise LengthError(f"waveform of {n} samples is shorter than one {cfg.win}-sample window")
    count = cfg.n_frames(n)
    idx = np.arange(cfg.win)[None, :] + cfg.hop * np.arange(count)[:, None]
    return w[..., idx]


def mel_spectrogram(w: np.ndarray, cfg: MelConfig = MelConfig()) -> np.ndarray:
    """Log-mel energies, shape (..., frames, n_mels).

    Per frame: Hann-windowed magnitude spectrum, triangular mel filterbank,
    natural log with a floor of 1e-10.
    """
    frames = frame_signal(w, cfg) * _window(cfg.win)
    mag = np.abs(np.fft.rfft(frames, n=cfg.n_fft, axis=-1))
    fb, _ = mel_filterbank(cfg)
    return np.log(np.maximum(mag @ fb.T, MEL_FLOOR))


def video_pool_matrix(n_in: int, in_rate: float, n_video: int, fps: float = 30.0) -> np.ndarray:
    """(n_video, n_in) averaging matrix mapping feature frames to video frames.

    Feature frame i is centred at (i + 0.5) / in_rate seconds; video frame t
    averages the feature frames whose centres fall in [t/fps, (t+1)/fps). A
    video frame with no feature frame takes the nearest one.
    """
    centres = (np.arange(n_in) + 0.5) / in_rate
    owner = np.minimum((centres * fps).astype(int), n_video - 1)
    M = np.zeros((n_video, n_in))
    M[owner, np.arange(n_in)] = 1.0
    empty = M.sum(axis=1) == 0
    if np.any(empty):
        vc = (np.arange(n_video) + 0.5) / fps
        for t in np.flatnonzero(empty):
            M[t, np.argmin(np.abs(centres - vc[t]))] = 1.0
    return M / M.sum(axis=1, keepdims=True)


# -- shared-weight encoder ----------------------------------------------------


def conv1d(params: ParameterSet, prefix: str, x: Tensor, kernel: int, stride: int) -> Tensor:
    """'Same'-padded temporal convolution over (..., F, C) via gathered windows."""
    *lead, F, C = x.shape
    pad = kernel // 2
    zeros = Tensor(np.zeros((*lead, pad, C)))
    xp = concat([zeros, x, zeros], axis=-2)
    n_out = (F + 2 * pad - kernel) // stride + 1
    span = stride * (n_out - 1) + 1
    # window rows laid out tap-major: [x[t-1], x[t], x[t+1]] for kernel 3
    win = concat([xp[..., j : j + span : stride, :] for j in range(kernel)], axis=-1)
    return nn.linear(params, prefix, win)


class AudioEncoder:
    """Two strided temporal convolutions and a linear head, pooled to video rate."""

    def __init__(self, params: ParameterSet, n_mels: int, channels: int, d_out: int,
                 rng: np.random.Generator, kernel: int = 3, stride: int = 2,
                 mel_rate: float = 100.0, fps: float = 30.0, prefix: str = "audio"):
        self.params, self.prefix = params, prefix
        self.kernel, self.stride = kernel, stride
        self.mel_rate, self.fps, self.n_mels = mel_rate, fps, n_mels
        nn.init_linear(params, f"{prefix}.conv1", kernel * n_mels, channels, rng)
        nn.init_linear(params, f"{prefix}.conv2", kernel * channels, channels, rng)
        nn.init_linear(params, f"{prefix}.head", channels, d_out, rng)
        self.mel_mean = 0.0
        self.mel_std = 1.0
        self._pool_cache: dict[tuple, np.ndarray] = {}

    def set_input_stats(self, mean: float, std: float) -> None:
        self.mel_mean, self.mel_std = float(mean), float(std)

    def _pool(self, n_in: int, n_video: int) -> np.ndarray:
        key = (n_in, n_video)
        if key not in self._pool_cache:
            rate = self.mel_rate / self.stride
            self._pool_cache[key] = video_pool_matrix(n_in, rate, n_video, self.fps)
        return self._pool_cache[key]

    def __call__(self, mel: np.ndarray, n_video: int) -> Tensor:
        """(..., F, n_mels) log-mel -> (..., n_video, d_out)."""
        mel = np.asarray(mel, dtype=np.float64)
        if mel.shape[-1] != self.n_mels:
            raise DimensionError(f"expected {self.n_mels} mel bins, got {mel.shape[-1]}")
        x = Tensor((mel - self.mel_mean) / self.mel_std)
        p = self.prefix
        h = gelu(conv1d(self.params, f"{p}.conv1", x, self.kernel, 1))
        h = gelu(conv1d(self.params, f"{p}.conv2", h, self.kernel, self.stride))
        pooled = Tensor(self._pool(h.shape[-2], n_video)) @ h
        return nn.linear(self.params, f"{p}.head", pooled)


def psa_forward(encoder: AudioEncoder, s_clean: np.ndarray, s_mixed: np.ndarray,
                n_video: int) -> tuple[Tensor, Tensor]:
    """Encode clean and mixed spectrograms with the one shared encoder."""
    if np.shape(s_clean) != np.shape(s_mixed):
        raise ConfigError(f"spectrogram framing differs: {np.shape(s_clean)} vs {np.shape(s_mixed)}")
    return encoder(s_clean, n_video), encoder(s_mixed, n_video)


def consistency_loss(z_a: Tensor, z_m: Tensor) -> Tensor:
    """Sum of squared differences ||z_a - z_m||^2 (no averaging)."""
    z_a, z_m = as_tensor(z_a), as_tensor(z_m)
    if z_a.shape != z_m.shape:
        raise DimensionError(f"embedding shapes differ: {z_a.shape} vs {z_m.shape}")
    d = z_a - z_m
    return (d * d).sum()
