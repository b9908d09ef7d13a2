"""End-to-end talking-to-me model: head, lip and audio branches into fusion."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .errors import ConfigError
from .fusion import FusionModule, ModalityStreams, focal_loss
from .headpose import HeadPoseBranch, NormStats, normalize_head
from .lipenc import LipEncoder
from .numkit import ParameterSet, Tensor, no_grad
from .psa import AudioEncoder, consistency_loss
from .vmma import PROMPT_MODES, build_prompt


@dataclass
class ModelConfig:
    n_feat: int = 32
    head_hidden: int = 32
    image_size: int = 32
    channels: int = 1
    patch: int = 16
    lip_dim: int = 32
    lip_heads: int = 4
    lip_layers: int = 1
    max_len: int = 900
    n_mels: int = 80
    audio_channels: int = 32
    audio_dim: int = 32
    d_model: int = 32
    heads: int = 4
    cross_layers: int = 2
    self_layers: int = 1
    self_heads: int = 4
    # ablation toggles; use_head is the head-orientation half of the visual branch
    use_head: bool = True
    use_lip: bool = True
    use_audio: bool = True
    prompt_mode: str = "coarse"

    def validate(self) -> "ModelConfig":
        if self.prompt_mode not in PROMPT_MODES:
            raise ConfigError(f"prompt_mode must be one of {PROMPT_MODES}, got {self.prompt_mode!r}")
        if self.prompt_mode == "coarse" and self.d_model % 2:
            raise ConfigError("coarse prompts need an even d_model")
        if self.image_size % self.patch:
            raise ConfigError(f"image_size {self.image_size} not divisible by patch {self.patch}")
        nn.check_heads(self.lip_dim, self.lip_heads)
        nn.check_heads(self.d_model, self.heads)
        nn.check_heads(2 * self.d_model, self.self_heads)
        for k in ("n_feat", "head_hidden", "lip_dim", "audio_dim", "d_model", "cross_layers", "self_layers"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be positive")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        """Smallest sensible model, for gradient checks and overfit runs."""
        base = dict(n_feat=4, head_hidden=4, image_size=8, patch=4, lip_dim=8, lip_heads=2, max_len=8,
                    audio_channels=4, audio_dim=4, d_model=8, heads=2, cross_layers=1,
                    self_layers=1, self_heads=2)
        base.update(overrides)
        return cls(**base)


@dataclass
class Batch:
    """Model inputs for B sequences of T frames.

    ``head`` is raw (B, T, N_f) with missing frames zeroed; the model
    normalizes it and re-zeros missing frames,
    ``lip`` is (B, T, H, W, C) in [0, 1], ``mel`` is (B, F, n_mels) log-mel of
    the audio the classifier sees and ``mel_clean`` optionally the clean
    reference for the consistency term.
    """

    head: np.ndarray
    lip: np.ndarray
    mel: np.ndarray
    present: np.ndarray
    labels: np.ndarray | None = None
    mel_clean: np.ndarray | None = None
    ids: list = field(default_factory=list)

    @property
    def frames(self) -> int:
        return self.present.shape[-1]


@dataclass
class Forward:
    scores: Tensor
    z_audio: Tensor | None = None
    z_audio_clean: Tensor | None = None


class TTMModel:
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg.validate()
        self.params = ParameterSet()
        rng = np.random.default_rng(seed)
        p, c = self.params, cfg
        self.head = HeadPoseBranch(p, c.n_feat, c.head_hidden, rng)
        self.lip = LipEncoder(p, c.image_size, c.channels, c.patch, c.lip_dim, c.lip_heads,
                              c.lip_layers, rng, max_len=c.max_len)
        self.audio = AudioEncoder(p, c.n_mels, c.audio_channels, c.audio_dim, rng)
        nn.init_linear(p, "proj.h", 3, c.d_model, rng)
        nn.init_linear(p, "proj.l", c.lip_dim, c.d_model, rng)
        nn.init_linear(p, "proj.a", c.audio_dim, c.d_model, rng)
        self.fusion = FusionModule(p, c.d_model, c.heads, c.cross_layers, c.self_layers, rng,
                                   self_heads=c.self_heads)
        self.beta: float | None = None
        self.head_stats: NormStats | None = None

    # -- non-trainable state, mirrored into checkpoint buffers ----------------

    def set_head_stats(self, stats: NormStats) -> None:
        self.head_stats = stats
        self.params.buffers["head.norm_mean"] = stats.mean.copy()
        self.params.buffers["head.norm_std"] = stats.std.copy()

    def set_audio_stats(self, mean: float, std: float) -> None:
        self.audio.set_input_stats(mean, std)
        self.params.buffers["audio.mel_stats"] = np.array([mean, std], dtype=np.float64)

    def set_threshold(self, beta: float) -> None:
        self.beta = float(beta)
        self.params.buffers["vmma.beta"] = np.array([self.beta])

    def load_state(self, state: dict, step: int | None = None) -> None:
        self.params.load_state(state)
        if step is not None:
            self.params.step = step
        b = self.params.buffers
        if "head.norm_mean" in b:
            self.head_stats = NormStats(b["head.norm_mean"], b["head.norm_std"])
        if "audio.mel_stats" in b:
            self.audio.set_input_stats(*b["audio.mel_stats"])
        if "vmma.beta" in b:
            self.beta = float(b["vmma.beta"][0])

    # -- streams --------------------------------------------------------------

    def head_input(self, head: np.ndarray, present: np.ndarray) -> np.ndarray:
        x = np.asarray(head, dtype=np.float64)
        if self.head_stats is not None:
            x = normalize_head(x, self.head_stats)
        return np.where(np.asarray(present, dtype=bool)[..., None], x, 0.0)

    def head_angles(self, head: np.ndarray, present: np.ndarray) -> Tensor:
        return self.head(Tensor(self.head_input(head, present)))

    def streams(self, batch: Batch) -> tuple[ModalityStreams, Tensor | None]:
        c, p = self.cfg, self.params
        B, T = batch.present.shape
        zeros = Tensor(np.zeros((B, T, c.d_model)))
        z_h = nn.linear(p, "proj.h", self.head_angles(batch.head, batch.present)) if c.use_head else zeros
        z_l = nn.linear(p, "proj.l", self.lip(batch.lip)) if c.use_lip else zeros
        z_audio = None
        if c.use_audio:
            z_audio = self.audio(batch.mel, T)
            z_a = nn.linear(p, "proj.a", z_audio)
        else:
            z_a = zeros
        return ModalityStreams(z_h, z_l, z_a), z_audio

    def prompt(self, present: np.ndarray) -> np.ndarray:
        mode = self.cfg.prompt_mode
        if mode == "coarse" and self.beta is None:
            raise ConfigError("coarse prompt mode needs a threshold; call set_threshold first")
        return build_prompt(present, self.cfg.d_model, mode, self.beta)

    def inactive_prefixes(self) -> tuple[str, ...]:
        """Parameter prefixes that no forward pass touches under the current toggles."""
        c = self.cfg
        out = []
        if not c.use_head:
            out += ["head.", "proj.h."]
        if not c.use_lip:
            out += ["lip.", "proj.l."]
        if not c.use_audio:
            out += ["audio.", "proj.a."]
        return tuple(out)

    def fill_inactive_grads(self) -> None:
        """Explicit zero gradients for switched-off branches, so the optimizer can stay strict."""
        prefixes = self.inactive_prefixes()
        for name, t in self.params.items():
            if t.grad is None and name.startswith(prefixes):
                t.grad = np.zeros_like(t.data)

    # -- forward / loss -------------------------------------------------------

    def forward(self, batch: Batch, weights_out: dict | None = None) -> Forward:
        streams, z_audio = self.streams(batch)
        scores = self.fusion(streams, self.prompt(batch.present), weights_out)
        z_clean = None
        if batch.mel_clean is not None and self.cfg.use_audio:
            z_clean = self.audio(batch.mel_clean, batch.frames)
        return Forward(scores, z_audio, z_clean)

    def predict(self, batch: Batch) -> np.ndarray:
        with no_grad():
            return self.forward(batch).scores.data.copy()

    def loss(self, batch: Batch, alpha: float = 0.25, gamma: float = 2.0,
             psa_weight: float = 0.0) -> tuple[Tensor, dict]:
        out = self.forward(batch)
        fl = focal_loss(out.scores, batch.labels, alpha, gamma)
        total = fl
        mse = 0.0
        if psa_weight > 0 and out.z_audio_clean is not None:
            # squared distance per sequence, averaged over the batch
            m = consistency_loss(out.z_audio_clean, out.z_audio) * (1.0 / batch.present.shape[0])
            total = total + psa_weight * m
            mse = m.item()
        return total, {"focal": fl.item(), "mse": mse, "scores": out.scores.data}
