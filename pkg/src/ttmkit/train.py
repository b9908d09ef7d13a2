"""Turning scenario datasets into batches, and the training loop."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, NonFiniteError
from .headpose import fit_norm_stats
from .model import Batch, TTMModel
from .numkit import adam_step, clip_grad_norm
from .psa import MelConfig, mel_spectrogram, mix_noise, scale_noise_to_snr
from .scenario import NOISE_KINDS, ScenarioDataset, make_noise
from .vmma import ThresholdState, missing_ratio


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 40
    batch_size: int = 8
    clip: float = 1.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    # noise-mixing augmentation with the clean/mixed consistency term
    psa: bool = True
    psa_weight: float = 1e-3
    mix_prob: float = 0.5
    mix_gamma: float = 0.5
    mix_snr_min: float = -10.0
    mix_snr_max: float = 10.0
    patience: int = 8
    threshold_k: float = 0.0
    threshold: float | None = None  # fixed beta; None means adaptive from the train split
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.lr < 0:
            raise ConfigError("lr must be non-negative")
        if self.epochs < 0 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError("epochs >= 0, batch_size >= 1 and patience >= 1 required")
        if self.clip <= 0:
            raise ConfigError("clip must be positive")
        if not 0.0 <= self.mix_prob <= 1.0 or not 0.0 <= self.mix_gamma <= 1.0:
            raise ConfigError("mix_prob and mix_gamma must lie in [0, 1]")
        if self.mix_snr_min > self.mix_snr_max:
            raise ConfigError("mix_snr_min exceeds mix_snr_max")
        if self.threshold is not None and not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("threshold must lie in [0, 1]")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Prepared:
    """Arrays for one split, stacked over sequences."""

    ids: list
    head: np.ndarray     # float32 (N, T, N_f)
    lip: np.ndarray      # uint8 (N, T, H, W, C)
    wave: np.ndarray     # float32 (N, S)
    mel: np.ndarray      # (N, F, n_mels) log-mel of the recorded audio
    present: np.ndarray  # bool (N, T)
    labels: np.ndarray   # uint8 (N, T)
    sample_rate: int = 16000

    def __len__(self):
        return len(self.ids)

    def batch(self, idx, mel: np.ndarray | None = None, mel_clean: np.ndarray | None = None) -> Batch:
        idx = np.asarray(idx)
        return Batch(
            head=self.head[idx].astype(np.float64),
            lip=self.lip[idx].astype(np.float64) / 255.0,
            mel=self.mel[idx] if mel is None else mel,
            present=self.present[idx],
            labels=self.labels[idx].astype(np.float64),
            mel_clean=mel_clean,
            ids=[self.ids[i] for i in idx],
        )


def log_mels(waves: np.ndarray, mel_cfg: MelConfig = MelConfig()) -> np.ndarray:
    return np.stack([mel_spectrogram(w, mel_cfg) for w in np.asarray(waves, dtype=np.float64)])


def prepare(ds: ScenarioDataset, mel_cfg: MelConfig = MelConfig()) -> Prepared:
    if len(ds) == 0:
        raise ConfigError(f"split {ds.split!r} is empty")
    seqs = ds.sequences
    wave = np.stack([s.wave for s in seqs])
    return Prepared(
        ids=[s.id for s in seqs],
        head=np.stack([s.head for s in seqs]),
        lip=np.stack([s.lip for s in seqs]),
        wave=wave,
        mel=log_mels(wave, mel_cfg),
        present=np.stack([s.present for s in seqs]),
        labels=np.stack([s.labels for s in seqs]),
        sample_rate=seqs[0].sample_rate,
    )


def fit_input_stats(model: TTMModel, train: Prepared, tcfg: TrainConfig) -> None:
    """Normalization statistics and the prompt threshold, all from the train split."""
    model.set_head_stats(fit_norm_stats(train.head, train.present))
    model.set_audio_stats(float(train.mel.mean()), float(max(train.mel.std(), 1e-6)))
    if tcfg.threshold is not None:
        model.set_threshold(tcfg.threshold)
    else:
        state = ThresholdState(k=tcfg.threshold_k)
        state.observe(missing_ratio(train.present))
        model.set_threshold(state.freeze())


def mixed_mels(data: Prepared, idx, tcfg: TrainConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    """Noise-mixed log-mels for a batch; each sequence is mixed with probability mix_prob."""
    mel = data.mel[idx].copy()
    mixed = np.zeros(len(idx), dtype=bool)
    for j, i in enumerate(idx):
        if rng.random() >= tcfg.mix_prob:
            continue
        clean = data.wave[i].astype(np.float64)
        kind = NOISE_KINDS[int(rng.integers(len(NOISE_KINDS)))]
        snr = rng.uniform(tcfg.mix_snr_min, tcfg.mix_snr_max)
        noise = make_noise(kind, clean.size, rng, data.sample_rate)
        # pre-scale the noise so the mix keeps the drawn clean-to-noise ratio
        noise = scale_noise_to_snr(clean, noise, snr) - clean
        mel[j] = mel_spectrogram(mix_noise(clean, noise, tcfg.mix_gamma))
        mixed[j] = True
    return mel, mixed


def first_nonfinite(model: TTMModel) -> str | None:
    for name, t in model.params.items():
        if not np.all(np.isfinite(t.data)) or (t.grad is not None and not np.all(np.isfinite(t.grad))):
            return name
    return None


def train_step(model: TTMModel, batch: Batch, tcfg: TrainConfig) -> dict:
    psa_weight = tcfg.psa_weight if (tcfg.psa and batch.mel_clean is not None) else 0.0
    total, info = model.loss(batch, tcfg.focal_alpha, tcfg.focal_gamma, psa_weight)
    if not np.isfinite(total.item()):
        raise NonFiniteError(f"loss became non-finite (first bad tensor: {first_nonfinite(model) or 'loss'})")
    total.backward()
    bad = first_nonfinite(model)
    if bad is not None:
        raise NonFiniteError(f"non-finite gradient or value in {bad}")
    model.fill_inactive_grads()
    norm = clip_grad_norm(model.params, tcfg.clip)
    adam_step(model.params, tcfg.lr)
    info["loss"] = total.item()
    info["grad_norm"] = norm
    return info


def train_epoch(model: TTMModel, data: Prepared, tcfg: TrainConfig, rng) -> dict:
    order = rng.permutation(len(data))
    sums = {"loss": 0.0, "focal": 0.0, "mse": 0.0}
    steps = 0
    for start in range(0, len(order), tcfg.batch_size):
        idx = order[start : start + tcfg.batch_size]
        if tcfg.psa:
            mel, mixed = mixed_mels(data, idx, tcfg, rng)
            batch = data.batch(idx, mel=mel, mel_clean=data.mel[idx] if mixed.any() else None)
        else:
            batch = data.batch(idx)
        info = train_step(model, batch, tcfg)
        for k in sums:
            sums[k] += info[k]
        steps += 1
    return {k: v / max(steps, 1) for k, v in sums.items()}


def predict(model: TTMModel, data: Prepared, mel: np.ndarray | None = None,
            batch_size: int = 16) -> np.ndarray:
    """Per-frame scores (N, T); ``mel`` overrides the stored spectrograms."""
    out = []
    for start in range(0, len(data), batch_size):
        idx = np.arange(start, min(start + batch_size, len(data)))
        m = None if mel is None else mel[idx]
        out.append(model.predict(data.batch(idx, mel=m)))
    return np.concatenate(out, axis=0)


def noisy_mels(data: Prepared, snr_db: float, seed: int, kind: str | None = None) -> np.ndarray:
    """Log-mels of every sequence with fixed-seed noise added at ``snr_db``.

    The noise for sequence i depends only on (seed, i), so every model and
    SNR level sees the same noise waveform, only rescaled.
    """
    if np.isinf(snr_db) and snr_db > 0:
        return data.mel
    mels = []
    for i in range(len(data)):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5A7, i]))
        k = kind or NOISE_KINDS[i % len(NOISE_KINDS)]
        clean = data.wave[i].astype(np.float64)
        noise = make_noise(k, clean.size, rng, data.sample_rate)
        mels.append(mel_spectrogram(np.clip(scale_noise_to_snr(clean, noise, snr_db), -1.0, 1.0)))
    return np.stack(mels)


def fit(model: TTMModel, train: Prepared, val: Prepared, tcfg: TrainConfig,
        metric=None, log=None) -> dict:
    """Train with early stopping on the validation metric; the best weights are kept.

    ``metric(scores, labels) -> float`` defaults to pooled average precision.
    """
    from .evalkit import average_precision

    tcfg.validate()
    if metric is None:
        def metric(s, y):
            ap = average_precision(s.reshape(-1), y.reshape(-1))
            return 0.0 if ap is None else ap
    fit_input_stats(model, train, tcfg)
    rng = np.random.default_rng(np.random.SeedSequence([tcfg.seed, 0x7A1]))
    best = (-np.inf, model.params.state(), model.params.step, 0)
    history = []
    stale = 0
    for epoch in range(tcfg.epochs):
        stats = train_epoch(model, train, tcfg, rng)
        score = metric(predict(model, val), val.labels)
        stats.update(epoch=epoch + 1, val_map=score)
        history.append(stats)
        if log is not None:
            log(stats)
        if score > best[0]:
            best = (score, model.params.state(), model.params.step, epoch + 1)
            stale = 0
        else:
            stale += 1
            if stale >= tcfg.patience:
                break
    model.load_state(best[1], best[2])
    return {"history": history, "best_val_map": float(best[0]), "best_epoch": best[3]}
