"""Seeded synthetic egocentric conversations with frame-level TTM labels.

Each sequence follows one *target* person seen by the camera wearer. The
target is talking to the wearer at frame t iff they speak and their head
yaw is within the facing threshold. Audio is the sum of every active
speaker's harmonic voice, so with two simultaneous talkers the waveform
alone cannot tell which of them addresses the wearer; head orientation can.

Dataset file layout (little-endian)::

    magic "TTMDATA\\0" | version u32 | header_len u32 | header JSON
    per sequence:
        record_len u64 | id_len u16 | id utf8
        sections, each: tag[4] | length u64 | payload
            HEAD  float32 (T, n_feat) head features, zero where missing
            LIPS  uint8   (T, H, W, C) lip images
            WAVE  u32 sample_rate, float32 samples
            MASK  packed bits (T,), 1 = head crop present
            LABL  packed bits (T,), 1 = talking to the wearer
            POSE  float32 (T, 3) true yaw/pitch/roll of the target
            SPKR  uint8 (T,) number of active speakers
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError

DATA_MAGIC = b"TTMDATA\0"
DATA_VERSION = 1
SPLITS = ("train", "val", "test")
NOISE_KINDS = ("white", "pink", "machinery")


@dataclass
class ScenarioConfig:
    seed: int = 0
    persons_min: int = 1
    persons_max: int = 3
    frames: int = 90
    fps: int = 30
    sample_rate: int = 16000
    n_train: int = 200
    n_val: int = 40
    n_test: int = 40
    # head-crop availability
    missing_model: str = "burst"  # "iid" or "burst"
    missing_rate: float = 1.0 / 3.0
    burst_len: float = 6.0
    # behaviour
    face_threshold_deg: float = 30.0
    target_speak_prob: float = 0.55
    other_speak_prob: float = 0.65
    facing_prob: float = 0.5
    mean_turn_frames: float = 24.0
    mean_gaze_frames: float = 20.0
    # observation models
    n_feat: int = 32
    feat_noise: float = 0.05
    image_size: int = 32
    channels: int = 1
    lip_noise: float = 0.3
    idle_mouth: float = 0.4
    # background noise in the recorded audio; None disables it
    noise_kind: str = "pink"
    noise_snr_db: float | None = 20.0
    # forced behaviour, mainly for tests: None means sampled
    force_speaking: bool | None = None
    force_yaw: float | None = None
    force_persons: int | None = None

    def validate(self) -> "ScenarioConfig":
        if self.seed is None:
            raise ConfigError("scenario seed is mandatory")
        if not 1 <= self.persons_min <= self.persons_max <= 3:
            raise ConfigError("persons must satisfy 1 <= min <= max <= 3")
        for k in ("missing_rate", "target_speak_prob", "other_speak_prob", "facing_prob"):
            v = getattr(self, k)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{k} must lie in [0, 1], got {v}")
        if self.missing_model not in ("iid", "burst"):
            raise ConfigError(f"missing_model must be 'iid' or 'burst', got {self.missing_model!r}")
        if self.noise_kind not in NOISE_KINDS + ("none",):
            raise ConfigError(f"noise_kind must be one of {NOISE_KINDS + ('none',)}")
        if self.frames < 1 or self.fps < 1 or self.sample_rate < 1:
            raise ConfigError("frames, fps and sample_rate must be positive")
        if self.burst_len < 1:
            raise ConfigError("burst_len must be >= 1")
        if self.image_size % 4:
            raise ConfigError("image_size must be a multiple of 4")
        return self

    @property
    def samples(self) -> int:
        return self.frames * self.sample_rate // self.fps

    def split_size(self, split: str) -> int:
        return {"train": self.n_train, "val": self.n_val, "test": self.n_test}[split]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Sequence:
    id: str
    head: np.ndarray      # float32 (T, n_feat), zero where missing
    lip: np.ndarray       # uint8 (T, H, W, C)
    wave: np.ndarray      # float32 (samples,)
    present: np.ndarray   # bool (T,)
    labels: np.ndarray    # uint8 (T,)
    angles: np.ndarray    # float32 (T, 3)
    speakers: np.ndarray  # uint8 (T,)
    sample_rate: int = 16000

    @property
    def frames(self) -> int:
        return len(self.labels)


@dataclass
class ScenarioDataset:
    split: str
    sequences: list
    config: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    def __getitem__(self, i):
        return self.sequences[i]

    def stats(self) -> dict:
        labels = np.concatenate([s.labels for s in self.sequences])
        present = np.concatenate([s.present for s in self.sequences])
        spk = np.concatenate([s.speakers for s in self.sequences])
        return {
            "sequences": len(self.sequences),
            "frames": int(labels.size),
            "positive_rate": float(labels.mean()),
            "missing_rate": float(1.0 - present.mean()),
            "overlap_rate": float((spk >= 2).mean()),
        }


# -- behaviour ----------------------------------------------------------------


def _markov_binary(rng, T: int, p_on: float, mean_len: float) -> np.ndarray:
    """Two-state chain with stationary on-probability p_on and mean on-run mean_len."""
    if p_on <= 0.0:
        return np.zeros(T, dtype=bool)
    if p_on >= 1.0:
        return np.ones(T, dtype=bool)
    # mean on-run is mean_len; the off-run length follows from stationarity
    q_off = min(1.0 / mean_len, 1.0)
    q_on = min(p_on / ((1.0 - p_on) * mean_len), 1.0)
    state = rng.random() < p_on
    out = np.empty(T, dtype=bool)
    u = rng.random(T)
    for t in range(T):
        out[t] = state
        state = (u[t] >= q_off) if state else (u[t] < q_on)
    return out


def _smooth_track(rng, targets: np.ndarray, max_step: float, jitter: float) -> np.ndarray:
    """Follow per-frame targets with a bounded per-frame change."""
    out = np.empty(len(targets))
    x = targets[0]
    for t, goal in enumerate(targets):
        x = x + np.clip(goal - x, -max_step, max_step)
        out[t] = x
    return out + rng.normal(0.0, jitter, len(targets))


def _yaw_track(rng, cfg: ScenarioConfig) -> np.ndarray:
    T = cfg.frames
    if cfg.force_yaw is not None:
        return np.full(T, float(cfg.force_yaw))
    facing = _markov_binary(rng, T, cfg.facing_prob, cfg.mean_gaze_frames)
    thr = np.deg2rad(cfg.face_threshold_deg)
    n_seg = int(np.sum(np.diff(facing.astype(int)) != 0)) + 1
    seg = np.concatenate([[0], np.cumsum(np.diff(facing.astype(int)) != 0)])
    # facing segments sit well inside the threshold, away segments well outside
    near = rng.normal(0.0, 0.35 * thr, n_seg)
    far = rng.choice([-1.0, 1.0], n_seg) * rng.uniform(1.6 * thr, np.deg2rad(110.0), n_seg)
    goal = np.where(facing, near[seg], far[seg])
    return _smooth_track(rng, goal, max_step=np.deg2rad(12.0), jitter=np.deg2rad(1.5))


def _envelope(rng, T: int, fps: int) -> np.ndarray:
    """Syllable-rate articulation envelope in [0, 1] per video frame."""
    t = np.arange(T) / fps
    rate = rng.uniform(3.0, 5.5)
    phase = rng.uniform(0, 2 * np.pi)
    env = 0.5 + 0.5 * np.sin(2 * np.pi * rate * t + phase)
    env = 0.25 + 0.75 * env * rng.uniform(0.7, 1.0, T)
    return np.clip(env, 0.0, 1.0)


def idle_mouth(rng, T: int, cfg: "ScenarioConfig") -> np.ndarray:
    """Slow non-speech mouth movement (smiling, chewing) up to ``cfg.idle_mouth``."""
    t = np.arange(T) / cfg.fps
    slow = 0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(0.3, 1.5) * t + rng.uniform(0, 2 * np.pi))
    return 0.05 + cfg.idle_mouth * slow * rng.uniform(0.5, 1.0)


# -- observations ---------------------------------------------------------------


def feature_map(n_feat: int, seed: int) -> np.ndarray:
    """Fixed random (n_feat, 3) map with orthonormal columns."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xFEA7]))
    q, _ = np.linalg.qr(rng.normal(size=(n_feat, 3)))
    return q


def head_features(angles: np.ndarray, fmap: np.ndarray, noise: float, rng) -> np.ndarray:
    """Noisy linear encoding of (yaw, pitch, roll)."""
    return angles @ fmap.T + rng.normal(0.0, noise, (len(angles), fmap.shape[0]))


def lip_images(aperture: np.ndarray, size: int, channels: int, noise: float, rng) -> np.ndarray:
    """Mouth ellipse whose height tracks ``aperture`` in [0, 1]; uint8 frames."""
    T = len(aperture)
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    cy, cx = size / 2.0, size / 2.0
    rx = 0.3 * size
    ry = (0.03 + 0.3 * aperture)[:, None, None] * size
    inside = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    img = np.where(inside, 0.15, 0.65) + rng.normal(0.0, noise, (T, size, size))
    img = np.clip(img, 0.0, 1.0)
    img = np.repeat(img[..., None], channels, axis=-1)
    return np.round(img * 255).astype(np.uint8)


def voice(rng, f0: float, envelope: np.ndarray, fps: int, sample_rate: int, n: int) -> np.ndarray:
    """Harmonic voice with slight vibrato, amplitude following ``envelope`` per frame."""
    t = np.arange(n) / sample_rate
    frame_t = (np.arange(len(envelope)) + 0.5) / fps
    amp = np.interp(t, frame_t, envelope)
    vib = 1.0 + 0.01 * np.sin(2 * np.pi * rng.uniform(4.0, 6.0) * t)
    phase = 2 * np.pi * np.cumsum(f0 * vib) / sample_rate
    sig = np.zeros(n)
    k_max = int(min(12, 4000 // f0))
    for k in range(1, k_max + 1):
        sig += np.sin(k * phase + rng.uniform(0, 2 * np.pi)) / k
    return amp * sig / np.sqrt(np.sum(1.0 / np.arange(1, k_max + 1) ** 2) / 2.0)


def make_noise(kind: str, n: int, rng, sample_rate: int = 16000) -> np.ndarray:
    """Unit-RMS background noise: white, pink (1/f) or machinery hum."""
    if kind == "white":
        x = rng.normal(size=n)
    elif kind == "pink":
        spec = np.fft.rfft(rng.normal(size=n))
        f = np.fft.rfftfreq(n, 1.0 / sample_rate)
        spec[1:] /= np.sqrt(f[1:] / f[1])
        spec[0] = 0.0
        x = np.fft.irfft(spec, n)
    elif kind == "machinery":
        t = np.arange(n) / sample_rate
        base = rng.uniform(40.0, 70.0)
        x = sum(np.sin(2 * np.pi * base * k * t + rng.uniform(0, 2 * np.pi)) / k for k in range(1, 8))
        whine = rng.uniform(300.0, 2000.0)
        x = x + 0.8 * (1 + 0.5 * np.sin(2 * np.pi * rng.uniform(0.5, 3) * t)) * np.sin(2 * np.pi * whine * t)
        x = x + 0.3 * rng.normal(size=n)
    else:
        raise ConfigError(f"unknown noise kind {kind!r}")
    return x / np.sqrt(np.mean(x * x))


# -- presence -------------------------------------------------------------------


def presence_mask(rng, T: int, model: str, rate: float, burst_len: float = 6.0) -> np.ndarray:
    if rate <= 0.0:
        return np.ones(T, dtype=bool)
    if rate >= 1.0:
        return np.zeros(T, dtype=bool)
    if model == "iid":
        return rng.random(T) >= rate
    if model == "burst":
        q_end = 1.0 / burst_len
        q_start = q_end * rate / (1.0 - rate)
        missing = np.empty(T, dtype=bool)
        state = rng.random() < rate
        u = rng.random(T)
        for t in range(T):
            missing[t] = state
            state = (u[t] >= q_end) if state else (u[t] < min(q_start, 1.0))
        return ~missing
    raise ConfigError(f"unknown missing model {model!r}")


def corrupt_presence(dataset: ScenarioDataset, model: str, rate: float, seed: int,
                     burst_len: float = 6.0) -> ScenarioDataset:
    """New dataset with a freshly drawn presence mask; missing head features become zeros."""
    root = np.random.SeedSequence([seed, 0x0CC1])
    out = []
    for seq, child in zip(dataset.sequences, root.spawn(len(dataset.sequences))):
        rng = np.random.default_rng(child)
        present = presence_mask(rng, seq.frames, model, rate, burst_len)
        head = seq.head.copy()
        head[~present] = 0.0
        out.append(replace(seq, head=head, present=present))
    return ScenarioDataset(dataset.split, out, dict(dataset.config))


# -- generation -------------------------------------------------------------------


@dataclass
class Scene:
    """Latent per-person state for one conversation."""

    speaking: np.ndarray   # bool (P, T)
    envelope: np.ndarray   # (P, T)
    yaw: np.ndarray        # (P, T)
    pitch: np.ndarray      # (P, T)
    roll: np.ndarray       # (P, T)
    f0: np.ndarray         # (P,)
    voice_seeds: list
    background: np.ndarray | None

    @property
    def persons(self) -> int:
        return len(self.f0)


def sample_scene(rng, cfg: ScenarioConfig) -> Scene:
    T = cfg.frames
    P = cfg.force_persons or int(rng.integers(cfg.persons_min, cfg.persons_max + 1))
    f0 = np.sort(rng.choice(np.arange(100.0, 300.0, 20.0), size=P, replace=False))
    rng.shuffle(f0)
    speaking, env, yaw, pitch, roll = [], [], [], [], []
    for i in range(P):
        p = cfg.target_speak_prob if i == 0 else cfg.other_speak_prob
        if cfg.force_speaking is not None:
            s = np.full(T, bool(cfg.force_speaking))
        else:
            s = _markov_binary(rng, T, p, cfg.mean_turn_frames)
        speaking.append(s)
        env.append(_envelope(rng, T, cfg.fps))
        yaw.append(_yaw_track(rng, cfg))
        pitch.append(_smooth_track(rng, np.full(T, rng.normal(0, 0.15)), 0.02, 0.02))
        roll.append(_smooth_track(rng, np.full(T, rng.normal(0, 0.1)), 0.02, 0.02))
    voice_seeds = [int(x) for x in rng.integers(0, 2**31, size=P)]
    background = None
    if cfg.noise_kind != "none" and cfg.noise_snr_db is not None:
        background = make_noise(cfg.noise_kind, cfg.samples, rng, cfg.sample_rate)
    return Scene(np.array(speaking), np.array(env), np.array(yaw), np.array(pitch),
                 np.array(roll), f0, voice_seeds, background)


def scene_audio(scene: Scene, cfg: ScenarioConfig) -> np.ndarray:
    """Sum of active voices in fixed person order, plus background noise."""
    n = cfg.samples
    total = np.zeros(n)
    for i in range(scene.persons):
        rng = np.random.default_rng(scene.voice_seeds[i])
        env = scene.envelope[i] * scene.speaking[i]
        total += 0.1 * voice(rng, scene.f0[i], env, cfg.fps, cfg.sample_rate, n)
    if scene.background is not None:
        # noise level is set against a nominal single-talker power, so silence stays quiet
        ref = 0.1**2 * 0.5
        total += np.sqrt(ref / 10 ** (cfg.noise_snr_db / 10.0)) * scene.background
    return np.clip(total, -1.0, 1.0).astype(np.float32)


def render_sequence(scene: Scene, cfg: ScenarioConfig, target: int, seq_id: str,
                    fmap: np.ndarray, rng) -> Sequence:
    """Observations of person ``target``; audio does not depend on the target choice."""
    T = cfg.frames
    angles = np.stack([scene.yaw[target], scene.pitch[target], scene.roll[target]], axis=-1)
    speak = scene.speaking[target]
    facing = np.abs(angles[:, 0]) <= np.deg2rad(cfg.face_threshold_deg)
    labels = (speak & facing).astype(np.uint8)
    aperture = np.where(speak, scene.envelope[target], idle_mouth(rng, T, cfg))
    head = head_features(angles, fmap, cfg.feat_noise, rng).astype(np.float32)
    lip = lip_images(aperture, cfg.image_size, cfg.channels, cfg.lip_noise, rng)
    present = presence_mask(rng, T, cfg.missing_model, cfg.missing_rate, cfg.burst_len)
    head[~present] = 0.0
    return Sequence(
        id=seq_id,
        head=head,
        lip=lip,
        wave=scene_audio(scene, cfg),
        present=present,
        labels=labels,
        angles=angles.astype(np.float32),
        speakers=scene.speaking.sum(axis=0).astype(np.uint8),
        sample_rate=cfg.sample_rate,
    )


def sequence_seeds(cfg: ScenarioConfig, split: str) -> list:
    root = np.random.SeedSequence([cfg.seed, SPLITS.index(split)])
    return root.spawn(cfg.split_size(split))


def generate_sequence(cfg: ScenarioConfig, split: str, index: int, seed_seq=None) -> Sequence:
    """One sequence, a pure function of (cfg, split, index)."""
    if seed_seq is None:
        seed_seq = sequence_seeds(cfg, split)[index]
    scene_ss, obs_ss = seed_seq.spawn(2)
    scene = sample_scene(np.random.default_rng(scene_ss), cfg)
    fmap = feature_map(cfg.n_feat, cfg.seed)
    return render_sequence(scene, cfg, 0, f"{split}-{index:05d}", fmap, np.random.default_rng(obs_ss))


def generate_split(cfg: ScenarioConfig, split: str) -> ScenarioDataset:
    cfg.validate()
    seeds = sequence_seeds(cfg, split)
    seqs = [generate_sequence(cfg, split, i, s) for i, s in enumerate(seeds)]
    return ScenarioDataset(split, seqs, cfg.to_dict())


def generate(cfg: ScenarioConfig) -> dict[str, ScenarioDataset]:
    """All three splits."""
    cfg.validate()
    return {split: generate_split(cfg, split) for split in SPLITS}


# -- file I/O ---------------------------------------------------------------------


def _section(tag: bytes, payload: bytes) -> bytes:
    return tag + struct.pack("<Q", len(payload)) + payload


def _encode_sequence(seq: Sequence) -> bytes:
    sid = seq.id.encode("utf-8")
    body = b"".join([
        struct.pack("<H", len(sid)), sid,
        _section(b"HEAD", np.ascontiguousarray(seq.head, dtype="<f4").tobytes()),
        _section(b"LIPS", np.ascontiguousarray(seq.lip, dtype=np.uint8).tobytes()),
        _section(b"WAVE", struct.pack("<I", seq.sample_rate) + np.ascontiguousarray(seq.wave, dtype="<f4").tobytes()),
        _section(b"MASK", np.packbits(seq.present.astype(bool), bitorder="little").tobytes()),
        _section(b"LABL", np.packbits(seq.labels.astype(bool), bitorder="little").tobytes()),
        _section(b"POSE", np.ascontiguousarray(seq.angles, dtype="<f4").tobytes()),
        _section(b"SPKR", np.ascontiguousarray(seq.speakers, dtype=np.uint8).tobytes()),
    ])
    return struct.pack("<Q", len(body)) + body


def dataset_bytes(ds: ScenarioDataset) -> bytes:
    if not ds.sequences:
        raise DataError("cannot serialize an empty dataset")
    s0 = ds.sequences[0]
    header = {
        "split": ds.split,
        "count": len(ds.sequences),
        "frames": s0.frames,
        "n_feat": int(s0.head.shape[1]),
        "lip_shape": list(s0.lip.shape[1:]),
        "samples": int(s0.wave.shape[0]),
        "config": ds.config,
    }
    hj = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [DATA_MAGIC, struct.pack("<II", DATA_VERSION, len(hj)), hj]
    parts.extend(_encode_sequence(s) for s in ds.sequences)
    return b"".join(parts)


def save_dataset(ds: ScenarioDataset, path) -> str:
    """Write one split; returns the SHA-256 of the file contents."""
    buf = dataset_bytes(ds)
    with open(path, "wb") as fh:
        fh.write(buf)
    return hashlib.sha256(buf).hexdigest()


def load_dataset(path) -> ScenarioDataset:
    with open(path, "rb") as fh:
        buf = fh.read()
    return parse_dataset(buf)


def parse_dataset(buf: bytes) -> ScenarioDataset:
    if buf[:8] != DATA_MAGIC:
        raise DataError("not a dataset file (bad magic)")
    version, hlen = struct.unpack_from("<II", buf, 8)
    if version != DATA_VERSION:
        raise DataError(f"unsupported dataset version {version}")
    off = 16
    header = json.loads(buf[off : off + hlen].decode("utf-8"))
    off += hlen
    T, nf = header["frames"], header["n_feat"]
    lip_shape = tuple(header["lip_shape"])
    seqs = []
    for _ in range(header["count"]):
        (rec_len,) = struct.unpack_from("<Q", buf, off)
        off += 8
        end = off + rec_len
        (n,) = struct.unpack_from("<H", buf, off)
        off += 2
        sid = buf[off : off + n].decode("utf-8")
        off += n
        sec = {}
        while off < end:
            tag = buf[off : off + 4]
            (ln,) = struct.unpack_from("<Q", buf, off + 4)
            off += 12
            sec[tag] = buf[off : off + ln]
            off += ln
        if off != end:
            raise DataError(f"record {sid!r} overruns its declared length")
        rate = struct.unpack_from("<I", sec[b"WAVE"], 0)[0]
        seqs.append(Sequence(
            id=sid,
            head=np.frombuffer(sec[b"HEAD"], dtype="<f4").reshape(T, nf).astype(np.float32),
            lip=np.frombuffer(sec[b"LIPS"], dtype=np.uint8).reshape((T,) + lip_shape).copy(),
            wave=np.frombuffer(sec[b"WAVE"], dtype="<f4", offset=4).astype(np.float32),
            present=np.unpackbits(np.frombuffer(sec[b"MASK"], np.uint8), count=T, bitorder="little").astype(bool),
            labels=np.unpackbits(np.frombuffer(sec[b"LABL"], np.uint8), count=T, bitorder="little").astype(np.uint8),
            angles=np.frombuffer(sec[b"POSE"], dtype="<f4").reshape(T, 3).astype(np.float32),
            speakers=np.frombuffer(sec[b"SPKR"], dtype=np.uint8).copy(),
            sample_rate=rate,
        ))
    if off != len(buf):
        raise DataError("trailing bytes after the last record")
    return ScenarioDataset(header["split"], seqs, header.get("config", {}))


def config_from_dict(d: dict) -> ScenarioConfig:
    known = set(ScenarioConfig.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
    return ScenarioConfig(**d).validate()
