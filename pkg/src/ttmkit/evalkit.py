"""Metrics, the toggle ablation grid, the prompt-threshold study and SNR sweeps.

Ranking ties are broken by original order: the sort is a stable sort on
descending score, so among equal scores the earlier item ranks higher.
AP is tie-sensitive and this rule makes it deterministic.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError
from .model import ModelConfig, TTMModel
from .scenario import ScenarioConfig, ScenarioDataset
from .train import Prepared, TrainConfig, fit, noisy_mels, predict, prepare


def _check_pairs(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise DataError(f"{s.size} scores but {y.size} labels")
    if not np.all((y == 0) | (y == 1)):
        raise DataError("labels must be binary")
    if not np.all(np.isfinite(s)):
        raise DataError("scores must be finite")
    return s, y.astype(np.int64)


def average_precision(scores, labels) -> float | None:
    """Mean over positives of precision at each positive's rank; None without positives."""
    s, y = _check_pairs(scores, labels)
    if y.sum() == 0:
        return None
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.cumsum(hits)[ranks - 1] / ranks))


def mean_average_precision(groups) -> float | None:
    """Mean AP over (scores, labels) groups, skipping groups without positives."""
    aps = [a for a in (average_precision(s, y) for s, y in groups) if a is not None]
    return float(np.mean(aps)) if aps else None


def top1_accuracy(scores, labels, threshold: float = 0.5) -> float:
    s, y = _check_pairs(scores, labels)
    if s.size == 0:
        raise DataError("accuracy of an empty prediction set")
    return float(np.mean((s >= threshold).astype(np.int64) == y))


def metrics(scores, labels, per_sequence: bool = False) -> dict:
    """mAP (pooled over frames, or averaged per sequence) and Top-1 accuracy."""
    scores, labels = np.asarray(scores), np.asarray(labels)
    if per_sequence:
        m = mean_average_precision(zip(scores, labels))
    else:
        m = average_precision(scores, labels)
    return {"mAP": m, "Acc": top1_accuracy(scores, labels)}


# -- experiment plumbing ------------------------------------------------------


@dataclass
class Variant:
    """One trainable configuration: model toggles plus training toggles."""

    name: str
    vstr: bool = True
    psa: bool = True
    vmma: bool = True
    prompt_mode: str = "coarse"
    threshold: float | None = None  # None: adaptive from the train split
    audio_only: bool = False

    def model_config(self, base: ModelConfig) -> ModelConfig:
        mode = self.prompt_mode if self.vmma else "none"
        if self.audio_only:
            return replace(base, use_head=False, use_lip=False, prompt_mode=mode)
        return replace(base, use_head=self.vstr, prompt_mode=mode)

    def train_config(self, base: TrainConfig, seed: int) -> TrainConfig:
        return replace(base, psa=self.psa, threshold=self.threshold, seed=seed)


@dataclass
class Benchmark:
    """Prepared splits plus the base configs every variant starts from."""

    scenario: ScenarioConfig
    model: ModelConfig
    train: TrainConfig
    splits: dict = field(default_factory=dict)

    @classmethod
    def build(cls, scenario: ScenarioConfig, model: ModelConfig, train: TrainConfig,
              datasets: dict[str, ScenarioDataset] | None = None) -> "Benchmark":
        from .scenario import generate

        datasets = datasets or generate(scenario)
        return cls(scenario, model, train, {k: prepare(v) for k, v in datasets.items()})


def train_variant(bench: Benchmark, variant: Variant, seed: int) -> TTMModel:
    model = TTMModel(variant.model_config(bench.model), seed=seed)
    fit(model, bench.splits["train"], bench.splits["val"], variant.train_config(bench.train, seed))
    return model


def evaluate(model: TTMModel, data: Prepared, mel: np.ndarray | None = None,
             per_sequence: bool = False) -> dict:
    return metrics(predict(model, data, mel), data.labels, per_sequence)


# -- ablation grid --------------------------------------------------------------

# row order of the toggle table: (VSTR, PSA, VMMA)
ABLATION_ROWS = (
    (False, False, False),
    (True, False, False),
    (False, True, False),
    (False, False, True),
    (True, True, False),
    (True, False, True),
    (False, True, True),
    (True, True, True),
)


def ablation_variants(prompt_mode: str = "coarse") -> list[Variant]:
    out = []
    for vstr, psa, vmma in ABLATION_ROWS:
        name = f"vstr={int(vstr)},psa={int(psa)},vmma={int(vmma)}"
        out.append(Variant(name, vstr=vstr, psa=psa, vmma=vmma, prompt_mode=prompt_mode))
    return out


def threshold_variants() -> list[Variant]:
    return [
        Variant("fine", prompt_mode="fine"),
        Variant("adaptive", prompt_mode="coarse"),
        Variant("fixed-20", prompt_mode="coarse", threshold=0.2),
        Variant("fixed-50", prompt_mode="coarse", threshold=0.5),
        Variant("fixed-70", prompt_mode="coarse", threshold=0.7),
    ]


def run_variants(bench: Benchmark, variants: list[Variant], seeds, split: str = "test",
                 log=None) -> list[dict]:
    """Train and evaluate every variant on every seed.

    A failing row is recorded with its error message and the run continues.
    """
    if not seeds:
        raise ConfigError("at least one seed is required")
    rows = []
    for v in variants:
        for seed in seeds:
            row = {"variant": v.name, "seed": seed, "vstr": int(v.vstr), "psa": int(v.psa),
                   "vmma": int(v.vmma), "mode": v.prompt_mode if v.vmma else "none",
                   "threshold": "" if v.threshold is None else v.threshold,
                   "Acc": "", "mAP": "", "error": ""}
            try:
                model = train_variant(bench, v, seed)
                m = evaluate(model, bench.splits[split])
                row.update(Acc=m["Acc"], mAP="" if m["mAP"] is None else m["mAP"])
                if v.prompt_mode == "coarse" and v.vmma:
                    row["threshold"] = model.beta
            except Exception as exc:  # noqa: BLE001 - recorded per row by design
                row["error"] = f"{type(exc).__name__}: {exc}"
            rows.append(row)
            if log is not None:
                log(row)
    return rows


def run_ablation(bench: Benchmark, seeds, prompt_mode: str = "coarse", log=None) -> list[dict]:
    return run_variants(bench, ablation_variants(prompt_mode), seeds, log=log)


def run_threshold_study(bench: Benchmark, seeds, log=None) -> list[dict]:
    return run_variants(bench, threshold_variants(), seeds, log=log)


SNR_GRID = (-10.0, -5.0, 0.0, 5.0, 10.0)


def snr_sweep(models: dict[str, list[TTMModel]], data: Prepared, grid=SNR_GRID,
              noise_seed: int = 1234, include_clean: bool = True) -> list[dict]:
    """Score each variant's models at every SNR level; one row per (variant, seed, snr)."""
    if len(grid) == 0:
        raise ConfigError("SNR grid is empty")
    levels = list(grid) + ([float("inf")] if include_clean else [])
    rows = []
    for snr in levels:
        mel = noisy_mels(data, snr, noise_seed)
        for name, ms in models.items():
            for seed, model in enumerate(ms):
                m = evaluate(model, data, mel)
                rows.append({"snr_db": snr, "variant": name, "seed": seed,
                             "mAP": m["mAP"], "Acc": m["Acc"]})
    return rows


def summarize(rows: list[dict], key: str = "variant", value: str = "mAP") -> dict:
    """Mean and range of a metric per group, with the per-seed values alongside."""
    groups: dict = {}
    for r in rows:
        if r.get("error"):
            continue
        v = r.get(value)
        if v == "" or v is None:
            continue
        groups.setdefault(r[key], []).append(float(v))
    return {k: {"mean": float(np.mean(v)), "min": float(np.min(v)), "max": float(np.max(v)), "values": v}
            for k, v in groups.items()}


# -- outputs --------------------------------------------------------------------

ABLATION_HEADER = ["variant", "seed", "vstr", "psa", "vmma", "mode", "threshold", "Acc", "mAP", "error"]
SNR_HEADER = ["snr_db", "mAP", "Acc", "variant", "seed"]


def rows_to_csv(rows: list[dict], header: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=header, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k, "")) for k in header})
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return "inf" if np.isinf(v) else repr(v)
    return v


def write_csv(rows: list[dict], header: list[str], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(rows_to_csv(rows, header))


def write_summary(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")
