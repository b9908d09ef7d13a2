"""Run configuration: one YAML file, validated, with flag overrides.

Precedence is flags > file > defaults. The file has the sections ``model``,
``train``, ``vmma``, ``scenario``, ``paths`` and ``eval`` plus a top-level
``seed`` from which every random stream derives. Unknown keys anywhere are
errors.
"""

from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import asdict, dataclass, field, fields, replace

import yaml

from .errors import ConfigError
from .model import ModelConfig
from .scenario import ScenarioConfig
from .train import TrainConfig
from .vmma import PROMPT_MODES


@dataclass
class VmmaSection:
    mode: str = "coarse"
    k: float = 0.0
    threshold: float | None = None  # fixed beta; None means adaptive


@dataclass
class PathsSection:
    data: str | None = None  # directory holding train/val/test dataset files
    out_root: str | None = None  # run directory root; env var, then "runs"


@dataclass
class EvalSection:
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    snr_grid: list = field(default_factory=lambda: [-10.0, -5.0, 0.0, 5.0, 10.0])
    noise_seed: int = 1234
    per_sequence: bool = False
    split: str = "test"


# keys owned elsewhere: prompt mode lives in vmma, seeds and thresholds at the top
_MODEL_SKIP = {"prompt_mode"}
_TRAIN_SKIP = {"seed", "threshold", "threshold_k"}
_SCENARIO_SKIP = {"seed"}

SECTIONS = ("model", "train", "vmma", "scenario", "paths", "eval")


def _section_keys(cls, skip=frozenset()) -> set:
    return {f.name for f in fields(cls)} - set(skip)


_ALLOWED = {
    "model": _section_keys(ModelConfig, _MODEL_SKIP),
    "train": _section_keys(TrainConfig, _TRAIN_SKIP),
    "vmma": _section_keys(VmmaSection),
    "scenario": _section_keys(ScenarioConfig, _SCENARIO_SKIP),
    "paths": _section_keys(PathsSection),
    "eval": _section_keys(EvalSection),
}


@dataclass
class RunConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    vmma: VmmaSection = field(default_factory=VmmaSection)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    paths: PathsSection = field(default_factory=PathsSection)
    eval: EvalSection = field(default_factory=EvalSection)

    # -- derived configs, every seed taken from the top level --------------------

    def model_config(self) -> ModelConfig:
        return replace(self.model, prompt_mode=self.vmma.mode)

    def train_config(self, seed: int | None = None) -> TrainConfig:
        return replace(self.train, seed=self.seed if seed is None else seed,
                       threshold=self.vmma.threshold, threshold_k=self.vmma.k)

    def scenario_config(self) -> ScenarioConfig:
        return replace(self.scenario, seed=self.seed)

    def validate(self) -> "RunConfig":
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        if self.vmma.mode not in PROMPT_MODES:
            raise ConfigError(f"vmma.mode must be one of {PROMPT_MODES}, got {self.vmma.mode!r}")
        if self.vmma.threshold is not None and not 0.0 <= self.vmma.threshold <= 1.0:
            raise ConfigError("vmma.threshold must lie in [0, 1]")
        if not self.eval.seeds:
            raise ConfigError("eval.seeds must not be empty")
        if not self.eval.snr_grid:
            raise ConfigError("eval.snr_grid must not be empty")
        if self.eval.split not in ("train", "val", "test"):
            raise ConfigError(f"eval.split must be train, val or test, got {self.eval.split!r}")
        self.model_config().validate()
        self.train_config().validate()
        self.scenario_config().validate()
        if self.model.n_feat != self.scenario.n_feat:
            raise ConfigError(f"model.n_feat {self.model.n_feat} != scenario.n_feat {self.scenario.n_feat}")
        if (self.model.image_size, self.model.channels) != (self.scenario.image_size, self.scenario.channels):
            raise ConfigError("model and scenario disagree on lip image size or channels")
        return self

    def to_dict(self) -> dict:
        out = {"seed": self.seed}
        for name, skip in (("model", _MODEL_SKIP), ("train", _TRAIN_SKIP), ("vmma", ()),
                           ("scenario", _SCENARIO_SKIP), ("paths", ()), ("eval", ())):
            d = asdict(getattr(self, name))
            out[name] = {k: v for k, v in d.items() if k not in skip}
        return out

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


class _Loader(yaml.SafeLoader):
    pass


# YAML 1.1 wants a dot in floats, so plain 1e-4 would load as a string
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
    |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
    |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
    |[-+]?\.(?:inf|Inf|INF)
    |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."),
)


def _load(text):
    return yaml.load(text, Loader=_Loader)


_CLASSES = {"model": ModelConfig, "train": TrainConfig, "vmma": VmmaSection,
            "scenario": ScenarioConfig, "paths": PathsSection, "eval": EvalSection}


def _check_keys(tree: dict, where: str = "") -> None:
    if not isinstance(tree, dict):
        raise ConfigError(f"config{where} must be a mapping, got {type(tree).__name__}")
    for key, value in tree.items():
        if key == "seed":
            continue
        if key not in _ALLOWED:
            raise ConfigError(f"unknown config section {key!r}; expected seed or one of {SECTIONS}")
        if value is None:
            continue
        if not isinstance(value, dict):
            raise ConfigError(f"config section {key!r} must be a mapping")
        unknown = set(value) - _ALLOWED[key]
        if unknown:
            raise ConfigError(f"unknown keys in {key}: {sorted(unknown)}")


def merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def from_dict(tree: dict) -> RunConfig:
    tree = tree or {}
    _check_keys(tree)
    kw = {}
    for name, cls in _CLASSES.items():
        section = tree.get(name) or {}
        try:
            kw[name] = cls(**section)
        except TypeError as exc:
            raise ConfigError(f"bad {name} section: {exc}") from None
    try:
        kw["eval"].snr_grid = [float(x) for x in kw["eval"].snr_grid]
    except (TypeError, ValueError):
        raise ConfigError("eval.snr_grid must be a list of numbers") from None
    cfg = RunConfig(seed=tree.get("seed", 0), **kw)
    return cfg.validate()


def parse_override(text: str) -> dict:
    """``section.key=value`` -> nested dict, with the value parsed as YAML."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    path, raw = text.split("=", 1)
    try:
        value = _load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value in override {text!r}: {exc}") from None
    keys = [p for p in path.strip().split(".") if p]
    if not keys:
        raise ConfigError(f"override {text!r} has an empty key")
    out = value
    for k in reversed(keys):
        out = {k: out}
    return out


def load_tree(path) -> dict:
    try:
        with open(path) as fh:
            tree = _load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    tree = tree or {}
    _check_keys(tree)
    return tree


def build(path=None, overrides=()) -> RunConfig:
    """Defaults, then the file at ``path``, then each override in order."""
    tree = load_tree(path) if path else {}
    for ov in overrides:
        tree = merge(tree, ov if isinstance(ov, dict) else parse_override(ov))
    return from_dict(tree)
