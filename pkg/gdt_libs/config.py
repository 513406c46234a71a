# gdt_libs/config.py

import copy
import hashlib
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional, Tuple

import yaml

from .errors import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = os.path.join(os.path.dirname(__file__), "config.yaml")

VARIANTS = ("encoder-decoder", "encoder-only")
OBJECTIVES = ("epsilon-prediction", "velocity-flow")
SCHEDULE_KINDS = ("ddpm-linear", "flow-linear")
CONDITIONING_MODES = ("none", "inpaint")
SAMPLE_MODES = ("none", "inpaint", "sdedit")
METRIC_NAMES = ("consistency", "adherence", "fidelity", "joint-margin")
IMAGE_CHANNELS = 3


@dataclass
class ModelConfig:
    variant: str = "encoder-decoder"
    image_size: int = 32
    channels_in: int = 3
    patch: int = 4
    dim: int = 64
    heads: int = 4
    depth: int = 4
    mlp_ratio: int = 4
    vocab: int = 26
    context_len: int = 6
    max_group: int = 4
    objective: str = "epsilon-prediction"

    @property
    def tokens_per_image(self) -> int:
        return (self.image_size // self.patch) ** 2

    @property
    def channels_out(self) -> int:
        return IMAGE_CHANNELS

    @property
    def inpaint(self) -> bool:
        return self.channels_in == 2 * IMAGE_CHANNELS + 1

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"Unknown variant '{self.variant}', expected one of {VARIANTS}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"Unknown objective '{self.objective}', expected one of {OBJECTIVES}")
        if self.channels_in not in (IMAGE_CHANNELS, 2 * IMAGE_CHANNELS + 1):
            raise ConfigError(f"channels_in must be 3 or 7, got {self.channels_in}")
        if self.image_size <= 0 or self.patch <= 0 or self.image_size % self.patch:
            raise ConfigError(f"image_size {self.image_size} is not a multiple of patch {self.patch}")
        if self.heads <= 0 or self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} is not divisible by heads {self.heads}")
        if self.dim % 4:
            raise ConfigError(f"dim {self.dim} must be a multiple of 4 for the 2D positional table")
        if self.max_group < 1 or self.depth < 0 or self.context_len < 1 or self.vocab < 2:
            raise ConfigError("max_group, context_len and vocab must be positive")
        return self


@dataclass
class DatasetConfig:
    image_size: int = 32
    max_group: int = 4
    corpus_size: int = 50000
    seed: int = 0
    split: str = "train"
    copy_prob: float = 0.25

    def validate(self):
        if self.split not in ("train", "val", "quality"):
            raise ConfigError(f"Unknown split '{self.split}'")
        if self.corpus_size < 1 or self.max_group < 1:
            raise ConfigError("corpus_size and max_group must be positive")
        if not 0.0 <= self.copy_prob <= 1.0:
            raise ConfigError(f"copy_prob must be in [0, 1], got {self.copy_prob}")
        return self


@dataclass
class DiffusionConfig:
    kind: str = "ddpm-linear"
    train_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def validate(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigError(f"Unknown schedule kind '{self.kind}', expected one of {SCHEDULE_KINDS}")
        if self.train_steps < 1:
            raise ConfigError("diffusion.train_steps must be >= 1")
        return self


@dataclass
class TrainConfig:
    steps: int = 5000
    lr: float = 1e-3
    warmup_steps: int = 500
    weight_decay: float = 0.01
    betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    token_budget: int = 2048
    conditioning: str = "none"
    context_dropout: float = 0.1
    seed: int = 0
    checkpoint_every: int = 1000
    log_every: int = 50
    precision: str = "float32"

    def validate(self):
        if self.steps < 0 or self.lr <= 0 or self.warmup_steps < 0 or self.token_budget < 1:
            raise ConfigError("train.steps, lr, warmup_steps and token_budget must be positive")
        if self.conditioning not in CONDITIONING_MODES:
            raise ConfigError(f"Unknown conditioning '{self.conditioning}', expected one of {CONDITIONING_MODES}")
        if not 0.0 <= self.context_dropout < 1.0:
            raise ConfigError("train.context_dropout must be in [0, 1)")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"Unknown precision '{self.precision}'")
        self.betas = tuple(self.betas)
        return self


@dataclass
class FinetuneConfig:
    steps: int = 500
    lr_scale: float = 0.1
    eval_groups: int = 16

    def validate(self):
        if self.steps < 0 or self.lr_scale <= 0 or self.eval_groups < 0:
            raise ConfigError("finetune.steps, lr_scale and eval_groups must be non-negative")
        return self


@dataclass
class SampleConfig:
    steps: int = 50
    mode: str = "none"
    guidance_scale: float = 1.0
    seed: int = 0

    def validate(self):
        if self.mode not in SAMPLE_MODES:
            raise ConfigError(f"Unknown sampling mode '{self.mode}', expected one of {SAMPLE_MODES}")
        if self.steps < 1:
            raise ConfigError("sample.steps must be >= 1")
        return self


@dataclass
class EvalConfig:
    groups: int = 50
    split: str = "val"
    metrics: List[str] = field(default_factory=lambda: ["consistency", "adherence", "fidelity"])
    exclude_any_reference: bool = False
    mode: str = "none"
    seed: int = 0

    def validate(self):
        unknown = [m for m in self.metrics if m not in METRIC_NAMES]
        if unknown:
            raise ConfigError(f"Unknown metrics {unknown}, expected a subset of {METRIC_NAMES}")
        if self.mode not in SAMPLE_MODES:
            raise ConfigError(f"Unknown evaluation mode '{self.mode}'")
        return self


SECTIONS = {
    "model": ModelConfig,
    "data": DatasetConfig,
    "diffusion": DiffusionConfig,
    "train": TrainConfig,
    "finetune": FinetuneConfig,
    "sample": SampleConfig,
    "eval": EvalConfig,
}


@dataclass
class GDTConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DatasetConfig = field(default_factory=DatasetConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        # dataset geometry always follows the model
        self.data.image_size = self.model.image_size
        self.data.max_group = self.model.max_group

    def dataset(self, split: Optional[str] = None) -> DatasetConfig:
        data = copy.deepcopy(self.data)
        if split is not None:
            data.split = split
        return data.validate()

    def validate(self):
        for name in SECTIONS:
            getattr(self, name).validate()
        expected = "ddpm-linear" if self.model.objective == "epsilon-prediction" else "flow-linear"
        if self.diffusion.kind != expected:
            raise ConfigError(
                f"objective '{self.model.objective}' needs schedule '{expected}', got '{self.diffusion.kind}'"
            )
        if self.train.conditioning == "inpaint" and not self.model.inpaint:
            raise ConfigError("inpaint conditioning needs model.channels_in = 7")
        if self.train.conditioning == "none" and self.model.inpaint:
            raise ConfigError("model.channels_in = 7 needs train.conditioning = inpaint")
        largest = self.model.max_group * (self.model.tokens_per_image + self.model.context_len)
        if self.train.token_budget < largest:
            raise ConfigError(
                f"train.token_budget {self.train.token_budget} cannot hold a group of {self.model.max_group} "
                f"({largest} tokens)"
            )
        return self

    def to_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            section = asdict(getattr(self, name))
            if name == "train":
                section["betas"] = list(section["betas"])
            if name == "data":
                section.pop("image_size")
                section.pop("max_group")
                section.pop("split")
            out[name] = section
        return out


def parse_config_text(text: str) -> dict:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if lines and all("=" in ln and ":" not in ln.split("=", 1)[0] for ln in lines):
        data = {}
        for ln in lines:
            key, value = (part.strip() for part in ln.split("=", 1))
            node = data
            *parents, leaf = key.split(".")
            for parent in parents:
                node = node.setdefault(parent, {})
            node[leaf] = yaml.safe_load(value) if value else None
        return data
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ConfigError("Config file must contain a mapping of sections")
    return data


def _merge(base: dict, override: dict, path: str = "") -> dict:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in merged:
            raise ConfigError(f"Unknown config key '{where}'")
        if isinstance(merged[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"Config key '{where}' must be a section")
            merged[key] = _merge(merged[key], value, where + ".")
        elif isinstance(value, dict):
            raise ConfigError(f"Config key '{where}' is a value, not a section")
        else:
            merged[key] = value
    return merged


def load_config_dict(yaml_path: Optional[str] = None) -> dict:
    with open(DEFAULT_CONFIG_PATH, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f)
    if yaml_path:
        if not os.path.exists(yaml_path):
            raise ConfigError(f"Config file does not exist: {yaml_path}")
        with open(yaml_path, "r", encoding="utf-8") as f:
            data = _merge(data, parse_config_text(f.read()))
        logger.info(f"Loaded config from {yaml_path}")
    return data


def config_from_dict(data: dict) -> GDTConfig:
    sections = {}
    for name, cls in SECTIONS.items():
        raw = dict(data.get(name, {}))
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"Unknown keys in section '{name}': {sorted(unknown)}")
        sections[name] = cls(**raw)
    return GDTConfig(**sections).validate()


def load_config(yaml_path: Optional[str] = None, overrides: Optional[dict] = None) -> GDTConfig:
    data = load_config_dict(yaml_path)
    if overrides:
        data = _merge(data, overrides)
    return config_from_dict(data)


def save_config(cfg: GDTConfig, path: str):
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(cfg.to_dict(), f, sort_keys=True)


def config_hash(model: ModelConfig) -> str:
    """Architecture fingerprint; max_group is excluded because it adds no parameters."""
    arch = asdict(model)
    arch.pop("max_group")
    text = yaml.safe_dump(arch, sort_keys=True)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
