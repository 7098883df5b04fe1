"""Run configuration.

Everything a command needs lives in one nested, JSON-serializable structure
with explicit seeds. Parsing is strict: unknown keys are rejected with their
path so a typo in a config file fails loudly instead of silently running
defaults. The model-size presets only fix architecture widths; training
lengths, learning rates and seeds stay in their own sections.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from reactgen.errors import ConfigError

FUSION_CHOICES = ("acf", "concat")
MUM_CHOICES = ("both", "b2h", "h2b", "off")
LOSS_CHOICES = ("diffusion", "l2")
MODE_CHOICES = ("offline", "online")


@dataclass(frozen=True)
class ModelPreset:
    latent_dim: int
    vae_width: int
    d_model: int
    num_heads: int
    num_blocks: int
    ffn_hidden: int
    diff_hidden: int
    diff_blocks: int


# "small" is the desk-scale default the test suite trains; "paper" matches the
# published architecture sizes and is only ever constructed, never trained here.
PRESETS = {
    "tiny": ModelPreset(32, 64, 32, 2, 1, 128, 128, 2),
    "small": ModelPreset(64, 128, 64, 4, 2, 256, 256, 3),
    "base": ModelPreset(96, 192, 128, 8, 4, 512, 512, 3),
    "paper": ModelPreset(256, 512, 512, 8, 8, 2048, 1536, 3),
}


@dataclass(frozen=True)
class DatasetSection:
    num_pairs: int = 512
    n_frames: int = 64
    num_classes: int = 4
    lag: int = 4
    noise_std: float = 0.02
    fps: float = 20.0


@dataclass(frozen=True)
class VaeSection:
    downsample_rate: int = 4
    kl_weight: float = 1e-4
    smoothl1_beta: float = 1.0


@dataclass(frozen=True)
class ReactorSection:
    max_tokens: int = 256


@dataclass(frozen=True)
class DiffusionSection:
    T_diff: int = 1000
    s: float = 0.008
    num_steps: int = 100
    include_unmasked: bool = False


@dataclass(frozen=True)
class GenerationSection:
    T_iters: int = 8
    mode: str = "offline"

    def __post_init__(self):
        if self.mode not in MODE_CHOICES:
            raise ConfigError(f"generation.mode must be one of {MODE_CHOICES}")


@dataclass(frozen=True)
class StageSection:
    steps: int
    batch_size: int
    lr: float
    warmup_steps: int

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be positive")
        if self.lr <= 0 or self.warmup_steps < 0:
            raise ConfigError("lr must be positive and warmup_steps nonnegative")


@dataclass(frozen=True)
class TrainingSection:
    vae: StageSection = field(
        default_factory=lambda: StageSection(2000, 16, 1e-3, 100))
    reactor: StageSection = field(
        default_factory=lambda: StageSection(4000, 16, 2e-4, 1000))
    beta1: float = 0.5
    beta2: float = 0.99
    weight_decay: float = 0.0


@dataclass(frozen=True)
class AblationSection:
    fusion: str = "acf"
    mum_mode: str = "both"
    unit_division: bool = True
    loss: str = "diffusion"

    def __post_init__(self):
        if self.fusion not in FUSION_CHOICES:
            raise ConfigError(f"ablations.fusion must be one of {FUSION_CHOICES}")
        if self.mum_mode not in MUM_CHOICES:
            raise ConfigError(f"ablations.mum_mode must be one of {MUM_CHOICES}")
        if self.loss not in LOSS_CHOICES:
            raise ConfigError(f"ablations.loss must be one of {LOSS_CHOICES}")


@dataclass(frozen=True)
class SeedsSection:
    dataset: int = 0
    vae: int = 11
    reactor: int = 12
    generate: int = 13
    evaluate: int = 14


@dataclass(frozen=True)
class RunConfig:
    preset: str = "small"
    dataset: DatasetSection = field(default_factory=DatasetSection)
    vae: VaeSection = field(default_factory=VaeSection)
    reactor: ReactorSection = field(default_factory=ReactorSection)
    diffusion: DiffusionSection = field(default_factory=DiffusionSection)
    generation: GenerationSection = field(default_factory=GenerationSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    ablations: AblationSection = field(default_factory=AblationSection)
    seeds: SeedsSection = field(default_factory=SeedsSection)

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"preset must be one of {sorted(PRESETS)}, got {self.preset!r}")

    @property
    def model(self) -> ModelPreset:
        return PRESETS[self.preset]


_NESTED_FIELDS = {
    (RunConfig, "dataset"): DatasetSection,
    (RunConfig, "vae"): VaeSection,
    (RunConfig, "reactor"): ReactorSection,
    (RunConfig, "diffusion"): DiffusionSection,
    (RunConfig, "generation"): GenerationSection,
    (RunConfig, "training"): TrainingSection,
    (RunConfig, "ablations"): AblationSection,
    (RunConfig, "seeds"): SeedsSection,
    (TrainingSection, "vae"): StageSection,
    (TrainingSection, "reactor"): StageSection,
}


def _from_dict(cls, payload, path: str):
    if not isinstance(payload, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping, got {type(payload).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s) {unknown} under {path or 'top level'}")
    kwargs = {}
    for name, value in payload.items():
        nested = _NESTED_FIELDS.get((cls, name))
        if nested is not None:
            value = _from_dict(nested, value, f"{path}.{name}" if path else name)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad value under {path or 'top level'}: {exc}") from None


def config_from_dict(payload: dict) -> RunConfig:
    return _from_dict(RunConfig, payload, "")


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return config_from_dict(payload)


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def config_hash(cfg: RunConfig) -> str:
    canon = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()
