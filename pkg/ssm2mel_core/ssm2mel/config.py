"""
Configuration for ssm2mel.

Two layers:
  * `Settings` - process settings from the environment (SSM2MEL_*) or a .env file.
  * `RunConfig` - the flat key=value run file. It expands into the nested
    `ModelConfig` / `TrainConfig` used by the library.

`SyntheticSpec` describes a generated dataset and is read the same way.
"""

import io
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Type, TypeVar, Union

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ConfigError

logger = logging.getLogger(__name__)

MixerSchedule = Literal["alternate", "all_mhsa", "all_mamba"]
S4Mode = Literal["recurrence", "scan", "conv"]


class Settings(BaseSettings):
    """Process-level settings, read from SSM2MEL_* variables."""

    model_config = SettingsConfigDict(env_prefix="SSM2MEL_", env_file=".env", extra="ignore")

    log_level: str = "INFO"
    log_file: Optional[str] = None
    debug_numerics: bool = False
    workers: int = Field(default=1, ge=1)


def configure_logging(settings: Optional[Settings] = None) -> None:
    settings = settings or Settings()
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if settings.log_file:
        Path(settings.log_file).parent.mkdir(parents=True, exist_ok=True)
        handlers.insert(0, logging.FileHandler(settings.log_file))
    logging.basicConfig(
        level=getattr(logging, settings.log_level.upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=handlers,
        force=True,
    )


class _Frozen(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class AttentionConfig(_Frozen):
    d_model: int = Field(default=64, ge=1)
    n_heads: int = Field(default=4, ge=1)

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @model_validator(mode="after")
    def _heads_divide_width(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        return self


class UNetConfig(_Frozen):
    depth: int = Field(default=2, ge=1)
    base_width: int = Field(default=64, ge=1)
    n_s4_blocks: int = Field(default=2, ge=1)
    s4_mode: S4Mode = "scan"
    bidirectional: bool = False


class BackboneConfig(_Frozen):
    n_blocks: int = Field(default=4, ge=0)
    mixer: MixerSchedule = "alternate"
    conv_kernel: int = Field(default=15, ge=1)
    mamba_expand: int = Field(default=2, ge=1)
    mamba_conv_kernel: int = Field(default=4, ge=1)

    @model_validator(mode="after")
    def _odd_conv_kernel(self):
        if self.conv_kernel % 2 == 0:
            raise ValueError(f"conv_kernel must be odd for same padding, got {self.conv_kernel}")
        return self

    def mixers(self) -> List[str]:
        """Mixer kind per block: 'mhsa' or 'mamba'."""
        if self.mixer == "all_mhsa":
            return ["mhsa"] * self.n_blocks
        if self.mixer == "all_mamba":
            return ["mamba"] * self.n_blocks
        return ["mhsa" if i % 2 == 0 else "mamba" for i in range(self.n_blocks)]


class ModelConfig(_Frozen):
    n_channels: int = Field(default=64, ge=1)
    n_mel: int = Field(default=10, ge=1)
    d_model: int = Field(default=64, ge=1)
    n_heads: int = Field(default=4, ge=1)
    n_subjects: int = Field(default=85, ge=1)
    sample_rate: int = Field(default=64, ge=1)
    segment_seconds: int = Field(default=5, ge=1)
    state_size: int = Field(default=16, ge=1)
    max_len: int = Field(default=2048, ge=1)
    input_projection: Literal["linear", "conv"] = "linear"
    input_conv_kernel: int = Field(default=9, ge=1)
    use_esm: bool = True
    use_s4unet: bool = True
    use_external_attention: bool = True
    ext_slots: int = Field(default=64, ge=1)
    ext_softmax_axis: Literal["slots", "time"] = "slots"
    alpha: float = Field(default=1.0, ge=0.0)
    dropout: float = Field(default=0.0, ge=0.0, lt=1.0)
    unet: UNetConfig = UNetConfig()
    backbone: BackboneConfig = BackboneConfig()

    @property
    def segment_length(self) -> int:
        return self.sample_rate * self.segment_seconds

    @property
    def attention(self) -> AttentionConfig:
        return AttentionConfig(d_model=self.d_model, n_heads=self.n_heads)

    @model_validator(mode="after")
    def _structure(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.input_projection == "conv" and self.input_conv_kernel % 2 == 0:
            raise ValueError("input_conv_kernel must be odd")
        return self


class TrainConfig(_Frozen):
    epochs: int = Field(default=1000, ge=0)
    batch_size: int = Field(default=64, ge=1)
    lr: float = Field(default=5e-4, gt=0.0)
    lr_decay: float = Field(default=0.9, gt=0.0, le=1.0)
    lr_decay_every: int = Field(default=50, ge=1)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)
    weight_decay: float = Field(default=0.0, ge=0.0)
    grad_clip: float = Field(default=0.0, ge=0.0)
    seed: int = 0


class RunConfig(_Frozen):
    """
    Flat run configuration; one field per key of the key=value file.

    Field order is the rendering order.
    """

    # model
    n_channels: int = 64
    n_mel: int = 10
    d_model: int = 64
    n_heads: int = 4
    n_subjects: int = 85
    sample_rate: int = 64
    segment_seconds: int = 5
    state_size: int = 16
    max_len: int = 2048
    input_projection: Literal["linear", "conv"] = "linear"
    input_conv_kernel: int = 9
    use_esm: bool = True
    use_s4unet: bool = True
    use_external_attention: bool = True
    ext_slots: int = 64
    ext_softmax_axis: Literal["slots", "time"] = "slots"
    alpha: float = 1.0
    dropout: float = 0.0
    unet_depth: int = 2
    unet_base_width: int = 64
    unet_blocks: int = 2
    s4_mode: S4Mode = "scan"
    s4_bidirectional: bool = False
    n_blocks: int = 4
    mixer: MixerSchedule = "alternate"
    conformer_kernel: int = 15
    mamba_expand: int = 2
    mamba_conv_kernel: int = 4
    # training
    epochs: int = 1000
    batch_size: int = 64
    lr: float = 5e-4
    lr_decay: float = 0.9
    lr_decay_every: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    grad_clip: float = 0.0
    seed: int = 0
    # paths
    data_dir: Optional[str] = None
    out_dir: Optional[str] = None

    @model_validator(mode="after")
    def _nested_valid(self):
        self.model()
        self.train()
        return self

    def model(self) -> ModelConfig:
        return ModelConfig(
            n_channels=self.n_channels, n_mel=self.n_mel, d_model=self.d_model,
            n_heads=self.n_heads, n_subjects=self.n_subjects, sample_rate=self.sample_rate,
            segment_seconds=self.segment_seconds, state_size=self.state_size,
            max_len=self.max_len, input_projection=self.input_projection,
            input_conv_kernel=self.input_conv_kernel, use_esm=self.use_esm,
            use_s4unet=self.use_s4unet, use_external_attention=self.use_external_attention,
            ext_slots=self.ext_slots, ext_softmax_axis=self.ext_softmax_axis,
            alpha=self.alpha, dropout=self.dropout,
            unet=UNetConfig(depth=self.unet_depth, base_width=self.unet_base_width,
                            n_s4_blocks=self.unet_blocks, s4_mode=self.s4_mode,
                            bidirectional=self.s4_bidirectional),
            backbone=BackboneConfig(n_blocks=self.n_blocks, mixer=self.mixer,
                                    conv_kernel=self.conformer_kernel,
                                    mamba_expand=self.mamba_expand,
                                    mamba_conv_kernel=self.mamba_conv_kernel),
        )

    def train(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, lr_decay=self.lr_decay,
            lr_decay_every=self.lr_decay_every, beta1=self.beta1, beta2=self.beta2,
            eps=self.eps, weight_decay=self.weight_decay, grad_clip=self.grad_clip,
            seed=self.seed,
        )


class SyntheticSpec(_Frozen):
    """Recipe for the seeded synthetic EEG -> mel dataset."""

    seed: int = 0
    n_subjects: int = Field(default=2, ge=1)
    recordings_per_subject: int = Field(default=4, ge=1)
    n_samples: int = Field(default=3840, ge=1)
    n_channels: int = Field(default=64, ge=1)
    n_mel: int = Field(default=10, ge=1)
    smoothing: int = Field(default=8, ge=1)
    noise_std: float = Field(default=0.0, ge=0.0)
    sample_rate: int = Field(default=64, ge=1)
    val_ratio: float = Field(default=0.1, ge=0.0, lt=1.0)
    test_ratio: float = Field(default=0.1, ge=0.0, lt=1.0)
    split_seed: int = 0


ConfigModel = TypeVar("ConfigModel", bound=BaseModel)


def _format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_config(config: BaseModel) -> str:
    """key=value lines in field order."""
    lines = [f"{name}={_format_value(getattr(config, name))}" for name in type(config).model_fields]
    return "\n".join(lines) + "\n"


def build_config(cls: Type[ConfigModel], values: Mapping[str, Optional[str]]) -> ConfigModel:
    """Validate raw string values; unknown keys and bad values raise ConfigError naming the key."""
    fields = cls.model_fields
    unknown = [key for key in values if key not in fields]
    if unknown:
        raise ConfigError(f"unknown config key '{unknown[0]}'")
    cleaned: Dict[str, Any] = {}
    for key, raw in values.items():
        if raw is None or raw == "":
            if fields[key].is_required() or fields[key].default is not None:
                raise ConfigError(f"config key '{key}' has no value")
            cleaned[key] = None
        else:
            cleaned[key] = raw.strip() if isinstance(raw, str) else raw
    try:
        return cls.model_validate(cleaned)
    except ValidationError as e:
        first = e.errors()[0]
        key = ".".join(str(part) for part in first["loc"]) or "<config>"
        raise ConfigError(f"invalid config key '{key}': {first['msg']}") from None


def parse_overrides(pairs: List[str]) -> Dict[str, str]:
    overrides = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override '{pair}' is not key=value")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def load_config(
    cls: Type[ConfigModel],
    path: Optional[Union[str, os.PathLike]] = None,
    overrides: Optional[Mapping[str, str]] = None,
) -> ConfigModel:
    values: Dict[str, Optional[str]] = {}
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        values.update(dotenv_values(path))
    values.update(overrides or {})
    config = build_config(cls, values)
    logger.debug(f"Loaded {cls.__name__} from {path or '<defaults>'}")
    return config


def load_run_config(path=None, overrides: Optional[Mapping[str, str]] = None) -> RunConfig:
    return load_config(RunConfig, path, overrides)


def override_config(config: ConfigModel, overrides: Mapping[str, str]) -> ConfigModel:
    """Re-validate `config` with string overrides applied on top of its rendered values."""
    if not overrides:
        return config
    values: Dict[str, Optional[str]] = dict(dotenv_values(stream=io.StringIO(render_config(config))))
    values.update(overrides)
    return build_config(type(config), values)


def load_synthetic_spec(path=None, overrides: Optional[Mapping[str, str]] = None) -> SyntheticSpec:
    return load_config(SyntheticSpec, path, overrides)


def save_config(config: BaseModel, path: Union[str, os.PathLike]) -> None:
    Path(path).write_text(render_config(config), encoding="utf-8")
