import hashlib
import json
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class DataConfig(_Section):
    """
    Toy-face dataset generation.
    """
    root: str = "./data/toyfaces"
    clips: int = Field(200, ge=1)
    frames_per_clip: int = Field(40, ge=2)
    seed: int = 7
    val_fraction: float = Field(0.1, ge=0.0, lt=1.0)
    test_fraction: float = Field(0.1, ge=0.0, lt=1.0)
    fps: int = 25                         # metadata only
    overwrite: bool = False


class ModelConfig(_Section):
    """
    Denoiser / discriminator / perceptual-net knobs.
    """
    base_channels: int = Field(32, ge=8)
    depth: int = Field(3, ge=3, le=3)     # encoder scales 32, 16, 8
    temporal_attention: bool = True
    temporal_mode: Literal["bidirectional", "chunk-causal"] = "bidirectional"
    m_f_dim: int = 5
    keypoint_channels: int = 10
    max_window_frames: int = Field(16, ge=1)
    max_refs: int = Field(4, ge=1)
    heads: int = Field(4, ge=1)
    zero_init_output: bool = True
    seed: int = 0
    perceptual_seed: int = 1234
    device: str = "cpu"

    @field_validator("base_channels")
    @classmethod
    def _groupnorm_friendly(cls, v: int) -> int:
        if v % 8 != 0:
            raise ValueError(f"base_channels must be a multiple of 8, got {v}")
        return v


class ScheduleConfig(_Section):
    num_train_timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    levels: List[int] = Field(default_factory=lambda: [0, 333, 666, 999])


class TrainConfig(_Section):
    """
    Training knobs for the three stages.
    """
    stage: int = Field(1, ge=1, le=3)
    lr: float = Field(1e-4, gt=0)         # 1e-5 for a 1B-scale backbone
    disc_lr: float = Field(1e-4, gt=0)
    weight_decay: float = Field(0.01, ge=0)
    batch_stage1: int = Field(16, ge=1)
    batch_stage2: int = Field(16, ge=1)
    batch_stage3: int = Field(1, ge=1)
    steps_stage1: int = Field(30000, ge=1)
    steps_stage2: int = Field(30000, ge=1)
    steps_stage3: int = Field(2000, ge=1)  # iterations; 3 updates each at S=40, M=4, N=4
    lambda_lpips: float = Field(2.0, ge=0)
    lambda_adv: float = Field(0.05, ge=0)
    num_levels: int = Field(4, ge=1)      # N
    chunk_size: int = Field(4, ge=1)      # M
    seq_len: int = Field(40, ge=2)        # S
    seed: int = 0
    log_every: int = Field(50, ge=1)


class StreamConfig(_Section):
    """
    Streaming inference knobs.
    """
    chunk_size: int = Field(4, ge=1)      # M
    tau: float = Field(0.35, ge=0)        # 17 on a learned embedding scale
    bank_capacity: int = Field(4, ge=1)
    seed: int = 0
    init_mode: Literal["mii", "noise"] = "mii"
    hkm_during_warmup: bool = True
    output: Literal["frames", "raw"] = "frames"
    live_fps: Optional[float] = None

    @field_validator("tau", mode="before")
    @classmethod
    def _parse_inf(cls, v: Any) -> Any:
        if isinstance(v, str) and v.lower() in ("inf", "infinity"):
            return math.inf
        return v


class EvalConfig(_Section):
    refit_budget: int = Field(4000, ge=10)
    refit_seed: int = 0
    rollout_frames: int = Field(200, ge=20)
    rollout_seeds: int = Field(10, ge=1)
    ddim_steps: int = Field(50, ge=1)


class Config(_Section):
    data: DataConfig = Field(default_factory=DataConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    stream: StreamConfig = Field(default_factory=StreamConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    @model_validator(mode="after")
    def _cross_checks(self) -> "Config":
        n = len(self.schedule.levels)
        if self.train.num_levels != n:
            raise ValueError(f"train.num_levels must equal len(schedule.levels)={n}, got {self.train.num_levels}")
        if self.stream.chunk_size * n > self.model.max_window_frames:
            raise ValueError(
                f"stream.chunk_size * N must be <= model.max_window_frames={self.model.max_window_frames}, "
                f"got {self.stream.chunk_size * n}"
            )
        if self.train.chunk_size * n > self.model.max_window_frames:
            raise ValueError(
                f"train.chunk_size * N must be <= model.max_window_frames={self.model.max_window_frames}, "
                f"got {self.train.chunk_size * n}"
            )
        if self.train.seq_len % self.train.chunk_size != 0:
            raise ValueError(
                f"train.seq_len must be divisible by train.chunk_size, got {self.train.seq_len} "
                f"and {self.train.chunk_size}"
            )
        return self


@dataclass
class DenoiserConfig:
    """
    In-process parameter bundle for the denoiser, derived from `ModelConfig`.
    """
    base_channels: int = 32
    depth: int = 3
    temporal_attention: bool = True
    temporal_mode: str = "bidirectional"   # or "chunk-causal"
    chunk_size: int = 4                    # M, used by the chunk-causal mask
    m_f_dim: int = 5
    keypoint_channels: int = 10
    max_window_frames: int = 16            # MN
    max_refs: int = 4
    heads: int = 4
    zero_init_output: bool = True

    @classmethod
    def from_model_config(cls, model: ModelConfig, chunk_size: int) -> "DenoiserConfig":
        return cls(
            base_channels=model.base_channels,
            depth=model.depth,
            temporal_attention=model.temporal_attention,
            temporal_mode=model.temporal_mode,
            chunk_size=chunk_size,
            m_f_dim=model.m_f_dim,
            keypoint_channels=model.keypoint_channels,
            max_window_frames=model.max_window_frames,
            max_refs=model.max_refs,
            heads=model.heads,
            zero_init_output=model.zero_init_output,
        )


# --------------------------------------------------------------------------- #
# Flat key-value file format
# --------------------------------------------------------------------------- #

def _parse_value(raw: str) -> Any:
    raw = raw.strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_config_text(text: str) -> Config:
    """
    Parse `section.key = value` lines into a validated Config.
    Values are JSON literals; anything that is not valid JSON is taken as a string.
    """
    nested: Dict[str, Dict[str, Any]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key.count(".") != 1:
            raise ConfigError(f"line {lineno}: key must look like 'section.key', got {key!r}")
        section, name = key.split(".")
        bucket = nested.setdefault(section, {})
        if name in bucket:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        bucket[name] = _parse_value(value)
    try:
        return Config.model_validate(nested)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration:\n{e}") from e


def load_config(path: Optional[str]) -> Config:
    """Load and validate a config file; `None` yields the documented defaults."""
    if path is None:
        return Config()
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path!r}: {e}") from e
    return parse_config_text(text)


def dump_config(config: Config) -> str:
    """Echo every resolved key, defaults included, in the flat file format."""
    lines = []
    for section, values in config.model_dump().items():
        for key, value in values.items():
            if isinstance(value, float) and math.isinf(value):
                value = "inf"
            lines.append(f"{section}.{key} = {json.dumps(value)}")
    return "\n".join(lines) + "\n"


def config_hash(config: Config) -> str:
    return hashlib.sha256(dump_config(config).encode("utf-8")).hexdigest()
