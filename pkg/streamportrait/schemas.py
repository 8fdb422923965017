import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Tuple

import numpy as np

from .errors import InvalidInputError

# H x W x 3 float32 array in [0, 1]
Frame = np.ndarray

FRAME_SIZE = 64
NUM_EXPR = 5
NUM_KEYPOINTS = 10

ROLL_RANGE = (-math.pi / 4, math.pi / 4)
TRANS_RANGE = (-0.3, 0.3)
SCALE_RANGE = (0.7, 1.3)
EXPR_RANGE = (0.0, 1.0)

# Field order used by params.csv rows and by the refit search vector.
MOTION_FIELDS = ("roll", "tx", "ty", "scale", "expr0", "expr1", "expr2", "expr3", "expr4")
MOTION_RANGES: Tuple[Tuple[float, float], ...] = (
    ROLL_RANGE,
    TRANS_RANGE,
    TRANS_RANGE,
    SCALE_RANGE,
) + (EXPR_RANGE,) * NUM_EXPR

IDENTITY_FIELDS = ("face_hue", "face_aspect", "eye_hue", "skin_brightness", "torso_hue")
IDENTITY_RANGES: Tuple[Tuple[float, float], ...] = (
    (0.0, 1.0),
    (0.7, 1.3),
    (0.0, 1.0),
    (0.4, 1.0),
    (0.0, 1.0),
)


def _check_range(name: str, value: float, bounds: Tuple[float, float]) -> None:
    lo, hi = bounds
    if not math.isfinite(value) or value < lo or value > hi:
        raise InvalidInputError(f"{name} must be in [{lo}, {hi}], got {value!r}")


@dataclass(frozen=True)
class IdentityParams:
    """
    Appearance of one toy face.

    Fields:
        face_hue        : skin hue in [0, 1]
        face_aspect     : head ellipse width/height ratio in [0.7, 1.3]
        eye_hue         : iris hue in [0, 1]
        skin_brightness : HSV value of the skin in [0.4, 1.0]
        torso_hue       : hue of the torso band under the head in [0, 1]
    """

    face_hue: float
    face_aspect: float
    eye_hue: float
    skin_brightness: float
    torso_hue: float

    def validate(self) -> "IdentityParams":
        for name, value, bounds in zip(IDENTITY_FIELDS, self.as_tuple(), IDENTITY_RANGES):
            _check_range(name, value, bounds)
        return self

    def as_tuple(self) -> Tuple[float, ...]:
        return (self.face_hue, self.face_aspect, self.eye_hue, self.skin_brightness, self.torso_hue)

    def to_dict(self) -> Dict[str, float]:
        return dict(zip(IDENTITY_FIELDS, self.as_tuple()))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "IdentityParams":
        return cls(**{k: float(data[k]) for k in IDENTITY_FIELDS})


@dataclass(frozen=True)
class MotionParams:
    """
    Exact per-frame driving signal.

    Fields:
        roll  : in-plane head rotation, radians in [-pi/4, pi/4]
        trans : (tx, ty) head translation in normalized image coords, each in [-0.3, 0.3]
        scale : head scale in [0.7, 1.3]
        expr  : (left-eye openness, right-eye openness, mouth openness,
                 mouth width, brow raise), each in [0, 1]
    """

    roll: float
    trans: Tuple[float, float]
    scale: float
    expr: Tuple[float, float, float, float, float]

    @classmethod
    def neutral(cls) -> "MotionParams":
        return cls(roll=0.0, trans=(0.0, 0.0), scale=1.0, expr=(1.0, 1.0, 0.0, 0.5, 0.5))

    def validate(self) -> "MotionParams":
        if len(self.trans) != 2 or len(self.expr) != NUM_EXPR:
            raise InvalidInputError(
                f"motion must have 2 trans and {NUM_EXPR} expr values, "
                f"got {len(self.trans)} and {len(self.expr)}"
            )
        for name, value, bounds in zip(MOTION_FIELDS, self.to_row(), MOTION_RANGES):
            _check_range(name, value, bounds)
        return self

    def to_row(self) -> Tuple[float, ...]:
        """Flatten to (roll, tx, ty, scale, expr0..expr4)."""
        return (float(self.roll), float(self.trans[0]), float(self.trans[1]), float(self.scale)) + tuple(
            float(e) for e in self.expr
        )

    @classmethod
    def from_row(cls, row) -> "MotionParams":
        values = [float(v) for v in row]
        if len(values) != len(MOTION_FIELDS):
            raise InvalidInputError(f"motion row must have {len(MOTION_FIELDS)} values, got {len(values)}")
        return cls(roll=values[0], trans=(values[1], values[2]), scale=values[3], expr=tuple(values[4:]))

    def to_unit(self) -> np.ndarray:
        """Each field mapped to [0, 1] by its range (refit search space, APD normalization)."""
        row = np.asarray(self.to_row(), dtype=np.float64)
        lo = np.array([b[0] for b in MOTION_RANGES])
        hi = np.array([b[1] for b in MOTION_RANGES])
        return (row - lo) / (hi - lo)

    @classmethod
    def from_unit(cls, u: np.ndarray) -> "MotionParams":
        lo = np.array([b[0] for b in MOTION_RANGES])
        hi = np.array([b[1] for b in MOTION_RANGES])
        return cls.from_row(lo + np.clip(u, 0.0, 1.0) * (hi - lo))


@dataclass
class Clip:
    """
    One driving video: identity plus per-frame motions and their renders.
    `frames[i]` equals `render(identity, motions[i])` bit-exactly.
    """

    identity: IdentityParams
    frames: List[Frame]
    motions: List[MotionParams]
    fps: int = 25

    def __post_init__(self) -> None:
        if len(self.frames) != len(self.motions):
            raise InvalidInputError(
                f"clip needs one motion per frame, got {len(self.frames)} frames and {len(self.motions)} motions"
            )

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class LossReport:
    """
    Per-step loss components.

    total = mse + lambda_lpips * perceptual + lambda_adv * adversarial (stage >= 2);
    total = mse at stage 1.
    """

    total: float = 0.0
    mse: float = 0.0
    perceptual: float = 0.0
    adversarial: float = 0.0
    disc_loss: float = 0.0
    extra: Dict[str, Any] = field(default_factory=dict)

    def as_row(self) -> Tuple[float, ...]:
        return (self.total, self.mse, self.perceptual, self.adversarial, self.disc_loss)


@dataclass
class MetricReport:
    l1: float
    ssim: float
    tlp_proxy: float
    aed: float
    apd: float
    id_drift: float
    # per-frame series: {"l1": [...], "ssim": [...]}
    series: Dict[str, List[float]] = field(default_factory=dict)


@dataclass
class TimingRecord:
    step: int
    wall_ms: float
    emitted_count: int
    bank_size: int
    # frame evaluations by the denoiser during this step
    frame_evals: int = 0


@dataclass
class BenchReport:
    mode: str
    fps: float
    inter_chunk_latency_ms: float
    inter_chunk_latency_p95_ms: float
    denoiser_calls_per_frame: float
    frames: int
    total_seconds: float
    first_emission_ms: float
    emission_events: int
    init_ms: float = 0.0
    # run wall time not covered by init or any emission latency
    untimed_ms: float = 0.0
