"""
Streaming portrait animation on a procedural toy-face domain.

Exposes:
- Config and its sections, load_config
- toy-face rendering and dataset generation
- the three trainers (train_stage1, train_stage2, train_stage3_sliding)
- the streaming engine (init_stream, stream_step, run_stream)
- evaluation metrics and the latency benchmark
"""

from .config import Config, load_config
from .errors import CheckpointError, ConfigError, DatasetError, InvalidInputError, StreamPortraitError
from .evalkit import bench_latency, evaluate, frame_metrics, id_drift, motion_accuracy, refit_motion, tlp_proxy
from .schedule import CompactSchedule, NoiseSchedule
from .schemas import BenchReport, Clip, IdentityParams, LossReport, MetricReport, MotionParams
from .streamer import StreamState, generate_chunkwise, init_stream, maybe_add_keyframe, run_stream, stream_step
from .toyface import build_dataset, extract_hybrid_motion, render
from .trainers import adversarial_step, distill_rollout, train_stage1, train_stage2, train_stage3_sliding

__all__ = [
    "Config",
    "load_config",
    "StreamPortraitError",
    "InvalidInputError",
    "ConfigError",
    "CheckpointError",
    "DatasetError",
    "NoiseSchedule",
    "CompactSchedule",
    "IdentityParams",
    "MotionParams",
    "Clip",
    "LossReport",
    "MetricReport",
    "BenchReport",
    "render",
    "extract_hybrid_motion",
    "build_dataset",
    "train_stage1",
    "train_stage2",
    "train_stage3_sliding",
    "distill_rollout",
    "adversarial_step",
    "StreamState",
    "init_stream",
    "stream_step",
    "maybe_add_keyframe",
    "run_stream",
    "generate_chunkwise",
    "frame_metrics",
    "tlp_proxy",
    "refit_motion",
    "motion_accuracy",
    "id_drift",
    "bench_latency",
    "evaluate",
]
