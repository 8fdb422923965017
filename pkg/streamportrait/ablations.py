"""
Paired-seed ablation studies.

Every study runs the same seeded rollouts under two settings (A, the full
system, and B, the ablated one) and reports the per-seed metric pairs plus a
one-sided sign test of "A is better than B".
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import binomtest
from tqdm import tqdm

from .audit_log import get_audit_logger
from .conditioning import source_keypoint_motions
from .config import Config
from .errors import InvalidInputError
from .evalkit import bench, frame_metrics, id_drift, motion_accuracy
from .motionctl import interpolated_motions
from .schedule import CompactSchedule, NoiseSchedule
from .schemas import IdentityParams, MotionParams
from .store.checkpoint import Checkpoint
from .streamer import generate_chunkwise, run_stream, sample_uniform_ddim
from .toyface import render, sample_identity, sample_trajectory
from .trainers import models_from_checkpoint

logger = logging.getLogger(__name__)

STUDIES = ("distill", "st", "hkm", "tau", "mii", "chunk", "attn", "latency", "hybrid")
TAU_GRID = (0.0, 0.2, 0.35, 0.5, math.inf)
SIGNIFICANCE = 0.05


@dataclass
class StudyResult:
    study: str
    metric: str
    labels: List[str]
    a: List[float] = field(default_factory=list)
    b: List[float] = field(default_factory=list)
    wins: int = 0
    trials: int = 0
    p_value: float = 1.0
    passed: Optional[bool] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def sign_test(a: Sequence[float], b: Sequence[float]) -> tuple:
    """Paired one-sided sign test that a < b; ties are dropped. Returns (wins, trials, p)."""
    if len(a) != len(b):
        raise InvalidInputError(f"paired samples must have equal length, got {len(a)} and {len(b)}")
    diffs = [x - y for x, y in zip(a, b) if x != y]
    wins = sum(1 for d in diffs if d < 0)
    if not diffs:
        return 0, 0, 1.0
    return wins, len(diffs), float(binomtest(wins, len(diffs), 0.5, alternative="greater").pvalue)


def _paired(study: str, metric: str, labels: List[str], a, b, **extra) -> StudyResult:
    wins, trials, p = sign_test(a, b)
    return StudyResult(study, metric, labels, list(a), list(b), wins, trials, p, p < SIGNIFICANCE, dict(extra))


@dataclass
class Scenario:
    """One seeded cross-reenactment: a sampled identity driven by an independent trajectory."""

    identity: IdentityParams
    source_motion: MotionParams
    reference: np.ndarray
    driving: List[MotionParams]

    @classmethod
    def sample(cls, seed: int, frames: int) -> "Scenario":
        identity = sample_identity(np.random.default_rng(seed))
        source = MotionParams.neutral()
        return cls(identity, source, render(identity, source), sample_trajectory(seed + 10_000, frames))


def _stream_kwargs(scenario: Scenario, compact: CompactSchedule, schedule: NoiseSchedule) -> Dict[str, Any]:
    return dict(identity=scenario.identity, source_motion=scenario.source_motion, compact=compact, schedule=schedule)


def _rollout_metric(
    config: Config,
    ckpt: Checkpoint,
    seeds: Sequence[int],
    frames: int,
    metric: Callable,
    chunk_size: Optional[int] = None,
    desc: str = "",
) -> List[float]:
    stream = config.stream
    if chunk_size is not None:
        stream = stream.model_copy(update={"chunk_size": chunk_size})
    models = models_from_checkpoint(ckpt, config, chunk_size=stream.chunk_size)
    out = []
    for seed in tqdm(seeds, desc=desc or "rollouts"):
        scenario = Scenario.sample(seed, frames)
        result = run_stream(
            scenario.reference, scenario.driving, models.denoiser, stream.model_copy(update={"seed": seed}),
            **_stream_kwargs(scenario, models.compact, models.schedule),
        )
        out.append(metric(result, scenario))
    return out


def _drift(result, scenario) -> float:
    return id_drift(result.frames)


def _warmup_l1(chunks: int):
    """
    L1 of the first emitted chunks against renders of the interpolated path
    from the source to the first driving motion. The target depends only on
    the scenario, so every initialization mode is scored against the same frames.
    """
    def metric(result, scenario) -> float:
        state = result.state
        n = chunks * state.M
        path = interpolated_motions(scenario.source_motion, scenario.driving[0], state.M, state.N)
        target = [render(scenario.identity, m) for m in path[:n]]
        l1, _ = frame_metrics(result.frames[:n], target)
        return float(np.mean(l1))
    return metric


def _drift_and_keyframes(result, scenario) -> tuple:
    return id_drift(result.frames), result.state.keyframes_added


def _with_stream(config: Config, **update) -> Config:
    out = config.model_copy(deep=True)
    out.stream = config.stream.model_copy(update=update)
    return out


# --------------------------------------------------------------------------- #
# Studies
# --------------------------------------------------------------------------- #

def study_st(config, main, baseline, seeds, frames) -> StudyResult:
    """Identity drift with sliding training (stage 3) vs stage-2-only weights."""
    if main is None or baseline is None:
        raise InvalidInputError("the st study needs a stage-3 checkpoint and a stage-2 baseline")
    a = _rollout_metric(config, main, seeds, frames, _drift, desc="st: with")
    b = _rollout_metric(config, baseline, seeds, frames, _drift, desc="st: without")
    return _paired("st", "id_drift", ["sliding training", "stage-2 only"], a, b)


def study_hkm(config, main, baseline, seeds, frames) -> StudyResult:
    a = _rollout_metric(config, main, seeds, frames, _drift, desc="hkm: on")
    b = _rollout_metric(_with_stream(config, tau=float("inf")), main, seeds, frames, _drift, desc="hkm: off")
    return _paired("hkm", "id_drift", [f"tau={config.stream.tau}", "tau=inf"], a, b)


def study_tau(config, main, baseline, seeds, frames, taus: Sequence[float] = TAU_GRID) -> StudyResult:
    """
    Keyframe-threshold sweep: keyframe insertions and identity drift per tau.
    The paired test compares the configured tau against tau=inf.
    """
    grid = sorted(set(taus) | {config.stream.tau, math.inf})
    sweep, drifts = {}, {}
    for tau in grid:
        rows = _rollout_metric(_with_stream(config, tau=tau), main, seeds, frames, _drift_and_keyframes,
                               desc=f"tau: {tau}")
        drifts[tau] = [d for d, _ in rows]
        sweep[str(tau)] = {
            "keyframes_added": float(np.mean([k for _, k in rows])),
            "id_drift": float(np.mean(drifts[tau])),
        }
    tau = config.stream.tau
    return _paired("tau", "id_drift", [f"tau={tau}", "tau=inf"], drifts[tau], drifts[math.inf], sweep=sweep)


def study_mii(config, main, baseline, seeds, frames) -> StudyResult:
    metric = _warmup_l1(2)
    a = _rollout_metric(_with_stream(config, init_mode="mii"), main, seeds, frames, metric, desc="mii: on")
    b = _rollout_metric(_with_stream(config, init_mode="noise"), main, seeds, frames, metric, desc="mii: off")
    return _paired("mii", "l1_first_2_chunks", ["mii", "noise init"], a, b)


def study_attn(config, main, baseline, seeds, frames) -> StudyResult:
    """Bidirectional vs chunk-causal temporal attention on the same weights (the mask has no parameters)."""
    causal = config.model_copy(deep=True)
    causal.model = config.model.model_copy(update={"temporal_mode": "chunk-causal"})
    bidir = config.model_copy(deep=True)
    bidir.model = config.model.model_copy(update={"temporal_mode": "bidirectional"})
    a = _rollout_metric(bidir, main, seeds, frames, _drift, desc="attn: bidirectional")
    b = _rollout_metric(causal, main, seeds, frames, _drift, desc="attn: chunk-causal")
    return _paired("attn", "id_drift", ["bidirectional", "chunk-causal"], a, b)


def study_chunk(config, main, baseline, seeds, frames, sizes: Sequence[int] = (2, 4)) -> StudyResult:
    """Chunk-size sweep: drift per size (A = the configured size, B = the smallest other size) plus timing."""
    M = config.stream.chunk_size
    other = min(s for s in sizes if s != M) if any(s != M for s in sizes) else M
    a = _rollout_metric(config, main, seeds, frames, _drift, desc=f"chunk: M={M}")
    b = _rollout_metric(config, main, seeds, frames, _drift, chunk_size=other, desc=f"chunk: M={other}")
    scenario = Scenario.sample(seeds[0], frames)
    timing = {}
    for size in sorted({M, other}):
        stream = config.stream.model_copy(update={"chunk_size": size})
        models = models_from_checkpoint(main, config, chunk_size=size)
        report = bench("streaming", scenario.reference, scenario.driving, models.denoiser, stream,
                       **_stream_kwargs(scenario, models.compact, models.schedule))
        timing[str(size)] = {"fps": report.fps, "inter_chunk_latency_ms": report.inter_chunk_latency_ms}
    return _paired("chunk", "id_drift", [f"M={M}", f"M={other}"], a, b, timing=timing)


def study_distill(
    config,
    main,
    baseline,
    seeds,
    frames,
    ddim_steps: Optional[int] = None,
    no_adv: Optional[Checkpoint] = None,
) -> StudyResult:
    """
    Self-reenactment L1 over one window: the distilled N-step model vs the
    stage-1 model sampled with uniform DDIM steps. Passes when the distilled
    L1 is within 1.3x and uses >= 12x fewer denoiser calls per frame.

    Two more arms land in `extra`: the stage-1 model sampled directly on the
    N-level schedule (no distillation), and `no_adv`, a distilled checkpoint
    trained with lambda_adv=0, when one is given.
    """
    if main is None or baseline is None:
        raise InvalidInputError("the distill study needs a distilled checkpoint and a stage-1 baseline")
    steps = ddim_steps or config.eval.ddim_steps
    M = config.stream.chunk_size
    student = models_from_checkpoint(main, config, chunk_size=M)
    teacher = models_from_checkpoint(baseline, config, chunk_size=M)
    plain = models_from_checkpoint(no_adv, config, chunk_size=M) if no_adv is not None else None
    window = M * student.compact.N

    def compact_l1(models, scenario, stream, target) -> float:
        out = generate_chunkwise(
            scenario.reference, scenario.driving, models.denoiser, stream,
            **_stream_kwargs(scenario, student.compact, models.schedule),
        )
        return float(np.mean(frame_metrics(out, target)[0]))

    a, b, undistilled, unadversarial = [], [], [], []
    for seed in tqdm(seeds, desc="distill"):
        scenario = Scenario.sample(seed, window)
        target = [render(scenario.identity, m) for m in scenario.driving]
        stream = config.stream.model_copy(update={"seed": seed})
        slow = sample_uniform_ddim(
            scenario.reference, scenario.driving, teacher.denoiser,
            identity=scenario.identity, source_motion=scenario.source_motion,
            steps=steps, schedule=teacher.schedule, seed=seed,
        )
        a.append(compact_l1(student, scenario, stream, target))
        b.append(float(np.mean(frame_metrics(slow, target)[0])))
        undistilled.append(compact_l1(teacher, scenario, stream, target))
        if plain is not None:
            unadversarial.append(compact_l1(plain, scenario, stream, target))
    result = _paired("distill", "l1", [f"{student.compact.N}-step distilled", f"{steps}-step ddim"], a, b)
    ratio = float(np.mean(a) / max(np.mean(b), 1e-12))
    speedup = steps / student.compact.N
    arms = {"no_distill": undistilled}
    if plain is not None:
        arms["no_adv"] = unadversarial
    result.extra.update({
        "l1_ratio": ratio,
        "calls_per_frame": [student.compact.N, steps],
        "call_ratio": speedup,
        "arms": {name: {"l1": values, "mean_l1": float(np.mean(values))} for name, values in arms.items()},
    })
    result.passed = ratio <= 1.3 and speedup >= 12
    return result


def study_hybrid(config, main, baseline, seeds, frames) -> StudyResult:
    """
    Head-pose error (APD) over one window with the full hybrid signal (k_d + m_f,d)
    vs source keypoints with the driving embedding (k_s + m_f,d). Both arms are
    refit against the true driving motions.
    """
    models = models_from_checkpoint(main, config, chunk_size=config.stream.chunk_size)
    window = config.stream.chunk_size * models.compact.N
    a, b = [], []
    for seed in tqdm(seeds, desc="hybrid"):
        scenario = Scenario.sample(seed, window)
        stream = config.stream.model_copy(update={"seed": seed})
        kwargs = _stream_kwargs(scenario, models.compact, models.schedule)
        mixed = source_keypoint_motions(scenario.driving, scenario.source_motion)
        for signal, out in ((scenario.driving, a), (mixed, b)):
            generated = generate_chunkwise(scenario.reference, signal, models.denoiser, stream, **kwargs)
            _, apd = motion_accuracy(
                generated, scenario.driving, scenario.identity,
                budget=config.eval.refit_budget, seed=config.eval.refit_seed,
            )
            out.append(apd)
    return _paired("hybrid", "apd", ["k_d + m_f,d", "k_s + m_f,d"], a, b)


def study_latency(config, main, baseline, seeds, frames) -> StudyResult:
    """Steady-state streaming inter-chunk latency vs the chunk-wise baseline's time to first emission."""
    models = models_from_checkpoint(main, config, chunk_size=config.stream.chunk_size)
    a, b = [], []
    for seed in tqdm(seeds, desc="latency"):
        scenario = Scenario.sample(seed, frames)
        kwargs = _stream_kwargs(scenario, models.compact, models.schedule)
        streaming = bench("streaming", scenario.reference, scenario.driving, models.denoiser, config.stream, **kwargs)
        chunkwise = bench("chunkwise", scenario.reference, scenario.driving, models.denoiser, config.stream, **kwargs)
        a.append(streaming.inter_chunk_latency_ms)
        b.append(chunkwise.first_emission_ms)
    result = _paired("latency", "ms", ["streaming inter-chunk", "chunk-wise first emission"], a, b)
    ratio = float(np.median(a) / max(np.median(b), 1e-12))
    result.extra["ratio"] = ratio
    result.passed = ratio <= 1.0 / 2.5
    return result


_STUDY_FNS = {
    "distill": study_distill,
    "st": study_st,
    "hkm": study_hkm,
    "tau": study_tau,
    "mii": study_mii,
    "chunk": study_chunk,
    "attn": study_attn,
    "latency": study_latency,
    "hybrid": study_hybrid,
}


def run_study(
    study: str,
    config: Config,
    main: Checkpoint,
    baseline: Optional[Checkpoint] = None,
    *,
    seeds: int = 10,
    frames: int = 200,
    no_adv: Optional[Checkpoint] = None,
) -> StudyResult:
    """`no_adv` is the lambda_adv=0 distilled checkpoint; only the distill study reads it."""
    if study not in _STUDY_FNS:
        raise InvalidInputError(f"study must be one of {', '.join(STUDIES)}, got {study!r}")
    if main is None:
        raise InvalidInputError(f"the {study} study needs a checkpoint")
    M = config.stream.chunk_size
    if frames % M != 0 or frames < M * len(config.schedule.levels):
        raise InvalidInputError(f"frames must be a multiple of M={M} covering one window, got {frames}")
    seed_list = list(range(config.eval.refit_seed, config.eval.refit_seed + seeds))
    extra = {"no_adv": no_adv} if study == "distill" else {}
    result = _STUDY_FNS[study](config, main, baseline, seed_list, frames, **extra)
    get_audit_logger().log_event(
        "ablation", {"study": study, "p_value": result.p_value, "wins": result.wins, "passed": result.passed}
    )
    print(
        f"[Ablation] {study}: {result.labels[0]}={np.mean(result.a):.4f} vs {result.labels[1]}={np.mean(result.b):.4f}, "
        f"wins={result.wins}/{result.trials}, p={result.p_value:.4f}, passed={result.passed}"
    )
    return result
