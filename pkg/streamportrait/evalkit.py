"""
Metrics and the latency benchmark.

Motion accuracy uses renderer inversion: each generated frame is refit to the
motion parameters whose render matches it best, then compared with the
driving motion in unit-normalized parameter space.
"""

import logging
import math
import time
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from scipy.optimize import minimize
from skimage.color import rgb2hsv
from skimage.metrics import structural_similarity

from .audit_log import get_audit_logger
from .config import StreamConfig
from .errors import InvalidInputError
from .nets import Denoiser, PerceptualNet, default_perceptual_net, perceptual_distance
from .schedule import CompactSchedule, NoiseSchedule
from .schemas import MOTION_RANGES, BenchReport, Frame, IdentityParams, MetricReport, MotionParams, TimingRecord
from .streamer import generate_chunkwise, run_stream
from .toyface import BACKGROUND, HEAD_RX, HEAD_RY, PIXEL, render, torso_mask
from .utils import percentile

logger = logging.getLogger(__name__)

SSIM_WINDOW = 7
SSIM_SIGMA = 1.5
TLP_SCALE = 1e3
HUE_BINS = 8
POSE_FIELDS = slice(0, 4)
EXPR_FIELDS = slice(4, 9)
# summed squared pixel error below which a refit counts as an exact match
REFIT_FLOOR = 5e-3
REFIT_ROLLS = 7
REFIT_RUN_EVALS = 600


def _check_pair(generated: Sequence[Frame], target: Sequence[Frame]) -> None:
    if len(generated) != len(target):
        raise InvalidInputError(f"generated and target must have equal length, got {len(generated)} and {len(target)}")
    for g, t in zip(generated, target):
        if np.shape(g) != np.shape(t):
            raise InvalidInputError(f"frame shapes must match, got {np.shape(g)} and {np.shape(t)}")


# --------------------------------------------------------------------------- #
# Reconstruction metrics
# --------------------------------------------------------------------------- #

def ssim(a: Frame, b: Frame) -> float:
    """Gaussian-weighted SSIM (sigma 1.5, 7-pixel window, K1=0.01, K2=0.03) over RGB."""
    return float(
        structural_similarity(
            np.asarray(a, dtype=np.float64),
            np.asarray(b, dtype=np.float64),
            win_size=SSIM_WINDOW,
            gaussian_weights=True,
            sigma=SSIM_SIGMA,
            use_sample_covariance=False,
            data_range=1.0,
            channel_axis=-1,
        )
    )


def frame_metrics(generated: Sequence[Frame], target: Sequence[Frame]) -> Tuple[List[float], List[float]]:
    """Per-frame (mean absolute difference, SSIM) series."""
    _check_pair(generated, target)
    l1 = [
        float(np.mean(np.abs(np.asarray(g, np.float64) - np.asarray(t, np.float64))))
        for g, t in zip(generated, target)
    ]
    return l1, [ssim(g, t) for g, t in zip(generated, target)]


def tlp_proxy(generated: Sequence[Frame], target: Sequence[Frame], net: Optional[PerceptualNet] = None) -> float:
    """mean_t | d(gen_t, gen_t+1) - d(tgt_t, tgt_t+1) |, scaled by 1e3."""
    _check_pair(generated, target)
    if len(generated) < 2:
        raise InvalidInputError(f"tlp_proxy needs at least 2 frames, got {len(generated)}")
    net = net or default_perceptual_net()
    diffs = [
        abs(
            perceptual_distance(generated[i], generated[i + 1], net)
            - perceptual_distance(target[i], target[i + 1], net)
        )
        for i in range(len(generated) - 1)
    ]
    return float(np.mean(diffs)) * TLP_SCALE


# --------------------------------------------------------------------------- #
# Motion refitting
# --------------------------------------------------------------------------- #

class _RenderBudget(Exception):
    pass


def _to_unit(value: float, field: int) -> float:
    lo, hi = MOTION_RANGES[field]
    return float(np.clip((value - lo) / (hi - lo), 0.0, 1.0))


def silhouette_guess(frame: Frame, identity: IdentityParams) -> np.ndarray:
    """
    Unit-space motion guess from the visible head above the torso band:
    centroid for translation, area for scale, neutral roll and expression.
    Occlusion by the torso biases it; it only seeds the search.
    """
    img = np.asarray(frame, dtype=np.float64)
    visible = ~torso_mask() & (np.max(np.abs(img - BACKGROUND), axis=-1) > 0.05)
    u = MotionParams.neutral().to_unit()
    if not visible.any():
        return u
    ys, xs = np.nonzero(visible)
    area = visible.sum() * PIXEL**2
    u[1] = _to_unit((xs.mean() + 0.5) * PIXEL - 1.0, 1)
    u[2] = _to_unit(1.0 - (ys.mean() + 0.5) * PIXEL, 2)
    u[3] = _to_unit(math.sqrt(area / (math.pi * HEAD_RX * identity.face_aspect * HEAD_RY)), 3)
    return u


def refit_motion(
    frame: Frame,
    identity: IdentityParams,
    *,
    budget: int = 4000,
    starts: int = 24,
    seed: int = 0,
) -> MotionParams:
    """
    Invert the renderer: the motion whose render is closest to `frame` in pixel L2.

    Search runs in unit-normalized parameter space. Starting points are the
    neutral motion, the silhouette guess over a grid of rolls and `starts`
    seeded random points; each is refined with bounded Powell (coordinate
    directions first) in order of render error. While the best render is above
    REFIT_FLOOR and renders remain, the search restarts by cycling through the
    best point itself, a perturbation of it, and a fresh random point.
    """
    target = np.asarray(frame, dtype=np.float64)
    rng = np.random.default_rng(seed)
    best = {"u": None, "f": math.inf}
    used = [0]

    def objective(u: np.ndarray) -> float:
        if used[0] >= budget:
            raise _RenderBudget()
        used[0] += 1
        u = np.clip(u, 0.0, 1.0)
        f = float(np.sum((render(identity, MotionParams.from_unit(u)).astype(np.float64) - target) ** 2))
        if f < best["f"]:
            best["u"], best["f"] = u.copy(), f
        return f

    guess = silhouette_guess(frame, identity)
    candidates = [MotionParams.neutral().to_unit()]
    for roll in np.linspace(0.0, 1.0, REFIT_ROLLS):
        u = guess.copy()
        u[0] = roll
        candidates.append(u)
    candidates += [rng.uniform(0.0, 1.0, 9) for _ in range(starts)]

    try:
        scored = sorted((objective(u), i) for i, u in enumerate(candidates))
        queue = [candidates[i] for _, i in scored]
        restarts = 0
        while best["f"] > REFIT_FLOOR:
            if queue:
                u0 = queue.pop(0)
            else:
                kind = restarts % 3
                if kind == 0:
                    u0 = best["u"].copy()
                elif kind == 1:
                    u0 = np.clip(best["u"] + rng.normal(0.0, 0.1, 9), 0.0, 1.0)
                else:
                    u0 = rng.uniform(0.0, 1.0, 9)
                restarts += 1
            minimize(
                objective,
                u0,
                method="Powell",
                bounds=[(0.0, 1.0)] * 9,
                options={"maxfev": min(REFIT_RUN_EVALS, budget - used[0]), "xtol": 1e-4, "ftol": 1e-10},
            )
    except _RenderBudget:
        pass
    logger.debug("refit: %d renders, best error %.4g", used[0], best["f"])
    return MotionParams.from_unit(best["u"])


def motion_accuracy(
    generated: Sequence[Frame],
    driving: Sequence[MotionParams],
    identity: IdentityParams,
    *,
    budget: int = 4000,
    seed: int = 0,
) -> Tuple[float, float]:
    """(AED, APD): mean L1 of refit vs driving, expression and pose fields, unit-normalized."""
    if len(generated) != len(driving):
        raise InvalidInputError(f"generated and driving must have equal length, got {len(generated)} and {len(driving)}")
    if not generated:
        raise InvalidInputError("motion_accuracy needs at least one frame")
    aed, apd = [], []
    for frame, motion in zip(generated, driving):
        err = np.abs(refit_motion(frame, identity, budget=budget, seed=seed).to_unit() - motion.to_unit())
        aed.append(float(err[EXPR_FIELDS].mean()))
        apd.append(float(err[POSE_FIELDS].mean()))
    return float(np.mean(aed)), float(np.mean(apd))


# --------------------------------------------------------------------------- #
# Identity drift
# --------------------------------------------------------------------------- #

def identity_statistic(frame: Frame) -> np.ndarray:
    """Mean torso-band color (3) followed by the normalized 8-bin hue histogram of head pixels."""
    img = np.asarray(frame, dtype=np.float64)
    torso = torso_mask()
    torso_mean = img[torso].mean(axis=0)
    upper = img[~torso]
    head = upper[np.max(np.abs(upper - BACKGROUND), axis=-1) > 0.05]
    hist = np.zeros(HUE_BINS)
    if len(head):
        hue = rgb2hsv(head[None])[0, :, 0]
        hist, _ = np.histogram(hue, bins=HUE_BINS, range=(0.0, 1.0))
        hist = hist / hist.sum()
    return np.concatenate([torso_mean, hist])


def id_drift(generated: Sequence[Frame], min_frames: int = 20) -> float:
    """
    L1 between the identity statistic averaged over the first and the last 10%
    of frames. The sequence is its own anchor: no reference frame enters.
    """
    if len(generated) < min_frames:
        raise InvalidInputError(f"id_drift needs at least {min_frames} frames, got {len(generated)}")
    k = max(1, len(generated) // 10)
    stats = np.stack([identity_statistic(f) for f in generated])
    return float(np.abs(stats[:k].mean(axis=0) - stats[-k:].mean(axis=0)).sum())


def evaluate(
    generated: Sequence[Frame],
    target: Sequence[Frame],
    driving: Sequence[MotionParams],
    identity: IdentityParams,
    *,
    refit_budget: int = 4000,
    refit_seed: int = 0,
) -> MetricReport:
    l1, ssim_series = frame_metrics(generated, target)
    aed, apd = motion_accuracy(generated, driving, identity, budget=refit_budget, seed=refit_seed)
    drift = id_drift(generated) if len(generated) >= 20 else 0.0
    return MetricReport(
        l1=float(np.mean(l1)),
        ssim=float(np.mean(ssim_series)),
        tlp_proxy=tlp_proxy(generated, target),
        aed=aed,
        apd=apd,
        id_drift=drift,
        series={"l1": l1, "ssim": ssim_series},
    )


# --------------------------------------------------------------------------- #
# Latency
# --------------------------------------------------------------------------- #

def bench_latency(
    timing: Sequence[TimingRecord],
    *,
    mode: str,
    init_ms: float = 0.0,
    total_ms: Optional[float] = None,
) -> BenchReport:
    """
    Summarize a timing log. Each record is one emission event; its wall time is
    the latency since the previous emission, or since init for the first one
    (for the chunk-wise baseline, the time to the full window).

    `total_ms` is the independently measured wall time of the whole run. It must
    cover init plus every latency; what is left over lands in `untimed_ms`.
    Without it the run is taken to end at the last emission.
    """
    timing = list(timing)
    if not timing:
        raise InvalidInputError("timing log is empty")
    if mode not in ("streaming", "chunkwise"):
        raise InvalidInputError(f"mode must be 'streaming' or 'chunkwise', got {mode!r}")
    latencies = [r.wall_ms for r in timing]
    accounted_ms = init_ms + sum(latencies)
    if total_ms is None:
        total_ms = accounted_ms
    elif total_ms < accounted_ms - 1e-3:
        raise InvalidInputError(
            f"total_ms must cover init plus every emission latency ({accounted_ms:.3f} ms), got {total_ms!r}"
        )
    total_s = total_ms / 1000.0
    frames = timing[-1].emitted_count
    evals = sum(r.frame_evals for r in timing)
    return BenchReport(
        mode=mode,
        fps=frames / total_s if total_s > 0 else math.inf,
        inter_chunk_latency_ms=float(np.mean(latencies)),
        inter_chunk_latency_p95_ms=percentile(latencies, 95),
        denoiser_calls_per_frame=evals / frames,
        frames=frames,
        total_seconds=total_s,
        first_emission_ms=init_ms + latencies[0],
        emission_events=len(timing),
        init_ms=init_ms,
        untimed_ms=max(0.0, total_ms - accounted_ms),
    )


def run_chunkwise_timed(
    reference: Frame,
    motions: Sequence[MotionParams],
    denoiser: Denoiser,
    config: StreamConfig,
    *,
    identity: IdentityParams,
    source_motion: MotionParams,
    compact: Optional[CompactSchedule] = None,
    schedule: Optional[NoiseSchedule] = None,
) -> Tuple[List[Frame], List[TimingRecord]]:
    compact = compact or CompactSchedule()
    t0 = time.perf_counter()
    frames = generate_chunkwise(
        reference, motions, denoiser, config,
        identity=identity, source_motion=source_motion, compact=compact, schedule=schedule,
    )
    wall_ms = (time.perf_counter() - t0) * 1000.0
    record = TimingRecord(
        step=1, wall_ms=wall_ms, emitted_count=len(frames), bank_size=1, frame_evals=len(frames) * compact.N
    )
    return frames, [record]


@torch.no_grad()
def bench(
    mode: str,
    reference: Frame,
    motions: Sequence[MotionParams],
    denoiser: Denoiser,
    config: StreamConfig,
    *,
    identity: IdentityParams,
    source_motion: MotionParams,
    compact: Optional[CompactSchedule] = None,
    schedule: Optional[NoiseSchedule] = None,
) -> BenchReport:
    """Time the streaming engine over `motions`, or the chunk-wise baseline over its first M*N."""
    compact = compact or CompactSchedule()
    kwargs = dict(identity=identity, source_motion=source_motion, compact=compact, schedule=schedule)
    if mode == "streaming":
        result = run_stream(reference, motions, denoiser, config, **kwargs)
        report = bench_latency(result.timing, mode=mode, init_ms=result.init_ms, total_ms=result.total_ms)
    elif mode == "chunkwise":
        window = config.chunk_size * compact.N
        if len(motions) < window:
            raise InvalidInputError(f"chunk-wise bench needs at least M*N={window} motions, got {len(motions)}")
        _, timing = run_chunkwise_timed(reference, list(motions)[:window], denoiser, config, **kwargs)
        report = bench_latency(timing, mode=mode)
    else:
        raise InvalidInputError(f"mode must be 'streaming' or 'chunkwise', got {mode!r}")
    get_audit_logger().log_event(
        "bench_report", {"mode": mode, "fps": report.fps, "latency_ms": report.inter_chunk_latency_ms}
    )
    logger.info("%s bench: %.2f fps, %.2f ms/chunk", mode, report.fps, report.inter_chunk_latency_ms)
    return report
