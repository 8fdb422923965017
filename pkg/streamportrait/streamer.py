"""
Autoregressive micro-chunk streaming.

A window of N micro-chunks (M frames each) sits at ascending noise levels
t_1 < ... < t_N. Every step runs one denoiser pass over the whole window,
emits the t_1 chunk, renoises the surviving predictions one level down with
fresh noise and appends a pure-noise chunk for the next M driving motions.
"""

import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, List, Optional, Sequence

import numpy as np
import torch

from .audit_log import get_audit_logger
from .conditioning import motion_condition, motion_conditions
from .config import StreamConfig
from .errors import InvalidInputError
from .motionctl import interpolated_motions
from .nets import Denoiser, RefFeatures, denoise_window, encode_reference
from .schedule import DEFAULT_CODEC, CompactSchedule, NoiseSchedule
from .schemas import FRAME_SIZE, Frame, IdentityParams, MotionParams, TimingRecord
from .store.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .store.dataset import parse_motion_line, save_frame

logger = logging.getLogger(__name__)

STATE_KIND = "stream_state"
FRAME_SHAPE = (FRAME_SIZE, FRAME_SIZE)


# --------------------------------------------------------------------------- #
# Window types
# --------------------------------------------------------------------------- #

@dataclass
class MicroChunk:
    """
    M latent frames pinned to one compact level (1-based `level_index`).
    `passes` counts the denoiser passes the chunk has been through.
    """

    frames: torch.Tensor                 # (M, 3, H, W)
    level_index: int
    motions: List[MotionParams]
    passes: int = 0
    m_f: Optional[torch.Tensor] = field(default=None, repr=False)
    cond: Optional[torch.Tensor] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.frames.shape[0] != len(self.motions):
            raise InvalidInputError(
                f"chunk needs one motion per frame, got {self.frames.shape[0]} frames and {len(self.motions)} motions"
            )

    def __len__(self) -> int:
        return len(self.motions)


def make_chunk(
    frames: torch.Tensor,
    level_index: int,
    motions: Sequence[MotionParams],
    identity: IdentityParams,
    passes: int = 0,
) -> MicroChunk:
    m_f, cond = motion_conditions(motions, identity)
    return MicroChunk(frames=frames, level_index=level_index, motions=list(motions), passes=passes, m_f=m_f, cond=cond)


@dataclass
class DenoiseWindow:
    chunks: List[MicroChunk]

    def validate(self, N: int, M: int) -> "DenoiseWindow":
        if len(self.chunks) != N:
            raise InvalidInputError(f"window must hold N={N} chunks, got {len(self.chunks)}")
        if [c.level_index for c in self.chunks] != list(range(1, N + 1)):
            raise InvalidInputError(f"chunk levels must be 1..{N} ascending, got {self.level_indices!r}")
        if any(len(c) != M for c in self.chunks):
            raise InvalidInputError(f"every chunk must hold M={M} frames, got {[len(c) for c in self.chunks]!r}")
        return self

    @property
    def level_indices(self) -> List[int]:
        return [c.level_index for c in self.chunks]

    def latents(self) -> torch.Tensor:
        return torch.cat([c.frames for c in self.chunks])

    def motions(self) -> List[MotionParams]:
        return [m for c in self.chunks for m in c.motions]

    def timesteps(self, levels: Sequence[int]) -> List[int]:
        return [levels[c.level_index - 1] for c in self.chunks for _ in range(len(c))]

    def __len__(self) -> int:
        return sum(len(c) for c in self.chunks)


# --------------------------------------------------------------------------- #
# Keyframe bank
# --------------------------------------------------------------------------- #

@dataclass
class HistoryBank:
    """
    Paired reference features and motion embeddings. Entry 0 is the source
    reference and is never evicted; other entries leave first-in first-out.
    """

    capacity: int = 4
    history: List[RefFeatures] = field(default_factory=list)
    motion: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise InvalidInputError(f"bank capacity must be >= 1, got {self.capacity!r}")

    def __len__(self) -> int:
        return len(self.history)

    def reset(self, source: RefFeatures, m_f) -> None:
        self.history = [source]
        self.motion = [np.asarray(m_f, dtype=np.float64)]

    def distance(self, m_f) -> float:
        """min_i ||m_f - m_i||_2 over the motion bank."""
        if not self.motion:
            return math.inf
        m_f = np.asarray(m_f, dtype=np.float64)
        return float(min(np.linalg.norm(m_f - m) for m in self.motion))

    def add(self, h: RefFeatures, m_f) -> bool:
        if self.capacity < 2:
            return False
        if len(self.history) >= self.capacity:
            del self.history[1]
            del self.motion[1]
        self.history.append(h)
        self.motion.append(np.asarray(m_f, dtype=np.float64))
        return True


# --------------------------------------------------------------------------- #
# Stream state
# --------------------------------------------------------------------------- #

@dataclass
class StreamState:
    """Everything needed to continue a stream. The denoiser and schedule are attached, never serialized."""

    window: Optional[DenoiseWindow]
    bank: HistoryBank
    config: StreamConfig
    levels: tuple
    identity: IdentityParams
    generator: torch.Generator
    denoiser: Denoiser = field(repr=False)
    schedule: NoiseSchedule = field(repr=False)
    emitted_count: int = 0
    steps: int = 0
    warmup_steps: int = 0
    denoiser_calls: int = 0
    keyframes_added: int = 0
    pending: List[MotionParams] = field(default_factory=list)
    timing: List[TimingRecord] = field(default_factory=list, repr=False)
    # perf_counter of the latest emission (or of init); wall clock, never serialized
    last_emit_at: Optional[float] = field(default=None, repr=False)

    @property
    def M(self) -> int:
        return self.config.chunk_size

    @property
    def N(self) -> int:
        return len(self.levels)

    # ---------------- persistence ---------------- #

    def to_checkpoint(self) -> Checkpoint:
        if self.window is None:
            raise InvalidInputError("stream state is not initialized")
        tensors = {"rng": self.generator.get_state()}
        for k, chunk in enumerate(self.window.chunks):
            tensors[f"window.{k}.frames"] = chunk.frames
        for i, (h, m) in enumerate(zip(self.bank.history, self.bank.motion)):
            for j, s in enumerate(h.scales):
                tensors[f"bank.{i}.scale{j}"] = s
            tensors[f"bank.{i}.m_f"] = h.m_f
            tensors[f"bank.{i}.motion"] = torch.from_numpy(m.copy())
        config = self.config.model_dump()
        if math.isinf(config["tau"]):
            config["tau"] = "inf"
        meta = {
            "kind": STATE_KIND,
            "config": config,
            "levels": list(self.levels),
            "identity": self.identity.to_dict(),
            "chunks": [
                {"level_index": c.level_index, "passes": c.passes, "motions": [list(m.to_row()) for m in c.motions]}
                for c in self.window.chunks
            ],
            "bank_size": len(self.bank),
            "scales": len(self.bank.history[0].scales),
            "emitted_count": self.emitted_count,
            "steps": self.steps,
            "warmup_steps": self.warmup_steps,
            "denoiser_calls": self.denoiser_calls,
            "keyframes_added": self.keyframes_added,
            "pending": [list(m.to_row()) for m in self.pending],
        }
        return Checkpoint(stage=0, tensors=tensors, meta=meta)

    def save(self, path) -> Path:
        return save_checkpoint(path, self.to_checkpoint())

    @classmethod
    def from_checkpoint(
        cls,
        ckpt: Checkpoint,
        denoiser: Denoiser,
        schedule: Optional[NoiseSchedule] = None,
    ) -> "StreamState":
        meta = ckpt.meta
        if meta.get("kind") != STATE_KIND:
            raise InvalidInputError(f"container kind must be {STATE_KIND!r}, got {meta.get('kind')!r}")
        config = StreamConfig.model_validate(meta["config"])
        identity = IdentityParams.from_dict(meta["identity"])
        chunks = [
            make_chunk(
                ckpt.tensors[f"window.{k}.frames"],
                c["level_index"],
                [MotionParams.from_row(r) for r in c["motions"]],
                identity,
                passes=c["passes"],
            )
            for k, c in enumerate(meta["chunks"])
        ]
        bank = HistoryBank(capacity=config.bank_capacity)
        for i in range(meta["bank_size"]):
            scales = [ckpt.tensors[f"bank.{i}.scale{j}"] for j in range(meta["scales"])]
            bank.history.append(RefFeatures(scales=scales, m_f=ckpt.tensors[f"bank.{i}.m_f"]))
            bank.motion.append(ckpt.tensors[f"bank.{i}.motion"].numpy())
        generator = torch.Generator()
        generator.set_state(ckpt.tensors["rng"])
        levels = tuple(meta["levels"])
        state = cls(
            window=DenoiseWindow(chunks).validate(len(levels), config.chunk_size),
            bank=bank,
            config=config,
            levels=levels,
            identity=identity,
            generator=generator,
            denoiser=denoiser,
            schedule=schedule or NoiseSchedule(),
            emitted_count=meta["emitted_count"],
            steps=meta["steps"],
            warmup_steps=meta["warmup_steps"],
            denoiser_calls=meta["denoiser_calls"],
            keyframes_added=meta.get("keyframes_added", 0),
            pending=[MotionParams.from_row(r) for r in meta["pending"]],
        )
        return state

    @classmethod
    def load(cls, path, denoiser: Denoiser, schedule: Optional[NoiseSchedule] = None) -> "StreamState":
        return cls.from_checkpoint(load_checkpoint(path, expected_stage=0), denoiser, schedule)


# --------------------------------------------------------------------------- #
# Engine
# --------------------------------------------------------------------------- #

def _check_compatible(denoiser: Denoiser, config: StreamConfig, compact: CompactSchedule) -> None:
    dc = denoiser.config
    window = config.chunk_size * compact.N
    if window > dc.max_window_frames:
        raise InvalidInputError(
            f"window of M*N={window} frames must fit the denoiser's max_window_frames={dc.max_window_frames}"
        )
    if config.bank_capacity > dc.max_refs:
        raise InvalidInputError(
            f"bank_capacity must be <= the denoiser's max_refs={dc.max_refs}, got {config.bank_capacity}"
        )
    if dc.temporal_attention and dc.temporal_mode == "chunk-causal" and dc.chunk_size != config.chunk_size:
        raise InvalidInputError(
            f"stream chunk_size must match the chunk-causal denoiser's chunk_size={dc.chunk_size}, got {config.chunk_size}"
        )


def _noise(shape, generator: torch.Generator) -> torch.Tensor:
    return torch.randn(shape, generator=generator)


def _check_motions(motions: Sequence[MotionParams], expected: int, what: str) -> List[MotionParams]:
    motions = list(motions)
    if len(motions) != expected:
        raise InvalidInputError(f"{what} must supply exactly {expected} motions, got {len(motions)}")
    for m in motions:
        m.validate()
    return motions


@torch.no_grad()
def init_stream(
    reference: Frame,
    source_motion: MotionParams,
    first_driving: MotionParams,
    denoiser: Denoiser,
    config: StreamConfig,
    *,
    identity: IdentityParams,
    compact: Optional[CompactSchedule] = None,
    schedule: Optional[NoiseSchedule] = None,
) -> StreamState:
    """
    Build W_0 and the banks.

    mii   : every frame holds forward_noise(z_ref, fresh eps, t_n) for its chunk's
            level (the t_1 = 0 chunk is the clean reference); frame i is conditioned
            on interpolate_motion(source, first_driving, omega_i).
    noise : pure Gaussian latents, every frame conditioned on `first_driving`.
    """
    compact = compact or CompactSchedule()
    schedule = schedule or NoiseSchedule()
    _check_compatible(denoiser, config, compact)
    source_motion.validate()
    first_driving.validate()
    M, N = config.chunk_size, compact.N
    generator = torch.Generator().manual_seed(config.seed)

    z_ref = DEFAULT_CODEC.encode(reference)
    if config.init_mode == "mii":
        motions = interpolated_motions(source_motion, first_driving, M, N)
    else:
        motions = [first_driving] * (M * N)

    chunks = []
    for n in range(1, N + 1):
        eps = _noise((M,) + tuple(z_ref.shape), generator)
        if config.init_mode == "mii":
            frames = schedule.forward_noise(z_ref.expand(M, -1, -1, -1), eps, compact.levels[n - 1])
        else:
            frames = eps
        chunks.append(make_chunk(frames, n, motions[(n - 1) * M : n * M], identity))

    source_mf, _ = motion_condition(source_motion, identity)
    bank = HistoryBank(capacity=config.bank_capacity)
    bank.reset(encode_reference(reference, denoiser, m_f=source_mf), source_mf.numpy())

    logger.debug("stream initialized: M=%d N=%d init_mode=%s", M, N, config.init_mode)
    return StreamState(
        window=DenoiseWindow(chunks).validate(N, M),
        bank=bank,
        config=config,
        levels=compact.levels,
        identity=identity,
        generator=generator,
        denoiser=denoiser,
        schedule=schedule,
        warmup_steps=N,
        last_emit_at=time.perf_counter(),
    )


@torch.no_grad()
def maybe_add_keyframe(state: StreamState, frame: Frame, m_f) -> bool:
    """Insert (encode_reference(frame), m_f) when min_i ||m_f - m_i||_2 > tau."""
    d = state.bank.distance(m_f)
    if not d > state.config.tau:
        return False
    m_f = np.asarray(m_f, dtype=np.float64)
    h = encode_reference(frame, state.denoiser, m_f=m_f)
    added = state.bank.add(h, m_f)
    if added:
        state.keyframes_added += 1
        get_audit_logger().log_event(
            "keyframe_added",
            {"step": state.steps, "distance": d, "bank_size": len(state.bank)},
        )
    return added


@torch.no_grad()
def stream_step(state: StreamState, next_chunk_motions: Sequence[MotionParams]) -> List[Frame]:
    """
    One window pass: emit the t_1 chunk, slide the survivors down one level
    with fresh noise, append a pure-noise chunk for `next_chunk_motions`.
    """
    if state is None or state.window is None:
        raise InvalidInputError("stream state is not initialized")
    M, N, levels = state.M, state.N, state.levels
    motions = _check_motions(next_chunk_motions, M, "stream_step")
    t_start = time.perf_counter()

    window = state.window
    preds = denoise_window(
        list(window.latents()),
        window.timesteps(levels),
        state.bank.history,
        list(torch.cat([c.m_f for c in window.chunks])),
        list(torch.cat([c.cond for c in window.chunks])),
        state.denoiser,
        chunk_size=M,
    )
    state.denoiser_calls += 1
    pred = torch.stack(preds).cpu()

    head = window.chunks[0]
    emitted = [DEFAULT_CODEC.to_frame(p) for p in pred[:M]]

    survivors = []
    for k in range(1, N):
        chunk = window.chunks[k]
        z0_hat = pred[k * M : (k + 1) * M]
        renoised = state.schedule.renoise(z0_hat, _noise(z0_hat.shape, state.generator), levels[k - 1])
        survivors.append(
            MicroChunk(renoised, k, chunk.motions, passes=chunk.passes + 1, m_f=chunk.m_f, cond=chunk.cond)
        )
    fresh = make_chunk(_noise(head.frames.shape, state.generator), N, motions, state.identity)
    state.window = DenoiseWindow(survivors + [fresh])

    state.emitted_count += M
    state.steps += 1
    if state.steps > state.warmup_steps or state.config.hkm_during_warmup:
        maybe_add_keyframe(state, emitted[0], head.m_f[0].numpy())

    # latency runs emission to emission, so it also covers work done between steps
    now = time.perf_counter()
    since = state.last_emit_at if state.last_emit_at is not None else t_start
    state.last_emit_at = now
    wall_ms = (now - since) * 1000.0
    record = TimingRecord(
        step=state.steps,
        wall_ms=wall_ms,
        emitted_count=state.emitted_count,
        bank_size=len(state.bank),
        frame_evals=M * N,
    )
    state.timing.append(record)
    get_audit_logger().log_event(
        "stream_step",
        {"step": state.steps, "wall_ms": wall_ms, "emitted": state.emitted_count, "bank_size": len(state.bank)},
    )
    return emitted


def feed_motion(state: StreamState, motion: MotionParams) -> List[Frame]:
    """Queue one driving motion; run a step (and return its frames) once M are pending."""
    if state is None or state.window is None:
        raise InvalidInputError("stream state is not initialized")
    state.pending.append(motion.validate())
    if len(state.pending) < state.M:
        return []
    chunk, state.pending = state.pending[: state.M], state.pending[state.M :]
    return stream_step(state, chunk)


@dataclass
class RunResult:
    frames: List[Frame]
    motions: List[MotionParams]        # conditioning motion of each emitted frame
    timing: List[TimingRecord]
    passes: List[int]                  # denoiser passes of each emitted chunk
    init_ms: float
    total_ms: float                    # wall time of the whole run, init included
    state: StreamState = field(repr=False)


def run_stream(
    reference: Frame,
    motions: Sequence[MotionParams],
    denoiser: Denoiser,
    config: StreamConfig,
    *,
    identity: IdentityParams,
    source_motion: MotionParams,
    compact: Optional[CompactSchedule] = None,
    schedule: Optional[NoiseSchedule] = None,
) -> RunResult:
    """
    init_stream with motions[0] as the first driving motion, then S/M steps.
    The first N*M emitted frames are the warm-up transition out of the reference.
    """
    motions = list(motions)
    M = config.chunk_size
    if not motions or len(motions) % M != 0:
        raise InvalidInputError(f"driving sequence length must be a positive multiple of M={M}, got {len(motions)}")
    t0 = time.perf_counter()
    state = init_stream(
        reference, source_motion, motions[0], denoiser, config,
        identity=identity, compact=compact, schedule=schedule,
    )
    init_ms = (state.last_emit_at - t0) * 1000.0

    frames: List[Frame] = []
    emitted_motions: List[MotionParams] = []
    passes: List[int] = []
    for i in range(len(motions) // M):
        head = state.window.chunks[0]
        emitted_motions.extend(head.motions)
        frames.extend(stream_step(state, motions[i * M : (i + 1) * M]))
        passes.append(head.passes + 1)
    total_ms = (time.perf_counter() - t0) * 1000.0
    return RunResult(
        frames=frames,
        motions=emitted_motions,
        timing=list(state.timing),
        passes=passes,
        init_ms=init_ms,
        total_ms=total_ms,
        state=state,
    )


# --------------------------------------------------------------------------- #
# Non-streaming baselines
# --------------------------------------------------------------------------- #

def _window_refs(reference: Frame, source_motion: MotionParams, identity: IdentityParams, denoiser: Denoiser):
    source_mf, _ = motion_condition(source_motion, identity)
    return [encode_reference(reference, denoiser, m_f=source_mf)]


@torch.no_grad()
def generate_chunkwise(
    reference: Frame,
    motions: Sequence[MotionParams],
    denoiser: Denoiser,
    config: StreamConfig,
    *,
    identity: IdentityParams,
    source_motion: MotionParams,
    compact: Optional[CompactSchedule] = None,
    schedule: Optional[NoiseSchedule] = None,
    initial_noise: Optional[torch.Tensor] = None,
) -> List[Frame]:
    """
    Uniform-level baseline: all MN frames start at t_N and descend the compact
    schedule together, one window pass per level, decoded only at the end.
    """
    compact = compact or CompactSchedule(allow_single=True)
    schedule = schedule or NoiseSchedule()
    M, N = config.chunk_size, compact.N
    motions = _check_motions(motions, M * N, "generate_chunkwise")
    generator = torch.Generator().manual_seed(config.seed)
    refs = _window_refs(reference, source_motion, identity, denoiser)
    m_f, cond = motion_conditions(motions, identity)

    z = initial_noise if initial_noise is not None else _noise((M * N, 3) + FRAME_SHAPE, generator)
    levels = compact.descending()
    pred = z
    for i, level in enumerate(levels):
        pred = torch.stack(
            denoise_window(list(z), [level] * (M * N), refs, list(m_f), list(cond), denoiser, chunk_size=M)
        ).cpu()
        if i + 1 < len(levels):
            z = schedule.renoise(pred, _noise(pred.shape, generator), levels[i + 1])
    return [DEFAULT_CODEC.to_frame(p) for p in pred]


@torch.no_grad()
def sample_uniform_ddim(
    reference: Frame,
    motions: Sequence[MotionParams],
    denoiser: Denoiser,
    *,
    identity: IdentityParams,
    source_motion: MotionParams,
    steps: int = 50,
    schedule: Optional[NoiseSchedule] = None,
    seed: int = 0,
    initial_noise: Optional[torch.Tensor] = None,
) -> List[Frame]:
    """
    Deterministic DDIM over `steps` uniformly spaced timesteps in x0 form:
    eps is recovered from z_hat_0 and both are recombined at the next timestep.
    """
    schedule = schedule or NoiseSchedule()
    motions = list(motions)
    if not motions:
        raise InvalidInputError("sample_uniform_ddim needs at least one motion")
    generator = torch.Generator().manual_seed(seed)
    refs = _window_refs(reference, source_motion, identity, denoiser)
    m_f, cond = motion_conditions(motions, identity)
    F_ = len(motions)

    z = initial_noise if initial_noise is not None else _noise((F_, 3) + FRAME_SHAPE, generator)
    ts = schedule.uniform_timesteps(steps)
    x0 = z
    for i, t in enumerate(ts):
        x0 = torch.stack(denoise_window(list(z), [t] * F_, refs, list(m_f), list(cond), denoiser, chunk_size=F_)).cpu()
        t_next = ts[i + 1] if i + 1 < len(ts) else 0
        if t_next > 0:
            eps = schedule.convert_parameterization(z, x0, t, "x0_to_eps")
            z = schedule.forward_noise(x0, eps, t_next)
    return [DEFAULT_CODEC.to_frame(p) for p in x0]


# --------------------------------------------------------------------------- #
# Motion input and frame output
# --------------------------------------------------------------------------- #

def iter_motions(lines: Iterable[str]) -> Iterator[MotionParams]:
    """Motions from params.csv-style rows; comments, blanks and the header are skipped."""
    for line in lines:
        motion = parse_motion_line(line)
        if motion is not None:
            yield motion


class FrameSink:
    """
    Emitted-frame writer: numbered PNGs in a directory (`frames`) or raw
    H x W x 3 uint8 frames concatenated on a byte stream (`raw`).
    """

    def __init__(self, mode: str, out_dir: Optional[str] = None, stream: Optional[BinaryIO] = None) -> None:
        if mode not in ("frames", "raw"):
            raise InvalidInputError(f"output mode must be 'frames' or 'raw', got {mode!r}")
        if mode == "frames" and out_dir is None:
            raise InvalidInputError("frames output needs a directory")
        self.mode = mode
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.stream = stream
        self.count = 0
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)

    def write(self, frames: Iterable[Frame]) -> None:
        for frame in frames:
            if self.mode == "frames":
                save_frame(self.out_dir / f"frame_{self.count:06d}.png", frame)
            else:
                target = self.stream or sys.stdout.buffer
                target.write(np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8).tobytes())
                target.flush()
            self.count += 1

