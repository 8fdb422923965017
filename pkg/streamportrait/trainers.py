"""
The three training stages.

Stage 1: image-level hybrid-motion training (x0-form denoising loss).
Stage 2: fewer-step appearance distillation; gradients flow only through the
         final sampler step; MSE + perceptual + hinge-adversarial loss.
Stage 3: sliding training; windows advance over the model's own renoised
         predictions and only temporal-attention parameters are updated.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import torch
import torch.nn.functional as F
from tqdm import tqdm

from .audit_log import get_audit_logger
from .conditioning import motion_conditions
from .config import Config, TrainConfig, config_hash, dump_config
from .errors import DatasetError, InvalidInputError
from .nets import Denoiser, Discriminator, PerceptualNet, build_denoiser, encode_reference, stack_refs
from .run_logger import RunLogger
from .schedule import DEFAULT_CODEC, CompactSchedule, NoiseSchedule, make_schedule
from .schemas import Clip, LossReport
from .store.checkpoint import Checkpoint, require_stage
from .store.dataset import DatasetRepository
from .utils import library_versions, seed_everything

logger = logging.getLogger(__name__)

StepCallback = Callable[[int, LossReport], None]
DatasetLike = Union[DatasetRepository, str, Path, Sequence[Clip]]


# --------------------------------------------------------------------------- #
# Data
# --------------------------------------------------------------------------- #

@dataclass
class PairBatch:
    """
    Image-level examples: a reference frame and a driving frame of the same clip.

    ref    : (B, 3, H, W) clean reference latents
    ref_mf : (B, 5)
    z0     : (B, F, 3, H, W) clean driving latents (F = 1 for pairs, S for sequences)
    m_f    : (B, F, 5)
    cond   : (B, F, K, H, W)
    """

    ref: torch.Tensor
    ref_mf: torch.Tensor
    z0: torch.Tensor
    m_f: torch.Tensor
    cond: torch.Tensor

    def to(self, device) -> "PairBatch":
        return PairBatch(*(getattr(self, k).to(device) for k in ("ref", "ref_mf", "z0", "m_f", "cond")))


class ClipDataset:
    """Training clips with seeded sampling of frame pairs and frame sequences."""

    def __init__(self, clips: Sequence[Clip]) -> None:
        self.clips = list(clips)
        if not self.clips:
            raise DatasetError("training dataset is empty")

    def __len__(self) -> int:
        return len(self.clips)

    def __getitem__(self, i: int) -> Clip:
        return self.clips[i]

    def _randint(self, high: int, generator: torch.Generator) -> int:
        return int(torch.randint(0, high, (1,), generator=generator))

    def _example(self, clip: Clip, ref_idx: int, frame_ids: Sequence[int]):
        ref = DEFAULT_CODEC.encode(clip.frames[ref_idx])
        ref_mf = torch.tensor(clip.motions[ref_idx].expr, dtype=torch.float32)
        z0 = torch.stack([DEFAULT_CODEC.encode(clip.frames[i]) for i in frame_ids])
        m_f, cond = motion_conditions([clip.motions[i] for i in frame_ids], clip.identity)
        return ref, ref_mf, z0, m_f, cond

    @staticmethod
    def _collate(examples) -> PairBatch:
        return PairBatch(*(torch.stack(parts) for parts in zip(*examples)))

    def sample_pairs(self, batch_size: int, generator: torch.Generator) -> PairBatch:
        examples = []
        for _ in range(batch_size):
            clip = self.clips[self._randint(len(self.clips), generator)]
            ref_idx = self._randint(len(clip), generator)
            drv_idx = self._randint(len(clip), generator)
            examples.append(self._example(clip, ref_idx, [drv_idx]))
        return self._collate(examples)

    def sample_sequences(self, batch_size: int, seq_len: int, generator: torch.Generator) -> PairBatch:
        examples = []
        for _ in range(batch_size):
            clip = self.clips[self._randint(len(self.clips), generator)]
            if len(clip) < seq_len:
                raise InvalidInputError(f"clips must have >= seq_len={seq_len} frames, got {len(clip)}")
            start = self._randint(len(clip) - seq_len + 1, generator)
            ref_idx = self._randint(len(clip), generator)
            examples.append(self._example(clip, ref_idx, range(start, start + seq_len)))
        return self._collate(examples)


def load_training_clips(dataset: DatasetLike, split: str = "train") -> List[Clip]:
    if isinstance(dataset, (str, Path)):
        dataset = DatasetRepository(str(dataset))
    if isinstance(dataset, DatasetRepository):
        return dataset.load_split(split)
    clips = list(dataset)
    if not clips:
        raise DatasetError("training dataset is empty")
    return clips


# --------------------------------------------------------------------------- #
# Models and checkpoints
# --------------------------------------------------------------------------- #

@dataclass
class ModelBundle:
    denoiser: Denoiser
    disc: Optional[Discriminator]
    perceptual: PerceptualNet
    schedule: NoiseSchedule
    compact: CompactSchedule


def build_models(config: Config, chunk_size: Optional[int] = None, with_disc: bool = True) -> ModelBundle:
    schedule = make_schedule(config.schedule)
    denoiser = build_denoiser(config.model, chunk_size or config.train.chunk_size, schedule)
    disc = None
    if with_disc:
        torch.manual_seed(config.model.seed + 1)
        disc = Discriminator()
    device = torch.device(config.model.device)
    return ModelBundle(
        denoiser=denoiser.to(device),
        disc=disc.to(device) if disc is not None else None,
        perceptual=PerceptualNet(config.model.perceptual_seed).to(device),
        schedule=schedule,
        compact=CompactSchedule.from_config(config.schedule),
    )


def models_from_checkpoint(checkpoint: Checkpoint, config: Config, chunk_size: Optional[int] = None) -> ModelBundle:
    """Rebuild the models of `config` and load the checkpoint's tensors into them (shape-checked)."""
    has_disc = any(k.startswith("disc.") for k in checkpoint.tensors)
    models = build_models(config, chunk_size, with_disc=True)
    checkpoint.load_into("denoiser", models.denoiser)
    if has_disc:
        checkpoint.load_into("disc", models.disc)
    return models


def make_checkpoint(stage: int, models: ModelBundle, config: Config, **extra) -> Checkpoint:
    ckpt = Checkpoint(stage=stage)
    ckpt.add_state_dict("denoiser", models.denoiser.state_dict())
    if models.disc is not None and stage >= 2:
        ckpt.add_state_dict("disc", models.disc.state_dict())
    ckpt.meta = {
        "config": dump_config(config),
        "config_hash": config_hash(config),
        "seeds": {"model": config.model.seed, "train": config.train.seed, "perceptual": config.model.perceptual_seed},
        "build": library_versions(),
        **extra,
    }
    return ckpt


# --------------------------------------------------------------------------- #
# Losses
# --------------------------------------------------------------------------- #

def _flat(x: torch.Tensor) -> torch.Tensor:
    return x.reshape(-1, *x.shape[-3:])


def distill_loss(
    x_hat: torch.Tensor,
    target: torch.Tensor,
    config: TrainConfig,
    models: ModelBundle,
) -> Tuple[torch.Tensor, LossReport]:
    """
    MSE + lambda_lpips * perceptual + lambda_adv * (-mean D(x_hat)) on decoded frames.
    The report's total is recomputed from the float components.
    """
    x_hat = _flat(x_hat)
    target = _flat(target)
    mse = F.mse_loss(x_hat, target)
    perceptual = models.perceptual(x_hat, target).mean()
    loss = mse + config.lambda_lpips * perceptual
    if config.lambda_adv > 0:
        if models.disc is None:
            raise InvalidInputError("a discriminator is required when lambda_adv > 0")
        adversarial = -models.disc(x_hat).mean()
        loss = loss + config.lambda_adv * adversarial
        adv_value = float(adversarial.detach())
    elif models.disc is not None:
        with torch.no_grad():
            adv_value = float(-models.disc(x_hat).mean())
    else:
        adv_value = 0.0
    mse_value = float(mse.detach())
    perc_value = float(perceptual.detach())
    report = LossReport(
        total=mse_value + config.lambda_lpips * perc_value + config.lambda_adv * adv_value,
        mse=mse_value,
        perceptual=perc_value,
        adversarial=adv_value,
    )
    return loss, report


def hinge_disc_loss(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    return F.relu(1.0 - real_logits).mean() + F.relu(1.0 + fake_logits).mean()


def adversarial_step(
    real: torch.Tensor,
    fake: torch.Tensor,
    disc: Discriminator,
    optimizer: Optional[torch.optim.Optimizer] = None,
) -> LossReport:
    """One hinge update of the discriminator (fake is detached). Without an optimizer only the loss is computed."""
    real = _flat(real)
    fake = _flat(fake).detach()
    if real.shape != fake.shape:
        raise InvalidInputError(f"real and fake batches must match, got {tuple(real.shape)} and {tuple(fake.shape)}")
    if optimizer is not None:
        optimizer.zero_grad(set_to_none=True)
    loss = hinge_disc_loss(disc(real), disc(fake))
    if optimizer is not None:
        loss.backward()
        optimizer.step()
    value = float(loss.detach())
    return LossReport(total=value, disc_loss=value)


def _disc_optimizer(disc: Discriminator, config: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.AdamW(disc.parameters(), lr=config.disc_lr, betas=(0.5, 0.999), weight_decay=config.weight_decay)


# --------------------------------------------------------------------------- #
# Stage 1
# --------------------------------------------------------------------------- #

def _encode_refs(batch: PairBatch, denoiser: Denoiser):
    return stack_refs([encode_reference(batch.ref, denoiser, m_f=batch.ref_mf)])


def stage1_loss(
    batch: PairBatch,
    models: ModelBundle,
    t: torch.Tensor,
    eps: torch.Tensor,
) -> torch.Tensor:
    """x0-form denoising MSE at timesteps `t` (B, F) with noise `eps`."""
    z_t = models.schedule.forward_noise(batch.z0, eps, t)
    ref_scales, ref_mf = _encode_refs(batch, models.denoiser)
    pred = models.denoiser(z_t, t, batch.m_f, batch.cond, ref_scales, ref_mf)
    return F.mse_loss(pred, batch.z0)


def _run_loop(stage: int, steps: int, step_fn, config: TrainConfig, run_logger, on_step) -> LossReport:
    audit = get_audit_logger()
    logger.info("stage %d: %d steps", stage, steps)
    t_start = time.time()
    report = LossReport()
    for step in tqdm(range(1, steps + 1), desc=f"Stage {stage}"):
        report = step_fn(step)
        if run_logger is not None:
            run_logger.log_loss(stage=stage, step=step, report=report)
        if on_step is not None:
            on_step(step, report)
        if step % config.log_every == 0 or step == steps:
            audit.log_event("train_step", {"stage": stage, "step": step, "total": report.total, "mse": report.mse})
    elapsed = time.time() - t_start
    print(f"[Trainer] Stage {stage}: steps={steps}, final_loss={report.total:.6f}, elapsed={elapsed:.1f}s")
    return report


def train_stage1(
    dataset: DatasetLike,
    config: Config,
    *,
    run_logger: Optional[RunLogger] = None,
    on_step: Optional[StepCallback] = None,
) -> Checkpoint:
    """
    Image-level training: same-clip (reference, driving) pairs, driving latent noised
    at t ~ U[1, 1000], MSE on z_hat_0. All parameters are trainable.
    """
    tc = config.train
    data = ClipDataset(load_training_clips(dataset))
    g = seed_everything(tc.seed)
    models = build_models(config, with_disc=False)
    device = torch.device(config.model.device)
    opt = torch.optim.AdamW(models.denoiser.parameters(), lr=tc.lr, weight_decay=tc.weight_decay)
    T = models.schedule.T

    def step_fn(step: int) -> LossReport:
        batch = data.sample_pairs(tc.batch_stage1, g).to(device)
        t = torch.randint(1, T + 1, batch.z0.shape[:2], generator=g).to(device)
        eps = torch.randn(batch.z0.shape, generator=g).to(device)
        loss = stage1_loss(batch, models, t, eps)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        value = float(loss.detach())
        return LossReport(total=value, mse=value)

    final = _run_loop(1, tc.steps_stage1, step_fn, tc, run_logger, on_step)
    return make_checkpoint(1, models, config, steps=tc.steps_stage1, final_loss=final.total)


# --------------------------------------------------------------------------- #
# Stage 2
# --------------------------------------------------------------------------- #

def sample_step_count(N: int, generator: torch.Generator) -> int:
    """n ~ Uniform{1, ..., N}."""
    return int(torch.randint(1, N + 1, (1,), generator=generator))


@dataclass
class Rollout:
    report: LossReport
    prediction: torch.Tensor           # decoded final z_hat_0, carries gradient
    loss: torch.Tensor
    steps: int
    timesteps: List[int] = field(default_factory=list)


def distill_rollout(
    batch: PairBatch,
    config: TrainConfig,
    models: ModelBundle,
    generator: torch.Generator,
    *,
    n: Optional[int] = None,
    rollout_model: Optional[Denoiser] = None,
) -> Rollout:
    """
    Few-step sampler rollout from pure noise over the descending compact levels.

    n ~ U{1..N} iterations; the first n-1 run without gradient tracking (on
    `rollout_model` when given), each renoising z_hat_0 to the next level with
    fresh noise. Only the final call is differentiable.
    """
    denoiser = models.denoiser
    rollout = rollout_model or denoiser
    levels = models.compact.descending()
    N = len(levels)
    n = n if n is not None else sample_step_count(N, generator)
    if not 1 <= n <= N:
        raise InvalidInputError(f"n must be in [1, {N}], got {n!r}")
    if config.lambda_adv > 0 and models.disc is None:
        raise InvalidInputError("stage-2 distillation needs a discriminator")

    device = batch.z0.device
    z = torch.randn(batch.z0.shape, generator=generator).to(device)
    shape_t = batch.z0.shape[:2]
    with torch.no_grad():
        if n > 1:
            ref_scales, ref_mf = _encode_refs(batch, rollout)
        for i in range(n - 1):
            t = torch.full(shape_t, levels[i], dtype=torch.long, device=device)
            z0_hat = rollout(z, t, batch.m_f, batch.cond, ref_scales, ref_mf)
            eps = torch.randn(z.shape, generator=generator).to(device)
            z = models.schedule.renoise(z0_hat, eps, levels[i + 1])

    ref_scales, ref_mf = _encode_refs(batch, denoiser)
    t = torch.full(shape_t, levels[n - 1], dtype=torch.long, device=device)
    z0_hat = denoiser(z, t, batch.m_f, batch.cond, ref_scales, ref_mf)
    x_hat = DEFAULT_CODEC.decode(z0_hat)
    loss, report = distill_loss(x_hat, batch.z0, config, models)
    report.extra["n"] = n
    return Rollout(report=report, prediction=x_hat, loss=loss, steps=n, timesteps=levels[:n])


def train_stage2(
    dataset: DatasetLike,
    config: Config,
    stage1: Checkpoint,
    *,
    run_logger: Optional[RunLogger] = None,
    on_step: Optional[StepCallback] = None,
) -> Checkpoint:
    """Appearance distillation from a stage-1 checkpoint, alternating 1:1 with discriminator updates."""
    require_stage(stage1, 1, "stage-2 training")
    tc = config.train
    data = ClipDataset(load_training_clips(dataset))
    g = seed_everything(tc.seed)
    models = models_from_checkpoint(stage1, config)
    device = torch.device(config.model.device)
    opt = torch.optim.AdamW(models.denoiser.parameters(), lr=tc.lr, weight_decay=tc.weight_decay)
    disc_opt = _disc_optimizer(models.disc, tc)

    def step_fn(step: int) -> LossReport:
        batch = data.sample_pairs(tc.batch_stage2, g).to(device)
        result = distill_rollout(batch, tc, models, g)
        opt.zero_grad(set_to_none=True)
        result.loss.backward()
        opt.step()
        disc_report = adversarial_step(batch.z0, result.prediction, models.disc, disc_opt)
        result.report.disc_loss = disc_report.disc_loss
        return result.report

    final = _run_loop(2, tc.steps_stage2, step_fn, tc, run_logger, on_step)
    return make_checkpoint(2, models, config, steps=tc.steps_stage2, final_loss=final.total)


# --------------------------------------------------------------------------- #
# Stage 3
# --------------------------------------------------------------------------- #

def level_timesteps(levels: Sequence[int], chunk_size: int, batch: int, device=None) -> torch.Tensor:
    """(B, N*M) per-frame timesteps of a window whose chunk k sits at levels[k]."""
    per_frame = torch.tensor([t for t in levels for _ in range(chunk_size)], dtype=torch.long, device=device)
    return per_frame[None].expand(batch, -1).contiguous()


def build_initial_window(
    gt: torch.Tensor,
    levels: Sequence[int],
    chunk_size: int,
    schedule: NoiseSchedule,
    noise: Callable[[Tuple[int, ...]], torch.Tensor],
) -> Tuple[torch.Tensor, List[torch.Tensor]]:
    """
    W_0 from ground truth: chunk n < N is forward_noise(gt chunk n, eps_n, t_n);
    chunk N is pure Gaussian. Returns the window (B, N*M, ...) and the eps per chunk.
    """
    N, M = len(levels), chunk_size
    chunks, eps_used = [], []
    for k in range(N):
        gt_chunk = gt[:, k * M : (k + 1) * M]
        eps = noise(tuple(gt_chunk.shape)).to(gt.device)
        eps_used.append(eps)
        chunks.append(eps if k == N - 1 else schedule.forward_noise(gt_chunk, eps, levels[k]))
    return torch.cat(chunks, dim=1), eps_used


def slide_window(
    pred: torch.Tensor,
    levels: Sequence[int],
    chunk_size: int,
    schedule: NoiseSchedule,
    noise: Callable[[Tuple[int, ...]], torch.Tensor],
) -> torch.Tensor:
    """Drop chunk 1, renoise surviving predictions to t_1..t_{N-1} with fresh noise, append pure noise."""
    N, M = len(levels), chunk_size
    chunks = []
    for k in range(1, N):
        z0_hat = pred[:, k * M : (k + 1) * M]
        chunks.append(schedule.renoise(z0_hat, noise(tuple(z0_hat.shape)).to(pred.device), levels[k - 1]))
    chunks.append(noise(tuple(pred[:, :M].shape)).to(pred.device))
    return torch.cat(chunks, dim=1)


def sliding_updates(seq_len: int, chunk_size: int, num_levels: int) -> List[Tuple[int, bool]]:
    """(s, has_gradient_update) for s = 0..S/M - N."""
    if seq_len % chunk_size != 0:
        raise InvalidInputError(f"seq_len must be divisible by chunk_size, got {seq_len} and {chunk_size}")
    last = seq_len // chunk_size - num_levels
    if last < 0:
        raise InvalidInputError(f"seq_len must cover at least one window of {num_levels * chunk_size} frames")
    period = max(num_levels - 1, 1)
    return [(s, s % period == 0) for s in range(last + 1)]


def train_stage3_sliding(
    dataset: DatasetLike,
    config: Config,
    stage2: Checkpoint,
    *,
    run_logger: Optional[RunLogger] = None,
    on_step: Optional[StepCallback] = None,
) -> Checkpoint:
    """
    Sliding training from a stage-2 checkpoint. Each iteration takes an S-frame
    sequence, builds W_0 from noisy ground truth and slides over the model's own
    predictions; updates happen at slides with s mod (N-1) == 0 and touch only
    temporal-attention parameters.
    """
    require_stage(stage2, 2, "stage-3 training")
    tc = config.train
    data = ClipDataset(load_training_clips(dataset))
    g = seed_everything(tc.seed)
    models = models_from_checkpoint(stage2, config, chunk_size=tc.chunk_size)
    denoiser = models.denoiser
    trainable = denoiser.temporal_parameters()
    if not trainable:
        raise InvalidInputError("stage-3 training updates temporal attention; model.temporal_attention is false")
    trainable_ids = {id(p) for p in trainable}
    for p in denoiser.parameters():
        p.requires_grad_(id(p) in trainable_ids)
    opt = torch.optim.AdamW(trainable, lr=tc.lr, weight_decay=tc.weight_decay)
    disc_opt = _disc_optimizer(models.disc, tc)
    device = torch.device(config.model.device)

    levels = list(models.compact.levels)
    N, M = len(levels), tc.chunk_size
    plan = sliding_updates(tc.seq_len, M, N)
    def noise(shape):
        return torch.randn(shape, generator=g)

    updates_total = 0

    def step_fn(step: int) -> LossReport:
        nonlocal updates_total
        seq = data.sample_sequences(tc.batch_stage3, tc.seq_len, g).to(device)
        with torch.no_grad():
            ref_scales, ref_mf = _encode_refs(seq, denoiser)
        window, _ = build_initial_window(seq.z0, levels, M, models.schedule, noise)
        t = level_timesteps(levels, M, window.shape[0], device)
        reports = []
        for s, update in plan:
            span = slice(s * M, s * M + N * M)
            args = (t, seq.m_f[:, span], seq.cond[:, span], ref_scales, ref_mf)
            if update:
                pred = denoiser(window, *args)
                x_hat = DEFAULT_CODEC.decode(pred)
                loss, report = distill_loss(x_hat, seq.z0[:, span], tc, models)
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                updates_total += 1
                report.disc_loss = adversarial_step(seq.z0[:, span], x_hat, models.disc, disc_opt).disc_loss
                report.extra["slide"] = s
                reports.append(report)
                pred = pred.detach()
            else:
                with torch.no_grad():
                    pred = denoiser(window, *args)
            window = slide_window(pred, levels, M, models.schedule, noise)
        out = reports[-1]
        out.extra["updates"] = len(reports)
        out.extra["update_slides"] = [r.extra["slide"] for r in reports]
        return out

    final = _run_loop(3, tc.steps_stage3, step_fn, tc, run_logger, on_step)
    for p in denoiser.parameters():
        p.requires_grad_(True)
    return make_checkpoint(
        3, models, config, steps=tc.steps_stage3, updates=updates_total, final_loss=final.total,
        trainable=denoiser.temporal_parameter_names(),
    )


def train_stage(stage: int, dataset: DatasetLike, config: Config, previous: Optional[Checkpoint] = None, **kwargs):
    """Dispatch with stage gating: stage k consumes a stage k-1 checkpoint."""
    if stage == 1:
        return train_stage1(dataset, config, **kwargs)
    if previous is None:
        raise InvalidInputError(f"stage {stage} needs a stage-{stage - 1} checkpoint")
    if stage == 2:
        return train_stage2(dataset, config, previous, **kwargs)
    if stage == 3:
        return train_stage3_sliding(dataset, config, previous, **kwargs)
    raise InvalidInputError(f"stage must be 1, 2 or 3, got {stage!r}")
