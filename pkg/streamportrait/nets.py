"""
Networks: the window denoiser with its reference encoder, the patch
discriminator, and the fixed random-feature perceptual net.

Tensor layout inside the denoiser is (B, F, C, H, W). Frames are folded into
the batch for every per-frame layer, so only `TemporalAttention` mixes frames.
"""

import functools
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange, repeat

from .config import DenoiserConfig
from .errors import InvalidInputError
from .schedule import DEFAULT_CODEC, NoiseSchedule
from .schemas import FRAME_SIZE, Frame

KV_GRID = 8
MOTION_TOKENS = 4
TensorOrFrame = Union[torch.Tensor, Frame]


# --------------------------------------------------------------------------- #
# Building blocks
# --------------------------------------------------------------------------- #

class SinusoidalPosEmb(nn.Module):
    def __init__(self, dim: int) -> None:
        super().__init__()
        self.dim = dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        half_dim = self.dim // 2
        emb = math.log(10000) / (half_dim - 1)
        emb = torch.exp(torch.arange(half_dim, device=x.device, dtype=x.dtype) * -emb)
        emb = x[:, None] * emb[None, :]
        return torch.cat((emb.sin(), emb.cos()), dim=-1)


class ResBlock(nn.Module):
    """GroupNorm/SiLU/conv residual block; the time embedding modulates with scale and shift."""

    def __init__(self, dim: int, dim_out: int, time_emb_dim: Optional[int] = None, groups: int = 8) -> None:
        super().__init__()
        self.mlp = nn.Sequential(nn.SiLU(), nn.Linear(time_emb_dim, dim_out * 2)) if time_emb_dim else None
        self.norm1 = nn.GroupNorm(groups, dim)
        self.conv1 = nn.Conv2d(dim, dim_out, 3, padding=1)
        self.norm2 = nn.GroupNorm(groups, dim_out)
        self.conv2 = nn.Conv2d(dim_out, dim_out, 3, padding=1)
        self.res_conv = nn.Conv2d(dim, dim_out, 1) if dim != dim_out else nn.Identity()

    def forward(self, x: torch.Tensor, time_emb: Optional[torch.Tensor] = None) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = self.norm2(h)
        if self.mlp is not None:
            scale, shift = rearrange(self.mlp(time_emb), "n c -> n c 1 1").chunk(2, dim=1)
            h = h * (1 + scale) + shift
        h = self.conv2(F.silu(h))
        return h + self.res_conv(x)


def attend(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, heads: int, mask: Optional[torch.Tensor] = None):
    """
    Multi-head attention on (n, len, heads * d) tensors. `mask` is a boolean
    (len_q, len_k) table of allowed pairs; masked weights are exactly zero.
    """
    q, k, v = (rearrange(x, "n l (h d) -> n h l d", h=heads) for x in (q, k, v))
    sim = torch.einsum("nhid,nhjd->nhij", q, k) * (q.shape[-1] ** -0.5)
    if mask is not None:
        sim = sim.masked_fill(~mask, float("-inf"))
    attn = sim.softmax(dim=-1)
    out = torch.einsum("nhij,nhjd->nhid", attn, v)
    return rearrange(out, "n h l d -> n l (h d)")


class RefAttention(nn.Module):
    """
    Spatial self-attention whose keys/values are extended with reference tokens.

    Key/value tokens: the frame's own features pooled to an 8x8 grid, then every
    reference in bank order (source first), each pooled the same way and tagged
    with a learned slot embedding plus a projection of its motion embedding.
    """

    def __init__(self, dim: int, heads: int, max_refs: int, m_f_dim: int) -> None:
        super().__init__()
        self.heads = heads
        self.max_refs = max_refs
        self.norm = nn.GroupNorm(8, dim)
        self.ref_norm = nn.GroupNorm(8, dim)
        self.to_q = nn.Linear(dim, dim, bias=False)
        self.to_k = nn.Linear(dim, dim, bias=False)
        self.to_v = nn.Linear(dim, dim, bias=False)
        self.to_out = nn.Linear(dim, dim)
        self.slot_emb = nn.Parameter(torch.randn(max_refs + 1, dim) * 0.02)
        self.motion_proj = nn.Linear(m_f_dim, dim)

    def forward(self, x: torch.Tensor, refs: torch.Tensor, ref_mf: torch.Tensor, frames: int) -> torch.Tensor:
        n, c, h, w = x.shape
        b, r = refs.shape[:2]
        xn = self.norm(x)
        q = rearrange(xn, "n c h w -> n (h w) c")

        own = rearrange(F.adaptive_avg_pool2d(xn, KV_GRID), "n c h w -> n (h w) c") + self.slot_emb[0]

        ref = self.ref_norm(rearrange(refs, "b r c h w -> (b r) c h w"))
        ref = rearrange(F.adaptive_avg_pool2d(ref, KV_GRID), "(b r) c h w -> b r (h w) c", b=b)
        ref = ref + self.slot_emb[1 : r + 1][None, :, None, :] + self.motion_proj(ref_mf)[:, :, None, :]
        ref = repeat(rearrange(ref, "b r l c -> b (r l) c"), "b l c -> (b f) l c", f=frames)

        ctx = torch.cat([own, ref], dim=1)
        out = attend(self.to_q(q), self.to_k(ctx), self.to_v(ctx), self.heads)
        return x + rearrange(self.to_out(out), "n (h w) c -> n c h w", h=h, w=w)


class MotionCrossAttention(nn.Module):
    """Cross-attention from spatial tokens to a few tokens derived from the frame's m_f."""

    def __init__(self, dim: int, heads: int, m_f_dim: int, tokens: int = MOTION_TOKENS) -> None:
        super().__init__()
        self.heads = heads
        self.tokens = tokens
        self.norm = nn.GroupNorm(8, dim)
        self.embed = nn.Sequential(nn.Linear(m_f_dim, dim), nn.SiLU(), nn.Linear(dim, dim * tokens))
        self.to_q = nn.Linear(dim, dim, bias=False)
        self.to_k = nn.Linear(dim, dim, bias=False)
        self.to_v = nn.Linear(dim, dim, bias=False)
        self.to_out = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, m_f: torch.Tensor) -> torch.Tensor:
        _, _, h, w = x.shape
        q = rearrange(self.norm(x), "n c h w -> n (h w) c")
        ctx = rearrange(self.embed(m_f), "n (k c) -> n k c", k=self.tokens)
        out = attend(self.to_q(q), self.to_k(ctx), self.to_v(ctx), self.heads)
        return x + rearrange(self.to_out(out), "n (h w) c -> n c h w", h=h, w=w)


class TemporalAttention(nn.Module):
    """
    Attention over the frame axis at every spatial position, with a learned
    frame-position embedding. In chunk-causal mode frame i attends only to
    frames whose chunk index is <= its own.
    """

    def __init__(self, dim: int, heads: int, max_frames: int, mode: str, chunk_size: int) -> None:
        super().__init__()
        if mode not in ("bidirectional", "chunk-causal"):
            raise InvalidInputError(f"temporal mode must be 'bidirectional' or 'chunk-causal', got {mode!r}")
        self.heads = heads
        self.mode = mode
        self.chunk_size = chunk_size
        self.max_frames = max_frames
        self.norm = nn.GroupNorm(8, dim)
        self.pos_emb = nn.Parameter(torch.randn(max_frames, dim) * 0.02)
        self.to_q = nn.Linear(dim, dim, bias=False)
        self.to_k = nn.Linear(dim, dim, bias=False)
        self.to_v = nn.Linear(dim, dim, bias=False)
        self.to_out = nn.Linear(dim, dim)

    def mask(self, frames: int, device) -> Optional[torch.Tensor]:
        if self.mode == "bidirectional":
            return None
        chunk = torch.arange(frames, device=device) // self.chunk_size
        return chunk[None, :] <= chunk[:, None]

    def forward(self, x: torch.Tensor, frames: int) -> torch.Tensor:
        _, _, h, w = x.shape
        tokens = rearrange(self.norm(x), "(b f) c h w -> (b h w) f c", f=frames)
        tokens = tokens + self.pos_emb[:frames]
        out = attend(self.to_q(tokens), self.to_k(tokens), self.to_v(tokens), self.heads, self.mask(frames, x.device))
        out = rearrange(self.to_out(out), "(b h w) f c -> (b f) c h w", h=h, w=w)
        return x + out


class EncoderLevel(nn.Module):
    def __init__(self, dim: int, time_dim: int, config: DenoiserConfig) -> None:
        super().__init__()
        self.res = ResBlock(dim, dim, time_dim)
        self.ref_attn = RefAttention(dim, config.heads, config.max_refs, config.m_f_dim)
        self.motion_attn = MotionCrossAttention(dim, config.heads, config.m_f_dim)
        self.temporal = _temporal(dim, config)

    def forward(self, x, temb, m_f, refs, ref_mf, frames):
        x = self.res(x, temb)
        x = self.ref_attn(x, refs, ref_mf, frames)
        x = self.motion_attn(x, m_f)
        if self.temporal is not None:
            x = self.temporal(x, frames)
        return x


class DecoderLevel(nn.Module):
    def __init__(self, dim_in: int, dim: int, time_dim: int, config: DenoiserConfig) -> None:
        super().__init__()
        self.res = ResBlock(dim_in, dim, time_dim)
        self.temporal = _temporal(dim, config)

    def forward(self, x, temb, frames):
        x = self.res(x, temb)
        if self.temporal is not None:
            x = self.temporal(x, frames)
        return x


def _temporal(dim: int, config: DenoiserConfig) -> Optional[TemporalAttention]:
    if not config.temporal_attention:
        return None
    return TemporalAttention(dim, config.heads, config.max_window_frames, config.temporal_mode, config.chunk_size)


# --------------------------------------------------------------------------- #
# Reference encoder
# --------------------------------------------------------------------------- #

@dataclass
class RefFeatures:
    """
    Multi-scale features of one reference frame, tagged with its m_f.
    Unbatched: scales[i] is (C_i, h_i, w_i) and m_f is (5,); batched
    variants carry a leading batch dimension on both.
    """

    scales: List[torch.Tensor]
    m_f: torch.Tensor

    @property
    def batched(self) -> bool:
        return self.m_f.dim() == 2


class RefEncoder(nn.Module):
    """Clean-frame encoder producing features at the denoiser's encoder scales (32, 16, 8)."""

    def __init__(self, config: DenoiserConfig) -> None:
        super().__init__()
        c = config.base_channels
        dims = [c, 2 * c, 2 * c]
        self.stem = nn.Conv2d(3, c, 3, padding=1)
        self.downs = nn.ModuleList()
        self.blocks = nn.ModuleList()
        prev = c
        for d in dims[: config.depth]:
            self.downs.append(nn.Conv2d(prev, d, 3, stride=2, padding=1))
            self.blocks.append(ResBlock(d, d))
            prev = d

    def forward(self, x: torch.Tensor) -> List[torch.Tensor]:
        h = self.stem(x)
        out = []
        for down, block in zip(self.downs, self.blocks):
            h = block(down(h))
            out.append(h)
        return out


# --------------------------------------------------------------------------- #
# Denoiser
# --------------------------------------------------------------------------- #

class Denoiser(nn.Module):
    """
    x0-parameterized window denoiser.

    z_hat_0 = sqrt(alphabar_t) * z_t + head(features). With `zero_init_output`
    the head starts at zero, so an untrained model returns sqrt(alphabar_t) * z_t.
    """

    def __init__(self, config: Optional[DenoiserConfig] = None, schedule: Optional[NoiseSchedule] = None) -> None:
        super().__init__()
        config = config or DenoiserConfig()
        if config.depth != 3:
            raise InvalidInputError(f"depth must be 3, got {config.depth!r}")
        if config.base_channels % 8 != 0:
            raise InvalidInputError(f"base_channels must be a multiple of 8, got {config.base_channels!r}")
        if config.base_channels % config.heads != 0:
            raise InvalidInputError(f"heads must divide base_channels, got {config.heads!r}")
        self.config = config
        schedule = schedule or NoiseSchedule()
        self.register_buffer("sqrt_alphabar", schedule.sqrt_alphabar.to(torch.float32), persistent=False)

        c = config.base_channels
        dims = [c, 2 * c, 2 * c]
        time_dim = 4 * c

        self.time_mlp = nn.Sequential(
            SinusoidalPosEmb(c), nn.Linear(c, time_dim), nn.SiLU(), nn.Linear(time_dim, time_dim)
        )
        self.stem = nn.Conv2d(3, c, 3, padding=1)
        self.pose_guider = nn.Sequential(
            nn.Conv2d(config.keypoint_channels, 16, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(16, c, 3, padding=1),
        )
        self.ref_encoder = RefEncoder(config)

        self.downs = nn.ModuleList()
        self.enc = nn.ModuleList()
        prev = c
        for d in dims:
            self.downs.append(nn.Conv2d(prev, d, 3, stride=2, padding=1))
            self.enc.append(EncoderLevel(d, time_dim, config))
            prev = d

        self.mid = DecoderLevel(dims[-1], dims[-1], time_dim, config)

        self.dec = nn.ModuleList()
        self.ups = nn.ModuleList()
        for i in reversed(range(len(dims))):
            out_dim = dims[i - 1] if i > 0 else c
            self.dec.append(DecoderLevel(prev + dims[i], dims[i], time_dim, config))
            self.ups.append(nn.Conv2d(dims[i], out_dim, 3, padding=1))
            prev = out_dim

        self.final = ResBlock(2 * c, c, time_dim)
        self.out_norm = nn.GroupNorm(8, c)
        self.out = nn.Conv2d(c, 3, 3, padding=1)
        if config.zero_init_output:
            nn.init.zeros_(self.out.weight)
            nn.init.zeros_(self.out.bias)

    def temporal_parameters(self) -> List[nn.Parameter]:
        return [p for m in self.modules() if isinstance(m, TemporalAttention) for p in m.parameters()]

    def temporal_parameter_names(self) -> List[str]:
        return [n for n, _ in self.named_parameters() if ".temporal." in n]

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(
        self,
        z: torch.Tensor,
        t: torch.Tensor,
        m_f: torch.Tensor,
        cond: torch.Tensor,
        ref_scales: Sequence[torch.Tensor],
        ref_mf: torch.Tensor,
    ) -> torch.Tensor:
        """
        z: (B, F, 3, H, W); t: (B, F) integer timesteps; m_f: (B, F, m_f_dim);
        cond: (B, F, K, H, W); ref_scales[i]: (B, R, C_i, h_i, w_i); ref_mf: (B, R, m_f_dim).
        Returns z_hat_0 with the shape of z.
        """
        b, f = z.shape[:2]
        if f > self.config.max_window_frames:
            raise InvalidInputError(f"window must have <= {self.config.max_window_frames} frames, got {f}")
        if ref_mf.shape[1] > self.config.max_refs:
            raise InvalidInputError(f"at most {self.config.max_refs} references are supported, got {ref_mf.shape[1]}")

        x = rearrange(z, "b f c h w -> (b f) c h w")
        tt = rearrange(t, "b f -> (b f)")
        temb = self.time_mlp(tt.to(x.dtype))
        mf = rearrange(m_f, "b f d -> (b f) d").to(x.dtype)

        h = self.stem(x) + self.pose_guider(rearrange(cond, "b f k h w -> (b f) k h w").to(x.dtype))
        stem = h
        skips = []
        for down, level, refs in zip(self.downs, self.enc, ref_scales):
            h = level(down(h), temb, mf, refs.to(x.dtype), ref_mf.to(x.dtype), f)
            skips.append(h)

        h = self.mid(h, temb, f)
        for level, up in zip(self.dec, self.ups):
            h = level(torch.cat([h, skips.pop()], dim=1), temb, f)
            h = up(F.interpolate(h, scale_factor=2.0, mode="nearest"))

        h = self.final(torch.cat([h, stem], dim=1), temb)
        residual = self.out(F.silu(self.out_norm(h)))

        a = self.sqrt_alphabar.to(x.dtype)[tt].reshape(-1, 1, 1, 1)
        return rearrange(a * x + residual, "(b f) c h w -> b f c h w", b=b)


def build_denoiser(model_config, chunk_size: int, schedule: Optional[NoiseSchedule] = None) -> Denoiser:
    """Seeded construction from a `ModelConfig`."""
    torch.manual_seed(model_config.seed)
    return Denoiser(DenoiserConfig.from_model_config(model_config, chunk_size), schedule)


def _as_frame_tensor(frame: TensorOrFrame) -> torch.Tensor:
    if isinstance(frame, torch.Tensor):
        x = frame
    else:
        x = DEFAULT_CODEC.encode(frame)
    if x.shape[-3:] != (3, FRAME_SIZE, FRAME_SIZE):
        raise InvalidInputError(f"frame must be 3 x {FRAME_SIZE} x {FRAME_SIZE}, got {tuple(x.shape)}")
    return x


def encode_reference(frame: TensorOrFrame, denoiser: Denoiser, m_f=None) -> RefFeatures:
    """
    Multi-scale features of a clean reference frame (H x W x 3 array, (3, H, W)
    or batched (B, 3, H, W) tensor), tagged with `m_f` (zeros if omitted).
    """
    x = _as_frame_tensor(frame)
    batched = x.dim() == 4
    xb = x if batched else x[None]
    param = next(denoiser.parameters())
    scales = denoiser.ref_encoder(xb.to(device=param.device, dtype=param.dtype))
    if m_f is None:
        m_f = torch.zeros(xb.shape[0], denoiser.config.m_f_dim)
    m_f = torch.as_tensor(m_f, dtype=param.dtype)
    m_f = m_f.reshape(xb.shape[0], denoiser.config.m_f_dim).to(param.device)
    if not batched:
        return RefFeatures(scales=[s[0] for s in scales], m_f=m_f[0])
    return RefFeatures(scales=scales, m_f=m_f)


def stack_refs(refs: Sequence[RefFeatures]):
    """Bank-ordered references to denoiser inputs: ([(B, R, C, h, w)], (B, R, m_f_dim))."""
    if len(refs) == 0:
        raise InvalidInputError("at least one reference (the source) is required")
    batched = refs[0].batched
    if any(r.batched != batched for r in refs):
        raise InvalidInputError("references must be all batched or all unbatched")
    dim = 1 if batched else 0
    scales = [torch.stack([r.scales[i] for r in refs], dim=dim) for i in range(len(refs[0].scales))]
    m_f = torch.stack([r.m_f for r in refs], dim=dim)
    if not batched:
        scales = [s[None] for s in scales]
        m_f = m_f[None]
    return scales, m_f


def denoise_window(
    frames: Sequence[torch.Tensor],
    timesteps: Sequence[int],
    refs: Sequence[RefFeatures],
    m_f_seq: Sequence,
    cond_maps: Sequence[torch.Tensor],
    denoiser: Denoiser,
    chunk_size: Optional[int] = None,
) -> List[torch.Tensor]:
    """
    One denoiser pass over a window of MN frames at per-chunk noise levels.
    Returns one z_hat_0 (3, H, W) per input frame.
    """
    n = len(frames)
    lengths = {len(timesteps), len(m_f_seq), len(cond_maps)}
    if n == 0 or lengths != {n}:
        raise InvalidInputError(
            f"frames, timesteps, m_f_seq and cond_maps must have equal non-zero length, got "
            f"{n}, {len(timesteps)}, {len(m_f_seq)}, {len(cond_maps)}"
        )
    if len(refs) == 0:
        raise InvalidInputError("refs must contain at least the source reference")
    m = chunk_size or denoiser.config.chunk_size
    if n % m != 0:
        raise InvalidInputError(f"window length must be a multiple of the chunk size {m}, got {n}")
    ts = [int(t) for t in timesteps]
    for start in range(0, n, m):
        if len(set(ts[start : start + m])) != 1:
            raise InvalidInputError(f"timesteps must be constant within each chunk, got {ts[start:start + m]!r}")

    param = next(denoiser.parameters())
    z = torch.stack([_as_frame_tensor(x) for x in frames])[None].to(device=param.device, dtype=param.dtype)
    t = torch.tensor([ts], dtype=torch.long, device=param.device)
    m_f = torch.stack([torch.as_tensor(v, dtype=torch.float64) for v in m_f_seq])[None]
    m_f = m_f.to(device=param.device, dtype=param.dtype)
    cond = torch.stack(list(cond_maps))[None].to(device=param.device, dtype=param.dtype)
    ref_scales, ref_mf = stack_refs(refs)
    out = denoiser(z, t, m_f, cond, ref_scales, ref_mf)
    return list(out[0].unbind(0))


# --------------------------------------------------------------------------- #
# Discriminator
# --------------------------------------------------------------------------- #

class Discriminator(nn.Module):
    """Strided conv patch critic; the image logit is the mean of its 4x4 patch logits."""

    def __init__(self, channels: Sequence[int] = (32, 64, 128)) -> None:
        super().__init__()
        layers: List[nn.Module] = []
        prev = 3
        for c in channels:
            layers += [nn.Conv2d(prev, c, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
            prev = c
        layers.append(nn.Conv2d(prev, 1, 4, stride=2, padding=1))
        self.layers = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) in [0, 1] -> (B,) logits."""
        return self.layers(x * 2.0 - 1.0).mean(dim=(1, 2, 3))


def discriminate(frame: TensorOrFrame, disc: Discriminator) -> torch.Tensor:
    """Scalar logit of one frame; differentiable w.r.t. the frame tensor and the weights."""
    x = _as_frame_tensor(frame)
    if x.dim() != 3:
        raise InvalidInputError(f"discriminate takes one frame, got shape {tuple(x.shape)}")
    param = next(disc.parameters())
    return disc(x[None].to(device=param.device, dtype=param.dtype))[0]


# --------------------------------------------------------------------------- #
# Perceptual distance
# --------------------------------------------------------------------------- #

class PerceptualNet(nn.Module):
    """
    Three fixed random conv layers (He-scaled Gaussian weights from a seeded
    generator). Distance = mean over layers of the mean squared feature difference.
    Weights are buffers, never trained.
    """

    def __init__(self, seed: int = 1234, channels: Sequence[int] = (16, 32, 32)) -> None:
        super().__init__()
        self.seed = seed
        g = torch.Generator().manual_seed(seed)
        prev = 3
        for i, c in enumerate(channels):
            w = torch.randn(c, prev, 3, 3, generator=g, dtype=torch.float64) * math.sqrt(2.0 / (prev * 9))
            self.register_buffer(f"w{i}", w.to(torch.float32))
            prev = c
        self.n_layers = len(channels)

    def features(self, x: torch.Tensor) -> List[torch.Tensor]:
        h = x * 2.0 - 1.0
        out = []
        for i in range(self.n_layers):
            h = F.relu(F.conv2d(h, getattr(self, f"w{i}"), stride=1 if i == 0 else 2, padding=1))
            out.append(h)
        return out

    def forward(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) pairs -> (B,) distances."""
        if a.shape != b.shape:
            raise InvalidInputError(f"perceptual inputs must have the same shape, got {tuple(a.shape)} and {tuple(b.shape)}")
        fa = self.features(a)
        fb = self.features(b)
        per_layer = [((x - y) ** 2).mean(dim=(1, 2, 3)) for x, y in zip(fa, fb)]
        return torch.stack(per_layer).mean(dim=0)


@functools.lru_cache(maxsize=4)
def default_perceptual_net(seed: int = 1234) -> PerceptualNet:
    return PerceptualNet(seed).eval()


@torch.no_grad()
def perceptual_distance(a: TensorOrFrame, b: TensorOrFrame, net: Optional[PerceptualNet] = None) -> float:
    """Perceptual distance between two frames; each frame's features are computed on its own."""
    xa = _as_frame_tensor(a)
    xb = _as_frame_tensor(b)
    if xa.shape != xb.shape or xa.dim() != 3:
        raise InvalidInputError(f"frames must have the same single-frame shape, got {tuple(xa.shape)} and {tuple(xb.shape)}")
    net = net or default_perceptual_net()
    fa = net.features(xa[None].float())
    fb = net.features(xb[None].float())
    per_layer = [((x - y) ** 2).mean() for x, y in zip(fa, fb)]
    return float(torch.stack(per_layer).mean())


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
