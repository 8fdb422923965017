"""
DDPM forward-noising math, the compact N-level sampling schedule, and the
eps <-> x0 parameterization conversions.

Tables are float64; results are cast to the input tensor's dtype. Timesteps
index `alphabar` directly, so t ranges over 0..T and alphabar[0] == 1.
"""

from dataclasses import dataclass
from typing import List, Literal, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F

from .errors import InvalidInputError
from .schemas import Frame

Timestep = Union[int, Sequence[int], torch.Tensor]
Direction = Literal["eps_to_x0", "x0_to_eps"]


class NoiseSchedule:
    """
    Linear-beta DDPM table.

    beta[i - 1] is the beta of step i (i = 1..T); alphabar[t] = prod_{i<=t} (1 - beta_i)
    with the empty product alphabar[0] = 1.
    """

    def __init__(self, num_train_timesteps: int = 1000, beta_start: float = 1e-4, beta_end: float = 2e-2) -> None:
        if num_train_timesteps < 1:
            raise InvalidInputError(f"num_train_timesteps must be >= 1, got {num_train_timesteps!r}")
        if not (0.0 < beta_start <= beta_end < 1.0):
            raise InvalidInputError(f"betas must satisfy 0 < start <= end < 1, got {beta_start!r}, {beta_end!r}")
        self.num_train_timesteps = num_train_timesteps
        self.betas = torch.linspace(beta_start, beta_end, num_train_timesteps, dtype=torch.float64)
        self.alphas = 1.0 - self.betas
        self.alphabar = F.pad(torch.cumprod(self.alphas, dim=0), (1, 0), value=1.0)
        self.sqrt_alphabar = torch.sqrt(self.alphabar)
        self.sqrt_one_minus_alphabar = torch.sqrt(1.0 - self.alphabar)

    @property
    def T(self) -> int:
        return self.num_train_timesteps

    # ---------------- helpers ---------------- #

    def _timesteps(self, t: Timestep) -> torch.Tensor:
        t = torch.as_tensor(t, dtype=torch.long)
        if torch.any(t < 0) or torch.any(t > self.T):
            raise InvalidInputError(f"timestep must be in [0, {self.T}], got {t.tolist()!r}")
        return t

    def coefficients(self, t: Timestep, like: torch.Tensor):
        """
        (sqrt(alphabar_t), sqrt(1 - alphabar_t)) shaped to broadcast against `like`.
        A tensor of timesteps indexes the leading dimensions of `like`.
        """
        t = self._timesteps(t)
        a = self.sqrt_alphabar[t]
        b = self.sqrt_one_minus_alphabar[t]
        if t.dim() > like.dim():
            raise InvalidInputError(f"timesteps of shape {tuple(t.shape)} do not fit a tensor of shape {tuple(like.shape)}")
        if t.dim() > 0 and tuple(like.shape[: t.dim()]) != tuple(t.shape):
            raise InvalidInputError(
                f"timesteps of shape {tuple(t.shape)} must match leading dims of {tuple(like.shape)}"
            )
        view = tuple(t.shape) + (1,) * (like.dim() - t.dim())
        return (
            a.reshape(view).to(device=like.device, dtype=like.dtype),
            b.reshape(view).to(device=like.device, dtype=like.dtype),
        )

    # ---------------- forward process ---------------- #

    def forward_noise(self, z: torch.Tensor, eps: torch.Tensor, t: Timestep) -> torch.Tensor:
        """Psi(z, eps, t) = sqrt(alphabar_t) * z + sqrt(1 - alphabar_t) * eps."""
        if z.shape != eps.shape:
            raise InvalidInputError(f"z and eps must have the same shape, got {tuple(z.shape)} and {tuple(eps.shape)}")
        a, b = self.coefficients(t, z)
        return a * z + b * eps

    def renoise(self, z0_hat: torch.Tensor, eps: torch.Tensor, t_target: Timestep) -> torch.Tensor:
        """The sampler's x0-renoise step; same math as `forward_noise`."""
        return self.forward_noise(z0_hat, eps, t_target)

    def convert_parameterization(
        self,
        z_t: torch.Tensor,
        value: torch.Tensor,
        t: Timestep,
        direction: Direction,
    ) -> torch.Tensor:
        """
        eps_to_x0: (z_t - sqrt(1 - alphabar_t) * eps) / sqrt(alphabar_t)
        x0_to_eps: (z_t - sqrt(alphabar_t) * x0) / sqrt(1 - alphabar_t), undefined at t = 0
        """
        if z_t.shape != value.shape:
            raise InvalidInputError(
                f"z_t and value must have the same shape, got {tuple(z_t.shape)} and {tuple(value.shape)}"
            )
        if direction == "eps_to_x0":
            a, b = self.coefficients(t, z_t)
            return (z_t - b * value) / a
        if direction == "x0_to_eps":
            if torch.any(self._timesteps(t) == 0):
                raise InvalidInputError("x0_to_eps is undefined at t=0 (1 - alphabar_0 = 0)")
            a, b = self.coefficients(t, z_t)
            return (z_t - a * value) / b
        raise InvalidInputError(f"direction must be 'eps_to_x0' or 'x0_to_eps', got {direction!r}")

    def uniform_timesteps(self, num_steps: int) -> List[int]:
        """Descending, evenly spaced timesteps T..1 for a `num_steps` sampler."""
        if num_steps < 1 or num_steps > self.T:
            raise InvalidInputError(f"num_steps must be in [1, {self.T}], got {num_steps!r}")
        ts = np.rint(np.linspace(self.T, 0, num_steps + 1)[:-1]).astype(np.int64)
        return [int(t) for t in ts]


def make_schedule(config=None) -> NoiseSchedule:
    """Build the table from a `ScheduleConfig`, or the 1000-step default."""
    if config is None:
        return NoiseSchedule()
    return NoiseSchedule(config.num_train_timesteps, config.beta_start, config.beta_end)


@dataclass(frozen=True)
class CompactSchedule:
    """
    The N distilled sampling levels, ascending. Index 0 is the clean level t_1.
    `allow_single` admits the degenerate N = 1 schedule used for equivalence checks.
    """

    levels: tuple = (0, 333, 666, 999)
    allow_single: bool = False

    def __post_init__(self) -> None:
        levels = tuple(int(t) for t in self.levels)
        object.__setattr__(self, "levels", levels)
        min_len = 1 if self.allow_single else 2
        if len(levels) < min_len:
            raise InvalidInputError(f"compact schedule needs at least {min_len} levels, got {list(levels)!r}")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise InvalidInputError(f"levels must be strictly ascending, got {list(levels)!r}")
        if levels[0] < 0 or levels[-1] > 999:
            raise InvalidInputError(f"levels must lie in [0, 999], got {list(levels)!r}")

    @property
    def N(self) -> int:
        return len(self.levels)

    @property
    def top(self) -> int:
        return self.levels[-1]

    def descending(self) -> List[int]:
        return list(reversed(self.levels))

    @classmethod
    def from_config(cls, config) -> "CompactSchedule":
        return cls(levels=tuple(config.levels))


# --------------------------------------------------------------------------- #
# Latent codec boundary
# --------------------------------------------------------------------------- #

class IdentityCodec:
    """
    Pixel-space latents: z is the frame itself, channel-first.
    A learned codec would replace `encode`/`decode` here.
    """

    name = "identity"

    def encode(self, frame: Frame) -> torch.Tensor:
        pixels = torch.as_tensor(np.asarray(frame, dtype=np.float32))
        if pixels.dim() != 3 or pixels.shape[-1] != 3:
            raise InvalidInputError(f"frame must be H x W x 3, got shape {tuple(pixels.shape)}")
        return pixels.permute(2, 0, 1).contiguous()

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        """Latent (..., 3, H, W) to pixel space, channel-first and unclamped (losses see this)."""
        return z

    def to_frame(self, z: torch.Tensor) -> Frame:
        """Emission boundary: decode, clamp to [0, 1], H x W x 3 float32."""
        pixels = self.decode(z.detach()).clamp(0.0, 1.0)
        return pixels.permute(1, 2, 0).cpu().numpy().astype(np.float32)


DEFAULT_CODEC = IdentityCodec()
