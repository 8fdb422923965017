"""
Hybrid motion conditioning utilities.

Keypoints live in normalized image coordinates: [-1, 1]^2, origin at the image
center, x to the right, y up. Rotations act on row vectors (`k @ R`) and are
counter-clockwise for positive roll.
"""

import math
from typing import Sequence, Tuple

import numpy as np
import torch

from .errors import InvalidInputError
from .schemas import FRAME_SIZE, MotionParams

# (K, 2) float64 array
KeypointSet = np.ndarray

HEATMAP_SIGMA = 1.5
HEATMAP_CUTOFF = 1.5


def rotation_matrix(roll: float) -> np.ndarray:
    """Row-vector rotation: (1, 0) @ R(roll) = (cos roll, sin roll)."""
    c, s = math.cos(roll), math.sin(roll)
    return np.array([[c, s], [-s, c]], dtype=np.float64)


def transform_keypoints(
    k_c_source: KeypointSet,
    roll: float,
    trans: Sequence[float],
    scale: float,
) -> KeypointSet:
    """
    Retarget canonical keypoints with a pose: scale * k_c @ R(roll) + trans.
    """
    k = np.asarray(k_c_source, dtype=np.float64)
    if k.ndim != 2 or k.shape[1] != 2:
        raise InvalidInputError(f"keypoints must have shape (K, 2), got {k.shape}")
    t = np.asarray(trans, dtype=np.float64)
    if t.shape != (2,):
        raise InvalidInputError(f"trans must be a 2-vector, got shape {t.shape}")
    if not (math.isfinite(roll) and math.isfinite(scale) and np.all(np.isfinite(k)) and np.all(np.isfinite(t))):
        raise InvalidInputError("keypoint transform inputs must be finite")
    if scale <= 0:
        raise InvalidInputError(f"scale must be > 0, got {scale!r}")
    return scale * (k @ rotation_matrix(roll)) + t


def keypoints_to_pixels(k: KeypointSet, size: int = FRAME_SIZE) -> Tuple[np.ndarray, np.ndarray]:
    """Continuous pixel coordinates (column u, row v) of normalized points."""
    k = np.asarray(k, dtype=np.float64)
    u = (k[:, 0] + 1.0) * 0.5 * size - 0.5
    v = (1.0 - k[:, 1]) * 0.5 * size - 0.5
    return u, v


def rasterize_keypoints(
    k: KeypointSet,
    size: int = FRAME_SIZE,
    sigma: float = HEATMAP_SIGMA,
) -> torch.Tensor:
    """
    One Gaussian heatmap per keypoint, channel-first (K, H, W) float32.

    Each channel peaks with value 1.0 at the pixel center nearest to its point
    (clamped to the canvas). Points outside [-1.5, 1.5]^2 give all-zero channels.
    """
    k = np.asarray(k, dtype=np.float64)
    if not np.all(np.isfinite(k)):
        raise InvalidInputError("keypoints must be finite")
    u, v = keypoints_to_pixels(k, size)
    cu = np.clip(np.rint(u), 0, size - 1)
    cv = np.clip(np.rint(v), 0, size - 1)
    visible = np.all(np.abs(k) <= HEATMAP_CUTOFF, axis=1)

    grid = torch.arange(size, dtype=torch.float64)
    cu_t = torch.from_numpy(cu)[:, None, None]
    cv_t = torch.from_numpy(cv)[:, None, None]
    d2 = (grid[None, None, :] - cu_t) ** 2 + (grid[None, :, None] - cv_t) ** 2
    heat = torch.exp(-d2 / (2.0 * sigma**2))
    heat = heat * torch.from_numpy(visible.astype(np.float64))[:, None, None]
    return heat.to(torch.float32)


def interpolate_motion(src: MotionParams, drv: MotionParams, omega: float) -> MotionParams:
    """
    Pointwise-linear blend src + omega * (drv - src) of every field.

    Roll is blended linearly in angle space; |roll| <= pi/4 keeps this on the
    short arc. General 3-D Euler blending would need shortest-arc handling.
    """
    if not (0.0 <= omega <= 1.0):
        raise InvalidInputError(f"omega must be in [0, 1], got {omega!r}")
    if omega == 0.0:
        return src
    if omega == 1.0:
        return drv
    a = np.asarray(src.to_row(), dtype=np.float64)
    b = np.asarray(drv.to_row(), dtype=np.float64)
    return MotionParams.from_row(a + omega * (b - a))


def mii_weights(M: int, N: int) -> np.ndarray:
    """omega_i = (i - 1) / (MN - 1) for i = 1..MN."""
    total = M * N
    if M < 1 or N < 1 or total < 2:
        raise InvalidInputError(f"M * N must be >= 2, got M={M}, N={N}")
    return np.arange(total, dtype=np.float64) / (total - 1)


def interpolated_motions(src: MotionParams, drv: MotionParams, M: int, N: int) -> list:
    """Conditioning motions of the first window under motion-interpolated initialization."""
    return [interpolate_motion(src, drv, float(w)) for w in mii_weights(M, N)]
