"""
Procedural toy-face renderer and dataset builder.

The generator parameters double as exact motion and identity extractors:
`extract_hybrid_motion` returns the expression vector and the retargeted
keypoints that a learned extractor would only approximate.
"""

import colorsys
import logging
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from .errors import InvalidInputError
from .motionctl import KeypointSet, rotation_matrix, transform_keypoints
from .schemas import (
    FRAME_SIZE,
    IDENTITY_RANGES,
    MOTION_RANGES,
    Clip,
    Frame,
    IdentityParams,
    MotionParams,
)

logger = logging.getLogger(__name__)

PIXEL = 2.0 / FRAME_SIZE
BACKGROUND = np.array([0.06, 0.06, 0.08])
# rows whose center lies below this y belong to the torso band (exact pixel boundary)
TORSO_TOP = -0.75

HEAD_RX, HEAD_RY = 0.42, 0.5
EYE_X, EYE_Y, EYE_R = 0.17, 0.1, 0.09
MOUTH_Y = -0.22
BROW_X, BROW_Y0, BROW_RANGE, BROW_HW, BROW_HH = 0.17, 0.24, 0.12, 0.09, 0.025

# Canonical keypoints before the horizontal face_aspect stretch:
# head outline (top, bottom, left, right), eyes, mouth corners, brows.
KEYPOINT_TEMPLATE = np.array(
    [
        [0.0, HEAD_RY],
        [0.0, -HEAD_RY],
        [-HEAD_RX, 0.0],
        [HEAD_RX, 0.0],
        [-EYE_X, EYE_Y],
        [EYE_X, EYE_Y],
        [-0.13, MOUTH_Y],
        [0.13, MOUTH_Y],
        [-BROW_X, 0.30],
        [BROW_X, 0.30],
    ],
    dtype=np.float64,
)

_centers = (np.arange(FRAME_SIZE, dtype=np.float64) + 0.5) * PIXEL
_GRID_X = np.broadcast_to(_centers - 1.0, (FRAME_SIZE, FRAME_SIZE))
_GRID_Y = np.broadcast_to((1.0 - _centers)[:, None], (FRAME_SIZE, FRAME_SIZE))


def _hsv(h: float, s: float, v: float) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(h % 1.0, s, v))


def skin_color(identity: IdentityParams) -> np.ndarray:
    return _hsv(identity.face_hue, 0.5, identity.skin_brightness)


def torso_color(identity: IdentityParams) -> np.ndarray:
    return _hsv(identity.torso_hue, 0.6, 0.7)


def torso_mask() -> np.ndarray:
    return _GRID_Y < TORSO_TOP


def _ellipse_sd(x: np.ndarray, y: np.ndarray, rx: float, ry: float) -> np.ndarray:
    """First-order signed distance to an axis-aligned ellipse."""
    r = np.sqrt((x / rx) ** 2 + (y / ry) ** 2)
    grad = np.sqrt((x / rx**2) ** 2 + (y / ry**2) ** 2) / np.maximum(r, 1e-12)
    return (r - 1.0) / np.maximum(grad, 1e-12)


def _box_sd(x: np.ndarray, y: np.ndarray, hw: float, hh: float) -> np.ndarray:
    dx = np.abs(x) - hw
    dy = np.abs(y) - hh
    outside = np.sqrt(np.maximum(dx, 0.0) ** 2 + np.maximum(dy, 0.0) ** 2)
    return outside + np.minimum(np.maximum(dx, dy), 0.0)


def _coverage(sd_local: np.ndarray, scale: float, thickness: float) -> np.ndarray:
    """Anti-aliased coverage; shapes thinner than a pixel fade out with their thickness."""
    cov = np.clip(0.5 - sd_local * scale / PIXEL, 0.0, 1.0)
    return cov * min(1.0, thickness * scale / PIXEL)


def _local_coords(motion: MotionParams) -> Tuple[np.ndarray, np.ndarray]:
    """Pixel centers mapped into the head's canonical frame (inverse of Eq. 3's pose)."""
    r = rotation_matrix(motion.roll)
    px = (_GRID_X - motion.trans[0]) / motion.scale
    py = (_GRID_Y - motion.trans[1]) / motion.scale
    # local @ R = world'  =>  local = world' @ R^T
    lx = px * r[0, 0] + py * r[0, 1]
    ly = px * r[1, 0] + py * r[1, 1]
    return lx, ly


def head_coverage(identity: IdentityParams, motion: MotionParams) -> np.ndarray:
    lx, ly = _local_coords(motion)
    rx = HEAD_RX * identity.face_aspect
    return _coverage(_ellipse_sd(lx, ly, rx, HEAD_RY), motion.scale, 2 * HEAD_RY)


def render(identity: IdentityParams, motion: MotionParams) -> Frame:
    """
    Draw one 64x64 RGB frame. Output values are multiples of 1/255 so lossless
    8-bit storage reproduces them exactly.
    """
    identity.validate()
    motion.validate()
    a = identity.face_aspect
    s = motion.scale
    lx, ly = _local_coords(motion)

    img = np.broadcast_to(BACKGROUND, (FRAME_SIZE, FRAME_SIZE, 3)).copy()

    skin = skin_color(identity)
    head = _coverage(_ellipse_sd(lx, ly, HEAD_RX * a, HEAD_RY), s, 2 * HEAD_RY)
    img = img + head[..., None] * (skin - img)

    face_img = np.broadcast_to(skin, img.shape).copy()

    eye_col = _hsv(identity.eye_hue, 0.8, 0.55)
    for side, openness in ((-1.0, motion.expr[0]), (1.0, motion.expr[1])):
        ry = EYE_R * openness
        sd = _ellipse_sd(lx - side * EYE_X * a, ly - EYE_Y, EYE_R * a, max(ry, 1e-6))
        cov = _coverage(sd, s, 2 * ry)
        face_img = face_img + cov[..., None] * (eye_col - face_img)

    mouth_col = np.array([0.45, 0.08, 0.1])
    mouth_rx = (0.07 + 0.12 * motion.expr[3]) * a
    mouth_ry = 0.015 + 0.1 * motion.expr[2]
    cov = _coverage(_ellipse_sd(lx, ly - MOUTH_Y, mouth_rx, mouth_ry), s, 2 * mouth_ry)
    face_img = face_img + cov[..., None] * (mouth_col - face_img)

    brow_col = skin * 0.35
    brow_y = BROW_Y0 + BROW_RANGE * motion.expr[4]
    for side in (-1.0, 1.0):
        sd = _box_sd(lx - side * BROW_X * a, ly - brow_y, BROW_HW * a, BROW_HH)
        cov = _coverage(sd, s, 2 * BROW_HH)
        face_img = face_img + cov[..., None] * (brow_col - face_img)

    # features are weighted by head coverage so they never leave the head
    img = img + head[..., None] * (face_img - skin)
    # the torso band sits in front of the head
    img[torso_mask()] = torso_color(identity)
    img = np.clip(img, 0.0, 1.0)
    return (np.round(img * 255.0) / 255.0).astype(np.float32)


def canonical_keypoints(identity: IdentityParams) -> KeypointSet:
    """The fixed 10-point template stretched horizontally by face_aspect."""
    return KEYPOINT_TEMPLATE * np.array([identity.face_aspect, 1.0])


def extract_hybrid_motion(
    motion: MotionParams,
    source_identity: IdentityParams,
) -> Tuple[np.ndarray, KeypointSet]:
    """
    Exact hybrid-motion extractor.

    Returns m_f = motion.expr and k_d = scale * k_c(source) @ R(roll) + trans:
    the SOURCE identity's canonical keypoints under the DRIVING pose.
    """
    motion.validate()
    source_identity.validate()
    m_f = np.asarray(motion.expr, dtype=np.float64)
    k_d = transform_keypoints(canonical_keypoints(source_identity), motion.roll, motion.trans, motion.scale)
    return m_f, k_d


# --------------------------------------------------------------------------- #
# Random identities and trajectories
# --------------------------------------------------------------------------- #

# mean-reversion targets in unit space (roll, tx, ty, scale, eyes, mouth, width, brow)
_TRAJ_MEAN = np.array([0.5, 0.5, 0.5, 0.5, 0.75, 0.75, 0.25, 0.5, 0.5])
_TRAJ_THETA = 0.05
_TRAJ_SIGMA = 0.03
_TRAJ_MAX_STEP = 0.05


def sample_identity(rng: np.random.Generator) -> IdentityParams:
    values = [rng.uniform(lo, hi) for lo, hi in IDENTITY_RANGES]
    return IdentityParams(*values)


def sample_trajectory(rng_seed: int, T: int) -> List[MotionParams]:
    """
    Temporally smooth random motion: a mean-reverting random walk per field,
    each step bounded by 5% of the field's range, clamped to the field range.
    """
    if T < 2:
        raise InvalidInputError(f"T must be >= 2, got {T!r}")
    rng = np.random.default_rng(rng_seed)
    dim = len(MOTION_RANGES)
    u = np.clip(_TRAJ_MEAN + rng.uniform(-0.15, 0.15, size=dim), 0.0, 1.0)
    out = [MotionParams.from_unit(u)]
    for _ in range(T - 1):
        delta = _TRAJ_THETA * (_TRAJ_MEAN - u) + _TRAJ_SIGMA * rng.standard_normal(dim)
        u = np.clip(u + np.clip(delta, -_TRAJ_MAX_STEP, _TRAJ_MAX_STEP), 0.0, 1.0)
        out.append(MotionParams.from_unit(u))
    return out


def make_clip(identity: IdentityParams, motions: Sequence[MotionParams], fps: int = 25) -> Clip:
    return Clip(identity=identity, frames=[render(identity, m) for m in motions], motions=list(motions), fps=fps)


def build_dataset(config) -> Path:
    """
    Write the toy-face dataset described by a `DataConfig` and return its root.
    """
    from .store.dataset import DatasetRepository

    repo = DatasetRepository(config.root)
    repo.build(config)
    return repo.root
