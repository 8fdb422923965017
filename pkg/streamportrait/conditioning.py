"""
Hybrid-motion conditioning tensors shared by the trainers and the streamer:
m_f (the expression embedding) and the rasterized retargeted keypoints.
"""

from typing import List, Sequence, Tuple

import numpy as np
import torch

from .motionctl import rasterize_keypoints
from .schemas import IdentityParams, MotionParams
from .toyface import extract_hybrid_motion


def motion_condition(motion: MotionParams, source_identity: IdentityParams) -> Tuple[torch.Tensor, torch.Tensor]:
    """(m_f: (5,), condition map: (K, H, W)) for one driving motion on the source identity."""
    m_f, k_d = extract_hybrid_motion(motion, source_identity)
    return torch.from_numpy(m_f.astype(np.float32)), rasterize_keypoints(k_d)


def motion_conditions(
    motions: Sequence[MotionParams],
    source_identity: IdentityParams,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Stacked conditions: (F, 5) and (F, K, H, W)."""
    pairs = [motion_condition(m, source_identity) for m in motions]
    return torch.stack([p[0] for p in pairs]), torch.stack([p[1] for p in pairs])


def source_keypoint_motions(motions: Sequence[MotionParams], source_motion: MotionParams) -> List[MotionParams]:
    """
    The k_s + m_f,d signal: each motion keeps its expression (so m_f is the
    driving one) while roll, translation and scale come from the source, so the
    keypoints are the source's own.
    """
    source_motion.validate()
    return [
        MotionParams(roll=source_motion.roll, trans=source_motion.trans, scale=source_motion.scale, expr=m.expr)
        for m in motions
    ]
