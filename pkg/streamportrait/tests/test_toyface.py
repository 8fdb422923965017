import numpy as np
import pytest

from streamportrait.errors import InvalidInputError
from streamportrait.schemas import IdentityParams, MotionParams
from streamportrait.toyface import (
    canonical_keypoints,
    extract_hybrid_motion,
    head_coverage,
    render,
    sample_identity,
    sample_trajectory,
    torso_color,
    torso_mask,
)

IDENTITY = IdentityParams(face_hue=0.08, face_aspect=1.1, eye_hue=0.6, skin_brightness=0.8, torso_hue=0.55)
NEUTRAL = MotionParams.neutral()


def test_render_shape_and_quantization():
    frame = render(IDENTITY, NEUTRAL)
    assert frame.shape == (64, 64, 3)
    assert frame.dtype == np.float32
    assert frame.min() >= 0.0 and frame.max() <= 1.0
    scaled = frame.astype(np.float64) * 255.0
    assert np.allclose(scaled, np.round(scaled), atol=1e-3)


def test_render_is_deterministic():
    assert np.array_equal(render(IDENTITY, NEUTRAL), render(IDENTITY, NEUTRAL))


def test_torso_band_is_flat_identity_color():
    frame = render(IDENTITY, NEUTRAL)
    band = frame[torso_mask()]
    assert len(band) > 0
    assert np.allclose(band, band[0])
    assert np.allclose(band[0], torso_color(IDENTITY), atol=1.0 / 255)


def test_expression_and_pose_change_pixels():
    base = render(IDENTITY, NEUTRAL)
    mouth = MotionParams(roll=0.0, trans=(0.0, 0.0), scale=1.0, expr=(1.0, 1.0, 1.0, 0.5, 0.5))
    shifted = MotionParams(roll=0.0, trans=(0.2, 0.0), scale=1.0, expr=NEUTRAL.expr)
    assert not np.array_equal(base, render(IDENTITY, mouth))
    assert not np.array_equal(base, render(IDENTITY, shifted))


def test_head_coverage_follows_translation():
    left = head_coverage(IDENTITY, MotionParams(roll=0.0, trans=(-0.2, 0.0), scale=1.0, expr=NEUTRAL.expr))
    right = head_coverage(IDENTITY, MotionParams(roll=0.0, trans=(0.2, 0.0), scale=1.0, expr=NEUTRAL.expr))
    cols = np.arange(64)
    assert (left.sum(axis=0) * cols).sum() / left.sum() < (right.sum(axis=0) * cols).sum() / right.sum()


def test_render_rejects_out_of_range_motion():
    with pytest.raises(InvalidInputError):
        render(IDENTITY, MotionParams(roll=1.0, trans=(0.0, 0.0), scale=1.0, expr=NEUTRAL.expr))
    with pytest.raises(InvalidInputError):
        render(IDENTITY, MotionParams(roll=0.0, trans=(0.0, 0.0), scale=1.0, expr=(1.0, 1.0, 1.5, 0.5, 0.5)))


def test_extract_hybrid_motion_is_exact():
    m_f, k_d = extract_hybrid_motion(NEUTRAL, IDENTITY)
    assert np.array_equal(m_f, np.asarray(NEUTRAL.expr))
    assert k_d.shape == (10, 2)
    assert np.allclose(k_d, canonical_keypoints(IDENTITY))


def test_extract_uses_source_keypoints_under_driving_pose():
    drv = MotionParams(roll=0.0, trans=(0.1, -0.1), scale=1.0, expr=NEUTRAL.expr)
    _, k_d = extract_hybrid_motion(drv, IDENTITY)
    assert np.allclose(k_d - canonical_keypoints(IDENTITY), [0.1, -0.1])


def test_sample_identity_is_valid():
    for seed in range(20):
        sample_identity(np.random.default_rng(seed)).validate()


def test_trajectory_is_smooth_and_seeded():
    motions = sample_trajectory(5, 100)
    assert len(motions) == 100
    units = np.stack([m.to_unit() for m in motions])
    assert units.min() >= 0.0 and units.max() <= 1.0
    assert np.abs(np.diff(units, axis=0)).max() <= 0.05 + 1e-9
    assert [m.to_row() for m in sample_trajectory(5, 100)] == [m.to_row() for m in motions]
    for m in motions:
        m.validate()


def test_trajectory_needs_two_frames():
    with pytest.raises(InvalidInputError):
        sample_trajectory(0, 1)
