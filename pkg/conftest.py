"""
Shared pytest fixtures: a tiny model configuration, in-memory toy-face clips
and an audit log redirected into the test's temporary directory.

    pytest streamportrait -q
"""

import numpy as np
import pytest

from streamportrait.audit_log import reset_audit_logger
from streamportrait.config import Config
from streamportrait.nets import build_denoiser
from streamportrait.schemas import MotionParams
from streamportrait.toyface import make_clip, render, sample_identity, sample_trajectory

TINY = {
    "model": {"base_channels": 8, "heads": 2},
    "train": {
        "batch_stage1": 2,
        "batch_stage2": 2,
        "batch_stage3": 1,
        "steps_stage1": 2,
        "steps_stage2": 2,
        "steps_stage3": 1,
        "seq_len": 24,
        "log_every": 1,
    },
    "data": {"clips": 3, "frames_per_clip": 24, "val_fraction": 0.0, "test_fraction": 0.0},
    "eval": {"refit_budget": 10},
}


def tiny(tmp_path=None, **sections) -> Config:
    """The tiny config with per-section overrides, e.g. tiny(stream={"tau": 0.0})."""
    data = {k: dict(v) for k, v in TINY.items()}
    for section, values in sections.items():
        data.setdefault(section, {}).update(values)
    if tmp_path is not None:
        data["data"]["root"] = str(tmp_path / "toyfaces")
    return Config.model_validate(data)


@pytest.fixture(autouse=True)
def audit_to_tmp(tmp_path):
    reset_audit_logger(str(tmp_path / "logs"))
    yield
    reset_audit_logger(None)


@pytest.fixture
def tiny_config(tmp_path) -> Config:
    return tiny(tmp_path)


@pytest.fixture
def make_config(tmp_path):
    def _make(**sections) -> Config:
        return tiny(tmp_path, **sections)
    return _make


@pytest.fixture
def tiny_clips():
    return [
        make_clip(sample_identity(np.random.default_rng(seed)), sample_trajectory(seed, 24))
        for seed in range(3)
    ]


@pytest.fixture
def denoiser(tiny_config):
    model = tiny_config.model.model_copy(update={"zero_init_output": False})
    return build_denoiser(model, tiny_config.stream.chunk_size).eval()


@pytest.fixture
def face():
    """(identity, neutral source motion, reference frame, 32 driving motions)"""
    identity = sample_identity(np.random.default_rng(3))
    source = MotionParams.neutral()
    return identity, source, render(identity, source), sample_trajectory(11, 32)
