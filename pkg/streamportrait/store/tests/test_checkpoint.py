import struct

import pytest
import torch

from streamportrait.errors import CheckpointError
from streamportrait.store.checkpoint import (
    Checkpoint,
    from_bytes,
    load_checkpoint,
    require_stage,
    save_checkpoint,
    to_bytes,
)

SAMPLE_META = {"config_hash": "abc", "seeds": {"model": 0, "train": 0}, "steps": 12}


def _sample() -> Checkpoint:
    ckpt = Checkpoint(stage=2, meta=dict(SAMPLE_META))
    ckpt.tensors["denoiser.w"] = torch.arange(6, dtype=torch.float32).reshape(2, 3)
    ckpt.tensors["denoiser.b"] = torch.tensor([1.5], dtype=torch.float64)
    ckpt.tensors["rng"] = torch.tensor([0, 255, 7], dtype=torch.uint8)
    ckpt.tensors["scalar"] = torch.tensor(3, dtype=torch.int64)
    return ckpt


def test_save_and_load(tmp_path):
    path = save_checkpoint(tmp_path / "sub" / "model.pliv", _sample())
    loaded = load_checkpoint(path, expected_stage=2)
    assert loaded.stage == 2
    assert loaded.meta == SAMPLE_META
    original = _sample()
    assert list(loaded.tensors) == list(original.tensors)
    for name, tensor in original.tensors.items():
        assert loaded.tensors[name].dtype == tensor.dtype
        assert torch.equal(loaded.tensors[name], tensor)


def test_header_layout():
    data = to_bytes(_sample())
    assert data[:5] == b"PLIV1"
    assert struct.unpack("<I", data[5:9])[0] == 1


def test_rejects_wrong_magic():
    data = to_bytes(_sample())
    with pytest.raises(CheckpointError):
        from_bytes(b"XXXX1" + data[5:])


def test_rejects_future_versions():
    data = to_bytes(_sample())
    with pytest.raises(CheckpointError, match="version 2"):
        from_bytes(data[:5] + struct.pack("<I", 2) + data[9:])


def test_rejects_truncation_and_trailing_bytes():
    data = to_bytes(_sample())
    with pytest.raises(CheckpointError):
        from_bytes(data[:-3])
    with pytest.raises(CheckpointError):
        from_bytes(data + b"\x00")


def test_stage_gating(tmp_path):
    path = save_checkpoint(tmp_path / "model.pliv", _sample())
    with pytest.raises(CheckpointError):
        load_checkpoint(path, expected_stage=1)
    require_stage(_sample(), 2)
    with pytest.raises(CheckpointError):
        Checkpoint(stage=4)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.pliv")


def test_load_into_checks_names_and_shapes():
    module = torch.nn.Linear(3, 2)
    ckpt = Checkpoint(stage=1)
    ckpt.add_state_dict("lin", module.state_dict())
    target = torch.nn.Linear(3, 2)
    ckpt.load_into("lin", target)
    assert torch.equal(target.weight, module.weight)

    with pytest.raises(CheckpointError):
        ckpt.load_into("lin", torch.nn.Linear(4, 2))
    with pytest.raises(CheckpointError):
        ckpt.load_into("lin", torch.nn.Conv2d(3, 2, 1, bias=False))
