import io
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import numpy as np
import torch

from ..audit_log import get_audit_logger
from ..errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"PLIV1"
FORMAT_VERSION = 1

# torch dtype <-> little-endian numpy dtype string stored in the container
_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.float16: "<f2",
    torch.int64: "<i8",
    torch.int32: "<i4",
    torch.uint8: "|u1",
    torch.bool: "|b1",
}
_TORCH_DTYPES = {v: k for k, v in _DTYPES.items()}


@dataclass
class Checkpoint:
    """
    Named tensors plus a metadata table.

    Tensor names are prefixed by owner, e.g. `denoiser.stem.weight`,
    `ref_encoder.blocks.0.conv.weight`, `disc.layers.0.weight`.

    Meta keys written by the trainers:
        stage        : 1 | 2 | 3
        config       : resolved flat config text
        config_hash  : sha256 of `config`
        seeds        : {"model": ..., "train": ..., "perceptual": ...}
        build        : library versions
    """

    stage: int
    tensors: Dict[str, torch.Tensor] = field(default_factory=dict)
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.stage not in (0, 1, 2, 3):
            raise CheckpointError(f"stage must be 0, 1, 2 or 3, got {self.stage!r}")

    def state_dict(self, prefix: str) -> Dict[str, torch.Tensor]:
        """The tensors under `prefix.`, with the prefix stripped."""
        head = prefix + "."
        return {k[len(head):]: v for k, v in self.tensors.items() if k.startswith(head)}

    def add_state_dict(self, prefix: str, state: Mapping[str, torch.Tensor]) -> None:
        for k, v in state.items():
            self.tensors[f"{prefix}.{k}"] = v.detach().cpu().clone()

    def load_into(self, prefix: str, module: torch.nn.Module) -> None:
        """Copy `prefix.*` tensors into `module`, refusing missing names and shape mismatches."""
        state = self.state_dict(prefix)
        expected = module.state_dict()
        missing = sorted(set(expected) - set(state))
        unexpected = sorted(set(state) - set(expected))
        if missing or unexpected:
            raise CheckpointError(
                f"checkpoint (PLIV1 v{FORMAT_VERSION}) does not match {prefix!r}: "
                f"missing={missing[:5]} unexpected={unexpected[:5]}"
            )
        for name, tensor in state.items():
            if tuple(tensor.shape) != tuple(expected[name].shape):
                raise CheckpointError(
                    f"shape mismatch for {prefix}.{name}: checkpoint {tuple(tensor.shape)} "
                    f"vs model {tuple(expected[name].shape)}"
                )
        module.load_state_dict(state)


def require_stage(checkpoint: Checkpoint, expected: int, purpose: str = "") -> None:
    """Stage gating: training stage k consumes a stage k-1 checkpoint."""
    if checkpoint.stage != expected:
        what = f" for {purpose}" if purpose else ""
        raise CheckpointError(f"checkpoint stage must be {expected}{what}, got {checkpoint.stage!r}")


# --------------------------------------------------------------------------- #
# Container
# --------------------------------------------------------------------------- #

def _write_str(buf: io.BytesIO, s: str) -> None:
    data = s.encode("utf-8")
    buf.write(struct.pack("<I", len(data)))
    buf.write(data)


def to_bytes(checkpoint: Checkpoint) -> bytes:
    """
    Layout (all integers little-endian):

        b"PLIV1" | u32 version | u64 meta_len | meta JSON (sorted keys)
        | u32 n_tensors | n x (str name | str dtype | u32 ndim | ndim x u64 dim | u64 nbytes | raw)

    where `str` is u32 length + utf-8 bytes.
    """
    meta = dict(checkpoint.meta)
    meta["stage"] = checkpoint.stage
    meta["format_version"] = FORMAT_VERSION
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")

    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    buf.write(struct.pack("<Q", len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(checkpoint.tensors)))
    for name, tensor in checkpoint.tensors.items():
        tensor = tensor.detach().cpu().contiguous()
        if tensor.dtype not in _DTYPES:
            raise CheckpointError(f"unsupported tensor dtype for {name!r}: {tensor.dtype}")
        code = _DTYPES[tensor.dtype]
        raw = np.ascontiguousarray(tensor.numpy(), dtype=np.dtype(code)).tobytes()
        _write_str(buf, name)
        _write_str(buf, code)
        buf.write(struct.pack("<I", tensor.dim()))
        for d in tensor.shape:
            buf.write(struct.pack("<Q", d))
        buf.write(struct.pack("<Q", len(raw)))
        buf.write(raw)
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated PLIV1 container at byte {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def from_bytes(data: bytes) -> Checkpoint:
    r = _Reader(data)
    magic = r.take(len(MAGIC))
    if magic != MAGIC:
        raise CheckpointError(f"not a PLIV1 container (magic {magic!r})")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported PLIV1 container version {version}; this build reads v{FORMAT_VERSION}")
    meta = json.loads(r.take(r.u64()).decode("utf-8"))
    tensors: Dict[str, torch.Tensor] = {}
    for _ in range(r.u32()):
        name = r.string()
        code = r.string()
        if code not in _TORCH_DTYPES:
            raise CheckpointError(f"unknown dtype {code!r} for tensor {name!r}")
        shape = tuple(r.u64() for _ in range(r.u32()))
        raw = r.take(r.u64())
        array = np.frombuffer(raw, dtype=np.dtype(code)).reshape(shape).copy()
        tensors[name] = torch.from_numpy(array)
    if r.pos != len(data):
        raise CheckpointError(f"trailing bytes after PLIV1 container (v{version})")
    stage = int(meta.pop("stage", 0))
    meta.pop("format_version", None)
    return Checkpoint(stage=stage, tensors=tensors, meta=meta)


def save_checkpoint(path, checkpoint: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(to_bytes(checkpoint))
    logger.info("saved stage-%d checkpoint with %d tensors to %s", checkpoint.stage, len(checkpoint.tensors), path)
    get_audit_logger().log_event(
        "checkpoint_saved",
        {"path": str(path), "stage": checkpoint.stage, "tensors": len(checkpoint.tensors)},
    )
    return path


def load_checkpoint(path, expected_stage: Optional[int] = None) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {str(path)!r}")
    with open(path, "rb") as f:
        checkpoint = from_bytes(f.read())
    if expected_stage is not None:
        require_stage(checkpoint, expected_stage, purpose=str(path))
    return checkpoint
