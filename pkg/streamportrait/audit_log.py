# streamportrait/audit_log.py

import dataclasses
import json
import math
import os
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterator, Optional

import numpy as np
import torch

EVENTS = frozenset(
    {
        "train_step",
        "checkpoint_saved",
        "keyframe_added",
        "stream_step",
        "dataset_built",
        "bench_report",
        "ablation",
    }
)


def _jsonable(value: Any) -> Any:
    """Reduce tensors, arrays, dataclasses and paths to plain JSON values."""
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    if isinstance(value, np.ndarray):
        return value.item() if value.ndim == 0 else [_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return _jsonable(dataclasses.asdict(value))
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    return value


class AuditLogger:
    """
    JSONL event log shared by training, streaming and benchmarking.

    Each line in the log file is a JSON object:

        {
          "ts": "2026-01-01T12:34:56.789012Z",
          "pid": 4242,
          "event": one of EVENTS,
          "data": { ... payload, tensors and numpy scalars reduced to JSON ... }
        }

    Non-finite floats are written as strings ("inf", "nan") so every line stays
    strict JSON. Log directory can be configured with env STREAMPORTRAIT_LOG_DIR.
    """

    def __init__(
        self,
        log_dir: Optional[str] = None,
        filename_prefix: str = "streamportrait_events",
    ) -> None:
        self.log_dir = log_dir or os.environ.get("STREAMPORTRAIT_LOG_DIR", "./logs")
        self.filename = os.path.join(self.log_dir, f"{filename_prefix}.jsonl")
        self._lock = threading.Lock()

    def log_event(self, event: str, data: Dict[str, Any]) -> None:
        """
        Append one event line. Never raises; an unknown event name is recorded
        with a warning instead of being dropped.
        """
        record: Dict[str, Any] = {
            "ts": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ"),
            "pid": os.getpid(),
            "event": event,
        }
        if event not in EVENTS:
            record["warning"] = f"unknown event {event!r}"
        try:
            line = json.dumps({**record, "data": _jsonable(data)}, ensure_ascii=False, allow_nan=False)
        except Exception:
            line = json.dumps({**record, "data": repr(data), "warning": "payload not JSON-encodable"})

        try:
            with self._lock:
                os.makedirs(self.log_dir, exist_ok=True)
                with open(self.filename, "a", encoding="utf-8") as f:
                    f.write(line + "\n")
        except Exception:
            # logging must never stop a training or streaming run
            pass

    def read_events(self, event: Optional[str] = None) -> Iterator[Dict[str, Any]]:
        """Yield logged records in order, optionally only those named `event`."""
        if not os.path.exists(self.filename):
            return
        with open(self.filename, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                if event is None or record.get("event") == event:
                    yield record


_global_logger: Optional[AuditLogger] = None
_global_lock = threading.Lock()


def get_audit_logger() -> AuditLogger:
    global _global_logger
    if _global_logger is None:
        with _global_lock:
            if _global_logger is None:
                _global_logger = AuditLogger()
    return _global_logger


def reset_audit_logger(log_dir: Optional[str] = None) -> AuditLogger:
    """Replace the singleton with one writing under `log_dir` (env/default when None)."""
    global _global_logger
    with _global_lock:
        _global_logger = AuditLogger(log_dir=log_dir)
    return _global_logger
