import csv
import json
import logging
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from PIL import Image

from ..audit_log import get_audit_logger
from ..errors import DatasetError
from ..schemas import IDENTITY_FIELDS, MOTION_FIELDS, Clip, IdentityParams, MotionParams

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
PARAMS_NAME = "params.csv"
SPLITS = ("train", "val", "test")


@dataclass
class DatasetRepository:
    """
    On-disk toy-face dataset.

    Layout:

        <root>/manifest.json
        <root>/<clip_id>/frame_00000.png ...   # lossless 8-bit RGB
        <root>/<clip_id>/params.csv

    Manifest schema:

    {
        "format": 1,
        "seed": <int>,
        "fps": 25,
        "frame_size": 64,
        "clips": [
            {"clip_id": "clip_00000", "split": "train" | "val" | "test", "T": <int>, "seed": <int>},
            ...
        ]
    }

    params.csv starts with one `# identity,<field>,<value>` line per identity
    field, then a header row `roll,tx,ty,scale,expr0..expr4` and one row per frame.
    Floats are written with repr(), which round-trips float64 exactly.
    """

    root: str

    def __post_init__(self) -> None:
        self.root = Path(self.root)
        self._manifest: Optional[Dict[str, Any]] = None

    # ------------------------------------------------------------------ #
    # Build
    # ------------------------------------------------------------------ #

    @staticmethod
    def clip_seed(dataset_seed: int, split: str, index: int) -> int:
        """Per-clip seed; each split draws from its own seed stream."""
        ss = np.random.SeedSequence([dataset_seed, SPLITS.index(split), index])
        return int(ss.generate_state(1, dtype=np.uint32)[0])

    @staticmethod
    def split_sizes(n: int, val_fraction: float, test_fraction: float) -> Dict[str, int]:
        n_val = int(round(n * val_fraction))
        n_test = int(round(n * test_fraction))
        return {"train": n - n_val - n_test, "val": n_val, "test": n_test}

    def build(self, config) -> None:
        """
        Render and write every clip of a `DataConfig`.
        Refuses a non-empty root unless `config.overwrite` is set.
        """
        from ..toyface import make_clip, sample_identity, sample_trajectory

        if self.root.exists() and any(self.root.iterdir()):
            if not config.overwrite:
                raise DatasetError(f"dataset root {str(self.root)!r} is not empty (set data.overwrite = true)")
            shutil.rmtree(self.root)
        self.root.mkdir(parents=True, exist_ok=True)

        sizes = self.split_sizes(config.clips, config.val_fraction, config.test_fraction)
        entries: List[Dict[str, Any]] = []
        for split in SPLITS:
            for j in range(sizes[split]):
                seed = self.clip_seed(config.seed, split, j)
                rng = np.random.default_rng(seed)
                identity = sample_identity(rng)
                motions = sample_trajectory(int(rng.integers(0, 2**31 - 1)), config.frames_per_clip)
                clip_id = f"clip_{len(entries):05d}"
                self.write_clip(clip_id, make_clip(identity, motions, fps=config.fps))
                entries.append({"clip_id": clip_id, "split": split, "T": config.frames_per_clip, "seed": seed})

        manifest = {"format": 1, "seed": config.seed, "fps": config.fps, "frame_size": 64, "clips": entries}
        with open(self.root / MANIFEST_NAME, "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2)
        self._manifest = manifest

        logger.info("wrote %d clips to %s (%s)", len(entries), self.root, sizes)
        get_audit_logger().log_event("dataset_built", {"root": str(self.root), "clips": len(entries), **sizes})

    def write_clip(self, clip_id: str, clip: Clip) -> None:
        clip_dir = self.root / clip_id
        clip_dir.mkdir(parents=True, exist_ok=True)
        for i, frame in enumerate(clip.frames):
            pixels = np.rint(np.asarray(frame, dtype=np.float64) * 255.0).astype(np.uint8)
            Image.fromarray(pixels, mode="RGB").save(clip_dir / f"frame_{i:05d}.png")
        with open(clip_dir / PARAMS_NAME, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            for name, value in zip(IDENTITY_FIELDS, clip.identity.as_tuple()):
                writer.writerow(["# identity", name, repr(float(value))])
            writer.writerow(MOTION_FIELDS)
            for m in clip.motions:
                writer.writerow([repr(v) for v in m.to_row()])

    # ------------------------------------------------------------------ #
    # Read
    # ------------------------------------------------------------------ #

    def manifest(self) -> Dict[str, Any]:
        if self._manifest is None:
            path = self.root / MANIFEST_NAME
            if not path.exists():
                raise DatasetError(f"no dataset manifest at {str(path)!r}; run gen-data first")
            with open(path, "r", encoding="utf-8") as f:
                self._manifest = json.load(f)
        return self._manifest

    def clip_ids(self, split: Optional[str] = None) -> List[str]:
        return [c["clip_id"] for c in self.manifest()["clips"] if split is None or c["split"] == split]

    def load_clip(self, clip_id: str) -> Clip:
        clip_dir = self.root / clip_id
        params_path = clip_dir / PARAMS_NAME
        if not params_path.exists():
            raise DatasetError(f"missing clip {clip_id!r} under {str(self.root)!r}")
        identity, motions = read_params(params_path)
        frames = [load_frame(clip_dir / f"frame_{i:05d}.png") for i in range(len(motions))]
        return Clip(identity=identity, frames=frames, motions=motions, fps=self.manifest().get("fps", 25))

    def load_split(self, split: str) -> List[Clip]:
        ids = self.clip_ids(split)
        if not ids:
            raise DatasetError(f"split {split!r} of {str(self.root)!r} is empty")
        return [self.load_clip(c) for c in ids]


def load_frame(path) -> np.ndarray:
    with Image.open(path) as im:
        pixels = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return (pixels.astype(np.float64) / 255.0).astype(np.float32)


def save_frame(path, frame: np.ndarray) -> None:
    pixels = np.rint(np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(pixels, mode="RGB").save(path)


def read_params(path) -> tuple:
    identity_values: Dict[str, float] = {}
    motions: List[MotionParams] = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        for row in csv.reader(f):
            if not row:
                continue
            if row[0].startswith("#"):
                identity_values[row[1]] = float(row[2])
            elif row[0] == MOTION_FIELDS[0]:
                continue
            else:
                motions.append(MotionParams.from_row(row))
    return IdentityParams.from_dict(identity_values), motions


def parse_motion_line(line: str) -> Optional[MotionParams]:
    """One params.csv data row; header, comment and blank lines give None."""
    line = line.strip()
    if not line or line.startswith("#") or line.startswith(MOTION_FIELDS[0]):
        return None
    return MotionParams.from_row(next(csv.reader([line])))
