import platform
import random
from importlib import metadata
from typing import Dict, Sequence

import numpy as np
import torch

_TRACKED_PACKAGES = ("torch", "numpy", "einops", "Pillow", "pydantic", "scipy", "scikit-image", "tqdm")


def seed_everything(seed: int) -> torch.Generator:
    """
    Seed the global RNGs and return a dedicated CPU generator for the caller.
    Library code draws only from explicit generators; the global seeds cover
    third-party code that does not take one.
    """
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)
    return torch.Generator().manual_seed(seed)


def library_versions() -> Dict[str, str]:
    out = {"python": platform.python_version()}
    for name in _TRACKED_PACKAGES:
        try:
            out[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            out[name] = "missing"
    return out


def percentile(values: Sequence[float], q: float) -> float:
    if len(values) == 0:
        return 0.0
    return float(np.percentile(np.asarray(values, dtype=np.float64), q))