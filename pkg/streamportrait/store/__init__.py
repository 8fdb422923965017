from .checkpoint import Checkpoint, load_checkpoint, require_stage, save_checkpoint
from .dataset import DatasetRepository

__all__ = ["Checkpoint", "DatasetRepository", "load_checkpoint", "require_stage", "save_checkpoint"]
