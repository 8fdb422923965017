import numpy as np
import pytest

from streamportrait.config import DataConfig
from streamportrait.errors import DatasetError
from streamportrait.schemas import MotionParams
from streamportrait.store.dataset import DatasetRepository, parse_motion_line
from streamportrait.toyface import render


def _config(tmp_path, **overrides) -> DataConfig:
    values = dict(root=str(tmp_path / "toyfaces"), clips=4, frames_per_clip=5, val_fraction=0.25, test_fraction=0.25)
    values.update(overrides)
    return DataConfig(**values)


def test_split_sizes():
    assert DatasetRepository.split_sizes(10, 0.1, 0.1) == {"train": 8, "val": 1, "test": 1}
    assert DatasetRepository.split_sizes(3, 0.0, 0.0) == {"train": 3, "val": 0, "test": 0}


def test_clip_seeds_differ_across_splits():
    seeds = {DatasetRepository.clip_seed(7, split, 0) for split in ("train", "val", "test")}
    assert len(seeds) == 3
    assert DatasetRepository.clip_seed(7, "train", 1) == DatasetRepository.clip_seed(7, "train", 1)


def test_build_and_reload_is_exact(tmp_path):
    config = _config(tmp_path)
    repo = DatasetRepository(config.root)
    repo.build(config)

    manifest = repo.manifest()
    assert [c["split"] for c in manifest["clips"]] == ["train", "train", "val", "test"]
    assert repo.clip_ids("val") == ["clip_00002"]

    reopened = DatasetRepository(config.root)
    for clip_id in reopened.clip_ids():
        clip = reopened.load_clip(clip_id)
        assert len(clip) == 5
        for frame, motion in zip(clip.frames, clip.motions):
            assert np.array_equal(frame, render(clip.identity, motion))


def test_builds_are_reproducible(tmp_path):
    a = DatasetRepository(str(tmp_path / "a"))
    a.build(_config(tmp_path, root=str(tmp_path / "a")))
    b = DatasetRepository(str(tmp_path / "b"))
    b.build(_config(tmp_path, root=str(tmp_path / "b")))
    assert [c["seed"] for c in a.manifest()["clips"]] == [c["seed"] for c in b.manifest()["clips"]]
    assert a.load_clip("clip_00001").motions == b.load_clip("clip_00001").motions


def test_refuses_non_empty_root(tmp_path):
    config = _config(tmp_path)
    DatasetRepository(config.root).build(config)
    with pytest.raises(DatasetError):
        DatasetRepository(config.root).build(config)
    DatasetRepository(config.root).build(config.model_copy(update={"overwrite": True, "clips": 2}))
    assert len(DatasetRepository(config.root).clip_ids()) == 2


def test_missing_dataset(tmp_path):
    repo = DatasetRepository(str(tmp_path / "empty"))
    with pytest.raises(DatasetError):
        repo.manifest()
    with pytest.raises(DatasetError):
        repo.load_clip("clip_00000")


def test_empty_split(tmp_path):
    config = _config(tmp_path, clips=2, val_fraction=0.0, test_fraction=0.0)
    repo = DatasetRepository(config.root)
    repo.build(config)
    with pytest.raises(DatasetError):
        repo.load_split("val")
    assert len(repo.load_split("train")) == 2


def test_parse_motion_line():
    assert parse_motion_line("roll,tx,ty,scale,expr0,expr1,expr2,expr3,expr4") is None
    assert parse_motion_line("# identity,face_hue,0.1") is None
    assert parse_motion_line("  ") is None
    assert parse_motion_line("0.0,0.0,0.0,1.0,1.0,1.0,0.0,0.5,0.5") == MotionParams.neutral()
