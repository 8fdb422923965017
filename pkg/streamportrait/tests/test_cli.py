"""
End-to-end command checks on a tiny dataset.

    pytest streamportrait/tests/test_cli.py -vs
"""

import json

from apps.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main


def _write_config(tmp_path, *extra: str) -> str:
    lines = [
        f"data.root = {tmp_path / 'toyfaces'}",
        "data.clips = 2",
        "data.frames_per_clip = 20",
        "model.base_channels = 8",
        "model.heads = 2",
        "eval.refit_budget = 10",
        *extra,
    ]
    path = tmp_path / "config.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


def test_bad_config_exits_with_config_error(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("model.base_channels = 12\n", encoding="utf-8")
    assert main(["--config", str(path), "--out", str(tmp_path / "run"), "gen-data"]) == EXIT_CONFIG


def test_gen_data_then_eval_ground_truth(tmp_path):
    config = _write_config(tmp_path)
    assert main(["--config", config, "--out", str(tmp_path / "gen"), "gen-data"]) == EXIT_OK
    manifest = json.loads((tmp_path / "toyfaces" / "manifest.json").read_text(encoding="utf-8"))
    assert len(manifest["clips"]) == 2

    run_manifest = json.loads((tmp_path / "gen" / "manifest.json").read_text(encoding="utf-8"))
    assert run_manifest["command"][-1] == "gen-data"
    assert len(run_manifest["config_hash"]) == 64

    assert main(["--config", config, "--out", str(tmp_path / "eval"), "eval", "--clip", "clip_00000"]) == EXIT_OK
    metrics = (tmp_path / "eval" / "metrics.txt").read_text(encoding="utf-8")
    print(metrics)
    assert "l1 = 0.0\n" in metrics


def test_gen_data_refuses_to_overwrite(tmp_path):
    config = _write_config(tmp_path)
    assert main(["--config", config, "--out", str(tmp_path / "a"), "gen-data"]) == EXIT_OK
    assert main(["--config", config, "--out", str(tmp_path / "b"), "gen-data"]) == EXIT_RUNTIME


def test_missing_checkpoint_is_a_runtime_error(tmp_path):
    config = _write_config(tmp_path)
    argv = ["--config", config, "--out", str(tmp_path / "run"), "bench", "--ckpt", str(tmp_path / "none.pliv"),
            "--mode", "streaming"]
    assert main(argv) == EXIT_RUNTIME


def test_train_stage1_then_stream(tmp_path):
    config = _write_config(tmp_path, "train.steps_stage1 = 1", "train.batch_stage1 = 1")
    assert main(["--config", config, "--out", str(tmp_path / "gen"), "gen-data"]) == EXIT_OK
    ckpt = str(tmp_path / "stage1.pliv")
    assert main(["--config", config, "--out", str(tmp_path / "train"), "train", "--stage", "1",
                 "--ckpt-out", ckpt]) == EXIT_OK

    motions = tmp_path / "motions.csv"
    rows = ["roll,tx,ty,scale,expr0,expr1,expr2,expr3,expr4"]
    rows += [f"0.0,{0.01 * i:.2f},0.0,1.0,1.0,1.0,0.0,0.5,0.5" for i in range(10)]
    motions.write_text("\n".join(rows) + "\n", encoding="utf-8")
    argv = ["--config", config, "--out", str(tmp_path / "stream"), "stream", "--ckpt", ckpt,
            "--motions", str(motions), "--save-state", str(tmp_path / "state.pliv")]
    assert main(argv) == EXIT_OK
    # 10 motions at M=4: two steps, two motions left pending
    assert len(list((tmp_path / "stream" / "frames").glob("frame_*.png"))) == 8
    assert (tmp_path / "state.pliv").exists()


def test_stage2_without_init_is_rejected(tmp_path):
    config = _write_config(tmp_path)
    assert main(["--config", config, "--out", str(tmp_path / "gen"), "gen-data"]) == EXIT_OK
    assert main(["--config", config, "--out", str(tmp_path / "t2"), "train", "--stage", "2"]) == EXIT_RUNTIME
