# streamportrait/run_logger.py

import csv
import json
import os
from dataclasses import asdict
from typing import Any, Dict, Iterable, List, Optional

from .schemas import BenchReport, LossReport, MetricReport, TimingRecord

LOSS_COLUMNS = ("step", "total", "mse", "perceptual", "adversarial", "disc_loss")
TIMING_COLUMNS = ("step", "wall_ms", "emitted_count", "bank_size")


class RunLogger:
    """
    Per-run logger that writes, under one directory:

    - Run manifest (config hash, resolved config, seeds, versions, command):
        <save_dir>/manifest.json

    - Loss curves, one tab-separated table per training stage:
        <save_dir>/loss_stage<k>.tsv

    - Streaming timing log:
        <save_dir>/timing.tsv

    - Metric and benchmark reports:
        <save_dir>/metrics.txt, <save_dir>/metrics_frames.csv, <save_dir>/bench.txt

    - Ablation results:
        <save_dir>/ablation_<study>.json
    """

    def __init__(self, save_dir: str = ".") -> None:
        # save_dir is the base directory for this run, e.g. "./runs/stage1"
        self.base_dir = os.path.abspath(save_dir)
        os.makedirs(self.base_dir, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.base_dir, name)

    def _ensure_table(self, name: str, columns: Iterable[str]) -> str:
        """
        Create a tab-separated table with its header row unless it already exists.
        """
        path = self.path(name)
        if not os.path.exists(path):
            with open(path, "w", encoding="utf-8") as f:
                f.write("\t".join(columns) + "\n")
        return path

    # ---------------- Manifest ---------------- #

    def log_manifest(
        self,
        *,
        command: List[str],
        config_text: str,
        config_hash: str,
        seeds: Dict[str, int],
        versions: Dict[str, str],
        extra: Optional[Dict[str, Any]] = None,
    ) -> None:
        """
        Payload shape:
        {
          "command": ["train", "--stage", "1", ...],
          "config_hash": "<sha256>",
          "config": "data.root = ...\\n...",
          "seeds": {"data": 7, "model": 0, ...},
          "versions": {"python": "...", "torch": "...", ...},
          ...extra
        }
        """
        data = {
            "command": command,
            "config_hash": config_hash,
            "config": config_text,
            "seeds": seeds,
            "versions": versions,
        }
        if extra:
            data.update(extra)
        with open(self.path("manifest.json"), "w", encoding="utf-8") as f:
            json.dump(data, f, ensure_ascii=False, indent=2)

    # ---------------- Training ---------------- #

    def log_loss(self, *, stage: int, step: int, report: LossReport) -> None:
        path = self._ensure_table(f"loss_stage{stage}.tsv", LOSS_COLUMNS)
        with open(path, "a", encoding="utf-8") as f:
            f.write("\t".join([str(step)] + [repr(float(v)) for v in report.as_row()]) + "\n")

    # ---------------- Streaming ---------------- #

    def log_timing(self, records: Iterable[TimingRecord]) -> None:
        path = self._ensure_table("timing.tsv", TIMING_COLUMNS)
        with open(path, "a", encoding="utf-8") as f:
            for r in records:
                f.write(f"{r.step}\t{r.wall_ms:.3f}\t{r.emitted_count}\t{r.bank_size}\n")

    # ---------------- Reports ---------------- #

    def log_metrics(self, report: MetricReport) -> None:
        with open(self.path("metrics.txt"), "w", encoding="utf-8") as f:
            for key in ("l1", "ssim", "tlp_proxy", "aed", "apd", "id_drift"):
                f.write(f"{key} = {getattr(report, key)!r}\n")
        series = report.series
        if series:
            keys = sorted(series)
            with open(self.path("metrics_frames.csv"), "w", encoding="utf-8", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(["frame"] + keys)
                for i in range(len(series[keys[0]])):
                    writer.writerow([i] + [repr(float(series[k][i])) for k in keys])

    def log_bench(self, report: BenchReport) -> None:
        with open(self.path("bench.txt"), "w", encoding="utf-8") as f:
            for key, value in asdict(report).items():
                f.write(f"{key} = {value!r}\n")

    def log_ablation(self, study: str, payload: Dict[str, Any]) -> None:
        with open(self.path(f"ablation_{study}.json"), "w", encoding="utf-8") as f:
            json.dump(payload, f, ensure_ascii=False, indent=2)
