"""
Command-line entry point.

    python -m apps.cli [--config FILE] [--out DIR] [--log-level LEVEL] <command> ...

Commands:
    gen-data                         render the toy-face dataset
    train --stage {1,2,3}            train one stage (stages 2 and 3 need --init)
    infer --ckpt F --clip ID         self-reenactment of a dataset clip
    stream --ckpt F --motions F|-    stream driving motions from a file or stdin
    eval --clip ID [--generated D]   metric report against a dataset clip
    bench --ckpt F --mode M          streaming vs chunk-wise latency report
    ablate --ckpt F --study S        paired-seed ablation study

Exit codes: 0 ok, 2 configuration error, 3 runtime error.
"""
# apps/cli.py
import argparse
import itertools
import logging
import os
import sys
import time
from datetime import datetime
from pathlib import Path
from typing import List, Optional

import numpy as np

from streamportrait.ablations import STUDIES, Scenario, run_study
from streamportrait.config import Config, config_hash, dump_config, load_config
from streamportrait.errors import ConfigError, InvalidInputError
from streamportrait.evalkit import bench, evaluate
from streamportrait.run_logger import RunLogger
from streamportrait.schemas import MotionParams
from streamportrait.store import DatasetRepository, load_checkpoint, save_checkpoint
from streamportrait.store.dataset import load_frame
from streamportrait.streamer import FrameSink, feed_motion, init_stream, iter_motions, run_stream
from streamportrait.toyface import build_dataset, render, sample_identity
from streamportrait.trainers import models_from_checkpoint, train_stage
from streamportrait.utils import library_versions

logger = logging.getLogger("streamportrait.cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    p = argparse.ArgumentParser("streamportrait")
    p.add_argument("--config", default=None, help="flat key-value config file; defaults apply when omitted")
    p.add_argument("--out", default=None, help="run directory (default ./runs/<command>_<timestamp>)")
    p.add_argument("--log-level", default="INFO")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data")

    train = sub.add_parser("train")
    train.add_argument("--stage", type=int, choices=(1, 2, 3), required=True)
    train.add_argument("--init", default=None, help="checkpoint of the previous stage")
    train.add_argument("--ckpt-out", default=None)

    infer = sub.add_parser("infer")
    infer.add_argument("--ckpt", required=True)
    infer.add_argument("--clip", required=True)

    stream = sub.add_parser("stream")
    stream.add_argument("--ckpt", required=True)
    stream.add_argument("--motions", required=True, help="params.csv-style rows; '-' reads stdin")
    stream.add_argument("--clip", default=None, help="dataset clip whose first frame is the reference")
    stream.add_argument("--identity-seed", type=int, default=0)
    stream.add_argument("--fps", type=float, default=None, help="pace emission in real time")
    stream.add_argument("--output", choices=("frames", "raw"), default=None)
    stream.add_argument("--save-state", default=None)

    ev = sub.add_parser("eval")
    ev.add_argument("--clip", required=True)
    ev.add_argument("--generated", default=None, help="directory of frame_*.png; the clip itself when omitted")

    bn = sub.add_parser("bench")
    bn.add_argument("--ckpt", required=True)
    bn.add_argument("--mode", choices=("streaming", "chunkwise"), required=True)
    bn.add_argument("--frames", type=int, default=200)
    bn.add_argument("--seed", type=int, default=0)

    ab = sub.add_parser("ablate")
    ab.add_argument("--ckpt", required=True)
    ab.add_argument("--baseline-ckpt", default=None)
    ab.add_argument("--no-adv-ckpt", default=None, help="distilled with lambda_adv=0 (distill study only)")
    ab.add_argument("--study", choices=STUDIES, required=True)
    ab.add_argument("--seeds", type=int, default=None)
    ab.add_argument("--frames", type=int, default=None)

    return p.parse_args(argv)


# --------------------------------------------------------------------------- #
# Commands
# --------------------------------------------------------------------------- #

def cmd_gen_data(args, config: Config, run: RunLogger) -> None:
    root = build_dataset(config.data)
    print(f"[gen-data] {config.data.clips} clips x {config.data.frames_per_clip} frames -> {root}")


def cmd_train(args, config: Config, run: RunLogger) -> None:
    previous = load_checkpoint(args.init, expected_stage=args.stage - 1) if args.init else None
    ckpt = train_stage(args.stage, config.data.root, config, previous, run_logger=run)
    path = Path(args.ckpt_out or run.path(f"stage{args.stage}.pliv"))
    save_checkpoint(path, ckpt)
    print(f"[train] stage {args.stage}: final_loss={ckpt.meta.get('final_loss', float('nan')):.6f} -> {path}")


def _load_models(args, config: Config):
    ckpt = load_checkpoint(args.ckpt)
    return models_from_checkpoint(ckpt, config, chunk_size=config.stream.chunk_size)


def cmd_infer(args, config: Config, run: RunLogger) -> None:
    clip = DatasetRepository(config.data.root).load_clip(args.clip)
    models = _load_models(args, config)
    M = config.stream.chunk_size
    motions = clip.motions[: len(clip) - len(clip) % M]
    result = run_stream(
        clip.frames[0], motions, models.denoiser, config.stream,
        identity=clip.identity, source_motion=clip.motions[0], compact=models.compact, schedule=models.schedule,
    )
    FrameSink("frames", run.path("frames")).write(result.frames)
    run.log_timing(result.timing)
    print(f"[infer] {args.clip}: {len(result.frames)} frames, bank={len(result.state.bank)} -> {run.path('frames')}")


def cmd_stream(args, config: Config, run: RunLogger) -> None:
    models = _load_models(args, config)
    if args.clip:
        clip = DatasetRepository(config.data.root).load_clip(args.clip)
        reference, identity, source = clip.frames[0], clip.identity, clip.motions[0]
    else:
        identity = sample_identity(np.random.default_rng(args.identity_seed))
        source = MotionParams.neutral()
        reference = render(identity, source)

    mode = args.output or config.stream.output
    sink = FrameSink(mode, run.path("frames") if mode == "frames" else None)
    report = sys.stderr if mode == "raw" else sys.stdout
    lines = sys.stdin if args.motions == "-" else open(args.motions, "r", encoding="utf-8")
    try:
        motions = iter_motions(lines)
        first = next(motions, None)
        if first is None:
            raise InvalidInputError("motion stream is empty")
        state = init_stream(
            reference, source, first, models.denoiser, config.stream,
            identity=identity, compact=models.compact, schedule=models.schedule,
        )
        fps = args.fps or config.stream.live_fps
        pace = config.stream.chunk_size / fps if fps else None
        deadline = time.perf_counter()
        for motion in itertools.chain([first], motions):
            frames = feed_motion(state, motion)
            if not frames:
                continue
            if pace is not None:
                deadline += pace
                delay = deadline - time.perf_counter()
                if delay > 0:
                    time.sleep(delay)
            sink.write(frames)
    finally:
        if lines is not sys.stdin:
            lines.close()

    run.log_timing(state.timing)
    if args.save_state:
        state.save(args.save_state)
    print(f"[stream] emitted={state.emitted_count}, pending={len(state.pending)}, bank={len(state.bank)}", file=report)


def cmd_eval(args, config: Config, run: RunLogger) -> None:
    clip = DatasetRepository(config.data.root).load_clip(args.clip)
    if args.generated:
        paths = sorted(Path(args.generated).glob("frame_*.png"))
        if not paths:
            raise InvalidInputError(f"no frame_*.png under {args.generated!r}")
        generated = [load_frame(p) for p in paths]
    else:
        generated = list(clip.frames)
    if len(generated) > len(clip):
        raise InvalidInputError(f"generated has {len(generated)} frames; the clip has {len(clip)}")
    n = len(generated)
    report = evaluate(
        generated, clip.frames[:n], clip.motions[:n], clip.identity,
        refit_budget=config.eval.refit_budget, refit_seed=config.eval.refit_seed,
    )
    run.log_metrics(report)
    print(f"[eval] {args.clip}: l1={report.l1:.5f}, ssim={report.ssim:.4f}, tlp={report.tlp_proxy:.3f}, "
          f"aed={report.aed:.4f}, apd={report.apd:.4f}, id_drift={report.id_drift:.4f}")


def cmd_bench(args, config: Config, run: RunLogger) -> None:
    models = _load_models(args, config)
    scenario = Scenario.sample(args.seed, args.frames)
    report = bench(
        args.mode, scenario.reference, scenario.driving, models.denoiser, config.stream,
        identity=scenario.identity, source_motion=scenario.source_motion,
        compact=models.compact, schedule=models.schedule,
    )
    run.log_bench(report)
    print(f"[bench] {args.mode}: fps={report.fps:.2f}, latency={report.inter_chunk_latency_ms:.2f}ms "
          f"(p95 {report.inter_chunk_latency_p95_ms:.2f}ms), calls/frame={report.denoiser_calls_per_frame:.1f}")


def cmd_ablate(args, config: Config, run: RunLogger) -> None:
    main_ckpt = load_checkpoint(args.ckpt)
    baseline = load_checkpoint(args.baseline_ckpt) if args.baseline_ckpt else None
    no_adv = load_checkpoint(args.no_adv_ckpt) if args.no_adv_ckpt else None
    result = run_study(
        args.study, config, main_ckpt, baseline,
        seeds=args.seeds or config.eval.rollout_seeds, frames=args.frames or config.eval.rollout_frames,
        no_adv=no_adv,
    )
    run.log_ablation(args.study, result.to_dict())


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "infer": cmd_infer,
    "stream": cmd_stream,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "ablate": cmd_ablate,
}


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args.config)
    except ConfigError as e:
        logger.error("%s", e)
        return EXIT_CONFIG

    save_dir = args.out or os.path.join("./runs", f"{args.command}_{datetime.now().strftime('%Y%m%d_%H%M%S')}")
    try:
        run = RunLogger(save_dir)
        run.log_manifest(
            command=argv,
            config_text=dump_config(config),
            config_hash=config_hash(config),
            seeds={
                "data": config.data.seed,
                "model": config.model.seed,
                "perceptual": config.model.perceptual_seed,
                "train": config.train.seed,
                "stream": config.stream.seed,
            },
            versions=library_versions(),
        )
        COMMANDS[args.command](args, config, run)
    except ConfigError as e:
        logger.error("%s", e)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001
        logger.error("%s failed: %s", args.command, e)
        logger.debug("traceback", exc_info=True)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
