import io

import numpy as np
import pytest
import torch

from streamportrait.config import StreamConfig
from streamportrait.errors import InvalidInputError
from streamportrait.schedule import DEFAULT_CODEC, CompactSchedule
from streamportrait.schemas import MotionParams
from streamportrait.store.checkpoint import Checkpoint, save_checkpoint
from streamportrait.streamer import (
    FrameSink,
    HistoryBank,
    StreamState,
    feed_motion,
    generate_chunkwise,
    init_stream,
    iter_motions,
    maybe_add_keyframe,
    run_stream,
    sample_uniform_ddim,
    stream_step,
)

CONFIG = StreamConfig(chunk_size=4, seed=7)


def _init(face, denoiser, config=CONFIG, **kwargs):
    identity, source, reference, driving = face
    return init_stream(reference, source, driving[0], denoiser, config, identity=identity, **kwargs)


def _run(face, denoiser, config=CONFIG, frames=32):
    identity, source, reference, driving = face
    return run_stream(reference, driving[:frames], denoiser, config, identity=identity, source_motion=source)


class CallCounter:
    def __init__(self, module):
        self.calls = 0
        self.handle = module.register_forward_hook(self)

    def __call__(self, module, inputs, output):
        self.calls += 1


def test_initial_window_layout(face, denoiser):
    identity, source, reference, driving = face
    state = _init(face, denoiser)
    assert state.window.level_indices == [1, 2, 3, 4]
    assert [len(c) for c in state.window.chunks] == [4, 4, 4, 4]
    assert len(state.bank) == 1
    assert state.warmup_steps == 4
    z_ref = DEFAULT_CODEC.encode(reference)
    assert all(torch.equal(f, z_ref) for f in state.window.chunks[0].frames)
    assert not torch.equal(state.window.chunks[1].frames[0], z_ref)


def test_motion_interpolated_conditioning(face, denoiser):
    identity, source, reference, driving = face
    motions = _init(face, denoiser).window.motions()
    assert len(motions) == 16
    assert motions[0] == source
    assert motions[-1] == driving[0]


def test_noise_init_conditions_on_first_motion(face, denoiser):
    identity, source, reference, driving = face
    state = _init(face, denoiser, CONFIG.model_copy(update={"init_mode": "noise"}))
    assert all(m == driving[0] for m in state.window.motions())


def test_emission_cadence_and_pass_counts(face, denoiser):
    result = _run(face, denoiser)
    assert len(result.frames) == 32
    assert all(f.shape == (64, 64, 3) and f.dtype == np.float32 for f in result.frames)
    assert min(f.min() for f in result.frames) >= 0.0 and max(f.max() for f in result.frames) <= 1.0
    assert [r.emitted_count for r in result.timing] == [4, 8, 12, 16, 20, 24, 28, 32]
    assert all(r.frame_evals == 16 for r in result.timing)
    assert result.state.denoiser_calls == 8
    assert result.passes == [1, 2, 3, 4, 4, 4, 4, 4]
    result.state.window.validate(4, 4)


def test_emitted_motions_follow_the_drive_after_warmup(face, denoiser):
    identity, source, reference, driving = face
    result = _run(face, denoiser)
    assert result.motions[0] == source
    assert result.motions[16:] == list(driving[:16])


def test_stream_step_needs_exactly_m_motions(face, denoiser):
    identity, source, reference, driving = face
    state = _init(face, denoiser)
    with pytest.raises(InvalidInputError):
        stream_step(state, driving[:3])
    with pytest.raises(InvalidInputError):
        stream_step(None, driving[:4])


def test_one_denoiser_pass_per_step(face, denoiser):
    identity, source, reference, driving = face
    state = _init(face, denoiser)
    counter = CallCounter(denoiser)
    stream_step(state, driving[:4])
    stream_step(state, driving[4:8])
    assert counter.calls == 2


def test_chunkwise_baseline_runs_n_passes(face, denoiser):
    identity, source, reference, driving = face
    counter = CallCounter(denoiser)
    frames = generate_chunkwise(
        reference, driving[:16], denoiser, CONFIG, identity=identity, source_motion=source, compact=CompactSchedule()
    )
    assert len(frames) == 16
    assert counter.calls == 4
    with pytest.raises(InvalidInputError):
        generate_chunkwise(reference, driving[:12], denoiser, CONFIG, identity=identity, source_motion=source)


def test_uniform_ddim_runs_one_pass_per_step(face, denoiser):
    identity, source, reference, driving = face
    counter = CallCounter(denoiser)
    frames = sample_uniform_ddim(reference, driving[:8], denoiser, identity=identity, source_motion=source, steps=5)
    assert len(frames) == 8
    assert counter.calls == 5


def test_single_level_stream_matches_chunkwise(face, denoiser):
    identity, source, reference, driving = face
    compact = CompactSchedule((999,), allow_single=True)
    config = CONFIG.model_copy(update={"init_mode": "noise"})
    state = _init(face, denoiser, config, compact=compact)
    noise = state.window.latents().clone()
    streamed = stream_step(state, driving[4:8])
    chunkwise = generate_chunkwise(
        reference, [driving[0]] * 4, denoiser, config,
        identity=identity, source_motion=source, compact=compact, initial_noise=noise,
    )
    assert all(np.array_equal(a, b) for a, b in zip(streamed, chunkwise))


def test_runs_are_deterministic(face, denoiser):
    a = _run(face, denoiser, frames=16)
    b = _run(face, denoiser, frames=16)
    assert all(np.array_equal(x, y) for x, y in zip(a.frames, b.frames))
    c = _run(face, denoiser, CONFIG.model_copy(update={"seed": 8}), frames=16)
    assert not all(np.array_equal(x, y) for x, y in zip(a.frames, c.frames))


def test_resume_from_saved_state_is_bit_exact(face, denoiser, tmp_path):
    identity, source, reference, driving = face
    state = _init(face, denoiser, CONFIG.model_copy(update={"tau": 0.0}))
    stream_step(state, driving[:4])
    stream_step(state, driving[4:8])
    path = state.save(tmp_path / "state.pliv")

    expected = stream_step(state, driving[8:12]) + stream_step(state, driving[12:16])
    resumed = StreamState.load(path, denoiser)
    assert resumed.emitted_count == 8 and resumed.steps == 2
    got = stream_step(resumed, driving[8:12]) + stream_step(resumed, driving[12:16])
    assert all(np.array_equal(a, b) for a, b in zip(expected, got))
    assert len(resumed.bank) == len(state.bank)


def test_load_rejects_foreign_containers(denoiser, tmp_path):
    path = save_checkpoint(tmp_path / "other.pliv", Checkpoint(stage=0, meta={"kind": "weights"}))
    with pytest.raises(InvalidInputError):
        StreamState.load(path, denoiser)


def test_feed_motion_buffers_until_a_chunk(face, denoiser):
    identity, source, reference, driving = face
    state = _init(face, denoiser)
    for m in driving[:3]:
        assert feed_motion(state, m) == []
    assert len(state.pending) == 3
    frames = feed_motion(state, driving[3])
    assert len(frames) == 4
    assert state.pending == [] and state.emitted_count == 4


def test_history_bank_keeps_the_source_and_evicts_fifo():
    bank = HistoryBank(capacity=3)
    bank.reset("src", np.zeros(5))
    for i in range(1, 5):
        assert bank.add(f"k{i}", np.full(5, float(i)))
    assert bank.history == ["src", "k3", "k4"]
    assert np.array_equal(bank.motion[0], np.zeros(5))
    assert bank.distance(np.full(5, 3.0)) == 0.0


def test_bank_of_size_one_never_grows(face, denoiser):
    state = _init(face, denoiser, CONFIG.model_copy(update={"bank_capacity": 1, "tau": 0.0}))
    identity, source, reference, driving = face
    assert not maybe_add_keyframe(state, reference, np.zeros(5))
    assert len(state.bank) == 1


def test_keyframe_threshold(face, denoiser):
    identity, source, reference, driving = face
    state = _init(face, denoiser)
    src = np.asarray(source.expr, dtype=np.float64)
    near = src - np.array([0.3, 0.0, 0.0, 0.0, 0.0])
    far = src - np.array([0.4, 0.0, 0.0, 0.0, 0.0])
    assert state.bank.distance(near) == pytest.approx(0.3)
    assert not maybe_add_keyframe(state, reference, near)
    assert len(state.bank) == 1
    assert maybe_add_keyframe(state, reference, far)
    assert len(state.bank) == 2


def test_infinite_threshold_disables_the_bank(face, denoiser):
    result = _run(face, denoiser, CONFIG.model_copy(update={"tau": float("inf")}), frames=16)
    assert len(result.state.bank) == 1
    assert all(r.bank_size == 1 for r in result.timing)


def test_keyframes_are_the_only_difference_from_an_infinite_threshold(face, denoiser):
    off = _run(face, denoiser, CONFIG.model_copy(update={"tau": float("inf")}))
    on = _run(face, denoiser, CONFIG.model_copy(update={"tau": 0.0}))
    assert off.state.keyframes_added == 0
    assert on.state.keyframes_added > 0
    first = next(r.step for r in on.timing if r.bank_size > 1)
    shared = first * CONFIG.chunk_size
    for a, b in zip(on.frames[:shared], off.frames[:shared]):
        assert np.array_equal(a, b)
    assert any(not np.array_equal(a, b) for a, b in zip(on.frames[shared:], off.frames[shared:]))



def test_bank_never_exceeds_capacity(face, denoiser):
    result = _run(face, denoiser, CONFIG.model_copy(update={"tau": 0.0, "bank_capacity": 3}))
    assert max(r.bank_size for r in result.timing) <= 3


def test_incompatible_window_is_rejected(face, denoiser):
    with pytest.raises(InvalidInputError):
        _init(face, denoiser, CONFIG.model_copy(update={"chunk_size": 5}))


def test_iter_motions_skips_headers_and_comments():
    rows = [
        "# driving motions",
        "roll,tx,ty,scale,expr0,expr1,expr2,expr3,expr4",
        "",
        "0.0,0.0,0.0,1.0,1.0,1.0,0.0,0.5,0.5",
        "0.1,0.05,0.0,1.1,0.5,0.5,0.2,0.5,0.5",
    ]
    motions = list(iter_motions(rows))
    assert motions == [
        MotionParams.neutral(),
        MotionParams(roll=0.1, trans=(0.05, 0.0), scale=1.1, expr=(0.5, 0.5, 0.2, 0.5, 0.5)),
    ]


def test_frame_sinks(tmp_path):
    frame = np.full((64, 64, 3), 0.5, dtype=np.float32)
    buf = io.BytesIO()
    FrameSink("raw", stream=buf).write([frame, frame])
    assert len(buf.getvalue()) == 2 * 64 * 64 * 3
    sink = FrameSink("frames", str(tmp_path / "out"))
    sink.write([frame])
    assert (tmp_path / "out" / "frame_000000.png").exists()
    with pytest.raises(InvalidInputError):
        FrameSink("mp4", str(tmp_path))
