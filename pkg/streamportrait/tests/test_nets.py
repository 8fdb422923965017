import pytest
import torch

from streamportrait.config import DenoiserConfig
from streamportrait.errors import InvalidInputError
from streamportrait.nets import (
    Denoiser,
    Discriminator,
    PerceptualNet,
    denoise_window,
    encode_reference,
    perceptual_distance,
    stack_refs,
)

TINY = dict(base_channels=8, heads=2, max_window_frames=8, chunk_size=4)


def _inputs(frames: int = 8, refs: int = 1, seed: int = 0):
    g = torch.Generator().manual_seed(seed)
    z = torch.randn(1, frames, 3, 64, 64, generator=g)
    t = torch.full((1, frames), 500, dtype=torch.long)
    m_f = torch.rand(1, frames, 5, generator=g)
    cond = torch.rand(1, frames, 10, 64, 64, generator=g)
    ref_mf = torch.rand(1, refs, 5, generator=g)
    return z, t, m_f, cond, ref_mf


def _model(**overrides) -> Denoiser:
    torch.manual_seed(0)
    return Denoiser(DenoiserConfig(**{**TINY, **overrides})).eval()


def _refs(model, refs: int = 1):
    frames = torch.rand(refs, 3, 64, 64, generator=torch.Generator().manual_seed(9))
    features = encode_reference(frames, model)
    return [s[None] for s in features.scales]


@torch.no_grad()
def test_zero_init_head_returns_scaled_input():
    model = _model(zero_init_output=True)
    z, t, m_f, cond, ref_mf = _inputs()
    out = model(z, t, m_f, cond, _refs(model), ref_mf)
    assert out.shape == z.shape
    assert torch.allclose(out, model.sqrt_alphabar[500] * z)


@torch.no_grad()
def test_chunk_causal_mask_blocks_later_chunks():
    model = _model(zero_init_output=False, temporal_mode="chunk-causal")
    z, t, m_f, cond, ref_mf = _inputs()
    refs = _refs(model)
    base = model(z, t, m_f, cond, refs, ref_mf)
    z2 = z.clone()
    z2[:, 4:] += 1.0
    moved = model(z2, t, m_f, cond, refs, ref_mf)
    assert torch.allclose(base[:, :4], moved[:, :4], atol=1e-5)
    assert not torch.allclose(base[:, 4:], moved[:, 4:], atol=1e-3)


@torch.no_grad()
def test_bidirectional_attention_mixes_chunks():
    model = _model(zero_init_output=False)
    z, t, m_f, cond, ref_mf = _inputs()
    refs = _refs(model)
    base = model(z, t, m_f, cond, refs, ref_mf)
    z2 = z.clone()
    z2[:, 4:] += 1.0
    moved = model(z2, t, m_f, cond, refs, ref_mf)
    assert not torch.allclose(base[:, :4], moved[:, :4], atol=1e-6)


@torch.no_grad()
def test_without_temporal_attention_frames_are_independent():
    model = _model(zero_init_output=False, temporal_attention=False)
    z, t, m_f, cond, ref_mf = _inputs()
    refs = _refs(model)
    base = model(z, t, m_f, cond, refs, ref_mf)
    z2 = z.clone()
    z2[:, 1:] += 1.0
    assert torch.allclose(base[:, 0], model(z2, t, m_f, cond, refs, ref_mf)[:, 0], atol=1e-5)
    assert model.temporal_parameters() == []


@torch.no_grad()
def test_second_reference_changes_the_output():
    model = _model(zero_init_output=False)
    z, t, m_f, cond, ref_mf = _inputs(refs=2)
    both = _refs(model, 2)
    one = [s[:, :1] for s in both]
    single = model(z, t, m_f, cond, one, ref_mf[:, :1])
    double = model(z, t, m_f, cond, both, ref_mf)
    assert not torch.allclose(single, double, atol=1e-5)


@torch.no_grad()
def test_one_chunk_timestep_moves_only_that_chunk():
    model = _model(zero_init_output=False, temporal_mode="chunk-causal")
    z, t, m_f, cond, ref_mf = _inputs()
    refs = _refs(model)
    base = model(z, t, m_f, cond, refs, ref_mf)
    t2 = t.clone()
    t2[:, 4:] = 900
    moved = model(z, t2, m_f, cond, refs, ref_mf)
    assert torch.allclose(base[:, :4], moved[:, :4], atol=1e-5)
    # the learned head also sees the new level, not only the sqrt(alphabar) skip
    head_base = base[:, 4:] - model.sqrt_alphabar[500] * z[:, 4:]
    head_moved = moved[:, 4:] - model.sqrt_alphabar[900] * z[:, 4:]
    assert not torch.allclose(head_base, head_moved, atol=1e-4)


@torch.no_grad()
def test_window_and_bank_limits():
    model = _model()
    z, t, m_f, cond, ref_mf = _inputs(frames=12)
    with pytest.raises(InvalidInputError):
        model(z, t, m_f, cond, _refs(model), ref_mf[:, :1])
    z, t, m_f, cond, ref_mf = _inputs(refs=5)
    with pytest.raises(InvalidInputError):
        model(z, t, m_f, cond, _refs(model, 5), ref_mf)


def test_rejects_heads_that_do_not_divide_channels():
    with pytest.raises(InvalidInputError):
        Denoiser(DenoiserConfig(base_channels=8, heads=3))


@torch.no_grad()
def test_encode_reference_scales():
    model = _model()
    features = encode_reference(torch.rand(3, 64, 64), model, m_f=[1.0, 1.0, 0.0, 0.5, 0.5])
    assert [tuple(s.shape) for s in features.scales] == [(8, 32, 32), (16, 16, 16), (16, 8, 8)]
    assert features.m_f.tolist() == [1.0, 1.0, 0.0, 0.5, 0.5]
    assert not features.batched
    scales, m_f = stack_refs([features, features])
    assert tuple(scales[0].shape) == (1, 2, 8, 32, 32)
    assert tuple(m_f.shape) == (1, 2, 5)


@torch.no_grad()
def test_denoise_window_validates_levels_per_chunk():
    model = _model()
    frames = [torch.rand(3, 64, 64) for _ in range(8)]
    m_f = [torch.rand(5) for _ in range(8)]
    cond = [torch.rand(10, 64, 64) for _ in range(8)]
    refs = [encode_reference(torch.rand(3, 64, 64), model)]
    out = denoise_window(frames, [999] * 4 + [666] * 4, refs, m_f, cond, model, chunk_size=4)
    assert len(out) == 8 and out[0].shape == (3, 64, 64)
    with pytest.raises(InvalidInputError):
        denoise_window(frames, [999] * 3 + [666] * 5, refs, m_f, cond, model, chunk_size=4)
    with pytest.raises(InvalidInputError):
        denoise_window(frames, [999] * 8, [], m_f, cond, model, chunk_size=4)
    with pytest.raises(InvalidInputError):
        denoise_window(frames[:7], [999] * 7, refs, m_f[:7], cond[:7], model, chunk_size=4)


def test_discriminator_logits():
    torch.manual_seed(0)
    disc = Discriminator()
    assert disc(torch.rand(3, 3, 64, 64)).shape == (3,)


def test_perceptual_net_is_fixed_and_seeded():
    a, b = PerceptualNet(seed=5), PerceptualNet(seed=5)
    assert all(torch.equal(x, y) for x, y in zip(a.buffers(), b.buffers()))
    assert list(a.parameters()) == []
    frame = torch.rand(3, 64, 64)
    assert perceptual_distance(frame, frame, a) == 0.0
    assert perceptual_distance(frame, torch.rand(3, 64, 64), a) > 0.0
