import math

import numpy as np
import pytest
import torch

from streamportrait.errors import InvalidInputError
from streamportrait.schedule import DEFAULT_CODEC, CompactSchedule, NoiseSchedule


def test_alphabar_table():
    s = NoiseSchedule()
    assert s.T == 1000
    assert s.alphabar.shape == (1001,)
    assert float(s.alphabar[0]) == 1.0
    assert bool(torch.all(s.alphabar[1:] < s.alphabar[:-1]))
    assert math.isclose(float(s.betas[0]), 1e-4) and math.isclose(float(s.betas[-1]), 2e-2)


def test_forward_noise_at_t0_is_exact():
    s = NoiseSchedule()
    z = torch.rand(2, 3, 8, 8)
    eps = torch.randn(2, 3, 8, 8)
    assert torch.equal(s.forward_noise(z, eps, 0), z)


def test_forward_noise_moments_at_t500():
    s = NoiseSchedule()
    z = torch.full((3, 8, 8), 0.7)
    eps = torch.randn((10_000, 3, 8, 8), generator=torch.Generator().manual_seed(0))
    out = s.forward_noise(z.expand_as(eps), eps, 500)
    alphabar = float(s.alphabar[500])
    assert float(out.mean()) == pytest.approx(math.sqrt(alphabar) * 0.7, abs=0.01)
    assert float(out.var()) == pytest.approx(1.0 - alphabar, rel=0.03)


def test_forward_noise_per_frame_timesteps():
    s = NoiseSchedule()
    z = torch.rand(1, 3, 3, 8, 8, dtype=torch.float64)
    eps = torch.randn(1, 3, 3, 8, 8, dtype=torch.float64)
    t = torch.tensor([[0, 500, 999]])
    out = s.forward_noise(z, eps, t)
    for i, ti in enumerate((0, 500, 999)):
        expected = s.sqrt_alphabar[ti] * z[0, i] + s.sqrt_one_minus_alphabar[ti] * eps[0, i]
        assert torch.allclose(out[0, i], expected)


def test_eps_to_x0_recovers_the_clean_latent():
    s = NoiseSchedule()
    z = torch.rand(4, 3, 8, 8, dtype=torch.float64)
    eps = torch.randn(4, 3, 8, 8, dtype=torch.float64)
    z_t = s.forward_noise(z, eps, 700)
    assert torch.allclose(s.convert_parameterization(z_t, eps, 700, "eps_to_x0"), z, atol=1e-8)
    assert torch.allclose(s.convert_parameterization(z_t, z, 700, "x0_to_eps"), eps, atol=1e-8)


def test_x0_to_eps_undefined_at_t0():
    s = NoiseSchedule()
    z = torch.rand(1, 3, 4, 4)
    with pytest.raises(InvalidInputError):
        s.convert_parameterization(z, z, 0, "x0_to_eps")


def test_timestep_out_of_range():
    s = NoiseSchedule()
    z = torch.rand(1, 3, 4, 4)
    with pytest.raises(InvalidInputError):
        s.forward_noise(z, z, 1001)
    with pytest.raises(InvalidInputError):
        s.forward_noise(z, z, -1)


def test_uniform_timesteps():
    ts = NoiseSchedule().uniform_timesteps(50)
    assert len(ts) == 50
    assert ts[0] == 1000 and ts[-1] == 20
    assert all(b < a for a, b in zip(ts, ts[1:]))


def test_compact_schedule_defaults():
    c = CompactSchedule()
    assert c.N == 4
    assert c.levels == (0, 333, 666, 999)
    assert c.descending() == [999, 666, 333, 0]
    assert c.top == 999


@pytest.mark.parametrize("levels", [(0, 500, 400), (0, 0, 999), (0, 1000), (-1, 10)])
def test_compact_schedule_rejects_bad_levels(levels):
    with pytest.raises(InvalidInputError):
        CompactSchedule(levels)


def test_single_level_needs_opt_in():
    with pytest.raises(InvalidInputError):
        CompactSchedule((999,))
    assert CompactSchedule((999,), allow_single=True).N == 1


def test_codec_clamps_only_at_emission():
    frame = np.full((64, 64, 3), 0.5, dtype=np.float32)
    z = DEFAULT_CODEC.encode(frame)
    assert z.shape == (3, 64, 64)
    z = z * 3.0 - 1.0
    assert float(DEFAULT_CODEC.decode(z).max()) == pytest.approx(0.5)
    z[0, 0, 0] = 2.0
    assert float(DEFAULT_CODEC.decode(z).max()) == 2.0
    out = DEFAULT_CODEC.to_frame(z)
    assert out.shape == (64, 64, 3) and out.dtype == np.float32
    assert out.max() == 1.0
