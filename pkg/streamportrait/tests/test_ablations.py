from types import SimpleNamespace

import numpy as np
import pytest

from streamportrait.ablations import Scenario, _warmup_l1, run_study, sign_test
from streamportrait.errors import InvalidInputError
from streamportrait.motionctl import interpolated_motions
from streamportrait.toyface import render
from streamportrait.trainers import build_models, make_checkpoint


def test_sign_test_all_wins():
    wins, trials, p = sign_test([1.0] * 10, [2.0] * 10)
    assert (wins, trials) == (10, 10)
    assert p == pytest.approx(0.5**10)


def test_sign_test_drops_ties():
    wins, trials, p = sign_test([1.0, 2.0, 3.0, 5.0], [1.0, 3.0, 2.0, 6.0])
    assert (wins, trials) == (2, 3)
    assert p == pytest.approx(0.5)
    assert sign_test([1.0], [1.0]) == (0, 0, 1.0)
    with pytest.raises(InvalidInputError):
        sign_test([1.0], [1.0, 2.0])


def test_scenario_is_seeded():
    a, b = Scenario.sample(4, 12), Scenario.sample(4, 12)
    assert a.identity == b.identity
    assert [m.to_row() for m in a.driving] == [m.to_row() for m in b.driving]
    assert len(a.driving) == 12
    assert np.array_equal(a.reference, render(a.identity, a.source_motion))
    assert Scenario.sample(5, 12).identity != a.identity


def test_run_study_validates_arguments(tiny_config):
    ckpt = make_checkpoint(1, build_models(tiny_config, with_disc=False), tiny_config)
    with pytest.raises(InvalidInputError):
        run_study("nope", tiny_config, ckpt)
    with pytest.raises(InvalidInputError):
        run_study("hkm", tiny_config, ckpt, frames=18)
    with pytest.raises(InvalidInputError):
        run_study("st", tiny_config, ckpt, None, seeds=1, frames=20)


def test_hkm_study_pairs_each_seed(tiny_config):
    ckpt = make_checkpoint(1, build_models(tiny_config, with_disc=False), tiny_config)
    result = run_study("hkm", tiny_config, ckpt, seeds=2, frames=20)
    assert result.study == "hkm"
    assert len(result.a) == len(result.b) == 2
    assert result.trials <= 2
    assert 0.0 <= result.p_value <= 1.0
    payload = result.to_dict()
    assert payload["labels"] == ["tau=0.35", "tau=inf"]


def test_tau_sweep_reports_keyframes_per_threshold(tiny_config):
    ckpt = make_checkpoint(1, build_models(tiny_config, with_disc=False), tiny_config)
    result = run_study("tau", tiny_config, ckpt, seeds=1, frames=20)
    sweep = result.extra["sweep"]
    assert set(sweep) == {"0.0", "0.2", "0.35", "0.5", "inf"}
    assert sweep["inf"]["keyframes_added"] == 0
    assert sweep["0.0"]["keyframes_added"] > 0
    assert sweep["0.0"]["keyframes_added"] >= sweep["0.35"]["keyframes_added"] >= sweep["inf"]["keyframes_added"]
    assert result.labels == ["tau=0.35", "tau=inf"]
    assert result.b == [pytest.approx(sweep["inf"]["id_drift"])]


def test_warmup_target_ignores_the_arm_conditioning(tiny_config):
    scenario = Scenario.sample(2, 16)
    M, N = tiny_config.stream.chunk_size, len(tiny_config.schedule.levels)
    path = interpolated_motions(scenario.source_motion, scenario.driving[0], M, N)
    frames = [render(scenario.identity, m) for m in path[: 2 * M]]
    state = SimpleNamespace(M=M, N=N)
    metric = _warmup_l1(2)
    as_mii = SimpleNamespace(frames=frames, motions=path[: 2 * M], state=state)
    as_noise = SimpleNamespace(frames=frames, motions=[scenario.driving[0]] * (2 * M), state=state)
    assert metric(as_mii, scenario) == 0.0
    assert metric(as_noise, scenario) == 0.0


def test_distill_study_reports_every_arm(make_config):
    config = make_config(eval={"ddim_steps": 3, "refit_budget": 10})
    stage1 = make_checkpoint(1, build_models(config, with_disc=False), config)
    stage2 = make_checkpoint(2, build_models(config), config)
    result = run_study("distill", config, stage2, stage1, seeds=2, frames=16, no_adv=stage2)
    arms = result.extra["arms"]
    assert set(arms) == {"no_distill", "no_adv"}
    assert len(arms["no_distill"]["l1"]) == len(arms["no_adv"]["l1"]) == 2
    # same weights as the main arm, same seeds
    assert arms["no_adv"]["l1"] == pytest.approx(result.a)
    assert result.extra["calls_per_frame"] == [4, 3]
    assert result.passed is False

    plain = run_study("distill", config, stage2, stage1, seeds=1, frames=16)
    assert set(plain.extra["arms"]) == {"no_distill"}


def test_hybrid_study_refits_both_signals(tiny_config):
    ckpt = make_checkpoint(1, build_models(tiny_config, with_disc=False), tiny_config)
    result = run_study("hybrid", tiny_config, ckpt, seeds=2, frames=16)
    assert result.metric == "apd"
    assert result.labels == ["k_d + m_f,d", "k_s + m_f,d"]
    assert len(result.a) == len(result.b) == 2
    assert all(0.0 <= v <= 1.0 for v in result.a + result.b)
