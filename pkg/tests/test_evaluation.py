import numpy as np
import pytest

from pushrec.config import ConfigError
from pushrec.evaluation import (EnduranceConfig, HoldPolicy, SweepConfig, endurance_csv, endurance_eval,
                                polar_sweep, read_csv, run_scenario, sweep_csv, _episode_config)
from pushrec.env import PerturbationEvent
from pushrec.model import build_model
from pushrec.trace import parse_trace


@pytest.fixture(scope="module")
def model():
    return build_model()


@pytest.fixture(scope="module")
def hold(model):
    return HoldPolicy(model.n_joints)


def test_default_grid_shape():
    cfg = SweepConfig()
    assert len(cfg.magnitudes) == (700 - 50) // 25 + 1 == 27
    assert cfg.magnitudes[0] == 50.0 and cfg.magnitudes[-1] == 700.0
    assert len(cfg.directions) * len(cfg.magnitudes) * cfg.repetitions == 270


def test_config_validation():
    with pytest.raises(ConfigError):
        SweepConfig(magnitudes=(100.0, 50.0))
    with pytest.raises(ConfigError):
        SweepConfig(repetitions=0)
    with pytest.raises(ConfigError):
        EnduranceConfig(cap=2.0, period=3.0)
    with pytest.raises(ConfigError):
        EnduranceConfig(episodes=0)


def test_overwhelming_push_fails(model, hold):
    cfg = _episode_config(4.0, 2.0, perturbations=False)
    ev = PerturbationEvent(1.0, 0.2, 1e6, 0.0, "pelvis")
    res = run_scenario(hold, model, cfg, [ev], seed=0, settle=1.0)
    assert not res.survived
    assert res.survival_time < 4.0


def test_scripted_push_acts_exactly_in_window(model, hold):
    cfg = _episode_config(3.4, 2.0, perturbations=False)
    ev = PerturbationEvent(3.0, 0.2, 80.0, 0.0, "pelvis")
    pushed = run_scenario(hold, model, cfg, [ev], seed=4, settle=3.0, record=True)
    free = run_scenario(hold, model, cfg, [], seed=4, settle=3.0, record=True)
    tp, tf = parse_trace(pushed.trace), parse_trace(free.trace)
    events = [(s["t"], e) for s in tp.steps for e in s["events"]]
    assert len(events) == 1
    t_after, e = events[0]
    assert e["start"] == 3.0 and e["start"] + e["duration"] == pytest.approx(3.2)
    assert t_after == pytest.approx(3.04)
    for a, b in zip(tp.steps, tf.steps):
        if a["t"] <= 3.0 + 1e-9:
            assert a["q"] == b["q"]
        else:
            assert a["q"] != b["q"]
            break


def test_hold_policy_sweep_small_grid(model, hold):
    cfg = SweepConfig(magnitudes=(25.0, 2000.0), repetitions=2, horizon=5.0)
    res = polar_sweep(hold, model, cfg)
    assert res.successes.shape == (2, 2)
    assert all(len(v) == 2 for v in res.episodes.values())
    assert np.array_equal(res.successes[:, 0], [2, 2])
    assert np.array_equal(res.successes[:, 1], [0, 0])
    assert np.array_equal(res.rates, res.successes / 2)


def test_sweep_reproducible_across_worker_counts(model, hold):
    cfg = SweepConfig(magnitudes=(60.0, 90.0), repetitions=1, horizon=4.5, seed=3)
    a = polar_sweep(hold, model, cfg)
    b = polar_sweep(hold, model, cfg, workers=2)
    assert sweep_csv(a) == sweep_csv(b)
    assert [e.survival_time for e in a.episodes[(1, 1)]] == [e.survival_time for e in b.episodes[(1, 1)]]


def test_sweep_csv_round_trip(tmp_path, model, hold):
    cfg = SweepConfig(magnitudes=(50.0,), directions=(0.0,), repetitions=1, horizon=4.0, friction=0.2)
    res = polar_sweep(hold, model, cfg)
    path = tmp_path / "s.csv"
    path.write_text(sweep_csv(res, "abc"))
    meta, rows = read_csv(path)
    assert meta["pushrec"].endswith("sweep")
    assert meta["friction"] == "0.2" and meta["checkpoint"] == "abc"
    assert len(rows) == 1 and float(rows[0]["magnitude"]) == 50.0


def test_endurance_zero_magnitude_counts_every_application(model, hold):
    cfg = EnduranceConfig(magnitudes=(0.0,), durations=(0.2,), links=("base",), episodes=3, cap=15.0)
    cells = endurance_eval(hold, model, cfg)
    assert len(cells) == 1 and cells[0].link == "pelvis"
    for r in cells[0].results:
        assert r.survived
        assert r.endured == r.completed
        assert r.applications - r.completed in (0, 1)
        assert r.survival_time <= cfg.settle + cfg.cap
    again = endurance_eval(hold, model, cfg)
    assert again[0].counts == cells[0].counts
    text = endurance_csv(cells, cfg)
    assert text.splitlines()[0].endswith("endurance")


def test_endurance_fall_blames_latest_push(model, hold):
    cfg = EnduranceConfig(magnitudes=(3000.0,), durations=(0.3,), links=("torso",), episodes=2, cap=30.0)
    for r in endurance_eval(hold, model, cfg)[0].results:
        assert not r.survived
        assert r.endured == r.applications - 1


def test_unknown_link_rejected(model, hold):
    with pytest.raises(KeyError):
        endurance_eval(hold, model, EnduranceConfig(links=("tail",), episodes=1))
