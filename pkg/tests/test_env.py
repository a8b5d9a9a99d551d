import math

import numpy as np
import pytest

from pushrec import dynamics as dyn
from pushrec.config import ConfigError, dump_sections, read_sections
from pushrec.env import (EnvConfig, EpisodeConfig, Normalization, PerturbationEvent, PushRecoveryEnv,
                         env_config_from_sections, integrate_action, normalize, normalized_impulse, observe,
                         observation_size, randomize_domain, sample_initial_state, schedule_perturbation,
                         trigger_probability)
from pushrec.model import build_model, standing_height


@pytest.fixture(scope="module")
def model():
    return build_model()


def quiet(**kw):
    base = dict(perturbations=False, randomize_mass=False, randomize_friction=False, randomize_delay=False)
    base.update(kw)
    return EpisodeConfig(**base)


def test_normalize_endpoints_and_clamp():
    assert normalize(0.0, 0.0, 0.78) == -1.0
    assert normalize(0.78, 0.0, 0.78) == 1.0
    assert normalize(0.39, 0.0, 0.78) == pytest.approx(0.0)
    assert normalize(5.0, -1.0, 1.0) == 1.0
    assert normalize(-5.0, -1.0, 1.0) == -1.0
    with pytest.raises(ValueError):
        normalize(0.0, 1.0, 1.0)


def test_observation_clamped_for_wild_states(model):
    rng = np.random.default_rng(0)
    for _ in range(50):
        state = dyn.standing_state(model)
        state.q[:3] += rng.normal(0, [2.0, 1.0, 5.0])
        state.q[3:] += rng.normal(0, 3.0, model.n_joints)
        state.nu[:] = rng.normal(0, 50.0, model.n_dof)
        obs = observe(model, state)
        assert obs.shape == (observation_size(model.n_joints),)
        assert np.all(np.abs(obs) <= 1.0)


def test_integrate_action_examples():
    lo, hi = np.full(2, -1.0), np.full(2, 1.0)
    refs = np.array([0.1, 0.2])
    assert np.array_equal(integrate_action(np.zeros(2), refs, 0.04, lo, hi), refs)
    out = integrate_action(np.full(2, math.pi), refs, 0.04, lo, hi)
    assert np.allclose(np.degrees(out - refs), 7.2)
    at_limit = integrate_action(np.full(2, 2.0), hi, 0.04, lo, hi)
    assert np.array_equal(at_limit, hi)


def test_env_references_move_at_most_max_speed(model):
    env = PushRecoveryEnv(model, quiet(), randomize=False)
    env.reset(seed=3)
    rng = np.random.default_rng(1)
    prev = env.refs.copy()
    for _ in range(30):
        env.step(rng.uniform(-3, 3, model.n_joints))
        assert np.all(np.abs(env.refs - prev) <= math.pi * 0.04 + 1e-12)
        prev = env.refs.copy()
        if env.done:
            break


def test_initial_state_zero_noise_is_reference_pose(model):
    cfg = quiet(init_pos_sigma_deg=0.0, init_vel_sigma_deg=0.0)
    s = sample_initial_state(model, np.random.default_rng(0), cfg)
    assert np.array_equal(s.joint_positions, model.s0)
    assert not s.nu.any()
    assert s.q[1] == pytest.approx(model.base_height)


def test_initial_state_statistics(model):
    rng = np.random.default_rng(5)
    cfg = quiet()
    samples = np.array([sample_initial_state(model, rng, cfg).joint_positions for _ in range(10_000)])
    lower, upper = model.arrays.lower, model.arrays.upper
    for j in range(model.n_joints):
        # joints whose limits cut into the +-3 sigma band are clamped; check the free ones
        if model.s0[j] - lower[j] < math.radians(30) or upper[j] - model.s0[j] < math.radians(30):
            continue
        col = np.degrees(samples[:, j])
        assert abs(col.mean() - math.degrees(model.s0[j])) < 0.5
        assert abs(col.std() - 10.0) < 1.0


def test_bent_legs_start_airborne(model):
    s = model.s0.copy()
    s += np.array([0, 0, 0.2, -0.4, 0.2, 0.2, -0.4, 0.2])  # deeper crouch, soles kept flat
    h = standing_height(model, s)
    assert h < model.base_height
    cfg = quiet(init_pos_sigma_deg=0.0, init_vel_sigma_deg=0.0)
    state = sample_initial_state(model, np.random.default_rng(0), cfg)
    state.q[3:] = s
    assert dyn.contact_forces(model, state).position[:, 1].min() > 0


def test_trigger_probability_and_impulse():
    assert trigger_probability(0.04, 5.0) == pytest.approx(0.008)
    assert normalized_impulse(200.0, 0.2, 33.0) == pytest.approx(1.21, rel=0.01)


def test_perturbation_interval_statistics():
    cfg = EpisodeConfig()
    rng = np.random.default_rng(11)
    times = []
    steps = int(1e5 / cfg.control_dt)
    for k in range(steps):
        if schedule_perturbation(rng, k * cfg.control_dt, cfg) is not None:
            times.append(k * cfg.control_dt)
    mean_gap = np.diff(times).mean()
    assert abs(mean_gap - cfg.perturb_period) / cfg.perturb_period < 0.05


def test_perturbation_direction_uniform():
    cfg = EpisodeConfig(perturb_period=0.04)
    rng = np.random.default_rng(2)
    angles = np.array([schedule_perturbation(rng, 0.0, cfg).angle for _ in range(20_000)])
    counts, _ = np.histogram(angles, bins=8, range=(0, 2 * math.pi))
    assert counts.min() > 0.9 * 2500 and counts.max() < 1.1 * 2500


def test_zero_magnitude_push_has_no_effect(model):
    cfg = quiet()
    a, b = PushRecoveryEnv(model, cfg, randomize=False), PushRecoveryEnv(model, cfg, randomize=False)
    a.reset(seed=1)
    b.reset(seed=1, scripted=[PerturbationEvent(0.0, 0.2, 0.0, 1.0, "pelvis")])
    for _ in range(10):
        a.step(np.zeros(model.n_joints))
        b.step(np.zeros(model.n_joints))
    assert np.array_equal(a.state.q, b.state.q)


def test_push_changes_com_momentum_by_impulse(model):
    # gravity off, floating: the CoM momentum change equals F * duration
    m0 = model.replace(gravity=0.0)
    state = dyn.standing_state(m0)
    state.q[1] += 1.0
    ev = dyn.ForceEvent(0, 200, m0.link_index("pelvis"), (200.0, 0.0))
    p0 = dyn.centroidal(m0, state.q, state.nu).linear_momentum
    s1 = dyn.simulate(m0, state, 250, [ev])
    p1 = dyn.centroidal(m0, s1.q, s1.nu).linear_momentum
    assert (p1 - p0)[0] / m0.total_mass == pytest.approx(200 * 0.2 / 33.0, rel=0.01)


def test_randomization_off_returns_nominal(model):
    assert randomize_domain(model, np.random.default_rng(0), quiet()) is model


def test_randomization_statistics(model):
    rng = np.random.default_rng(3)
    cfg = EpisodeConfig()
    masses, frictions, delays = [], [], []
    for _ in range(10_000):
        m = randomize_domain(model, rng, cfg)
        masses.append(m.links[0].mass)
        frictions.append(m.contact.friction)
        delays.append(m.actuation_delay)
    m0 = model.links[0].mass
    assert abs(np.std(masses) - 0.2 * m0) < 0.1 * 0.2 * m0
    assert min(masses) >= 0.1 * m0
    assert 0.5 <= min(frictions) and max(frictions) <= 3.0
    assert 0.0 <= min(delays) and max(delays) <= 0.02


def test_standing_zero_action_positive_reward(model):
    env = PushRecoveryEnv(model, quiet(init_pos_sigma_deg=0.0, init_vel_sigma_deg=0.0), randomize=False)
    env.reset(seed=0)
    for _ in range(25):
        _, r, done, info = env.step(np.zeros(model.n_joints))
        assert not done
    assert r > 0


def test_time_limit_truncates_without_failure(model):
    cfg = quiet(init_pos_sigma_deg=0.0, init_vel_sigma_deg=0.0, max_duration=0.4)
    env = PushRecoveryEnv(model, cfg, randomize=False)
    env.reset(seed=0)
    for _ in range(10):
        _, _, done, info = env.step(np.zeros(model.n_joints))
    assert done and info.truncated and not info.failure
    with pytest.raises(RuntimeError):
        env.step(np.zeros(model.n_joints))


def test_strong_push_topples_with_penalty(model):
    cfg = quiet(init_pos_sigma_deg=0.0, init_vel_sigma_deg=0.0)
    env = PushRecoveryEnv(model, cfg, randomize=False)
    env.reset(seed=0, scripted=[PerturbationEvent(0.0, 0.3, 1500.0, 0.0, "torso")])
    for _ in range(100):
        _, _, done, info = env.step(np.zeros(model.n_joints))
        if done:
            break
    assert info.failure and not info.truncated
    assert info.reward.contribution["links_contact"] == -10.0


def test_perturb_start_delays_random_events(model):
    cfg = EpisodeConfig(perturb_period=0.04, perturb_start=0.2, perturb_magnitude=0.0,
                        randomize_mass=False, randomize_friction=False, randomize_delay=False)
    env = PushRecoveryEnv(model, cfg, randomize=False)
    env.reset(seed=0)
    starts = []
    for _ in range(8):
        starts += [e.start for e in env.step(np.zeros(model.n_joints))[3].events]
    assert starts and min(starts) >= 0.2 - 1e-9


def test_env_determinism(model):
    def run():
        env = PushRecoveryEnv(model, EpisodeConfig(perturb_period=0.5), randomize=True)
        env.reset(seed=42)
        rng = np.random.default_rng(0)
        out = []
        for _ in range(20):
            obs, r, done, _ = env.step(rng.uniform(-1, 1, model.n_joints))
            out.append((obs.tobytes(), r))
            if done:
                env.reset()
        return out

    assert run() == run()


def test_env_config_round_trip(tmp_path):
    cfg = EnvConfig(EpisodeConfig(perturb_magnitude=100.0, friction_range=(0.6, 2.0)),
                    norm=Normalization(base_height=(0.0, 1.0)))
    cfg = EnvConfig(cfg.episode, cfg.reward.with_overrides({"torques": {"cutoff": 12.0}}), cfg.norm)
    path = tmp_path / "env.ini"
    cfg.save(path)
    back = env_config_from_sections(read_sections(path))
    assert back.hash() == cfg.hash()
    assert back.reward.term("torques").cutoff == 12.0
    assert back.episode.friction_range == (0.6, 2.0)


def test_env_config_errors_name_the_field(tmp_path):
    with pytest.raises(ConfigError) as err:
        env_config_from_sections({"episode": {"control_dt": 0.0415}})
    assert err.value.field == "episode.control_dt"
    with pytest.raises(ConfigError) as err:
        env_config_from_sections({"term postural": {"cutof": 1.0}})
    assert "postural" in err.value.field
    with pytest.raises(ConfigError):
        env_config_from_sections({"normalization": {"base_height": (1.0, 0.0)}})
    path = tmp_path / "x.ini"
    path.write_text(dump_sections({"episode": {"max_duration": -1.0}}))
    with pytest.raises(ConfigError):
        env_config_from_sections(read_sections(path))
