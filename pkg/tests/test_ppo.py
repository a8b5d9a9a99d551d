import math

import numpy as np
import pytest

from pushrec.config import ConfigError
from pushrec.env import EnvConfig, EpisodeConfig, PushRecoveryEnv
from pushrec.model import build_model
from pushrec.neural import gaussian_logprob, make_policy, make_value
from pushrec.ppo import (MissingBootstrapError, PpoConfig, RolloutWorker, Trainer, collect_rollouts,
                         compute_advantages, discounted_returns, normalize_advantages, ppo_objective)


@pytest.fixture(scope="module")
def model():
    return build_model()


def small_cfg(**kw):
    base = dict(batch_size=400, minibatch_size=100, epochs=2, hidden=(16,), workers=2, seed=7)
    base.update(kw)
    return PpoConfig(**base)


def random_episodes(rng, count):
    rewards, dones, ends = [], [], []
    for _ in range(count):
        n = int(rng.integers(1, 60))
        rewards.append(rng.normal(0, 10, n))
        d = np.zeros(n, bool)
        d[-1] = True
        dones.append(d)
        ends.append(np.zeros(n, bool))
    return rewards, dones, ends


def test_gae_two_step_example():
    adv, ret = compute_advantages([1.0, 1.0], [0.0, 0.0], [False, True], [False, False], [np.nan] * 2, 0.5, 1.0)
    assert np.allclose(adv, [1.5, 1.0])
    assert np.allclose(ret, adv)


def test_gae_lambda_one_equals_monte_carlo():
    rng = np.random.default_rng(0)
    gamma = 0.95
    rewards, dones, ends = random_episodes(rng, 100)
    flat = np.concatenate(rewards)
    n = len(flat)
    adv, _ = compute_advantages(flat, np.zeros(n), np.concatenate(dones), np.concatenate(ends),
                                np.full(n, np.nan), gamma, 1.0)
    oracle = []
    for r in rewards:
        for t in range(len(r)):
            oracle.append(sum(gamma**k * r[t + k] for k in range(len(r) - t)))
    assert np.max(np.abs(adv - np.array(oracle))) <= 1e-10
    assert np.allclose(discounted_returns(rewards[0], gamma), oracle[:len(rewards[0])])


def test_gae_fixed_point_with_bootstrap():
    gamma, r = 0.95, 3.0
    n = 50
    v = np.full(n, r / (1 - gamma))
    ends = np.zeros(n, bool)
    ends[-1] = True
    boot = np.full(n, np.nan)
    boot[-1] = r / (1 - gamma)
    for lam in (0.0, 0.9, 1.0):
        adv, _ = compute_advantages(np.full(n, r), v, np.zeros(n, bool), ends, boot, gamma, lam)
        assert np.max(np.abs(adv)) <= 1e-10


def test_truncation_bootstraps_and_failure_does_not():
    args = ([1.0], [0.0], [False], [True], [10.0], 0.5, 1.0)
    assert compute_advantages(*args)[0][0] == pytest.approx(6.0)
    fail = ([1.0], [0.0], [True], [False], [10.0], 0.5, 1.0)
    assert compute_advantages(*fail)[0][0] == pytest.approx(1.0)


def test_missing_bootstrap_errors():
    with pytest.raises(MissingBootstrapError):
        compute_advantages([1.0, 1.0], [0.0, 0.0], [False, False], [False, False], [np.nan] * 2, 0.9, 1.0)
    with pytest.raises(MissingBootstrapError):
        compute_advantages([1.0], [0.0], [False], [True], [np.nan], 0.9, 1.0)


def test_advantage_normalization():
    adv = normalize_advantages(np.random.default_rng(1).normal(5.0, 30.0, 10_000))
    assert abs(adv.mean()) <= 1e-10
    assert abs(adv.std() - 1.0) <= 1e-6


def objective_setup(rng, n=8, obs=5, act=3):
    cfg = PpoConfig(hidden=(8,), kl_penalty=False)
    pol = make_policy(obs, act, cfg.hidden, rng)
    pol.mean.weights[-1] *= 50
    val = make_value(obs, cfg.hidden, rng)
    o = rng.normal(size=(n, obs))
    a = pol.mean(o) + 0.3 * rng.normal(size=(n, act))
    return cfg, pol, val, o, a


def test_clip_arithmetic_examples():
    rng = np.random.default_rng(2)
    cfg, pol, val, o, a = objective_setup(rng, n=1)
    logp = gaussian_logprob(pol.mean(o), pol.log_std, a)
    zeros = np.zeros(1)
    args = (pol, val, o, a)
    # rho = 1.5, A = 2 -> min(3.0, 2.6)
    *_, st = ppo_objective(*args, logp - math.log(1.5), pol.mean(o), pol.log_std, np.array([2.0]), zeros, zeros,
                           cfg, 0.0)
    assert st.policy_loss == pytest.approx(-2.6)
    # rho = 0.5, A = -1 -> min(-0.5, -0.7)
    *_, st = ppo_objective(*args, logp - math.log(0.5), pol.mean(o), pol.log_std, np.array([-1.0]), zeros, zeros,
                           cfg, 0.0)
    assert st.policy_loss == pytest.approx(0.7)


def test_ratio_one_gives_vanilla_policy_gradient():
    rng = np.random.default_rng(3)
    cfg, pol, val, o, a = objective_setup(rng)
    adv = rng.normal(size=len(o))
    mu = pol.mean(o)
    logp = gaussian_logprob(mu, pol.log_std, a)
    pg, _, st = ppo_objective(pol, val, o, a, logp, mu, pol.log_std, adv, np.zeros(len(o)), np.zeros(len(o)), cfg,
                              0.0)
    assert st.policy_loss == pytest.approx(-adv.mean())
    assert st.clip_fraction == 0.0

    def vanilla():
        return -np.mean(adv * gaussian_logprob(pol.mean(o), pol.log_std, a))

    params = pol.params
    for k in range(len(params)):
        idx = tuple(rng.integers(s) for s in params[k].shape)
        old = params[k][idx]
        params[k][idx] = old + 1e-6
        up = vanilla()
        params[k][idx] = old - 1e-6
        down = vanilla()
        params[k][idx] = old
        assert pg[k][idx] == pytest.approx((up - down) / 2e-6, rel=1e-5, abs=1e-9)


def test_clipped_surrogate_is_pessimistic():
    rng = np.random.default_rng(4)
    cfg, pol, val, o, a = objective_setup(rng, n=200)
    mu = pol.mean(o)
    logp = gaussian_logprob(mu, pol.log_std, a)
    logp_old = logp + rng.normal(0, 0.5, len(o))
    adv = rng.normal(size=len(o))
    ratio = np.exp(logp - logp_old)
    *_, st = ppo_objective(pol, val, o, a, logp_old, mu, pol.log_std, adv, np.zeros(len(o)), np.zeros(len(o)), cfg,
                           0.0)
    assert st.policy_loss >= -np.mean(ratio * adv) - 1e-12
    per_sample = np.minimum(ratio * adv, np.clip(ratio, 0.7, 1.3) * adv)
    assert np.all(per_sample <= ratio * adv + 1e-12)


def test_objective_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    cfg, pol, val, o, a = objective_setup(rng, n=20)
    cfg.kl_penalty = True
    cfg.vf_clip = 3.0
    mu_old = pol.mean(o) + 0.05 * rng.normal(size=a.shape)
    ls_old = pol.log_std + 0.1
    logp_old = gaussian_logprob(mu_old, ls_old, a)
    adv = rng.normal(size=len(o))
    ret = 300 * rng.normal(size=len(o))
    v_old = cfg.value_scale * val(o)[:, 0] + 5 * rng.normal(size=len(o))
    args = (o, a, logp_old, mu_old, ls_old, adv, ret, v_old, cfg, 0.7)
    pg, vg, _ = ppo_objective(pol, val, *args)

    def losses():
        *_, st = ppo_objective(pol, val, *args)
        return st.policy_loss, st.value_loss

    for which, params, grads in ((0, pol.params, pg), (1, val.params, vg)):
        for k in range(len(params)):
            for _ in range(10):
                idx = tuple(rng.integers(s) for s in params[k].shape)
                old = params[k][idx]
                params[k][idx] = old + 1e-5
                up = losses()[which]
                params[k][idx] = old - 1e-5
                down = losses()[which]
                params[k][idx] = old
                fd = (up - down) / 2e-5
                assert abs(fd - grads[k][idx]) <= 1e-4 * max(abs(fd), 1e-6)


def quiet_env(model, max_duration=15.0):
    cfg = EpisodeConfig(perturbations=False, max_duration=max_duration)
    return PushRecoveryEnv(model, cfg, randomize=True)


def test_collect_bookkeeping(model):
    rng = np.random.default_rng(6)
    pol = make_policy(28, 8, (16,), rng)
    val = make_value(28, (16,), rng)
    worker = RolloutWorker(quiet_env(model, max_duration=1.6), 0, 3)
    batch = collect_rollouts([worker], pol, val, 100.0, 100)
    assert len(batch) == 100
    boundaries = np.flatnonzero(batch.dones | batch.ends)
    assert len(boundaries) >= 3  # at least two episode ends plus the batch cut
    assert batch.ends[-1] or batch.dones[-1]
    assert all(n <= 40 for n in batch.episode_lengths)
    cut = batch.ends & ~batch.dones
    assert np.all(np.isfinite(batch.bootstrap[cut]))


def test_worker_batches_are_deterministic(model):
    def run():
        rng = np.random.default_rng(0)
        pol = make_policy(28, 8, (16,), rng)
        val = make_value(28, (16,), rng)
        workers = [RolloutWorker(quiet_env(model), i, 11) for i in range(3)]
        return collect_rollouts(workers, pol, val, 100.0, 300)

    a, b = run(), run()
    assert a.obs.tobytes() == b.obs.tobytes()
    assert a.rewards.tobytes() == b.rewards.tobytes()


def ks_distance(x, y):
    x, y = np.sort(x), np.sort(y)
    grid = np.concatenate([x, y])
    return np.max(np.abs(np.searchsorted(x, grid, side="right") / len(x)
                         - np.searchsorted(y, grid, side="right") / len(y)))


def test_four_workers_match_one_worker_distribution(model):
    rng = np.random.default_rng(0)
    pol = make_policy(28, 8, (16,), rng)
    val = make_value(28, (16,), rng)

    def episodes(k):
        workers = [RolloutWorker(quiet_env(model), i, 100 * k) for i in range(k)]
        b = collect_rollouts(workers, pol, val, 100.0, 4000)
        return np.split(b.rewards, np.flatnonzero(b.dones | b.ends)[:-1] + 1)

    # Steps within an episode are far from independent, so the textbook KS
    # critical value rejects far too often.  Permuting whole episodes between
    # the two samples gives the null distribution of the same statistic.
    one, four = episodes(1), episodes(4)
    observed = ks_distance(np.concatenate(one), np.concatenate(four))
    pool = one + four
    perm = np.random.default_rng(1)
    hits = 0
    for _ in range(999):
        idx = perm.permutation(len(pool))
        a = np.concatenate([pool[i] for i in idx[:len(one)]])
        b = np.concatenate([pool[i] for i in idx[len(one):]])
        hits += ks_distance(a, b) >= observed
    assert (hits + 1) / 1000 >= 0.01


def test_trainer_update_is_deterministic(model):
    def run():
        tr = Trainer(model, EnvConfig(EpisodeConfig(perturbations=False)), small_cfg())
        for _ in range(2):
            tr.iterate()
        return b"".join(p.tobytes() for p in tr.policy.params + tr.value.params)

    assert run() == run()


def test_trainer_row_and_kl_adaptation(model):
    tr = Trainer(model, EnvConfig(EpisodeConfig(perturbations=False)), small_cfg())
    row = tr.iterate()
    assert row["steps"] == 400 and row["iteration"] == 1
    assert row["kl_coef"] in (0.1, 0.2, 0.4)
    assert sum(v for k, v in row.items() if k.startswith("term_")) == pytest.approx(row["reward_per_step"])


def test_config_validation():
    for bad in (dict(minibatch_size=20000), dict(gamma=0.0), dict(lam=1.5), dict(hidden=(0,))):
        with pytest.raises(ConfigError):
            PpoConfig(**bad).validate()
