"""Proximal policy optimisation with GAE, clipped value loss and an
adaptive KL penalty.

Rollouts come from a fixed set of persistent workers, each owning one
environment and one RNG stream (seeded ``base_seed + index``).  Workers are
stepped with a one-row policy forward each, so the trajectories are the same
whether they run in this process or in a process pool; sub-batches are
concatenated in worker order.
"""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable

import numpy as np

from .config import ConfigError, apply_overrides, atomic_write, config_hash, dump_sections, read_sections
from .env import EnvConfig, PushRecoveryEnv, env_config_from_sections
from .model import RobotModel, build_model, default_spec, model_to_spec
from .neural import (Adam, GaussianPolicy, Mlp, gaussian_kl, gaussian_logprob, load_arrays, make_policy,
                     make_value, mlp_arrays, mlp_from_arrays, save_arrays)


class NonFiniteError(FloatingPointError):
    pass


class MissingBootstrapError(ValueError):
    pass


@dataclass
class PpoConfig:
    gamma: float = 0.95
    lam: float = 1.0
    clip: float = 0.3
    vf_clip: float = 1000.0
    lr: float = 1e-4
    batch_size: int = 10000
    minibatch_size: int = 512
    epochs: int = 32
    kl_penalty: bool = True
    kl_coef: float = 0.2
    kl_target: float = 0.01
    vf_coef: float = 0.5
    value_scale: float = 300.0
    hidden: tuple[int, ...] = (128, 64)
    init_std: float = 0.3
    workers: int = 4
    seed: int = 0
    total_steps: int = 200_000
    checkpoint_every: int = 5
    parallel: bool = False

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in np.atleast_1d(self.hidden))

    def validate(self) -> None:
        if not 0 < self.gamma <= 1:
            raise ConfigError("ppo.gamma", "must lie in (0, 1]")
        if not 0 <= self.lam <= 1:
            raise ConfigError("ppo.lam", "must lie in [0, 1]")
        for name in ("clip", "vf_clip", "lr", "kl_target", "value_scale", "init_std"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"ppo.{name}", "must be > 0")
        for name in ("batch_size", "minibatch_size", "epochs", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"ppo.{name}", "must be >= 1")
        if self.minibatch_size > self.batch_size:
            raise ConfigError("ppo.minibatch_size", "larger than batch_size")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("ppo.hidden", "layer sizes must be >= 1")


# --------------------------------------------------------------------------
# advantages


def compute_advantages(rewards, values, dones, ends, bootstrap, gamma: float, lam: float):
    """GAE over a flat batch of concatenated segments.

    ``dones`` marks failures (no bootstrap).  ``ends`` marks every other
    segment cut (time-limit truncation or the end of a worker's slice); at
    those the value of the following observation, ``bootstrap[t]``, is used.
    Returns (advantages, value targets).
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    ends = np.asarray(ends, dtype=bool)
    bootstrap = np.asarray(bootstrap, dtype=float)
    n = len(rewards)
    if not (len(values) == len(dones) == len(ends) == len(bootstrap) == n):
        raise ValueError("advantage inputs differ in length")
    if n and not (dones[-1] or ends[-1]):
        raise MissingBootstrapError("last transition is neither terminal nor a marked segment end")
    cut = ends & ~dones
    if np.any(~np.isfinite(bootstrap[cut])):
        bad = int(np.flatnonzero(cut & ~np.isfinite(bootstrap))[0])
        raise MissingBootstrapError(f"segment end at index {bad} has no bootstrap value")
    adv = np.zeros(n)
    last = 0.0
    for t in range(n - 1, -1, -1):
        if dones[t]:
            next_v, last = 0.0, 0.0
        elif ends[t]:
            next_v, last = bootstrap[t], 0.0
        else:
            next_v = values[t + 1]
        delta = rewards[t] + gamma * next_v - values[t]
        last = delta + gamma * lam * last
        adv[t] = last
    return adv, adv + values


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    out = np.zeros(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


# --------------------------------------------------------------------------
# rollouts


@dataclass
class TrajectoryBatch:
    obs: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    mean: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    ends: np.ndarray
    bootstrap: np.ndarray
    term_sums: dict[str, float]
    episode_lengths: list[int]
    episode_returns: list[float]

    def __len__(self) -> int:
        return len(self.rewards)

    @staticmethod
    def concat(parts: list["TrajectoryBatch"]) -> "TrajectoryBatch":
        arrays = {f.name: np.concatenate([getattr(p, f.name) for p in parts])
                  for f in fields(TrajectoryBatch) if f.name not in ("term_sums", "episode_lengths", "episode_returns")}
        sums: dict[str, float] = {}
        for p in parts:
            for k, v in p.term_sums.items():
                sums[k] = sums.get(k, 0.0) + v
        return TrajectoryBatch(**arrays, term_sums=sums,
                               episode_lengths=[n for p in parts for n in p.episode_lengths],
                               episode_returns=[r for p in parts for r in p.episode_returns])


class RolloutWorker:
    """Persistent environment + action-noise RNG.  Episodes continue across batches."""

    def __init__(self, env: PushRecoveryEnv, index: int, base_seed: int):
        self.env = env
        self.index = index
        self.seed = base_seed + index
        self.env.rng = np.random.default_rng(self.seed)
        self.rng = np.random.default_rng([self.seed, 1])
        self.obs: np.ndarray | None = None
        self.ep_len = 0
        self.ep_ret = 0.0

    def collect(self, policy: GaussianPolicy, value: Mlp, value_scale: float, n: int) -> TrajectoryBatch:
        d = self.env.obs_size
        na = self.env.act_size
        obs = np.zeros((n, d))
        acts = np.zeros((n, na))
        means = np.zeros((n, na))
        logp = np.zeros(n)
        rew = np.zeros(n)
        vals = np.zeros(n)
        dones = np.zeros(n, bool)
        ends = np.zeros(n, bool)
        boot = np.full(n, np.nan)
        sums: dict[str, float] = {}
        lengths, returns = [], []
        std = np.exp(policy.log_std)
        if self.obs is None:
            self.obs = self.env.reset()
        for t in range(n):
            o = self.obs
            mu = policy.mean(o)
            a = mu + std * self.rng.standard_normal(na)
            obs[t], acts[t], means[t] = o, a, mu
            logp[t] = gaussian_logprob(mu, policy.log_std, a)
            vals[t] = value_scale * value(o)[0]
            o2, r, done, info = self.env.step(a)
            rew[t] = r
            for k, c in info.reward.contribution.items():
                sums[k] = sums.get(k, 0.0) + c
            self.ep_len += 1
            self.ep_ret += r
            if done:
                dones[t] = info.failure
                if not info.failure:
                    ends[t] = True
                    boot[t] = value_scale * value(o2)[0]
                lengths.append(self.ep_len)
                returns.append(self.ep_ret)
                self.ep_len, self.ep_ret = 0, 0.0
                self.obs = self.env.reset()
            else:
                self.obs = o2
        if not (dones[-1] or ends[-1]):
            ends[-1] = True
            boot[-1] = value_scale * value(self.obs)[0]
        return TrajectoryBatch(obs, acts, logp, means, rew, vals, dones, ends, boot, sums, lengths, returns)


def _collect_remote(args):
    worker, policy, value, scale, n = args
    batch = worker.collect(policy, value, scale, n)
    return worker, batch


def collect_rollouts(workers: list[RolloutWorker], policy: GaussianPolicy, value: Mlp, value_scale: float,
                     batch_size: int, pool: ProcessPoolExecutor | None = None) -> TrajectoryBatch:
    per = -(-batch_size // len(workers))
    if pool is None:
        parts = [w.collect(policy, value, value_scale, per) for w in workers]
    else:
        results = list(pool.map(_collect_remote, [(w, policy, value, value_scale, per) for w in workers]))
        for i, (w, _) in enumerate(results):
            workers[i] = w
        parts = [b for _, b in results]
    return TrajectoryBatch.concat(parts)


# --------------------------------------------------------------------------
# objective


@dataclass
class LossStats:
    policy_loss: float
    value_loss: float
    kl: float
    clip_fraction: float
    entropy: float


def ppo_objective(policy: GaussianPolicy, value: Mlp, obs, actions, logp_old, mean_old, log_std_old,
                  advantages, returns, values_old, cfg: PpoConfig, kl_coef: float):
    """Minibatch loss and its gradients.

    Returns (policy grads, value grads, stats); gradients follow the order
    of ``policy.params`` and ``value.params``.
    """
    n = len(obs)
    mu, cache = policy.mean.forward(obs)
    log_std = policy.log_std
    inv_std = np.exp(-log_std)
    z = (actions - mu) * inv_std
    logp = np.sum(-log_std - 0.5 * math.log(2 * math.pi) - 0.5 * z * z, axis=1)
    ratio = np.exp(logp - logp_old)
    lo, hi = 1.0 - cfg.clip, 1.0 + cfg.clip
    surr1 = ratio * advantages
    surr2 = np.clip(ratio, lo, hi) * advantages
    use_unclipped = surr1 <= surr2
    # d(-surr)/dlogp
    g_logp = np.where(use_unclipped, -surr1, 0.0) / n
    g_mu = g_logp[:, None] * z * inv_std
    g_ls = np.sum(g_logp[:, None] * (z * z - 1.0), axis=0)
    kl = gaussian_kl(mean_old, log_std_old, mu, log_std)
    if cfg.kl_penalty and kl_coef > 0:
        var_new = np.exp(2 * log_std)
        var_old = np.exp(2 * log_std_old)
        d = mu - mean_old
        g_mu = g_mu + kl_coef * d / var_new / n
        g_ls = g_ls + kl_coef * np.sum(1.0 - (var_old + d * d) / var_new, axis=0) / n
    pgrads, _ = policy.mean.backward(cache, g_mu)
    pgrads.append(g_ls)
    policy_loss = -float(np.mean(np.minimum(surr1, surr2)))
    if cfg.kl_penalty:
        policy_loss += kl_coef * float(np.mean(kl))

    s = cfg.value_scale
    vout, vcache = value.forward(obs)
    v = s * vout[:, 0]
    v_clipped = values_old + np.clip(v - values_old, -cfg.vf_clip, cfg.vf_clip)
    e1 = (v - returns) ** 2
    e2 = (v_clipped - returns) ** 2
    inside = np.abs(v - values_old) <= cfg.vf_clip
    g_v = np.where((e1 >= e2) | inside, 2.0 * (v - returns), 0.0)
    g_v = cfg.vf_coef * g_v / n / s**2  # loss measured in units of the raw network output
    vgrads, _ = value.backward(vcache, (s * g_v)[:, None])
    value_loss = cfg.vf_coef * float(np.mean(np.maximum(e1, e2))) / s**2

    stats = LossStats(policy_loss, value_loss, float(np.mean(kl)),
                      float(np.mean(np.abs(ratio - 1.0) > cfg.clip)),
                      float(np.sum(log_std) + 0.5 * len(log_std) * (1 + math.log(2 * math.pi))))
    return pgrads, vgrads, stats


# --------------------------------------------------------------------------
# trainer


def _finite(arrays: list[np.ndarray]) -> bool:
    return all(np.all(np.isfinite(a)) for a in arrays)


class Trainer:
    def __init__(self, model: RobotModel, env_cfg: EnvConfig, cfg: PpoConfig,
                 policy: GaussianPolicy | None = None, value: Mlp | None = None):
        cfg.validate()
        self.model = model
        self.env_cfg = env_cfg
        self.cfg = cfg
        self.workers = [
            RolloutWorker(PushRecoveryEnv(model, env_cfg.episode, env_cfg.reward, env_cfg.norm,
                                          randomize=True), i, cfg.seed)
            for i in range(cfg.workers)
        ]
        env = self.workers[0].env
        init_rng = np.random.default_rng([cfg.seed, 2])
        self.policy = policy or make_policy(env.obs_size, env.act_size, cfg.hidden, init_rng, cfg.init_std)
        self.value = value or make_value(env.obs_size, cfg.hidden, init_rng)
        self.popt = Adam(lr=cfg.lr)
        self.vopt = Adam(lr=cfg.lr)
        self.rng = np.random.default_rng([cfg.seed, 3])
        self.kl_coef = cfg.kl_coef if cfg.kl_penalty else 0.0
        self.steps = 0
        self.iteration = 0
        self._pool: ProcessPoolExecutor | None = None

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def iterate(self) -> dict:
        cfg = self.cfg
        t0 = time.perf_counter()
        if cfg.parallel and cfg.workers > 1 and self._pool is None:
            self._pool = ProcessPoolExecutor(cfg.workers)
        batch = collect_rollouts(self.workers, self.policy, self.value, cfg.value_scale, cfg.batch_size, self._pool)
        t_collect = time.perf_counter() - t0
        adv, ret = compute_advantages(batch.rewards, batch.values, batch.dones, batch.ends, batch.bootstrap,
                                      cfg.gamma, cfg.lam)
        adv_n = normalize_advantages(adv)
        n = len(batch)
        log_std_old = self.policy.log_std.copy()
        stats = []
        for _ in range(cfg.epochs):
            perm = self.rng.permutation(n)
            for k in range(n // cfg.minibatch_size):
                idx = perm[k * cfg.minibatch_size:(k + 1) * cfg.minibatch_size]
                pg, vg, st = ppo_objective(self.policy, self.value, batch.obs[idx], batch.actions[idx],
                                           batch.logp[idx], batch.mean[idx], log_std_old, adv_n[idx], ret[idx],
                                           batch.values[idx], cfg, self.kl_coef)
                if not (_finite(pg) and _finite(vg)):
                    raise NonFiniteError(f"non-finite gradient at iteration {self.iteration}")
                self.popt.step(self.policy.params, pg)
                self.vopt.step(self.value.params, vg)
                stats.append(st)
        mu_new = self.policy.mean(batch.obs)
        kl = float(np.mean(gaussian_kl(batch.mean, log_std_old, mu_new, self.policy.log_std)))
        if cfg.kl_penalty:
            if kl > 2.0 * cfg.kl_target:
                self.kl_coef *= 2.0
            elif kl < 0.5 * cfg.kl_target:
                self.kl_coef *= 0.5
        if not (_finite(self.policy.params) and _finite(self.value.params)):
            raise NonFiniteError(f"non-finite parameters after iteration {self.iteration}")
        self.steps += n
        self.iteration += 1
        dt = self.env_cfg.episode.control_dt
        lengths = batch.episode_lengths
        row = {
            "iteration": self.iteration,
            "steps": self.steps,
            "reward_per_step": float(batch.rewards.mean()),
            "episode_return": float(np.mean(batch.episode_returns)) if lengths else float("nan"),
            "episode_seconds": float(np.mean(lengths)) * dt if lengths else float("nan"),
            "episodes": len(lengths),
            "kl": kl,
            "kl_coef": self.kl_coef,
            "clip_fraction": float(np.mean([s.clip_fraction for s in stats])) if stats else 0.0,
            "policy_loss": float(np.mean([s.policy_loss for s in stats])) if stats else 0.0,
            "value_loss": float(np.mean([s.value_loss for s in stats])) if stats else 0.0,
            "std": float(np.exp(self.policy.log_std).mean()),
            "collect_seconds": t_collect,
            "wall_seconds": time.perf_counter() - t0,
        }
        for k, v in batch.term_sums.items():
            row[f"term_{k}"] = v / n
        return row

    # -- persistence ---------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = mlp_arrays("policy", self.policy.mean)
        arrays["policy.log_std"] = self.policy.log_std
        arrays.update(mlp_arrays("value", self.value))
        for name, opt, params in (("popt", self.popt, self.policy.params), ("vopt", self.vopt, self.value.params)):
            if opt.m:
                for i, (m, v) in enumerate(zip(opt.m, opt.v)):
                    arrays[f"{name}.m{i}"] = m
                    arrays[f"{name}.v{i}"] = v
        return arrays

    def metadata(self) -> dict:
        return {
            "format": "pushrec-checkpoint",
            "step": self.steps,
            "iteration": self.iteration,
            "kl_coef": self.kl_coef,
            "adam_t": [self.popt.t, self.vopt.t],
            "ppo": _ppo_sections(self.cfg)["ppo"],
            "env_hash": self.env_cfg.hash(),
            "interface_hash": interface_hash(self.model, self.env_cfg),
            "config_hash": run_hash(self.model, self.env_cfg, self.cfg),
            "rng": {
                "trainer": self.rng.bit_generator.state,
                "workers": [[w.env.rng.bit_generator.state, w.rng.bit_generator.state] for w in self.workers],
            },
        }

    def save(self, path) -> None:
        save_arrays(path, self.state_arrays(), _jsonable(self.metadata()))

    def restore(self, arrays: dict[str, np.ndarray], meta: dict) -> None:
        """Continue from a checkpoint.  Episodes in flight are not stored, so workers start fresh ones."""
        self.policy = policy_from_arrays(arrays)
        self.value = mlp_from_arrays("value", arrays)
        for name, opt, params in (("popt", self.popt, self.policy.params), ("vopt", self.vopt, self.value.params)):
            if f"{name}.m0" in arrays:
                opt.m = [arrays[f"{name}.m{i}"].copy() for i in range(len(params))]
                opt.v = [arrays[f"{name}.v{i}"].copy() for i in range(len(params))]
        self.popt.t, self.vopt.t = meta.get("adam_t", [0, 0])
        self.steps = int(meta.get("step", 0))
        self.iteration = int(meta.get("iteration", 0))
        if meta.get("kl_coef") is not None:
            self.kl_coef = float(meta["kl_coef"])
        rng = meta.get("rng")
        if rng:
            self.rng.bit_generator.state = rng["trainer"]
            for w, (env_state, act_state) in zip(self.workers, rng["workers"]):
                w.env.rng.bit_generator.state = env_state
                w.rng.bit_generator.state = act_state


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=lambda o: o.tolist() if hasattr(o, "tolist") else str(o)))


def policy_from_arrays(arrays: dict[str, np.ndarray]) -> GaussianPolicy:
    return GaussianPolicy(mlp_from_arrays("policy", arrays), arrays["policy.log_std"].copy())


def load_policy(path) -> tuple[GaussianPolicy, dict]:
    arrays, meta = load_arrays(path)
    return policy_from_arrays(arrays), meta


def _ppo_sections(cfg: PpoConfig) -> dict:
    d = asdict(cfg)
    d["hidden"] = list(cfg.hidden)
    return {"ppo": d}


def interface_hash(model: RobotModel, env_cfg: EnvConfig) -> str:
    """Hash of what a policy's inputs and outputs depend on: robot and normalisation."""
    return config_hash({"model": model_to_spec(model), "normalization": asdict(env_cfg.norm)})


def run_hash(model: RobotModel, env_cfg: EnvConfig, cfg: PpoConfig) -> str:
    """Hash of everything that shapes training except the step budget and worker transport."""
    ppo = _ppo_sections(cfg)["ppo"]
    for k in ("total_steps", "checkpoint_every", "parallel"):
        ppo.pop(k)
    return config_hash({"model": model_to_spec(model), "env": env_cfg.to_sections(), "ppo": ppo})


_MODEL_SECTIONS = ("model", "contact")


def _is_model_section(name: str) -> bool:
    return name in _MODEL_SECTIONS or name.startswith(("link ", "foot "))


def load_run_config(path=None, sections: dict | None = None) -> tuple[RobotModel, EnvConfig, PpoConfig]:
    """Split one key-value file into robot, environment and PPO settings.

    Sections the file omits keep their defaults; a file without any
    ``link`` section uses the default robot.
    """
    if sections is None:
        sections = read_sections(path) if path is not None else {}
    model_sections = {k: v for k, v in sections.items() if _is_model_section(k)}
    if any(k.startswith("link ") for k in model_sections):
        model = build_model(model_sections)
    else:
        spec = default_spec()
        for k, v in model_sections.items():
            spec[k] = {**spec[k], **v}
        model = build_model(spec)
    ppo = PpoConfig()
    apply_overrides(ppo, sections.get("ppo", {}), "ppo")
    ppo.hidden = tuple(int(h) for h in np.atleast_1d(ppo.hidden))
    ppo.validate()
    env_sections = {k: v for k, v in sections.items() if k != "ppo" and not _is_model_section(k)}
    return model, env_config_from_sections(env_sections), ppo


def run_sections(model: RobotModel, env_cfg: EnvConfig, cfg: PpoConfig) -> dict:
    sections = model_to_spec(model)
    sections.update(env_cfg.to_sections())
    sections.update(_ppo_sections(cfg))
    return sections


def save_run_config(path, model: RobotModel, env_cfg: EnvConfig, cfg: PpoConfig) -> None:
    atomic_write(path, dump_sections(run_sections(model, env_cfg, cfg)))


# --------------------------------------------------------------------------


class CheckpointMismatch(ValueError):
    pass


def check_interface(meta: dict, model: RobotModel, env_cfg: EnvConfig, force: bool = False) -> None:
    """Refuse a checkpoint whose robot or observation normalisation differ from ``model``/``env_cfg``."""
    want = interface_hash(model, env_cfg)
    got = meta.get("interface_hash")
    if got != want and not force:
        raise CheckpointMismatch(f"checkpoint/config mismatch: checkpoint interface {got}, config {want}")


def train(model: RobotModel, env_cfg: EnvConfig, cfg: PpoConfig, out_dir, init=None, force: bool = False,
          log: Callable[[dict], None] | None = None) -> Trainer:
    """Run until ``cfg.total_steps`` samples have been collected.

    Writes ``run.ini``, ``metrics.csv``, ``checkpoint_<iter>.bin`` every
    ``cfg.checkpoint_every`` iterations and ``final.bin``.

    ``init`` is a checkpoint to start from.  When it was written under the
    same run configuration the run resumes (counters, RNG streams and metric
    rows continue); otherwise only the network and optimiser state are taken
    over and a fresh run starts, e.g. for a curriculum stage.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(model, env_cfg, cfg)
    rows: list[dict] = []
    metrics = out / "metrics.csv"
    if init is not None:
        arrays, meta = load_arrays(init)
        check_interface(meta, model, env_cfg, force)
        if meta.get("config_hash") == run_hash(model, env_cfg, cfg):
            trainer.restore(arrays, meta)
            if metrics.is_file():
                with metrics.open() as fh:
                    rows = [_parse_row(r) for r in csv.DictReader(fh) if int(r["iteration"]) <= trainer.iteration]
        else:
            trainer.restore(arrays, {"adam_t": meta.get("adam_t", [0, 0]), "kl_coef": meta.get("kl_coef")})
    save_run_config(out / "run.ini", model, env_cfg, cfg)
    if trainer.iteration == 0:
        trainer.save(out / "checkpoint_0000.bin")
    try:
        while trainer.steps < cfg.total_steps:
            row = trainer.iterate()
            rows.append(row)
            _write_metrics(metrics, rows)
            if log is not None:
                log(row)
            if cfg.checkpoint_every and trainer.iteration % cfg.checkpoint_every == 0:
                trainer.save(out / f"checkpoint_{trainer.iteration:04d}.bin")
        trainer.save(out / "final.bin")
    finally:
        trainer.close()
    return trainer


def _parse_row(row: dict[str, str]) -> dict:
    out = {}
    for k, v in row.items():
        try:
            out[k] = int(v)
        except ValueError:
            try:
                out[k] = float(v)
            except ValueError:
                out[k] = v
    return out


def _write_metrics(path: Path, rows: list[dict]) -> None:
    keys: list[str] = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    lines = [",".join(keys)]
    for r in rows:
        lines.append(",".join(_fmt(r.get(k, "")) for k in keys))
    atomic_write(path, "\n".join(lines) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)
