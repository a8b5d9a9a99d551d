"""Push-recovery evaluation: deterministic force sweeps and endurance runs.

Evaluation always uses the nominal robot (no domain randomisation) and the
policy mean.  Each episode first lets the robot settle; the pose noise is
resampled until the robot is standing still when the push arrives.
"""
from __future__ import annotations

import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .dynamics import centroidal
from .config import ConfigError, atomic_write, config_hash
from .env import EpisodeConfig, Normalization, PerturbationEvent, PushRecoveryEnv
from .model import RobotModel
from .reward import RewardSpec
from .trace import TraceRecorder

Policy = Callable[[np.ndarray], np.ndarray]

STILL_SPEED = 0.05  # m/s, CoM speed counted as standing still
MAX_ATTEMPTS = 10


def _arange(start: float, stop: float, step: float) -> tuple[float, ...]:
    n = int(round((stop - start) / step)) + 1
    return tuple(float(start + i * step) for i in range(n))


@dataclass
class SweepConfig:
    magnitudes: tuple[float, ...] = _arange(50.0, 700.0, 25.0)
    directions: tuple[float, ...] = (0.0, math.pi)
    repetitions: int = 5
    pose_sigma_deg: float = 2.0
    push_time: float = 3.0
    push_duration: float = 0.2
    horizon: float = 7.0
    link: str = "pelvis"
    friction: float | None = None
    seed: int = 0

    def __post_init__(self):
        m = np.asarray(self.magnitudes, dtype=float)
        if m.size == 0 or np.any(m <= 0) or np.any(np.diff(m) <= 0):
            raise ConfigError("sweep.magnitudes", "must be positive and strictly ascending")
        if self.repetitions < 1:
            raise ConfigError("sweep.repetitions", "must be >= 1")
        if not 0 < self.push_time < self.horizon:
            raise ConfigError("sweep.push_time", "must lie inside (0, horizon)")
        if self.friction is not None and self.friction <= 0:
            raise ConfigError("sweep.friction", "must be > 0")


@dataclass
class EnduranceConfig:
    magnitudes: tuple[float, ...] = (100.0, 200.0, 300.0)
    durations: tuple[float, ...] = (0.1, 0.2, 0.3)
    links: tuple[str, ...] = ("pelvis", "torso", "arm")
    episodes: int = 50
    cap: float = 60.0
    period: float = 3.0
    settle: float = 3.0
    pose_sigma_deg: float = 2.0
    friction: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError("endurance.episodes", "must be >= 1")
        if not self.cap > self.period > 0:
            raise ConfigError("endurance.cap", "must exceed the period")
        if any(m < 0 for m in self.magnitudes):
            raise ConfigError("endurance.magnitudes", "must be >= 0")
        if any(d <= 0 for d in self.durations):
            raise ConfigError("endurance.durations", "must be > 0")


# base link aliases accepted on the command line
LINK_ALIASES = {"base": "pelvis", "chest": "torso", "elbow": "arm"}


@dataclass
class EpisodeResult:
    survived: bool
    survival_time: float
    endured: int
    applications: int  # pushes started before the episode ended
    completed: int = 0  # pushes whose full duration elapsed
    attempts: int = 1
    pre_push_speed: float = float("nan")
    trace: str | None = None


class MeanPolicy:
    """Deterministic wrapper: the Gaussian policy's mean action."""

    def __init__(self, policy):
        self.policy = policy

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        return self.policy.mean(obs)


class HoldPolicy:
    """Zero joint-velocity command: keeps the initial references."""

    def __init__(self, n_joints: int):
        self.n_joints = n_joints

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        return np.zeros(self.n_joints)


def _eval_model(model: RobotModel, friction: float | None) -> RobotModel:
    if friction is None:
        return model
    return model.replace(contact=replace(model.contact, friction=friction))


def _settled(env: PushRecoveryEnv, policy: Policy, obs: np.ndarray, until: float):
    """Step until sim time ``until``; returns (obs, fell)."""
    steps = int(round(until / env.cfg.control_dt))
    for _ in range(steps):
        obs, _, done, info = env.step(policy(obs))
        if done:
            return obs, True
    return obs, False


def run_scenario(policy: Policy, model: RobotModel, cfg: EpisodeConfig, scripted=(), seed=0,
                 settle: float = 3.0, norm: Normalization | None = None, reward: RewardSpec | None = None,
                 record: bool = False) -> EpisodeResult:
    """One evaluation episode.

    The robot first balances for ``settle`` seconds with no forces; if it is
    not standing still by then (CoM speed >= 0.05 m/s, or it fell) the pose
    noise is redrawn, up to 10 attempts.  Scripted events are given relative
    to the episode start.  Success means no non-foot link touched the ground
    before ``cfg.max_duration``.
    """
    speed = float("nan")
    last = None
    for attempt in range(1, MAX_ATTEMPTS + 1):
        env = PushRecoveryEnv(model, cfg, reward, norm, randomize=False)
        buf = io.StringIO() if record else None
        if record:
            env.recorder = TraceRecorder(buf, seed=_seed_list(seed))
        obs = env.reset(seed=_seed_list(seed) + [attempt], scripted=scripted)
        obs, fell = _settled(env, policy, obs, settle)
        cq = centroidal(env.model, env.state.q, env.state.nu)
        speed = float(np.hypot(*cq.com_velocity))
        last = (env, obs, buf)
        if not fell and speed < STILL_SPEED:
            break
    env, obs, buf = last
    done = env.done
    applications = []
    while not done:
        obs, _, done, info = env.step(policy(obs))
        applications.extend(info.events)
    t_end = env.state.sim_time
    failure = bool(env.state.link_contact) or (done and not env.steps >= cfg.max_steps)
    survived = not failure
    # applications finished before the episode ended; on a fall the latest push gets the blame
    started = [e for e in applications if e.start < t_end - 1e-9]
    completed = [e for e in started if e.end <= t_end + 1e-9]
    endured = len(completed) if survived else max(len(started) - 1, 0)
    if env.recorder is not None:
        env.recorder.close()
    return EpisodeResult(survived, min(t_end, cfg.max_duration), endured, len(started), len(completed), attempt,
                         speed, buf.getvalue() if buf is not None else None)


def _seed_list(seed) -> list[int]:
    return [int(s) for s in np.atleast_1d(seed)]


def _episode_config(horizon: float, pose_sigma: float, **kw) -> EpisodeConfig:
    return EpisodeConfig(max_duration=horizon, init_pos_sigma_deg=pose_sigma, init_vel_sigma_deg=0.0,
                         randomize_mass=False, randomize_friction=False, randomize_delay=False, **kw)


# --------------------------------------------------------------------------
# sweep


@dataclass
class SweepResult:
    config: SweepConfig
    successes: np.ndarray  # (directions, magnitudes)
    episodes: dict[tuple[int, int], list[EpisodeResult]]

    @property
    def rates(self) -> np.ndarray:
        return self.successes / self.config.repetitions


def _sweep_cell(args):
    policy, model, cfg, norm, reward, i, j, record = args
    mag, ang = cfg.magnitudes[j], cfg.directions[i]
    ecfg = _episode_config(cfg.horizon, cfg.pose_sigma_deg, perturbations=False)
    ev = PerturbationEvent(cfg.push_time, cfg.push_duration, mag, ang, cfg.link)
    out = []
    for rep in range(cfg.repetitions):
        out.append(run_scenario(policy, model, ecfg, [ev], seed=[cfg.seed, i, j, rep], settle=cfg.push_time,
                                norm=norm, reward=reward, record=record))
    return (i, j), out


def polar_sweep(policy: Policy, model: RobotModel, cfg: SweepConfig | None = None, norm=None, reward=None,
                workers: int = 1, record: bool = False) -> SweepResult:
    """Success counts over (direction x magnitude).  Cells are independent and seeded by index."""
    cfg = SweepConfig() if cfg is None else cfg
    model = _eval_model(model, cfg.friction)
    jobs = [(policy, model, cfg, norm, reward, i, j, record)
            for i in range(len(cfg.directions)) for j in range(len(cfg.magnitudes))]
    results = _map(_sweep_cell, jobs, workers)
    succ = np.zeros((len(cfg.directions), len(cfg.magnitudes)), dtype=int)
    episodes = {}
    for key, eps in results:
        succ[key] = sum(e.survived for e in eps)
        episodes[key] = eps
    return SweepResult(cfg, succ, episodes)


def _map(fn, jobs, workers: int):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(fn, jobs))


# --------------------------------------------------------------------------
# endurance


@dataclass
class EnduranceCell:
    magnitude: float
    duration: float
    link: str
    results: list[EpisodeResult]

    @property
    def counts(self) -> list[int]:
        return [r.endured for r in self.results]

    @property
    def applications(self) -> list[int]:
        return [r.applications for r in self.results]

    def stats(self) -> dict[str, float]:
        c = np.array(self.counts, dtype=float)
        return {"mean": float(c.mean()), "median": float(np.median(c)), "max": float(c.max()),
                "survived": int(sum(r.survived for r in self.results))}


def _endurance_cell(args):
    policy, model, cfg, norm, reward, mag, dur, link, record = args
    ecfg = _episode_config(cfg.settle + cfg.cap, cfg.pose_sigma_deg, perturbations=True, perturb_magnitude=mag,
                           perturb_duration=dur, perturb_period=cfg.period, perturb_link=link,
                           perturb_start=cfg.settle)
    li = cfg.links.index(link)
    key = [cfg.seed, cfg.magnitudes.index(mag), cfg.durations.index(dur), li]
    out = [run_scenario(policy, model, ecfg, (), seed=key + [ep], settle=cfg.settle, norm=norm, reward=reward,
                        record=record)
           for ep in range(cfg.episodes)]
    return EnduranceCell(mag, dur, link, out)


def endurance_eval(policy: Policy, model: RobotModel, cfg: EnduranceConfig | None = None, norm=None, reward=None,
                   workers: int = 1, record: bool = False) -> list[EnduranceCell]:
    """Randomly timed, randomly directed pushes on one link per cell; counts pushes survived."""
    cfg = EnduranceConfig() if cfg is None else cfg
    model = _eval_model(model, cfg.friction)
    links = tuple(LINK_ALIASES.get(l, l) for l in cfg.links)
    for l in links:
        model.link_index(l)
    cfg = replace(cfg, links=links)
    jobs = [(policy, model, cfg, norm, reward, m, d, l, record)
            for m in cfg.magnitudes for d in cfg.durations for l in cfg.links]
    return _map(_endurance_cell, jobs, workers)


# --------------------------------------------------------------------------
# CSV output


def _header(kind: str, cfg_hash: str, seed: int, extra: dict) -> list[str]:
    lines = [f"# pushrec {__version__} {kind}", f"# config_hash {cfg_hash}", f"# seed {seed}"]
    lines += [f"# {k} {v}" for k, v in extra.items()]
    return lines


def sweep_csv(result: SweepResult, checkpoint_hash: str = "") -> str:
    cfg = result.config
    extra = {"friction": "default" if cfg.friction is None else repr(cfg.friction), "checkpoint": checkpoint_hash,
             "repetitions": cfg.repetitions}
    lines = _header("sweep", config_hash(cfg), cfg.seed, extra)
    lines.append("direction,magnitude,successes,repetitions,rate")
    for i, d in enumerate(cfg.directions):
        for j, m in enumerate(cfg.magnitudes):
            s = int(result.successes[i, j])
            lines.append(f"{d!r},{m!r},{s},{cfg.repetitions},{s / cfg.repetitions!r}")
    return "\n".join(lines) + "\n"


def endurance_csv(cells: list[EnduranceCell], cfg: EnduranceConfig, checkpoint_hash: str = "") -> str:
    extra = {"friction": "default" if cfg.friction is None else repr(cfg.friction), "checkpoint": checkpoint_hash,
             "episodes": cfg.episodes, "cap": cfg.cap, "period": cfg.period}
    lines = _header("endurance", config_hash(cfg), cfg.seed, extra)
    lines.append("magnitude,duration,link,episodes,mean,median,max,survived,mean_applications,counts")
    for c in cells:
        st = c.stats()
        apps = float(np.mean(c.applications))
        counts = " ".join(str(n) for n in c.counts)
        lines.append(f"{c.magnitude!r},{c.duration!r},{c.link},{len(c.results)},{st['mean']!r},{st['median']!r},"
                     f"{st['max']!r},{st['survived']},{apps!r},{counts}")
    return "\n".join(lines) + "\n"


def read_csv(path) -> tuple[dict[str, str], list[dict[str, str]]]:
    """Header metadata and rows of a file written by this module."""
    meta: dict[str, str] = {}
    rows: list[dict[str, str]] = []
    keys = None
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition(" ")
            meta[k] = v
        elif keys is None:
            keys = line.split(",")
        elif line:
            rows.append(dict(zip(keys, line.split(","))))
    return meta, rows


def write_traces(directory, episodes: dict) -> int:
    """One ``.jsonl`` per recorded episode; returns the number written."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    n = 0
    for key, eps in episodes.items():
        for rep, ep in enumerate(eps):
            if ep.trace:
                name = "_".join(str(k) for k in np.atleast_1d(key)) + f"_{rep}.jsonl"
                atomic_write(d / name, ep.trace)
                n += 1
    return n
