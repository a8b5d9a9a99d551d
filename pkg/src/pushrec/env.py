"""Push-recovery environment.

The agent acts at 25 Hz by commanding joint velocities.  Commands are
integrated into position references that ramp into per-joint PIDs running
with the 1 kHz physics, behind a per-episode actuation delay.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from . import dynamics as dyn
from .config import ConfigError, apply_overrides, config_hash, dump_sections, read_sections
from .model import RobotModel, standing_height
from .reward import RewardBreakdown, RewardSpec, evaluate, measure


@dataclass
class EpisodeConfig:
    max_duration: float = 15.0  # s
    control_dt: float = 0.04
    physics_dt: float = 0.001
    max_joint_speed: float = math.pi  # rad/s, action bound
    perturbations: bool = True
    perturb_magnitude: float = 200.0  # N
    perturb_duration: float = 0.2  # s
    perturb_period: float = 5.0  # mean s between events
    perturb_link: str = "pelvis"
    perturb_start: float = 0.0  # s, no random events before this time
    randomize_mass: bool = True
    randomize_friction: bool = True
    randomize_delay: bool = True
    mass_sigma: float = 0.2  # fraction of nominal mass
    mass_floor: float = 0.1  # truncation, fraction of nominal mass
    friction_range: tuple[float, float] = (0.5, 3.0)
    delay_range: tuple[float, float] = (0.0, 0.02)  # s
    init_pos_sigma_deg: float = 10.0
    init_vel_sigma_deg: float = 90.0
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("max_duration", "control_dt", "physics_dt", "perturb_duration", "perturb_period",
                     "max_joint_speed"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"episode.{name}", "must be > 0")
        if self.perturb_start < 0:
            raise ConfigError("episode.perturb_start", "must be >= 0")
        if self.perturb_magnitude < 0:
            raise ConfigError("episode.perturb_magnitude", "must be >= 0")
        ratio = self.control_dt / self.physics_dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("episode.control_dt", "must be a multiple of physics_dt")
        if self.init_pos_sigma_deg < 0 or self.init_vel_sigma_deg < 0:
            raise ConfigError("episode.init_pos_sigma_deg", "noise must be >= 0")
        if self.seed < 0:
            raise ConfigError("episode.seed", "must be >= 0")

    @property
    def substeps(self) -> int:
        return int(round(self.control_dt / self.physics_dt))

    @property
    def max_steps(self) -> int:
        return int(round(self.max_duration / self.control_dt))


@dataclass
class Normalization:
    """Source ranges mapped onto [-1, 1]."""

    joint_velocity: tuple[float, float] = (-math.pi, math.pi)
    base_height: tuple[float, float] = (0.0, 0.78)
    base_pitch: tuple[float, float] = (-2 * math.pi, 2 * math.pi)
    foot_position: tuple[float, float] = (-0.78, 0.78)
    com_velocity: tuple[float, float] = (-3.0, 3.0)


def normalize(value, lb, ub):
    """Affine map of [lb, ub] onto [-1, 1], clamped outside."""
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    if np.any(lb >= ub):
        raise ValueError("normalize needs lb < ub")
    out = np.clip(2.0 * (np.asarray(value, dtype=float) - lb) / (ub - lb) - 1.0, -1.0, 1.0)
    return float(out) if out.ndim == 0 else out


OBS_LAYOUT = ("joint_pos", "joint_vel", "base_height", "base_pitch", "contact", "cop_force",
              "feet_pos", "com_vel")


def observation_size(n_joints: int) -> int:
    return 2 * n_joints + 1 + 1 + 2 + 2 + 4 + 2


def observation_bounds(model: RobotModel, norm: Normalization, force_scale: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature (lower, upper) used to map the raw observation onto [-1, 1]."""
    a = model.arrays
    nj = model.n_joints
    nf = len(model.feet)
    parts = [
        (a.lower, a.upper),
        (np.full(nj, norm.joint_velocity[0]), np.full(nj, norm.joint_velocity[1])),
        ([norm.base_height[0]], [norm.base_height[1]]),
        ([norm.base_pitch[0]], [norm.base_pitch[1]]),
        (np.zeros(nf), np.ones(nf)),
        (np.zeros(nf), np.full(nf, force_scale)),
        (np.full(2 * nf, norm.foot_position[0]), np.full(2 * nf, norm.foot_position[1])),
        (np.full(2, norm.com_velocity[0]), np.full(2, norm.com_velocity[1])),
    ]
    lb = np.concatenate([np.asarray(p[0], dtype=float) for p in parts])
    ub = np.concatenate([np.asarray(p[1], dtype=float) for p in parts])
    return lb, ub


def raw_observation(model: RobotModel, state: dyn.SimState, snap: dyn.Snapshot | None = None) -> np.ndarray:
    """Observation before normalisation.

    Layout: joint positions (n), joint velocities (n), base height, base
    pitch, contact flags L/R, vertical foot forces L/R, foot positions in the
    base frame (x, z per foot), CoM velocity (x, z).
    """
    snap = dyn.snapshot(model, state) if snap is None else snap
    feet = model.arrays.point_link[0::2]
    c, sn = math.cos(state.q[2]), math.sin(state.q[2])
    d = snap.origin[feet] - snap.origin[0]
    rel = np.stack([c * d[:, 0] + sn * d[:, 1], -sn * d[:, 0] + c * d[:, 1]], axis=1).reshape(-1)
    sg = snap.support
    return np.concatenate([
        state.joint_positions, state.joint_velocities, state.q[1:3],
        sg.contact.astype(float), sg.foot_force, rel, snap.centroidal.com_velocity,
    ])


def observe(model: RobotModel, state: dyn.SimState, norm: Normalization | None = None,
            force_scale: float | None = None, snap: dyn.Snapshot | None = None,
            bounds: tuple[np.ndarray, np.ndarray] | None = None) -> np.ndarray:
    """Normalised observation vector, see ``raw_observation`` for the layout.

    ``force_scale`` normalises foot forces, nominally m g of the
    un-randomised robot.
    """
    if bounds is None:
        norm = Normalization() if norm is None else norm
        if force_scale is None:
            force_scale = model.total_mass * model.gravity
        bounds = observation_bounds(model, norm, force_scale)
    lb, ub = bounds
    raw = raw_observation(model, state, snap)
    return np.clip(2.0 * (raw - lb) / (ub - lb) - 1.0, -1.0, 1.0)


def integrate_action(a, refs, dt, lower, upper, max_speed: float = math.pi):
    """New references ``clamp(refs + clamp(a) dt, limits)``; ``a`` in rad/s."""
    a = np.clip(np.asarray(a, dtype=float), -max_speed, max_speed)
    return np.clip(np.asarray(refs, dtype=float) + a * dt, lower, upper)


def sample_initial_state(model: RobotModel, rng: np.random.Generator, cfg: EpisodeConfig) -> dyn.SimState:
    """Joint angles around the reference pose, random joint velocities, base at stance height.

    The base is raised only as much as needed to keep the feet out of the
    ground, so bent legs start airborne.
    """
    a = model.arrays
    nj = model.n_joints
    s = model.s0 + rng.normal(0.0, math.radians(cfg.init_pos_sigma_deg), nj)
    s = np.clip(s, a.lower, a.upper)
    vmax = np.array([j.velocity_limit for j in model.joints])
    sd = np.clip(rng.normal(0.0, math.radians(cfg.init_vel_sigma_deg), nj), -vmax, vmax)
    q = np.zeros(model.n_dof)
    q[3:] = s
    q[1] = max(model.base_height, standing_height(model, s))
    nu = np.zeros(model.n_dof)
    nu[3:] = sd
    return dyn.SimState(q=q, nu=nu, dt=cfg.physics_dt)


def randomize_domain(nominal: RobotModel, rng: np.random.Generator, cfg: EpisodeConfig) -> RobotModel:
    """Per-episode physical parameters.

    Link masses are drawn from a normal truncated at ``mass_floor`` of nominal
    (rejection sampling) with inertia scaled by the same ratio; friction and
    actuation delay are uniform.
    """
    changes: dict[str, Any] = {}
    if cfg.randomize_mass:
        links = []
        for link in nominal.links:
            m0 = link.mass
            m = rng.normal(m0, cfg.mass_sigma * m0)
            while m < cfg.mass_floor * m0:
                m = rng.normal(m0, cfg.mass_sigma * m0)
            links.append(type(link)(**{**asdict(link), "mass": float(m), "inertia": link.inertia * m / m0}))
        changes["links"] = tuple(links)
    if cfg.randomize_friction:
        mu = float(rng.uniform(*cfg.friction_range))
        changes["contact"] = type(nominal.contact)(**{**asdict(nominal.contact), "friction": mu})
    if cfg.randomize_delay:
        changes["actuation_delay"] = float(rng.uniform(*cfg.delay_range))
    return nominal.replace(**changes) if changes else nominal


@dataclass(frozen=True)
class PerturbationEvent:
    start: float  # s
    duration: float
    magnitude: float
    angle: float  # direction in the x-z plane, rad
    link: str

    @property
    def force(self) -> tuple[float, float]:
        return (self.magnitude * math.cos(self.angle), self.magnitude * math.sin(self.angle))

    @property
    def end(self) -> float:
        return self.start + self.duration


def trigger_probability(dt: float, period: float) -> float:
    return min(1.0, dt / period)


def schedule_perturbation(rng: np.random.Generator, t: float, cfg: EpisodeConfig) -> PerturbationEvent | None:
    """Bernoulli draw for one control step; direction uniform on the circle."""
    if rng.random() >= trigger_probability(cfg.control_dt, cfg.perturb_period):
        return None
    angle = float(rng.uniform(0.0, 2.0 * math.pi))
    return PerturbationEvent(t, cfg.perturb_duration, cfg.perturb_magnitude, angle, cfg.perturb_link)


def normalized_impulse(magnitude: float, duration: float, mass: float) -> float:
    return magnitude * duration / mass


@dataclass
class StepInfo:
    reward: RewardBreakdown
    events: list[PerturbationEvent]
    failure: bool
    truncated: bool
    diverged: bool = False


class PushRecoveryEnv:
    """One simulated robot.  Not thread-safe; one instance per worker."""

    def __init__(self, model: RobotModel, cfg: EpisodeConfig | None = None,
                 reward: RewardSpec | None = None, norm: Normalization | None = None,
                 randomize: bool = True):
        self.nominal = model
        self.cfg = EpisodeConfig() if cfg is None else cfg
        self.reward_spec = RewardSpec() if reward is None else reward
        self.norm = Normalization() if norm is None else norm
        self.randomize = randomize
        self.force_scale = model.total_mass * model.gravity
        self.bounds = observation_bounds(model, self.norm, self.force_scale)
        self.rng = np.random.default_rng(self.cfg.seed)
        self.model = model
        self.state: dyn.SimState | None = None
        self.refs: np.ndarray | None = None
        self.events: list[PerturbationEvent] = []
        self.scripted: list[PerturbationEvent] = []
        self.steps = 0
        self.done = True
        self.recorder = None
        self.reset_rng_state: dict | None = None

    @property
    def obs_size(self) -> int:
        return observation_size(self.nominal.n_joints)

    @property
    def act_size(self) -> int:
        return self.nominal.n_joints

    def reset(self, seed: int | None = None, scripted=()) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.reset_rng_state = self.rng.bit_generator.state
        self.model = randomize_domain(self.nominal, self.rng, self.cfg) if self.randomize else self.nominal
        self.state = sample_initial_state(self.model, self.rng, self.cfg)
        self.refs = self.state.joint_positions.copy()
        self.events = []
        self.scripted = list(scripted)
        self.steps = 0
        self.done = False
        obs = self.observe()
        if self.recorder is not None:
            self.recorder.on_reset(self, seed)
        return obs

    def observe(self, snap: dyn.Snapshot | None = None) -> np.ndarray:
        return observe(self.model, self.state, snap=snap, bounds=self.bounds)

    def _forces(self) -> list[dyn.ForceEvent]:
        dt = self.state.dt
        out = []
        for ev in self.events:
            start = int(round(ev.start / dt))
            end = start + int(round(ev.duration / dt))
            if end > self.state.tick:
                out.append(dyn.ForceEvent(start, end, self.model.link_index(ev.link), ev.force))
        return out

    def step(self, action) -> tuple[np.ndarray, float, bool, StepInfo]:
        """``action`` is in normalised units, [-1, 1] maps to +-max_joint_speed."""
        if self.done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        cfg = self.cfg
        action = np.asarray(action, dtype=float)
        a = np.clip(action, -1.0, 1.0) * cfg.max_joint_speed
        arr = self.model.arrays
        self.refs = integrate_action(a, self.refs, cfg.control_dt, arr.lower, arr.upper, cfg.max_joint_speed)
        dyn.enqueue_references(self.model, self.state, self.refs, ramp=cfg.control_dt)
        t = self.state.sim_time
        new_events = []
        for ev in self.scripted:
            if abs(ev.start - t) < 0.5 * cfg.control_dt and ev not in self.events:
                new_events.append(ev)
        if cfg.perturbations and t >= cfg.perturb_start - 1e-9:
            ev = schedule_perturbation(self.rng, t, cfg)
            if ev is not None:
                new_events.append(ev)
        self.events.extend(new_events)
        prev = self.state
        diverged = False
        try:
            self.state = dyn.simulate(self.model, prev, cfg.substeps, self._forces())
        except dyn.SimulationDiverged:
            diverged = True
        self.steps += 1
        if diverged:
            info = StepInfo(_diverged_breakdown(self.reward_spec), new_events, True, False, True)
            self.done = True
            self.state = prev
            obs = self.observe()
            if self.recorder is not None:
                self.recorder.on_step(self, action, info)
            return obs, info.reward.total, True, info
        snap = dyn.snapshot(self.model, self.state)
        rb = evaluate(self.reward_spec, measure(self.model, self.state, a, self.state.last_torques, snap))
        failure = bool(self.state.link_contact)
        truncated = not failure and self.steps >= cfg.max_steps
        self.done = failure or truncated
        info = StepInfo(rb, new_events, failure, truncated)
        obs = self.observe(snap)
        if self.recorder is not None:
            self.recorder.on_step(self, action, info)
        return obs, rb.total, self.done, info


def _diverged_breakdown(spec: RewardSpec) -> RewardBreakdown:
    names = [t.name for t in spec.terms]
    contrib = {n: 0.0 for n in names}
    if "links_contact" in contrib:
        contrib["links_contact"] = spec.term("links_contact").weight
    return RewardBreakdown({n: float("nan") for n in names}, {n: 0.0 for n in names}, contrib,
                           sum(contrib.values()), False)


# --------------------------------------------------------------------------
# config files


@dataclass
class EnvConfig:
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    reward: RewardSpec = field(default_factory=RewardSpec)
    norm: Normalization = field(default_factory=Normalization)

    def to_sections(self) -> dict[str, dict[str, Any]]:
        sections = {"episode": asdict(self.episode), "normalization": asdict(self.norm)}
        sections["reward"] = {"epsilon": self.reward.epsilon, "com_margin": self.reward.com_margin}
        for t in self.reward.terms:
            sections[f"term {t.name}"] = {"weight": t.weight, "cutoff": t.cutoff, "ss": t.ss, "ds": t.ds}
        return sections

    def hash(self) -> str:
        return config_hash(self.to_sections())

    def save(self, path) -> None:
        Path(path).write_text(dump_sections(self.to_sections()))


def env_config_from_sections(sections: dict[str, dict[str, Any]]) -> EnvConfig:
    episode = EpisodeConfig()
    apply_overrides(episode, sections.get("episode", {}), "episode")
    episode.validate()
    norm = Normalization()
    apply_overrides(norm, sections.get("normalization", {}), "normalization")
    for f in fields(norm):
        lo, hi = getattr(norm, f.name)
        if not lo < hi:
            raise ConfigError(f"normalization.{f.name}", "needs lower < upper")
    overrides = {}
    for name, items in sections.items():
        if name.startswith("term "):
            key = name[5:]
            bad = set(items) - {"weight", "cutoff", "ss", "ds"}
            if bad:
                raise ConfigError(f"term.{key}.{sorted(bad)[0]}", "unknown key")
            overrides[key] = items
    unknown = set(sections) - {"episode", "normalization", "reward"} - {n for n in sections if n.startswith("term ")}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown section")
    r = sections.get("reward", {})
    try:
        spec = RewardSpec(epsilon=float(r.get("epsilon", 0.01)), com_margin=float(r.get("com_margin", 0.025)))
        spec = spec.with_overrides(overrides)
    except (KeyError, ValueError) as exc:
        raise ConfigError("reward", str(exc)) from None
    return EnvConfig(episode, spec, norm)


def load_env_config(path) -> EnvConfig:
    return env_config_from_sections(read_sections(path))
