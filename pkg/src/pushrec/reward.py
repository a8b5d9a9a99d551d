"""RBF-kernel reward for balancing and push recovery.

Each real-valued term is passed through ``exp(-gamma ||x - x*||^2)`` with
``gamma = -ln(eps) / x_c^2``, so a measurement at the target scores 1 and
one at distance ``x_c`` (the cutoff) scores ``eps``.  Boolean terms score
0 or 1.  Terms are gated by the support phase: double support (both feet
in contact) or single support (everything else, flight included).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import SimState, Snapshot, snapshot
from .model import RobotModel

EPSILON = 0.01
COM_MARGIN = 0.025  # m, shrink of the support interval on each side


def kernel_gamma(cutoff: float, eps: float = EPSILON) -> float:
    return -math.log(eps) / cutoff**2


def rbf_kernel(x, x_target, cutoff: float, eps: float = EPSILON) -> float:
    """exp(-gamma ||x - x_target||^2), in [0, 1]."""
    if cutoff <= 0:
        raise ValueError("cutoff must be > 0")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    diff = np.atleast_1d(np.asarray(x, dtype=float) - np.asarray(x_target, dtype=float))
    return math.exp(-kernel_gamma(cutoff, eps) * float(diff @ diff))


@dataclass(frozen=True)
class RewardTerm:
    name: str
    weight: float
    cutoff: float | None  # None for Boolean terms
    ss: bool
    ds: bool


def default_terms() -> tuple[RewardTerm, ...]:
    """Term table.  Paired foot terms carry the row weight once per foot.

    ``contact_force_*`` cutoffs are fractions of the robot weight m g.
    """
    return (
        RewardTerm("torques", 5.0, 10.0, True, True),
        RewardTerm("joint_velocities", 2.0, 1.0, True, True),
        RewardTerm("postural", 10.0, math.radians(7.5), False, True),
        RewardTerm("com_vz", 2.0, 1.0, True, True),
        RewardTerm("com_vx", 2.0, 0.5, False, True),
        RewardTerm("contact_force_l", 4.0, 0.5, True, True),
        RewardTerm("contact_force_r", 4.0, 0.5, True, True),
        RewardTerm("momentum", 1.0, 50.0, True, True),
        RewardTerm("cop_l", 20.0, 0.3, True, True),
        RewardTerm("cop_r", 20.0, 0.3, True, True),
        RewardTerm("foot_orient_l", 3.0, 0.01, True, True),
        RewardTerm("foot_orient_r", 3.0, 0.01, True, True),
        RewardTerm("com_projection", 10.0, None, False, True),
        RewardTerm("feet_contact", 2.0, None, True, True),
        RewardTerm("links_contact", -10.0, None, True, True),
    )


@dataclass(frozen=True)
class RewardSpec:
    terms: tuple[RewardTerm, ...] = field(default_factory=default_terms)
    epsilon: float = EPSILON
    com_margin: float = COM_MARGIN

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        for t in self.terms:
            if t.cutoff is not None and t.cutoff <= 0:
                raise ValueError(f"{t.name}: cutoff must be > 0")

    def term(self, name: str) -> RewardTerm:
        for t in self.terms:
            if t.name == name:
                return t
        raise KeyError(name)

    def with_overrides(self, overrides: dict[str, dict]) -> "RewardSpec":
        names = {t.name for t in self.terms}
        for name in overrides:
            if name not in names:
                raise KeyError(f"unknown reward term {name!r}")
        terms = tuple(replace(t, **overrides.get(t.name, {})) for t in self.terms)
        return replace(self, terms=terms)

    @property
    def max_total(self) -> float:
        return sum(t.weight for t in self.terms if t.weight > 0)


@dataclass
class RewardBreakdown:
    raw: dict[str, float]
    kernel: dict[str, float]
    contribution: dict[str, float]
    total: float
    double_support: bool


@dataclass(frozen=True)
class RewardInputs:
    """Measurements the reward terms read, gathered once per control step."""

    mean_abs_torque: float
    action_norm: float
    posture_error: float
    com: np.ndarray
    com_velocity: np.ndarray
    momentum_sq: float
    foot_force: np.ndarray
    cop: np.ndarray
    cop_valid: np.ndarray
    sole_center: np.ndarray
    foot_cos: np.ndarray
    contact: np.ndarray
    support: tuple[float, float] | None
    link_contact: bool
    weight: float
    gravity: float


def measure(model: RobotModel, state: SimState, action, substep_torques,
            snap: Snapshot | None = None) -> RewardInputs:
    snap = snapshot(model, state) if snap is None else snap
    cq = snap.centroidal
    sg = snap.support
    feet = model.arrays.point_link[0::2]
    torques = np.asarray(substep_torques, dtype=float)
    return RewardInputs(
        mean_abs_torque=float(np.mean(np.abs(torques))) if torques.size else 0.0,
        action_norm=float(np.linalg.norm(action)),
        posture_error=float(np.linalg.norm(state.joint_positions - model.s0)),
        com=cq.com,
        com_velocity=cq.com_velocity,
        momentum_sq=float(cq.linear_momentum @ cq.linear_momentum + cq.angular_momentum**2),
        foot_force=sg.foot_force,
        cop=sg.cop,
        cop_valid=sg.cop_valid,
        sole_center=sg.sole_center,
        foot_cos=np.cos(snap.angle[feet]),
        contact=sg.contact,
        support=sg.support,
        link_contact=bool(state.link_contact),
        weight=model.total_mass * model.gravity,
        gravity=model.gravity,
    )


def _raw_values(m: RewardInputs, margin: float) -> dict[str, tuple[float, float] | bool | None]:
    """Per term: (distance to target) for kernel terms, bool for Boolean ones.

    ``None`` marks a term whose measurement is undefined (e.g. CoP of an
    unloaded foot); it contributes zero.
    """
    out: dict = {}
    out["torques"] = m.mean_abs_torque
    out["joint_velocities"] = m.action_norm
    out["postural"] = m.posture_error
    out["com_vz"] = abs(m.com_velocity[1])
    if m.support is not None:
        center = 0.5 * (m.support[0] + m.support[1])
        omega0 = math.sqrt(m.gravity / max(m.com[1], 1e-3))
        out["com_vx"] = abs(m.com_velocity[0] - omega0 * (center - m.com[0]))
        lo, hi = m.support[0] + margin, m.support[1] - margin
        out["com_projection"] = bool(lo <= m.com[0] <= hi)
    else:
        out["com_vx"] = None
        out["com_projection"] = False
    half = 0.5 * m.weight
    for i, side in enumerate("lr"):
        out[f"contact_force_{side}"] = abs(m.foot_force[i] - half) / m.weight
        out[f"cop_{side}"] = abs(m.cop[i] - m.sole_center[i]) if m.cop_valid[i] else None
        out[f"foot_orient_{side}"] = abs(m.foot_cos[i] - 1.0)
    out["momentum"] = m.momentum_sq
    out["feet_contact"] = bool(m.contact.any())
    out["links_contact"] = m.link_contact
    return out


def evaluate(spec: RewardSpec, inputs: RewardInputs) -> RewardBreakdown:
    double = bool(inputs.contact.all())
    values = _raw_values(inputs, spec.com_margin)
    raw, kern, contrib = {}, {}, {}
    total = 0.0
    for term in spec.terms:
        v = values[term.name]
        active = term.ds if double else term.ss
        if v is None:
            k = 0.0
            raw[term.name] = float("nan")
        elif term.cutoff is None:
            k = 1.0 if v else 0.0
            raw[term.name] = k
        else:
            # distances are non-negative scalars, so the kernel is exp(-gamma d^2)
            k = math.exp(-kernel_gamma(term.cutoff, spec.epsilon) * v * v)
            raw[term.name] = float(v)
        kern[term.name] = k
        c = term.weight * k if active else 0.0
        contrib[term.name] = c
        total += c
    return RewardBreakdown(raw, kern, contrib, total, double)


def compute_reward(model: RobotModel, state_t: SimState | None, action, state_t1: SimState,
                   substep_torques, spec: RewardSpec | None = None) -> RewardBreakdown:
    """Reward of the transition ``state_t -> state_t1`` under ``action`` (rad/s).

    Only the post-transition state enters the terms; ``state_t`` is accepted
    for signature symmetry.
    """
    spec = RewardSpec() if spec is None else spec
    return evaluate(spec, measure(model, state_t1, action, substep_torques))
