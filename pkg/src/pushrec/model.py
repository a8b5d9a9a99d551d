"""Planar biped description.

The robot is a tree of rigid links moving in the sagittal (x, z) plane on
top of a 3-DoF floating base (x, z, pitch).  Every non-base link hangs off
its parent through one revolute joint, so joint ``k`` drives link ``k + 1``.
Angles are counter-clockwise in the x-z plane; a link frame sits at its
joint and rotates by ``parent angle + joint angle``.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np

from .config import ConfigError, dump_sections, read_sections


@dataclass(frozen=True)
class Link:
    name: str
    mass: float
    inertia: float  # about the CoM, kg m^2
    com: tuple[float, float]  # in link frame
    tip: tuple[float, float]  # far end of the collision segment, link frame
    parent: str | None = None
    anchor: tuple[float, float] = (0.0, 0.0)  # joint location in parent frame

    @property
    def length(self) -> float:
        return float(np.hypot(*self.tip))


@dataclass(frozen=True)
class Joint:
    name: str
    link: str
    lower: float
    upper: float
    velocity_limit: float
    kp: float
    ki: float
    kd: float


@dataclass(frozen=True)
class Foot:
    link: str
    heel: tuple[float, float]
    toe: tuple[float, float]


@dataclass(frozen=True)
class ContactParams:
    stiffness: float = 2.0e5  # N/m
    damping: float = 2.0e3  # N s/m
    tangential: float = 1.0e3  # N s/m
    friction: float = 1.0  # Coulomb coefficient


@dataclass(frozen=True)
class RobotModel:
    links: tuple[Link, ...]
    joints: tuple[Joint, ...]
    feet: tuple[Foot, ...]
    contact: ContactParams = field(default_factory=ContactParams)
    gravity: float = 9.81
    actuation_delay: float = 0.0  # s, applied to incoming joint references
    torque_limit: float | None = None  # symmetric clamp in Nm, off by default
    fixed_base: bool = False
    reference_pose: tuple[float, ...] | None = None  # joint angles of the nominal stance
    base_height: float = 0.0  # base z that puts the flat feet on the ground at the nominal stance

    def __post_init__(self):
        _validate(self)

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def n_dof(self) -> int:
        return 3 + len(self.joints)

    @property
    def total_mass(self) -> float:
        return float(sum(link.mass for link in self.links))

    @property
    def link_names(self) -> list[str]:
        return [link.name for link in self.links]

    def link_index(self, name: str) -> int:
        try:
            return self.link_names.index(name)
        except ValueError:
            raise KeyError(f"unknown link {name!r}") from None

    @property
    def s0(self) -> np.ndarray:
        if self.reference_pose is None:
            return np.zeros(self.n_joints)
        return np.asarray(self.reference_pose, dtype=float)

    @cached_property
    def arrays(self) -> "ModelArrays":
        return ModelArrays.from_model(self)

    def replace(self, **changes) -> "RobotModel":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ModelArrays:
    """Flat numeric view of a :class:`RobotModel` consumed by the compiled kernels."""

    parent: np.ndarray  # (L,) int, -1 for the base
    anchor: np.ndarray  # (L, 2)
    mass: np.ndarray
    inertia: np.ndarray
    com: np.ndarray  # (L, 2)
    tip: np.ndarray  # (L, 2)
    chain: np.ndarray  # (L, L) bool, chain[i, a] when a is i or an ancestor of i
    is_foot: np.ndarray  # (L,) bool
    lower: np.ndarray
    upper: np.ndarray
    kp: np.ndarray
    ki: np.ndarray
    kd: np.ndarray
    point_link: np.ndarray  # (4,) link index of heel/toe points, order L-heel, L-toe, R-heel, R-toe
    point_local: np.ndarray  # (4, 2)
    gravity: float
    contact: np.ndarray  # (stiffness, damping, tangential, friction)
    torque_limit: float  # inf when unclamped
    fixed_base: bool

    @classmethod
    def from_model(cls, model: RobotModel) -> "ModelArrays":
        names = model.link_names
        n = len(names)
        parent = np.array([-1 if l.parent is None else names.index(l.parent) for l in model.links])
        chain = np.zeros((n, n), dtype=np.bool_)
        for i in range(n):
            a = i
            while a >= 0:
                chain[i, a] = True
                a = parent[a]
        is_foot = np.zeros(n, dtype=np.bool_)
        point_link, point_local = [], []
        for foot in model.feet:
            k = names.index(foot.link)
            is_foot[k] = True
            point_link += [k, k]
            point_local += [foot.heel, foot.toe]
        j = model.joints
        c = model.contact
        return cls(
            parent=parent.astype(np.int64),
            anchor=np.array([l.anchor for l in model.links], dtype=float),
            mass=np.array([l.mass for l in model.links], dtype=float),
            inertia=np.array([l.inertia for l in model.links], dtype=float),
            com=np.array([l.com for l in model.links], dtype=float),
            tip=np.array([l.tip for l in model.links], dtype=float),
            chain=chain,
            is_foot=is_foot,
            lower=np.array([x.lower for x in j], dtype=float),
            upper=np.array([x.upper for x in j], dtype=float),
            kp=np.array([x.kp for x in j], dtype=float),
            ki=np.array([x.ki for x in j], dtype=float),
            kd=np.array([x.kd for x in j], dtype=float),
            point_link=np.array(point_link, dtype=np.int64).reshape(-1),
            point_local=np.array(point_local, dtype=float).reshape(-1, 2),
            gravity=float(model.gravity),
            contact=np.array([c.stiffness, c.damping, c.tangential, c.friction], dtype=float),
            torque_limit=np.inf if model.torque_limit is None else float(model.torque_limit),
            fixed_base=bool(model.fixed_base),
        )


def _validate(model: RobotModel) -> None:
    if not model.links:
        raise ConfigError("links", "model needs at least a base link")
    seen: list[str] = []
    for i, link in enumerate(model.links):
        where = f"link.{link.name}"
        if link.name in seen:
            raise ConfigError(where, "duplicate link name")
        if not np.isfinite(link.mass) or link.mass <= 0:
            raise ConfigError(f"{where}.mass", f"must be > 0, got {link.mass}")
        if not np.isfinite(link.inertia) or link.inertia <= 0:
            raise ConfigError(f"{where}.inertia", f"must be > 0, got {link.inertia}")
        if i == 0 and link.parent is not None:
            raise ConfigError(f"{where}.parent", "the first link is the floating base")
        if i > 0 and link.parent not in seen:
            raise ConfigError(f"{where}.parent", f"parent {link.parent!r} must be declared earlier")
        seen.append(link.name)
    if len(model.joints) != len(model.links) - 1:
        raise ConfigError("joints", "every non-base link needs exactly one joint")
    for k, joint in enumerate(model.joints):
        where = f"joint.{joint.name}"
        if joint.link != model.links[k + 1].name:
            raise ConfigError(f"{where}.link", f"joint {k} must drive link {model.links[k + 1].name!r}")
        if not joint.lower < joint.upper:
            raise ConfigError(f"{where}.lower", "position limits need lower < upper")
        if joint.velocity_limit <= 0:
            raise ConfigError(f"{where}.velocity_limit", "must be > 0")
        for gain in ("kp", "ki", "kd"):
            if getattr(joint, gain) < 0:
                raise ConfigError(f"{where}.{gain}", "gains must be >= 0")
    for foot in model.feet:
        if foot.link not in seen:
            raise ConfigError(f"foot.{foot.link}", "unknown foot link")
    if model.contact.friction <= 0:
        raise ConfigError("contact.friction", "Coulomb coefficient must be > 0")
    for name in ("stiffness", "damping", "tangential"):
        if getattr(model.contact, name) < 0:
            raise ConfigError(f"contact.{name}", "must be >= 0")
    if model.actuation_delay < 0:
        raise ConfigError("model.actuation_delay", "must be >= 0")
    if model.reference_pose is not None and len(model.reference_pose) != len(model.joints):
        raise ConfigError("model.reference_pose", "needs one angle per joint")


# --------------------------------------------------------------------------
# Default planar biped

_LEG = 0.24  # thigh and shank length
_ANKLE_DROP = 0.06  # ankle joint to sole


def default_spec() -> dict[str, dict[str, Any]]:
    """Section dict of the default 8-joint biped (total mass 33 kg)."""
    hip = dict(kp=300.0, ki=0.0, kd=20.0)
    knee = dict(kp=300.0, ki=0.0, kd=10.0)
    spec: dict[str, dict[str, Any]] = {
        "model": {
            "gravity": 9.81,
            "actuation_delay": 0.0,
            "torque_limit": None,
            "fixed_base": False,
            "reference_pose": [0.0, 0.0, 0.2, -0.4, 0.2, 0.2, -0.4, 0.2],
        },
        "contact": {"stiffness": 2.0e5, "damping": 2.0e3, "tangential": 1.0e3, "friction": 1.0},
        "link pelvis": {"mass": 5.0, "inertia": 0.05, "com": [0.0, 0.05], "tip": [0.0, 0.1]},
        "link torso": {
            "mass": 10.5, "inertia": 0.25, "com": [0.0, 0.18], "tip": [0.0, 0.4],
            "parent": "pelvis", "anchor": [0.0, 0.1],
            "joint": "torso_pitch", "lower": -1.0, "upper": 0.6, "velocity_limit": 6.0,
            "kp": 400.0, "ki": 0.0, "kd": 30.0,
        },
        "link arm": {
            "mass": 4.0, "inertia": 0.04, "com": [0.0, -0.14], "tip": [0.0, -0.3],
            "parent": "torso", "anchor": [0.0, 0.3],
            "joint": "shoulder_pitch", "lower": -1.0, "upper": 3.0, "velocity_limit": 6.0,
            "kp": 80.0, "ki": 0.0, "kd": 4.0,
        },
    }
    for side in ("l", "r"):
        spec[f"link thigh_{side}"] = {
            "mass": 3.5, "inertia": 0.02, "com": [0.0, -0.12], "tip": [0.0, -_LEG],
            "parent": "pelvis", "anchor": [0.0, 0.0],
            "joint": f"hip_{side}", "lower": -0.8, "upper": 1.8, "velocity_limit": 6.0, **hip,
        }
        spec[f"link shank_{side}"] = {
            "mass": 2.25, "inertia": 0.012, "com": [0.0, -0.12], "tip": [0.0, -_LEG],
            "parent": f"thigh_{side}", "anchor": [0.0, -_LEG],
            "joint": f"knee_{side}", "lower": -2.2, "upper": 0.0, "velocity_limit": 6.0, **knee,
        }
        spec[f"link foot_{side}"] = {
            "mass": 1.0, "inertia": 0.004, "com": [0.03, -0.04], "tip": [0.12, -_ANKLE_DROP],
            "parent": f"shank_{side}", "anchor": [0.0, -_LEG],
            "joint": f"ankle_{side}", "lower": -0.7, "upper": 0.7, "velocity_limit": 6.0,
            "kp": 300.0, "ki": 0.0, "kd": 3.0,
        }
    # reorder so both legs follow the upper body: pelvis torso arm thigh_l shank_l foot_l thigh_r ...
    order = ["model", "contact", "link pelvis", "link torso", "link arm",
             "link thigh_l", "link shank_l", "link foot_l", "link thigh_r", "link shank_r", "link foot_r"]
    spec = {k: spec[k] for k in order}
    spec["foot foot_l"] = {"heel": [-0.08, -_ANKLE_DROP], "toe": [0.12, -_ANKLE_DROP]}
    spec["foot foot_r"] = {"heel": [-0.08, -_ANKLE_DROP], "toe": [0.12, -_ANKLE_DROP]}
    return spec


_JOINT_KEYS = ("joint", "lower", "upper", "velocity_limit", "kp", "ki", "kd")
_LINK_KEYS = ("mass", "inertia", "com", "tip", "parent", "anchor")


def _pair(value, where: str) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(where, f"expected two numbers, got {value!r}")
    return float(value[0]), float(value[1])


def build_model(spec: dict | str | os.PathLike | None = None) -> RobotModel:
    """Build and validate a model from a section dict or a config file path.

    ``None`` gives the default biped.  Raises :class:`ConfigError` naming the
    offending field when a value violates a model invariant.
    """
    if spec is None:
        spec = default_spec()
    elif isinstance(spec, (str, os.PathLike)):
        spec = read_sections(spec)
    links, joints, feet = [], [], []
    for section, items in spec.items():
        kind, _, name = section.partition(" ")
        if kind == "link":
            unknown = set(items) - set(_LINK_KEYS) - set(_JOINT_KEYS)
            if unknown:
                raise ConfigError(f"link.{name}.{sorted(unknown)[0]}", "unknown key")
            try:
                links.append(Link(
                    name=name,
                    mass=float(items["mass"]),
                    inertia=float(items["inertia"]),
                    com=_pair(items.get("com", [0.0, 0.0]), f"link.{name}.com"),
                    tip=_pair(items.get("tip", [0.0, 0.0]), f"link.{name}.tip"),
                    parent=items.get("parent"),
                    anchor=_pair(items.get("anchor", [0.0, 0.0]), f"link.{name}.anchor"),
                ))
                if items.get("parent") is not None:
                    joints.append(Joint(
                        name=str(items.get("joint", f"{name}_joint")),
                        link=name,
                        lower=float(items["lower"]),
                        upper=float(items["upper"]),
                        velocity_limit=float(items.get("velocity_limit", np.pi)),
                        kp=float(items.get("kp", 0.0)),
                        ki=float(items.get("ki", 0.0)),
                        kd=float(items.get("kd", 0.0)),
                    ))
            except KeyError as exc:
                raise ConfigError(f"link.{name}.{exc.args[0]}", "missing required key") from None
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"link.{name}", str(exc)) from None
        elif kind == "foot":
            feet.append(Foot(
                link=name,
                heel=_pair(items.get("heel"), f"foot.{name}.heel"),
                toe=_pair(items.get("toe"), f"foot.{name}.toe"),
            ))
        elif kind not in ("model", "contact"):
            raise ConfigError(section, "unknown section")
    m = spec.get("model", {})
    c = spec.get("contact", {})
    unknown = set(c) - {f.name for f in dataclasses.fields(ContactParams)}
    if unknown:
        raise ConfigError(f"contact.{sorted(unknown)[0]}", "unknown key")
    pose = m.get("reference_pose")
    model = RobotModel(
        links=tuple(links),
        joints=tuple(joints),
        feet=tuple(feet),
        contact=ContactParams(**{k: float(v) for k, v in c.items()}),
        gravity=float(m.get("gravity", 9.81)),
        actuation_delay=float(m.get("actuation_delay", 0.0)),
        torque_limit=None if m.get("torque_limit") is None else float(m["torque_limit"]),
        fixed_base=bool(m.get("fixed_base", False)),
        reference_pose=None if pose is None else tuple(float(x) for x in np.atleast_1d(pose)),
    )
    if model.feet and model.reference_pose is not None and not model.fixed_base:
        model = model.replace(base_height=standing_height(model))
    return model


def standing_height(model: RobotModel, s: np.ndarray | None = None) -> float:
    """Base height at which the lowest foot contact point touches z = 0."""
    from .dynamics import link_frames

    q = np.zeros(model.n_dof)
    q[3:] = model.s0 if s is None else s
    origin, angle = link_frames(model, q)
    a = model.arrays
    lowest = np.inf
    for k, local in zip(a.point_link, a.point_local):
        c, s_ = np.cos(angle[k]), np.sin(angle[k])
        z = origin[k, 1] + s_ * local[0] + c * local[1]
        lowest = min(lowest, z)
    return float(-lowest)


def model_to_spec(model: RobotModel) -> dict[str, dict[str, Any]]:
    spec: dict[str, dict[str, Any]] = {
        "model": {
            "gravity": model.gravity,
            "actuation_delay": model.actuation_delay,
            "torque_limit": model.torque_limit,
            "fixed_base": model.fixed_base,
            "reference_pose": None if model.reference_pose is None else list(model.reference_pose),
        },
        "contact": dataclasses.asdict(model.contact),
    }
    joints = {j.link: j for j in model.joints}
    for link in model.links:
        items: dict[str, Any] = {
            "mass": link.mass, "inertia": link.inertia, "com": list(link.com), "tip": list(link.tip),
        }
        if link.parent is not None:
            j = joints[link.name]
            items.update(parent=link.parent, anchor=list(link.anchor), joint=j.name, lower=j.lower,
                         upper=j.upper, velocity_limit=j.velocity_limit, kp=j.kp, ki=j.ki, kd=j.kd)
        spec[f"link {link.name}"] = items
    for foot in model.feet:
        spec[f"foot {foot.link}"] = {"heel": list(foot.heel), "toe": list(foot.toe)}
    return spec


def save_model(model: RobotModel, path: str | os.PathLike) -> None:
    Path(path).write_text(dump_sections(model_to_spec(model)))
