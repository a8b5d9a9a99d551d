"""Planar floating-base rigid-body simulation.

Generalised coordinates are ``q = (x, z, pitch, s_1..s_n)`` and velocities
``nu = (v_x, v_z, omega, sdot_1..sdot_n)`` where the base linear velocity is
expressed in the base (body-fixed) frame.  The equation of motion

    M(q) nu_dot + h(q, nu) = B tau + sum_k J_k^T f_k

is assembled from per-link CoM Jacobians and integrated with semi-implicit
Euler (velocity first, then position).  Damping forces (contact normal and
viscous friction, PID derivative) are linearised around the current
velocity and applied implicitly so that stiff contacts stay stable at 1 ms.
Ground contact is a per-point spring-damper with Coulomb-clamped viscous
friction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit

from .model import RobotModel

DT = 1e-3  # physics step, s
MAX_SPEED = 100.0  # m/s or rad/s; nothing a push-recovery episode produces comes close


class SimulationDiverged(FloatingPointError):
    """The integrated state is non-finite or moving faster than ``MAX_SPEED``."""


# --------------------------------------------------------------------------
# compiled kernels


@njit(cache=True)
def _frames(parent, anchor, q):
    L = parent.shape[0]
    origin = np.empty((L, 2))
    angle = np.empty(L)
    origin[0, 0] = q[0]
    origin[0, 1] = q[1]
    angle[0] = q[2]
    for i in range(1, L):
        p = parent[i]
        c = math.cos(angle[p])
        s = math.sin(angle[p])
        origin[i, 0] = origin[p, 0] + c * anchor[i, 0] - s * anchor[i, 1]
        origin[i, 1] = origin[p, 1] + s * anchor[i, 0] + c * anchor[i, 1]
        angle[i] = angle[p] + q[2 + i]
    return origin, angle


@njit(cache=True)
def _velocities(parent, q, nu, origin):
    L = parent.shape[0]
    vel = np.empty((L, 2))
    omega = np.empty(L)
    c = math.cos(q[2])
    s = math.sin(q[2])
    vel[0, 0] = c * nu[0] - s * nu[1]
    vel[0, 1] = s * nu[0] + c * nu[1]
    omega[0] = nu[2]
    for i in range(1, L):
        p = parent[i]
        rx = origin[i, 0] - origin[p, 0]
        rz = origin[i, 1] - origin[p, 1]
        vel[i, 0] = vel[p, 0] - omega[p] * rz
        vel[i, 1] = vel[p, 1] + omega[p] * rx
        omega[i] = omega[p] + nu[2 + i]
    return vel, omega


@njit(cache=True)
def _local_to_world(origin, angle, k, lx, lz):
    c = math.cos(angle[k])
    s = math.sin(angle[k])
    return origin[k, 0] + c * lx - s * lz, origin[k, 1] + s * lx + c * lz


@njit(cache=True)
def _point_jacobian(chain, origin, theta, k, px, pz, n):
    """2 x n Jacobian of the world velocity of point (px, pz) fixed on link k."""
    J = np.zeros((2, n))
    c = math.cos(theta)
    s = math.sin(theta)
    J[0, 0] = c
    J[1, 0] = s
    J[0, 1] = -s
    J[1, 1] = c
    for a in range(chain.shape[1]):
        if chain[k, a]:
            J[0, 2 + a] = -(pz - origin[a, 1])
            J[1, 2 + a] = px - origin[a, 0]
    return J


@njit(cache=True)
def _mass_bias(parent, anchor, mass, inertia, com, chain, gravity, q, nu):
    L = parent.shape[0]
    n = q.shape[0]
    origin, angle = _frames(parent, anchor, q)
    vel, omega = _velocities(parent, q, nu, origin)
    # origin accelerations from velocity products only (nu_dot = 0)
    acc = np.empty((L, 2))
    acc[0, 0] = -omega[0] * vel[0, 1]
    acc[0, 1] = omega[0] * vel[0, 0]
    for i in range(1, L):
        p = parent[i]
        w2 = omega[p] * omega[p]
        acc[i, 0] = acc[p, 0] - w2 * (origin[i, 0] - origin[p, 0])
        acc[i, 1] = acc[p, 1] - w2 * (origin[i, 1] - origin[p, 1])
    M = np.zeros((n, n))
    h = np.zeros(n)
    for i in range(L):
        px, pz = _local_to_world(origin, angle, i, com[i, 0], com[i, 1])
        J = _point_jacobian(chain, origin, q[2], i, px, pz, n)
        w2 = omega[i] * omega[i]
        ax = acc[i, 0] - w2 * (px - origin[i, 0])
        az = acc[i, 1] - w2 * (pz - origin[i, 1]) + gravity
        m = mass[i]
        for u in range(n):
            h[u] += m * (J[0, u] * ax + J[1, u] * az)
            for v in range(u, n):
                M[u, v] += m * (J[0, u] * J[0, v] + J[1, u] * J[1, v])
        for a in range(L):
            if chain[i, a]:
                for b in range(a, L):
                    if chain[i, b]:
                        M[2 + a, 2 + b] += inertia[i]
    for u in range(n):
        for v in range(u + 1, n):
            M[v, u] = M[u, v]
    return M, h


@njit(cache=True)
def _contact_points(parent, chain, point_link, point_local, contact, q, nu, origin, angle):
    """World positions, velocities and (tangential, normal) forces of the foot points."""
    vel, omega = _velocities(parent, q, nu, origin)
    P = point_link.shape[0]
    pos = np.empty((P, 2))
    pvel = np.empty((P, 2))
    force = np.zeros((P, 2))
    k_n, d_n, k_t, mu = contact[0], contact[1], contact[2], contact[3]
    for j in range(P):
        k = point_link[j]
        px, pz = _local_to_world(origin, angle, k, point_local[j, 0], point_local[j, 1])
        pos[j, 0] = px
        pos[j, 1] = pz
        vx = vel[k, 0] - omega[k] * (pz - origin[k, 1])
        vz = vel[k, 1] + omega[k] * (px - origin[k, 0])
        pvel[j, 0] = vx
        pvel[j, 1] = vz
        depth = -pz
        if depth > 0.0:
            fn = k_n * depth - d_n * vz
            if fn < 0.0:
                fn = 0.0
            ft = -k_t * vx
            lim = mu * fn
            if ft > lim:
                ft = lim
            elif ft < -lim:
                ft = -lim
            force[j, 0] = ft
            force[j, 1] = fn
    return pos, pvel, force


@njit(cache=True)
def _centroidal(mass, inertia, com, origin, angle, vel, omega):
    """(com_x, com_z, vcom_x, vcom_z, angular momentum about the CoM)."""
    L = mass.shape[0]
    px = np.empty(L)
    pz = np.empty(L)
    vx = np.empty(L)
    vz = np.empty(L)
    total = 0.0
    cx = cz = wx = wz = 0.0
    for k in range(L):
        c, s = math.cos(angle[k]), math.sin(angle[k])
        rx = c * com[k, 0] - s * com[k, 1]
        rz = s * com[k, 0] + c * com[k, 1]
        px[k] = origin[k, 0] + rx
        pz[k] = origin[k, 1] + rz
        vx[k] = vel[k, 0] - omega[k] * rz
        vz[k] = vel[k, 1] + omega[k] * rx
        m = mass[k]
        total += m
        cx += m * px[k]
        cz += m * pz[k]
        wx += m * vx[k]
        wz += m * vz[k]
    cx /= total
    cz /= total
    wx /= total
    wz /= total
    h = 0.0
    for k in range(L):
        h += mass[k] * ((px[k] - cx) * (vz[k] - wz) - (pz[k] - cz) * (vx[k] - wx)) + inertia[k] * omega[k]
    out = np.empty(5)
    out[0], out[1], out[2], out[3], out[4] = cx, cz, wx, wz, h
    return out


@njit(cache=True)
def _support(pos, force, n_feet):
    """Per-foot load, CoP, contact flag and sole centre; support interval of touching points."""
    cop = np.full(n_feet, np.nan)
    load = np.zeros(n_feet)
    touch = np.zeros(n_feet, dtype=np.bool_)
    centre = np.zeros(n_feet)
    lo, hi = np.inf, -np.inf
    for f in range(n_feet):
        moment = 0.0
        for j in (2 * f, 2 * f + 1):
            fn = force[j, 1]
            x = pos[j, 0]
            load[f] += fn
            moment += fn * x
            centre[f] += 0.5 * x
            if pos[j, 1] < 0.0:
                touch[f] = True
                lo = min(lo, x)
                hi = max(hi, x)
        if load[f] > 0.0:
            cop[f] = moment / load[f]
    return cop, load, touch, centre, lo, hi


@njit(cache=True)
def _link_touches_ground(is_foot, tip, origin, angle):
    for i in range(is_foot.shape[0]):
        if is_foot[i]:
            continue
        if origin[i, 1] < 0.0:
            return True
        tx, tz = _local_to_world(origin, angle, i, tip[i, 0], tip[i, 1])
        if tz < 0.0:
            return True
    return False


@njit(cache=True)
def _reference(tick, seg_start, seg_len, r0, r1, dt):
    nj = r0.shape[0]
    ref = np.empty(nj)
    rate = np.zeros(nj)
    if seg_len <= 0 or tick >= seg_start + seg_len:
        ref[:] = r1
    elif tick <= seg_start:
        ref[:] = r0
        rate[:] = (r1 - r0) / (seg_len * dt)
    else:
        frac = (tick - seg_start) / seg_len
        ref[:] = r0 + (r1 - r0) * frac
        rate[:] = (r1 - r0) / (seg_len * dt)
    return ref, rate


@njit(cache=True)
def _advance(parent, anchor, mass, inertia, com, tip, chain, is_foot,
             kp, ki, kd, point_link, point_local, gravity, contact, tlim, fixed_base,
             q, nu, integ, tick, seg_start, seg_len, r0, r1,
             q_tick, q_target, q_ramp, q_count,
             ev_start, ev_end, ev_link, ev_force, n_sub, dt):
    n = q.shape[0]
    nj = n - 3
    q = q.copy()
    nu = nu.copy()
    integ = integ.copy()
    r0 = r0.copy()
    r1 = r1.copy()
    torques = np.empty((n_sub, nj))
    touched = False
    head = 0
    for it in range(n_sub):
        # release delayed references
        while head < q_count and q_tick[head] <= tick:
            cur, _ = _reference(tick, seg_start, seg_len, r0, r1, dt)
            r0[:] = cur
            r1[:] = q_target[head]
            seg_start = q_tick[head]
            seg_len = q_ramp[head]
            head += 1
        ref, rate = _reference(tick, seg_start, seg_len, r0, r1, dt)

        origin, angle = _frames(parent, anchor, q)
        M, h = _mass_bias(parent, anchor, mass, inertia, com, chain, gravity, q, nu)
        rhs = -h
        # damping terms enter linearly-implicitly: (M + dt D) nu_dot = rhs
        A = M.copy()
        for j in range(nj):
            e = ref[j] - q[3 + j]
            integ[j] += e * dt
            tau = kp[j] * e + ki[j] * integ[j] + kd[j] * (rate[j] - nu[3 + j])
            if tau > tlim:
                tau = tlim
            elif tau < -tlim:
                tau = -tlim
            else:
                A[3 + j, 3 + j] += dt * kd[j]
            torques[it, j] = tau
            rhs[3 + j] += tau
        pos, pvel, force = _contact_points(parent, chain, point_link, point_local, contact,
                                           q, nu, origin, angle)
        for c in range(pos.shape[0]):
            if force[c, 1] > 0.0:
                J = _point_jacobian(chain, origin, q[2], point_link[c], pos[c, 0], pos[c, 1], n)
                slip = abs(force[c, 0]) < contact[3] * force[c, 1]
                for u in range(n):
                    rhs[u] += J[0, u] * force[c, 0] + J[1, u] * force[c, 1]
                    for v in range(n):
                        A[u, v] += dt * contact[1] * J[1, u] * J[1, v]
                        if slip:
                            A[u, v] += dt * contact[2] * J[0, u] * J[0, v]
        for e_i in range(ev_start.shape[0]):
            if ev_start[e_i] <= tick < ev_end[e_i]:
                k = ev_link[e_i]
                J = _point_jacobian(chain, origin, q[2], k, origin[k, 0], origin[k, 1], n)
                for u in range(n):
                    rhs[u] += J[0, u] * ev_force[e_i, 0] + J[1, u] * ev_force[e_i, 1]
        if fixed_base:
            acc = np.zeros(n)
            acc[3:] = np.linalg.solve(A[3:, 3:], rhs[3:])
        else:
            acc = np.linalg.solve(A, rhs)
        for u in range(n):
            nu[u] += dt * acc[u]
        th = q[2]
        c = math.cos(th)
        s = math.sin(th)
        q[0] += dt * (c * nu[0] - s * nu[1])
        q[1] += dt * (s * nu[0] + c * nu[1])
        for u in range(2, n):
            q[u] += dt * nu[u]
        tick += 1
        origin, angle = _frames(parent, anchor, q)
        if _link_touches_ground(is_foot, tip, origin, angle):
            touched = True
    return q, nu, integ, tick, seg_start, seg_len, r0, r1, head, torques, touched


# --------------------------------------------------------------------------
# state


class RefEntry(NamedTuple):
    release_tick: int
    target: np.ndarray
    ramp_ticks: int


@dataclass
class SimState:
    """Full simulator state.

    Joint references follow a linear ramp segment ``r0 -> r1`` starting at
    ``seg_start`` and lasting ``seg_len`` ticks; queued entries replace the
    segment once their release tick is reached (actuation delay).
    """

    q: np.ndarray
    nu: np.ndarray
    tick: int = 0
    dt: float = DT
    pid_integral: np.ndarray | None = None
    seg_start: int = 0
    seg_len: int = 0
    ref_from: np.ndarray | None = None
    ref_to: np.ndarray | None = None
    ref_queue: list[RefEntry] = field(default_factory=list)
    last_torques: np.ndarray | None = None
    link_contact: bool = False

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.nu = np.asarray(self.nu, dtype=float)
        if self.q.shape != self.nu.shape:
            raise ValueError("q and nu must have equal dimension")
        nj = self.q.shape[0] - 3
        if self.pid_integral is None:
            self.pid_integral = np.zeros(nj)
        if self.ref_to is None:
            self.ref_to = self.q[3:].copy()
        if self.ref_from is None:
            self.ref_from = self.ref_to.copy()

    @property
    def sim_time(self) -> float:
        return self.tick * self.dt

    @property
    def joint_positions(self) -> np.ndarray:
        return self.q[3:]

    @property
    def joint_velocities(self) -> np.ndarray:
        return self.nu[3:]

    def reference(self) -> np.ndarray:
        """Joint reference the PIDs track at the current tick (queue not yet released)."""
        ref, _ = _reference(self.tick, self.seg_start, self.seg_len, self.ref_from, self.ref_to, self.dt)
        return ref

    def copy(self) -> "SimState":
        return replace(
            self, q=self.q.copy(), nu=self.nu.copy(), pid_integral=self.pid_integral.copy(),
            ref_from=self.ref_from.copy(), ref_to=self.ref_to.copy(), ref_queue=list(self.ref_queue),
            last_torques=None if self.last_torques is None else self.last_torques.copy(),
        )


@dataclass(frozen=True)
class ForceEvent:
    """External force applied at a link origin for ticks ``[start, end)``."""

    start_tick: int
    end_tick: int
    link: int
    force: tuple[float, float]


# --------------------------------------------------------------------------
# public operations


def link_frames(model: RobotModel, q) -> tuple[np.ndarray, np.ndarray]:
    """World origin (L, 2) and angle (L,) of every link frame."""
    a = model.arrays
    return _frames(a.parent, a.anchor, np.asarray(q, dtype=float))


def link_velocities(model: RobotModel, q, nu) -> tuple[np.ndarray, np.ndarray]:
    a = model.arrays
    q = np.asarray(q, dtype=float)
    origin, _ = _frames(a.parent, a.anchor, q)
    return _velocities(a.parent, q, np.asarray(nu, dtype=float), origin)


def mass_matrix(model: RobotModel, q) -> np.ndarray:
    a = model.arrays
    q = np.asarray(q, dtype=float)
    M, _ = _mass_bias(a.parent, a.anchor, a.mass, a.inertia, a.com, a.chain, a.gravity, q, np.zeros_like(q))
    return M


def bias_forces(model: RobotModel, q, nu) -> np.ndarray:
    """Coriolis, centrifugal and gravity generalised force h(q, nu)."""
    a = model.arrays
    _, h = _mass_bias(a.parent, a.anchor, a.mass, a.inertia, a.com, a.chain, a.gravity,
                      np.asarray(q, dtype=float), np.asarray(nu, dtype=float))
    return h


@dataclass(frozen=True)
class ContactPoints:
    position: np.ndarray  # (4, 2)
    velocity: np.ndarray  # (4, 2)
    normal: np.ndarray  # (4,) N
    tangential: np.ndarray  # (4,) N
    foot: np.ndarray  # (4,) 0 = left, 1 = right

    @property
    def in_contact(self) -> np.ndarray:
        return self.position[:, 1] < 0.0


def contact_forces(model: RobotModel, state: SimState) -> ContactPoints:
    """Penalty forces at the heel and toe points of each foot."""
    a = model.arrays
    origin, angle = _frames(a.parent, a.anchor, state.q)
    pos, vel, force = _contact_points(a.parent, a.chain, a.point_link, a.point_local, a.contact,
                                      state.q, state.nu, origin, angle)
    foot = np.repeat(np.arange(len(model.feet)), 2)
    return ContactPoints(pos, vel, force[:, 1].copy(), force[:, 0].copy(), foot)


def pid_torques(model: RobotModel, state: SimState, refs=None, ref_rate=None,
                dt: float = DT) -> tuple[np.ndarray, np.ndarray]:
    """One PID evaluation: returns (torques, updated integral).

    ``refs`` defaults to the state's current reference ramp.  The derivative
    term acts on ``ref_rate - sdot``.
    """
    a = model.arrays
    if refs is None:
        refs, rate = _reference(state.tick, state.seg_start, state.seg_len, state.ref_from, state.ref_to, dt)
    else:
        refs = np.asarray(refs, dtype=float)
        rate = np.zeros_like(refs) if ref_rate is None else np.asarray(ref_rate, dtype=float)
    e = refs - state.joint_positions
    integ = state.pid_integral + e * dt
    tau = a.kp * e + a.ki * integ + a.kd * (rate - state.joint_velocities)
    tau = np.clip(tau, -a.torque_limit, a.torque_limit)
    return tau, integ


def enqueue_references(model: RobotModel, state: SimState, refs, ramp: float = 0.0,
                       delay: float | None = None) -> None:
    """Queue new joint references; they start ramping after the actuation delay."""
    delay = model.actuation_delay if delay is None else delay
    delay_ticks = int(math.ceil(delay / state.dt - 1e-9)) if delay > 0 else 0
    ramp_ticks = int(round(ramp / state.dt))
    state.ref_queue.append(RefEntry(state.tick + delay_ticks, np.asarray(refs, dtype=float).copy(), ramp_ticks))


def simulate(model: RobotModel, state: SimState, n_substeps: int = 1,
             forces: Sequence[ForceEvent] = ()) -> SimState:
    """Advance ``n_substeps`` physics ticks and return the new state.

    The returned state's ``last_torques`` holds the (n_substeps, n_joints)
    actuated torques; ``link_contact`` is set when any non-foot link touched
    the ground during the interval.
    """
    a = model.arrays
    nj = model.n_joints
    queue = sorted(state.ref_queue, key=lambda e: e.release_tick)
    k = len(queue)
    q_tick = np.array([e.release_tick for e in queue], dtype=np.int64)
    q_target = np.array([e.target for e in queue], dtype=float).reshape(k, nj)
    q_ramp = np.array([e.ramp_ticks for e in queue], dtype=np.int64)
    m = len(forces)
    ev_start = np.array([f.start_tick for f in forces], dtype=np.int64)
    ev_end = np.array([f.end_tick for f in forces], dtype=np.int64)
    ev_link = np.array([f.link for f in forces], dtype=np.int64)
    ev_force = np.array([f.force for f in forces], dtype=float).reshape(m, 2)
    try:
        (q, nu, integ, tick, seg_start, seg_len, r0, r1, head, torques, touched) = _advance(
            a.parent, a.anchor, a.mass, a.inertia, a.com, a.tip, a.chain, a.is_foot,
            a.kp, a.ki, a.kd, a.point_link, a.point_local, a.gravity, a.contact, a.torque_limit, a.fixed_base,
            state.q, state.nu, state.pid_integral, state.tick, state.seg_start, state.seg_len,
            state.ref_from, state.ref_to, q_tick, q_target, q_ramp, k,
            ev_start, ev_end, ev_link, ev_force, n_substeps, state.dt,
        )
    except np.linalg.LinAlgError as exc:
        raise SimulationDiverged(f"singular or non-finite system at tick {state.tick}: {exc}") from None
    new = SimState(
        q=q, nu=nu, tick=int(tick), dt=state.dt, pid_integral=integ,
        seg_start=int(seg_start), seg_len=int(seg_len), ref_from=r0, ref_to=r1,
        ref_queue=queue[head:], last_torques=torques, link_contact=bool(touched),
    )
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(nu))):
        raise SimulationDiverged(f"non-finite state at t = {new.sim_time:.3f} s")
    if np.max(np.abs(nu)) > MAX_SPEED:
        raise SimulationDiverged(f"velocity above {MAX_SPEED:g} at t = {new.sim_time:.3f} s")
    return new


def step(model: RobotModel, state: SimState, refs=None, dt: float = DT,
         forces: Sequence[ForceEvent] = ()) -> SimState:
    """Single physics step; ``refs`` (if given) enter the actuation-delay queue first."""
    if abs(dt - state.dt) > 1e-15:
        state = replace(state, dt=dt)
    if refs is not None:
        state = state.copy()
        enqueue_references(model, state, refs)
    return simulate(model, state, 1, forces)


@dataclass(frozen=True)
class CentroidalQuantities:
    com: np.ndarray  # (2,)
    com_velocity: np.ndarray  # (2,)
    linear_momentum: np.ndarray  # (2,)
    angular_momentum: float  # about the CoM, counter-clockwise positive


def centroidal(model: RobotModel, q, nu) -> CentroidalQuantities:
    a = model.arrays
    q = np.asarray(q, dtype=float)
    nu = np.asarray(nu, dtype=float)
    origin, angle = _frames(a.parent, a.anchor, q)
    vel, omega = _velocities(a.parent, q, nu, origin)
    return _as_centroidal(_centroidal(a.mass, a.inertia, a.com, origin, angle, vel, omega), model.total_mass)


def _as_centroidal(c: np.ndarray, total_mass: float) -> CentroidalQuantities:
    return CentroidalQuantities(c[0:2], c[2:4], total_mass * c[2:4], float(c[4]))


@dataclass(frozen=True)
class SupportGeometry:
    cop: np.ndarray  # (2,) per-foot CoP x, nan when the foot carries no load
    cop_valid: np.ndarray  # (2,) bool
    support: tuple[float, float] | None  # [x_min, x_max] of in-contact points
    contact: np.ndarray  # (2,) bool, any point of the foot in contact
    foot_force: np.ndarray  # (2,) vertical force per foot
    sole_center: np.ndarray  # (2,) x of the middle of each sole


def support_geometry(model: RobotModel, state: SimState, points: ContactPoints | None = None) -> SupportGeometry:
    pts = contact_forces(model, state) if points is None else points
    force = np.stack([pts.tangential, pts.normal], axis=1)
    return _as_support(*_support(pts.position, force, len(model.feet)))


def _as_support(cop, load, touch, centre, lo, hi) -> SupportGeometry:
    support = (float(lo), float(hi)) if lo <= hi else None
    return SupportGeometry(cop, ~np.isnan(cop), support, touch, load, centre)


@dataclass(frozen=True)
class Snapshot:
    """Kinematic and contact quantities of one state, computed together."""

    origin: np.ndarray
    angle: np.ndarray
    centroidal: CentroidalQuantities
    points: ContactPoints
    support: SupportGeometry


def snapshot(model: RobotModel, state: SimState) -> Snapshot:
    a = model.arrays
    origin, angle = _frames(a.parent, a.anchor, state.q)
    vel, omega = _velocities(a.parent, state.q, state.nu, origin)
    cq = _as_centroidal(_centroidal(a.mass, a.inertia, a.com, origin, angle, vel, omega), model.total_mass)
    pos, pvel, force = _contact_points(a.parent, a.chain, a.point_link, a.point_local, a.contact,
                                       state.q, state.nu, origin, angle)
    n_feet = len(model.feet)
    pts = ContactPoints(pos, pvel, force[:, 1].copy(), force[:, 0].copy(), np.repeat(np.arange(n_feet), 2))
    sg = _as_support(*_support(pos, force, n_feet))
    return Snapshot(origin, angle, cq, pts, sg)


def free_state(model: RobotModel, q=None, nu=None) -> SimState:
    """Convenience constructor: state at (q, nu) with references equal to the joint angles."""
    q = np.zeros(model.n_dof) if q is None else np.asarray(q, dtype=float)
    nu = np.zeros(model.n_dof) if nu is None else np.asarray(nu, dtype=float)
    return SimState(q=q.copy(), nu=nu.copy())


def standing_state(model: RobotModel) -> SimState:
    q = np.zeros(model.n_dof)
    q[1] = model.base_height
    q[3:] = model.s0
    return free_state(model, q)


def total_energy(model: RobotModel, q, nu) -> float:
    """Kinetic plus gravitational potential energy."""
    a = model.arrays
    q = np.asarray(q, dtype=float)
    nu = np.asarray(nu, dtype=float)
    M = mass_matrix(model, q)
    origin, angle = _frames(a.parent, a.anchor, q)
    zc = origin[:, 1] + np.sin(angle) * a.com[:, 0] + np.cos(angle) * a.com[:, 1]
    return 0.5 * nu @ M @ nu + a.gravity * float(np.dot(a.mass, zc))
