"""Fixed-step explicit Euler rollout of the rigid-body/terrain ODE."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels as K
from .core import (RigidState, RobotModel, SimConfig, Trajectory, WaypointControl, exp_so3,
                   log_so3, quaternion_to_rotation)
from .dynamics import ContactModel, ForceSet, Physics, kind_code, model_arrays
from .terrain import HeightMap, grid_params


class SimulationError(RuntimeError):
    """Numerical failure during a rollout (non-finite derivative or state)."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


@dataclass
class Rollout:
    trajectory: Trajectory
    n_steps: int
    config: SimConfig
    physics: Physics
    forces: list[ForceSet] | None = field(default=None, repr=False)


def _as_physics(kind) -> Physics:
    if isinstance(kind, Physics):
        return kind
    return Physics(ContactModel.parse(kind))


@dataclass
class Buffers:
    """Raw per-step arrays written by the compiled integrator.

    ``S`` holds every state (n + 1, 18). With ``full=True`` the other arrays
    keep one row per step; otherwise they are one-row scratch space.
    """

    S: np.ndarray
    A: np.ndarray
    T: np.ndarray
    P: np.ndarray
    G: np.ndarray


def integrate(s0: RigidState, hmap: HeightMap, u: WaypointControl, model: RobotModel,
              dt: float, n_steps: int, physics: Physics, full: bool = False) -> Buffers:
    if not dt > 0:
        raise ValueError("dt must be positive")
    pts, masses, J, J_inv, ctrl = model_arrays(model)
    n = len(masses)
    rows = max(n_steps, 1) if full else 1
    buf = Buffers(np.empty((n_steps + 1, 18)), np.empty((rows, 3, 3)),
                  np.zeros((rows, n, K.T_WIDTH)), np.zeros((rows, n, K.P_WIDTH)),
                  np.zeros((rows, K.G_WIDTH)))
    status, k = K.rollout(s0.as_vector(), u.as_array(), pts, masses, J, J_inv, ctrl,
                          float(model.gravity), hmap.channels, grid_params(hmap.grid),
                          kind_code(physics), physics.gyroscopic, physics.clamp_contact,
                          float(dt), int(n_steps), buf.S, buf.A, buf.T, buf.P, buf.G)
    if status == K.BAD_POSITION:
        raise SimulationError("non-finite body point position", int(k))
    if status == K.BAD_DERIVATIVE:
        raise SimulationError(f"non-finite {_culprit(buf, int(k))}", int(k))
    return buf


def _culprit(buf: Buffers, k: int) -> str:
    G = buf.G[k % len(buf.G)]
    for name, off in (("v_dot", K.G_ACC), ("omega_dot", K.G_ALPHA)):
        if not np.all(np.isfinite(G[off:off + 3])):
            return name
    for name, sl in (("x", slice(0, 3)), ("v", slice(3, 6)), ("R", slice(6, 15)), ("omega", slice(15, 18))):
        if not np.all(np.isfinite(buf.S[k + 1, sl])):
            return name
    return "state"


def euler_step(state: RigidState, u: WaypointControl, model: RobotModel, hmap: HeightMap,
               kind=ContactModel.VERTICAL, dt: float = 0.01) -> RigidState:
    """One explicit Euler step followed by re-projection of R onto SO(3)."""
    buf = integrate(state, hmap, u, model, dt, 1, _as_physics(kind))
    return RigidState.from_vector(buf.S[1])


def record(S: np.ndarray, dt: float, stride: int) -> Trajectory:
    idx = np.arange(0, len(S), stride)
    return Trajectory(tuple(float(k * dt) for k in idx),
                      tuple(RigidState.from_vector(S[k]) for k in idx))


def simulate(s0: RigidState, hmap: HeightMap, u: WaypointControl, model: RobotModel,
             cfg: SimConfig, kind=ContactModel.VERTICAL, keep_forces: bool = False) -> Rollout:
    """Deterministic rollout; states are recorded every ``cfg.record_stride`` steps."""
    physics = _as_physics(kind)
    buf = integrate(s0, hmap, u, model, cfg.dt, cfg.n_steps, physics, full=keep_forces)
    forces = None
    if keep_forces:
        forces = [ForceSet(buf.P[k, :, K.P_F:K.P_F + 3].copy(), buf.P[k, :, K.P_CONTACT] > 0.5)
                  for k in range(0, cfg.n_steps, cfg.record_stride)]
    return Rollout(record(buf.S, cfg.dt, cfg.record_stride), cfg.n_steps, cfg, physics, forces)


# --------------------------------------------------------------------------
# resampling

def bracket(times: Sequence[float], t: float, tol: float = 1e-9):
    """Index ``k`` and fraction ``s`` with t = (1 - s) times[k] + s times[k+1].

    Times within ``tol`` of a recorded stamp snap onto it (s == 0).
    """
    if t < times[0] - tol or t > times[-1] + tol:
        raise ValueError(f"time {t} outside trajectory span [{times[0]}, {times[-1]}]")
    k = bisect.bisect_left(times, t)
    if k < len(times) and abs(times[k] - t) <= tol:
        return k, 0.0
    if k > 0 and abs(times[k - 1] - t) <= tol:
        return k - 1, 0.0
    k -= 1
    return k, (t - times[k]) / (times[k + 1] - times[k])


def interpolate_states(a: RigidState, b: RigidState, s: float) -> RigidState:
    if s == 0.0:
        return a
    x = a.x + s * (b.x - a.x)
    v = a.v + s * (b.v - a.v)
    w = a.omega + s * (b.omega - a.omega)
    R = a.R @ exp_so3(s * log_so3(a.R.T @ b.R))
    return RigidState(x, v, R, w)


def sample_at(source, times: Sequence[float]) -> list[RigidState]:
    """States at arbitrary times: linear in x, v, omega; geodesic in R."""
    traj = source.trajectory if isinstance(source, Rollout) else source
    out = []
    for t in times:
        k, s = bracket(traj.times, float(t))
        out.append(traj.states[k] if s == 0.0 else interpolate_states(traj.states[k], traj.states[k + 1], s))
    return out


# --------------------------------------------------------------------------
# CSV: t,x,y,z,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz

TRAJECTORY_HEADER = "t,x,y,z,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz"


def format_trajectory(traj: Trajectory) -> str:
    lines = [TRAJECTORY_HEADER]
    for t, s in traj:
        vals = [t, *s.x, *s.quaternion(), *s.v, *s.omega]
        lines.append(",".join(f"{float(val):.17g}" for val in vals))
    return "\n".join(lines) + "\n"


def save_trajectory(traj: Trajectory, path) -> None:
    Path(path).write_text(format_trajectory(traj))


def parse_trajectory(text: str, source: str = "<string>") -> Trajectory:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].replace(" ", "") != TRAJECTORY_HEADER:
        raise ValueError(f"{source}:1: expected header {TRAJECTORY_HEADER!r}")
    times, states = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            vals = [float(p) for p in line.split(",")]
            if len(vals) != 14 or not np.all(np.isfinite(vals)):
                raise ValueError
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: malformed row {line!r}") from exc
        q = np.array(vals[4:8])
        times.append(vals[0])
        states.append(RigidState(np.array(vals[1:4]), np.array(vals[8:11]), quaternion_to_rotation(q),
                                 np.array(vals[11:14]), quat=q))
    if not times:
        raise ValueError(f"{source}: trajectory has no samples")
    return Trajectory(tuple(times), tuple(states))


def load_trajectory(path) -> Trajectory:
    return parse_trajectory(Path(path).read_text(), str(path))
