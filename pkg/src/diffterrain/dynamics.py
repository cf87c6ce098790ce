"""Force and velocity laws: gravity, spring-damper terrain contact, and the
waypoint P-controller driving the tracks."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .core import RigidState, RobotModel, WaypointControl, cross, skew
from .terrain import HeightMap, Patch, TerrainSample, grid_params, patch_from_rows


class ContactModel(enum.Enum):
    VERTICAL = "vertical"
    NORMAL = "normal"

    @classmethod
    def parse(cls, value) -> "ContactModel":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown contact model {value!r}; expected 'vertical' or 'normal'") from None


@dataclass(frozen=True)
class Physics:
    """Switches that select which equations of motion are integrated."""

    contact: ContactModel = ContactModel.VERTICAL
    gyroscopic: bool = False       # add -omega x (J omega) to the torque balance
    clamp_contact: bool = False    # forbid contact forces that pull toward the terrain

    def __post_init__(self):
        object.__setattr__(self, "contact", ContactModel.parse(self.contact))


@dataclass(frozen=True)
class ForceSet:
    forces: np.ndarray     # (N, 3) world frame
    contact: np.ndarray    # (N,) bool


@dataclass(frozen=True)
class StateDerivative:
    x_dot: np.ndarray
    v_dot: np.ndarray
    R_dot: np.ndarray
    omega_dot: np.ndarray


SPEED_FREE, SPEED_AT_GOAL, SPEED_SATURATED = K.SPEED_FREE, K.SPEED_AT_GOAL, K.SPEED_SATURATED


@dataclass
class ControlEval:
    phi: float
    ddx: float
    ddy: float
    dist: float
    speed: float
    speed_state: int
    dtheta: float
    dphi: float
    wz_raw: float
    wz: float
    wz_saturated: bool
    v_t: np.ndarray
    omega_t: np.ndarray


def model_arrays(model: RobotModel):
    """Contiguous float arrays the kernels consume: points, masses, J, J^-1, gains."""
    J = np.ascontiguousarray(model.inertia, dtype=float)
    ctrl = np.array([model.k_v, model.k_theta, model.k_phi, model.v_max, model.omega_max])
    return (np.ascontiguousarray(model.points, dtype=float),
            np.ascontiguousarray(model.masses, dtype=float), J, np.linalg.inv(J), ctrl)


def _control_from_row(G: np.ndarray) -> ControlEval:
    return ControlEval(float(G[K.G_PHI]), float(G[K.G_DDX]), float(G[K.G_DDY]), float(G[K.G_DIST]),
                       float(G[K.G_SPEED]), int(G[K.G_SPEED_STATE]), float(G[K.G_DTHETA]),
                       float(G[K.G_DPHI]), float(G[K.G_WZ_RAW]), float(G[K.G_WZ]),
                       bool(G[K.G_WZ_SAT] > 0.5), G[K.G_VT:K.G_VT + 3].copy(),
                       np.array([0.0, 0.0, G[K.G_WZ]]))


def controller(x, R, u: WaypointControl, model: RobotModel) -> ControlEval:
    G = np.zeros(K.G_WIDTH)
    ctrl = np.array([model.k_v, model.k_theta, model.k_phi, model.v_max, model.omega_max])
    K.controller(float(x[0]), float(x[1]), float(R[0, 0]), float(R[1, 0]), u.as_array(), ctrl, G)
    return _control_from_row(G)


def track_velocities(state: RigidState, u: WaypointControl, model: RobotModel):
    """Linear and angular velocity commanded by the track P-controller."""
    c = controller(state.x, state.R, u, model)
    return c.v_t, c.omega_t


def point_world(state: RigidState, body_point):
    r = state.R @ np.asarray(body_point, dtype=float)
    return state.x + r, state.v + cross(state.omega, r)


def _point_force(kind, pos, vel, mass, s: TerrainSample, g, clamp, n):
    fx, fy, fz, *_ = K.point_force(kind, float(pos[2]), float(vel[0]), float(vel[1]), float(vel[2]),
                                   float(mass), float(g), s.h, s.e, s.d, float(n[0]), float(n[1]),
                                   float(n[2]), bool(s.active), bool(clamp))
    return np.array([fx, fy, fz])


def vertical_force(pos, vel, mass: float, s: TerrainSample, g: float = 9.81,
                   clamp: bool = False) -> np.ndarray:
    return _point_force(K.VERTICAL, pos, vel, mass, s, g, clamp, (0.0, 0.0, 1.0))


def normal_force(pos, vel, mass: float, s: TerrainSample, g: float = 9.81,
                 clamp: bool = False) -> np.ndarray:
    return _point_force(K.NORMAL, pos, vel, mass, s, g, clamp, s.n)


def kind_code(physics: Physics) -> int:
    return K.VERTICAL if physics.contact is ContactModel.VERTICAL else K.NORMAL


@dataclass
class StepEval:
    """Every intermediate of one derivative evaluation."""

    ctrl: ControlEval
    r: np.ndarray          # world-frame body offsets R p_i
    pos: np.ndarray
    pv: np.ndarray
    terrain: Patch
    n: np.ndarray          # contact direction per point ((0,0,1) for the vertical model)
    contact: np.ndarray
    mag: np.ndarray        # contact magnitude before masking
    mag_clamped: np.ndarray
    f: np.ndarray
    F: np.ndarray
    tau: np.ndarray
    acc: np.ndarray
    alpha: np.ndarray
    W: np.ndarray          # omega + omega_t

    @classmethod
    def from_rows(cls, T: np.ndarray, P: np.ndarray, G: np.ndarray) -> "StepEval":
        v3 = lambda off: G[off:off + 3].copy()
        pc = lambda off: P[:, off:off + 3].copy()
        return cls(_control_from_row(G), pc(K.P_R), pc(K.P_POS), pc(K.P_PV), patch_from_rows(T),
                   pc(K.P_N), P[:, K.P_CONTACT] > 0.5, P[:, K.P_MAG].copy(),
                   P[:, K.P_CLAMPED] > 0.5, pc(K.P_F), v3(K.G_F), v3(K.G_TAU), v3(K.G_ACC),
                   v3(K.G_ALPHA), v3(K.G_W))


def evaluate(x, v, R, omega, u: WaypointControl, model: RobotModel, hmap: HeightMap,
             physics: Physics) -> StepEval:
    """Right-hand side of the combined rigid-body/terrain ODE with all intermediates."""
    s = np.concatenate([np.ravel(x), np.ravel(v), np.ravel(R), np.ravel(omega)]).astype(float)
    pts, masses, J, J_inv, ctrl = model_arrays(model)
    n = len(masses)
    T, P, G = np.zeros((n, K.T_WIDTH)), np.zeros((n, K.P_WIDTH)), np.zeros(K.G_WIDTH)
    status = K.evaluate(s, u.as_array(), pts, masses, J, J_inv, ctrl, float(model.gravity),
                        hmap.channels, grid_params(hmap.grid), kind_code(physics),
                        physics.gyroscopic, physics.clamp_contact, T, P, G)
    if status == K.BAD_POSITION:
        raise ValueError("terrain query at a non-finite position")
    return StepEval.from_rows(T, P, G)


def forces(state: RigidState, u: WaypointControl, model: RobotModel, hmap: HeightMap,
           kind=ContactModel.VERTICAL) -> ForceSet:
    ev = evaluate(state.x, state.v, state.R, state.omega, u, model, hmap, Physics(kind))
    return ForceSet(ev.f, ev.contact)


def state_derivative(state: RigidState, u: WaypointControl, model: RobotModel, hmap: HeightMap,
                     kind=ContactModel.VERTICAL, *, gyroscopic: bool = False,
                     clamp_contact: bool = False) -> StateDerivative:
    ev = evaluate(state.x, state.v, state.R, state.omega, u, model, hmap,
                  Physics(kind, gyroscopic, clamp_contact))
    return StateDerivative(state.v + ev.ctrl.v_t, ev.acc, skew(ev.W) @ state.R, ev.alpha)
