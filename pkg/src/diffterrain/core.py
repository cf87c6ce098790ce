"""Domain types and rotation helpers shared by the rest of the package."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

ORTHO_TOL = 1e-6


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# --------------------------------------------------------------------------
# rotation helpers

def cross(a, b) -> np.ndarray:
    """Row-wise cross product; cheaper than ``np.cross`` for small arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


def skew(w) -> np.ndarray:
    return np.array([[0.0, -w[2], w[1]],
                     [w[2], 0.0, -w[0]],
                     [-w[1], w[0], 0.0]])


def rotz(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotx(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def roty(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def exp_so3(w) -> np.ndarray:
    """Rodrigues formula: rotation matrix for rotation vector ``w``."""
    w = np.asarray(w, dtype=float)
    theta = float(np.linalg.norm(w))
    K = skew(w)
    if theta < 1e-12:
        return np.eye(3) + K
    return (np.eye(3) + math.sin(theta) / theta * K
            + (1.0 - math.cos(theta)) / theta**2 * K @ K)


def log_so3(R) -> np.ndarray:
    """Rotation vector of ``R`` (angle in [0, pi])."""
    R = np.asarray(R, dtype=float)
    cos_t = min(1.0, max(-1.0, (np.trace(R) - 1.0) / 2.0))
    theta = math.acos(cos_t)
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-8:
        return 0.5 * vee
    if math.pi - theta < 1e-6:
        # near pi the antisymmetric part vanishes; use the symmetric part
        B = (R + np.eye(3)) / 2.0
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / math.sqrt(B[k, k])
        axis /= np.linalg.norm(axis)
        if np.dot(axis, vee) < 0:
            axis = -axis
        return theta * axis
    return theta / (2.0 * math.sin(theta)) * vee


def project_to_so3(A) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense (polar factor)."""
    U, _, Vt = np.linalg.svd(A)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] = -U[:, -1]
        Q = U @ Vt
    return Q


def rotation_to_quaternion(R) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with w >= 0."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def quaternion_to_rotation(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = float(a)
    if -math.pi < a <= math.pi:
        return a
    r = math.fmod(a + math.pi, 2.0 * math.pi)
    if r <= 0.0:
        r += 2.0 * math.pi
    return r - math.pi


def heading_of(state: "RigidState") -> float:
    """Yaw angle of the body x-axis projected on the world xy-plane."""
    return wrap_angle(math.atan2(state.R[1, 0], state.R[0, 0]))


# --------------------------------------------------------------------------
# domain types

@dataclass(frozen=True)
class RobotModel:
    """Rigid robot as a cloud of point masses about its center of mass.

    ``points`` are body-frame offsets from the COM. The total mass is derived
    from ``masses`` so the two can never disagree.
    """

    points: np.ndarray
    masses: np.ndarray
    inertia: np.ndarray
    k_v: float = 1.0
    k_theta: float = 1.0
    k_phi: float = 1.0
    v_max: float = 1.0
    omega_max: float = 1.0
    gravity: float = 9.81

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        m = np.atleast_1d(np.asarray(self.masses, dtype=float))
        J = np.asarray(self.inertia, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 1:
            raise ValueError("points must be an (N, 3) array with N >= 1")
        if m.shape != (len(pts),):
            raise ValueError(f"expected {len(pts)} masses, got shape {m.shape}")
        if np.any(m <= 0) or not np.all(np.isfinite(m)):
            raise ValueError("masses must be positive and finite")
        if J.shape != (3, 3) or not np.allclose(J, J.T, rtol=0, atol=1e-12 * max(1.0, np.abs(J).max())):
            raise ValueError("inertia must be a symmetric 3x3 matrix")
        if np.linalg.eigvalsh(J).min() <= 0:
            raise ValueError("inertia must be positive definite")
        if min(self.k_v, self.k_theta, self.k_phi) <= 0:
            raise ValueError("controller gains must be positive")
        if self.v_max <= 0 or self.omega_max <= 0:
            raise ValueError("saturation limits must be positive")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "masses", _frozen(m))
        object.__setattr__(self, "inertia", _frozen(J))

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.masses))

    @property
    def n_points(self) -> int:
        return len(self.masses)

    def replace(self, **changes) -> "RobotModel":
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw.update(changes)
        return RobotModel(**kw)

    def to_json(self) -> dict:
        return {
            "points": self.points.tolist(),
            "masses": self.masses.tolist(),
            "inertia": self.inertia.tolist(),
            "gains": {"kv": self.k_v, "ktheta": self.k_theta, "kphi": self.k_phi},
            "limits": {"v_max": self.v_max, "omega_max": self.omega_max},
            "gravity": self.gravity,
        }

    @classmethod
    def from_json(cls, data: dict) -> "RobotModel":
        gains = data.get("gains", {})
        limits = data.get("limits", {})
        return cls(
            points=data["points"],
            masses=data["masses"],
            inertia=data["inertia"],
            k_v=float(gains.get("kv", 1.0)),
            k_theta=float(gains.get("ktheta", 1.0)),
            k_phi=float(gains.get("kphi", 1.0)),
            v_max=float(limits.get("v_max", 1.0)),
            omega_max=float(limits.get("omega_max", 1.0)),
            gravity=float(data.get("gravity", 9.81)),
        )


def load_robot(path) -> RobotModel:
    with open(path) as f:
        return RobotModel.from_json(json.load(f))


def save_robot(model: RobotModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_json(), indent=2) + "\n")


@dataclass(frozen=True, eq=False)
class RigidState:
    """Position, linear velocity, rotation (world <- body), angular velocity.

    ``quat`` optionally caches the quaternion the rotation was parsed from so
    that trajectory files round-trip byte for byte.
    """

    x: np.ndarray
    v: np.ndarray
    R: np.ndarray
    omega: np.ndarray
    quat: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        for name, shape in (("x", (3,)), ("v", (3,)), ("R", (3, 3)), ("omega", (3,))):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            object.__setattr__(self, name, _frozen(arr))
        R = self.R
        if np.linalg.norm(R.T @ R - np.eye(3)) > ORTHO_TOL or np.linalg.det(R) <= 0:
            raise ValueError("R is not a rotation matrix")
        if self.quat is not None:
            object.__setattr__(self, "quat", _frozen(self.quat))

    @classmethod
    def at_rest(cls, x=(0.0, 0.0, 0.0), yaw: float = 0.0, R=None) -> "RigidState":
        return cls(np.asarray(x, dtype=float), np.zeros(3),
                   rotz(yaw) if R is None else np.asarray(R, dtype=float), np.zeros(3))

    def as_vector(self) -> np.ndarray:
        """Flat 18-vector: x, v, R (row major), omega."""
        return np.concatenate([self.x, self.v, self.R.ravel(), self.omega])

    @classmethod
    def from_vector(cls, s) -> "RigidState":
        s = np.asarray(s, dtype=float)
        return cls(s[0:3], s[3:6], s[6:15].reshape(3, 3), s[15:18])

    def quaternion(self) -> np.ndarray:
        return self.quat if self.quat is not None else rotation_to_quaternion(self.R)

    def replace(self, **changes) -> "RigidState":
        kw = dict(x=self.x, v=self.v, R=self.R, omega=self.omega)
        kw.update(changes)
        return RigidState(**kw)

    def __eq__(self, other):
        if not isinstance(other, RigidState):
            return NotImplemented
        return (np.array_equal(self.x, other.x) and np.array_equal(self.v, other.v)
                and np.array_equal(self.R, other.R) and np.array_equal(self.omega, other.omega))


def state_to_json(state: RigidState) -> dict:
    return {"x": state.x.tolist(), "v": state.v.tolist(), "R": state.R.tolist(),
            "omega": state.omega.tolist()}


def state_from_json(data: dict) -> RigidState:
    return RigidState(np.asarray(data["x"], dtype=float), np.asarray(data.get("v", [0, 0, 0]), dtype=float),
                      np.asarray(data.get("R", np.eye(3)), dtype=float),
                      np.asarray(data.get("omega", [0, 0, 0]), dtype=float))


def load_state(path) -> RigidState:
    with open(path) as f:
        return state_from_json(json.load(f))


def save_state(state: RigidState, path) -> None:
    Path(path).write_text(json.dumps(state_to_json(state), indent=2) + "\n")


@dataclass(frozen=True)
class WaypointControl:
    x_g: float
    y_g: float
    phi_g: float

    def __post_init__(self):
        vals = (self.x_g, self.y_g, self.phi_g)
        if not all(math.isfinite(float(v)) for v in vals):
            raise ValueError("waypoint must be finite")
        object.__setattr__(self, "x_g", float(self.x_g))
        object.__setattr__(self, "y_g", float(self.y_g))
        object.__setattr__(self, "phi_g", wrap_angle(self.phi_g))

    @classmethod
    def hold(cls, state: RigidState) -> "WaypointControl":
        """Waypoint at the current pose (no track input)."""
        return cls(float(state.x[0]), float(state.x[1]), heading_of(state))

    def as_array(self) -> np.ndarray:
        return np.array([self.x_g, self.y_g, self.phi_g])


@dataclass(frozen=True)
class Trajectory:
    times: tuple
    states: tuple

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        states = tuple(self.states)
        if len(times) < 1 or len(times) != len(states):
            raise ValueError("trajectory needs >= 1 sample and one state per timestamp")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("timestamps must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    def __len__(self) -> int:
        return len(self.times)

    def __iter__(self) -> Iterator[tuple[float, RigidState]]:
        return iter(zip(self.times, self.states))

    def __getitem__(self, k) -> tuple[float, RigidState]:
        return self.times[k], self.states[k]

    @property
    def duration(self) -> float:
        return self.times[-1] - self.times[0]

    def positions(self) -> np.ndarray:
        return np.array([s.x for s in self.states])

    def rotations(self) -> np.ndarray:
        return np.array([s.R for s in self.states])

    def as_array(self) -> np.ndarray:
        """(K, 18) array of flattened states."""
        return np.array([s.as_vector() for s in self.states])

    @classmethod
    def from_samples(cls, samples: Sequence[tuple[float, RigidState]]) -> "Trajectory":
        return cls(tuple(t for t, _ in samples), tuple(s for _, s in samples))


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.01
    duration: float = 1.0
    record_stride: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.duration >= self.dt:
            raise ValueError("duration must be >= dt")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise ValueError("record_stride must be a positive integer")

    @property
    def n_steps(self) -> int:
        # tolerate float noise such as 1.0 / 0.01 = 99.99999999999999
        return int(math.floor(self.duration / self.dt + 1e-9))
