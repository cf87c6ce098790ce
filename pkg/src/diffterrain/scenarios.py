"""Built-in synthetic fixtures: free fall, drop test, equilibrium, ramp and bump drives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import RigidState, RobotModel, SimConfig, WaypointControl
from .dynamics import ContactModel, Physics
from .integrator import Rollout, simulate
from .terrain import DEFAULT_DAMPING, DEFAULT_ELASTICITY, GridSpec, HeightMap, patch


@dataclass(frozen=True)
class Scenario:
    name: str
    model: RobotModel
    hmap: HeightMap
    s0: RigidState
    u: WaypointControl
    config: SimConfig
    physics: Physics = Physics()

    def run(self, **overrides) -> Rollout:
        cfg = overrides.pop("config", self.config)
        physics = overrides.pop("physics", self.physics)
        if overrides:
            raise TypeError(f"unexpected overrides {sorted(overrides)}")
        return simulate(self.s0, self.hmap, self.u, self.model, cfg, physics)


def point_inertia(points, masses) -> np.ndarray:
    """Inertia of point masses about their origin, with a small isotropic
    floor so planar or collinear layouts stay positive definite."""
    pts = np.asarray(points, dtype=float)
    m = np.asarray(masses, dtype=float)
    J = np.zeros((3, 3))
    for p, mi in zip(pts, m):
        J += mi * (p @ p * np.eye(3) - np.outer(p, p))
    return J + 1e-3 * m.sum() * np.eye(3)


def box_robot(length: float = 0.6, width: float = 0.4, mass: float = 10.0, nx: int = 2, ny: int = 2,
              k_v: float = 1.0, k_theta: float = 1.0, k_phi: float = 1.0, v_max: float = 0.5,
              omega_max: float = 1.0, gravity: float = 9.81) -> RobotModel:
    """Flat grid of equal point masses centred on the COM (a track footprint)."""
    xs = np.linspace(-length / 2, length / 2, nx) if nx > 1 else np.zeros(1)
    ys = np.linspace(-width / 2, width / 2, ny) if ny > 1 else np.zeros(1)
    pts = np.array([(x, y, 0.0) for x in xs for y in ys])
    masses = np.full(len(pts), mass / len(pts))
    return RobotModel(pts, masses, point_inertia(pts, masses), k_v, k_theta, k_phi, v_max,
                      omega_max, gravity)


def point_robot(mass: float = 1.0, gravity: float = 9.81) -> RobotModel:
    return RobotModel(np.zeros((1, 3)), np.array([mass]), np.eye(3), 1.0, 1.0, 1.0, 1.0, 1.0, gravity)


def flat_grid(extent: float = 2.0, resolution: float = 0.1) -> GridSpec:
    n = int(round(2 * extent / resolution)) + 1
    return GridSpec(n, n, resolution, (-extent, -extent))


def free_fall(z0: float = 10.0, duration: float = 1.0, dt: float = 1e-3) -> Scenario:
    """Single point released far above the terrain; no contact during ``duration``."""
    model = point_robot()
    hmap = HeightMap.flat(flat_grid(1.0, 0.5), -1000.0)
    s0 = RigidState.at_rest((0.0, 0.0, z0))
    return Scenario("free-fall", model, hmap, s0, WaypointControl.hold(s0),
                    SimConfig(dt, duration, 1))


def drop_test(height: float = 0.1, elasticity: float = 400.0, damping: float = 10.0,
              mass: float = 1.0, duration: float = 5.0, dt: float = 1e-3) -> Scenario:
    """Single point mass released ``height`` above flat ground at z = 0."""
    model = point_robot(mass)
    hmap = HeightMap.flat(flat_grid(1.0, 0.5), 0.0, elasticity, damping)
    s0 = RigidState.at_rest((0.0, 0.0, height))
    return Scenario("drop", model, hmap, s0, WaypointControl.hold(s0), SimConfig(dt, duration, 1))


def equilibrium(duration: float = 5.0, dt: float = 0.01, elasticity: float = DEFAULT_ELASTICITY,
                damping: float = DEFAULT_DAMPING, yaw: float = 0.3) -> Scenario:
    """Box robot resting on flat ground at its static penetration, goal at its pose."""
    model = box_robot()
    hmap = HeightMap.flat(flat_grid(2.0, 0.1), 0.0, elasticity, damping)
    z = -float(model.masses[0]) * model.gravity / elasticity
    s0 = RigidState.at_rest((0.0, 0.0, z), yaw=yaw)
    return Scenario("equilibrium", model, hmap, s0, WaypointControl.hold(s0),
                    SimConfig(dt, duration, 1))


def ramp_map(grid: GridSpec, slope: float = 0.1, elasticity: float = DEFAULT_ELASTICITY,
             damping: float = DEFAULT_DAMPING) -> HeightMap:
    X, _ = grid.cell_centers()
    h = slope * X
    return HeightMap(grid, h, np.full(grid.shape, elasticity), np.full(grid.shape, damping))


def bump_map(grid: GridSpec, center=(1.5, 0.0), amplitude: float = 0.15, sigma: float = 0.4,
             elasticity: float = DEFAULT_ELASTICITY, damping: float = DEFAULT_DAMPING) -> HeightMap:
    X, Y = grid.cell_centers()
    r2 = (X - center[0]) ** 2 + (Y - center[1]) ** 2
    h = amplitude * np.exp(-r2 / (2 * sigma**2))
    return HeightMap(grid, h, np.full(grid.shape, elasticity), np.full(grid.shape, damping))


def drive_grid(length: float = 4.0, half_width: float = 1.0, resolution: float = 0.1) -> GridSpec:
    return GridSpec(int(round((length + 1.0) / resolution)) + 1,
                    int(round(2 * half_width / resolution)) + 1, resolution, (-1.0, -half_width))


def _drive(name: str, hmap: HeightMap, duration: float, dt: float, physics: Physics) -> Scenario:
    # large K_v keeps the commanded speed saturated even when a chunk's
    # waypoint is one step ahead, so chunked replays match the drive
    model = box_robot(k_v=200.0)
    e = float(hmap.e[0, 0])
    h0 = float(hmap.h[int(round(-hmap.origin[0] / hmap.resolution)), hmap.ny // 2])
    z = h0 - float(model.masses[0]) * model.gravity / e
    s0 = RigidState.at_rest((0.0, 0.0, z))
    u = WaypointControl(100.0, 0.0, 0.0)
    return Scenario(name, model, hmap, s0, u, SimConfig(dt, duration, 1), physics)


def bump_drive(duration: float = 5.0, dt: float = 0.01, amplitude: float = 0.15,
               physics: Physics = Physics()) -> Scenario:
    """Straight drive along +x across a Gaussian bump."""
    return _drive("bump", bump_map(drive_grid(), amplitude=amplitude), duration, dt, physics)


def ramp_drive(duration: float = 5.0, dt: float = 0.01, slope: float = 0.1,
               physics: Physics = Physics(ContactModel.NORMAL)) -> Scenario:
    """Straight drive along +x up a constant slope."""
    return _drive("ramp", ramp_map(drive_grid(), slope), duration, dt, physics)


SCENARIOS = {
    "free-fall": free_fall,
    "drop": drop_test,
    "equilibrium": equilibrium,
    "ramp": ramp_drive,
    "bump": bump_drive,
}


def build(name: str, **kw) -> Scenario:
    try:
        factory = SCENARIOS[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}") from None
    return factory(**kw)


def synthetic_cloud(hmap: HeightMap, per_cell: int = 4, noise: float = 0.0, seed: int = 0) -> np.ndarray:
    """Points scattered uniformly over each cell, z from the terrain plus
    Gaussian noise (seeded)."""
    rng = np.random.default_rng(seed)
    g = hmap.grid
    X, Y = g.cell_centers()
    cx = np.repeat(X.ravel(), per_cell)
    cy = np.repeat(Y.ravel(), per_cell)
    jitter = rng.uniform(-0.5, 0.5, size=(len(cx), 2)) * g.resolution * 0.999
    x, y = cx + jitter[:, 0], cy + jitter[:, 1]
    z = patch(hmap, x, y).h + noise * rng.standard_normal(len(x))
    return np.stack([x, y, z], axis=1)
