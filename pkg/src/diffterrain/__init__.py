"""Differentiable rigid-body/terrain engine: forward Euler rollouts over a
three-channel heightmap and exact reverse-mode gradients of those rollouts."""

__version__ = "0.1.0"

from .core import (RigidState, RobotModel, SimConfig, Trajectory, WaypointControl, heading_of,
                   wrap_angle)
from .terrain import GridSpec, HeightMap, cloud_to_heightmap, sample, sample_gradient
from .dynamics import ContactModel, Physics, state_derivative
from .integrator import SimulationError, euler_step, sample_at, simulate
from .autodiff import GradientBundle, backward, grad_check, rollout_with_tape
from .optim import composite_heightmap_loss, make_chunks, optimize_terrain, trajectory_loss, traversed_mask
from .metrics import compare_encoders, tracking_errors

__all__ = [
    "RigidState", "RobotModel", "SimConfig", "Trajectory", "WaypointControl", "heading_of", "wrap_angle",
    "GridSpec", "HeightMap", "cloud_to_heightmap", "sample", "sample_gradient",
    "ContactModel", "Physics", "state_derivative",
    "SimulationError", "euler_step", "sample_at", "simulate",
    "GradientBundle", "backward", "grad_check", "rollout_with_tape",
    "composite_heightmap_loss", "make_chunks", "optimize_terrain", "trajectory_loss", "traversed_mask",
    "compare_encoders", "tracking_errors",
]
