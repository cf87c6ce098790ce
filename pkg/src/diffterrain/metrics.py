"""Trajectory-tracking accuracy: mean translation and geodesic rotation errors."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import RobotModel, Trajectory
from .dynamics import ContactModel
from .integrator import _as_physics, sample_at, simulate
from .optim import chunk_config, make_chunks
from .terrain import HeightMap


@dataclass(frozen=True)
class TrackingReport:
    delta_x: float                # mean position error, m
    delta_R: float                # mean rotation error, degrees
    position_errors: np.ndarray
    rotation_errors: np.ndarray   # degrees
    n: int


def rotation_angle_deg(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Geodesic angle between two rotations, in degrees.

    Uses atan2 of the sine and cosine parts: arccos of the trace loses half
    the significant digits near zero (1e-16 of rounding becomes 1e-6 deg).
    """
    if np.array_equal(Ra, Rb):
        return 0.0
    M = np.asarray(Ra).T @ np.asarray(Rb)
    c = (np.trace(M) - 1.0) / 2.0
    s = 0.5 * math.sqrt((M[2, 1] - M[1, 2]) ** 2 + (M[0, 2] - M[2, 0]) ** 2 + (M[1, 0] - M[0, 1]) ** 2)
    return math.degrees(math.atan2(s, c))


def _report(pos_err, rot_err) -> TrackingReport:
    pos_err = np.asarray(pos_err, dtype=float)
    rot_err = np.asarray(rot_err, dtype=float)
    if len(pos_err) == 0:
        raise ValueError("no ground-truth samples to compare")
    return TrackingReport(float(np.mean(pos_err)), float(np.mean(rot_err)), pos_err, rot_err, len(pos_err))


def _errors(pred: Trajectory, gt: Trajectory):
    states = sample_at(pred, gt.times)
    pos = [float(np.linalg.norm(p.x - g.x)) for p, (_, g) in zip(states, gt)]
    rot = [rotation_angle_deg(p.R, g.R) for p, (_, g) in zip(states, gt)]
    return pos, rot


def tracking_errors(pred: Trajectory, gt: Trajectory) -> TrackingReport:
    """Mean Euclidean position error and mean rotation angle over the
    ground-truth stamps, with ``pred`` resampled at those stamps."""
    if len(gt) == 0:
        raise ValueError("empty ground-truth trajectory")
    return _report(*_errors(pred, gt))


def chunked_tracking_errors(gt: Trajectory, hmap: HeightMap, model: RobotModel, dt: float = 0.01,
                            kind=ContactModel.VERTICAL, chunk_duration: float = 1.0) -> TrackingReport:
    """Re-initialise from ground truth every chunk, simulate, and pool errors."""
    physics = _as_physics(kind)
    pos, rot = [], []
    for ch in make_chunks(gt, chunk_duration):
        ro = simulate(ch.s0, hmap, ch.u, model, chunk_config(ch, dt), physics)
        p, r = _errors(ro.trajectory, ch.gt)
        pos += p
        rot += r
    return _report(pos, rot)


def compare_encoders(gts: Sequence[Trajectory], sources: Mapping[str, HeightMap] | Sequence[tuple[str, HeightMap]],
                     model: RobotModel, dt: float = 0.01, kind=ContactModel.VERTICAL,
                     chunk_duration: float = 1.0) -> list[tuple[str, TrackingReport]]:
    """One row per terrain source: errors pooled over every chunk of every
    ground-truth trajectory."""
    items = list(sources.items()) if isinstance(sources, Mapping) else list(sources)
    rows = []
    for name, hmap in items:
        pos, rot = [], []
        for gt in gts:
            rep = chunked_tracking_errors(gt, hmap, model, dt, kind, chunk_duration)
            pos.extend(rep.position_errors)
            rot.extend(rep.rotation_errors)
        rows.append((name, _report(pos, rot)))
    return rows


def format_table(rows) -> str:
    lines = ["source,delta_x_m,delta_R_deg,N"]
    for name, rep in rows:
        lines.append(f"{name},{rep.delta_x:.17g},{rep.delta_R:.17g},{rep.n}")
    return "\n".join(lines) + "\n"
