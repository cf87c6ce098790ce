"""Physical-consistency losses, chunking and gradient-based terrain recovery."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import GradientBundle, backward, rollout_with_tape
from .core import RigidState, RobotModel, SimConfig, Trajectory, WaypointControl, heading_of
from .dynamics import ContactModel
from .integrator import SimulationError, _as_physics, bracket, sample_at, simulate
from .terrain import GridSpec, HeightMap, DEFAULT_DAMPING, DEFAULT_ELASTICITY

ALIGN_TOL = 1e-9


@dataclass(frozen=True)
class LossWeights:
    w_x: float = 1.0    # squared position error
    w_R: float = 0.0    # squared Frobenius rotation error

    def __post_init__(self):
        if not (self.w_x >= 0 and self.w_R >= 0):
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class TrajectoryLoss:
    value: float
    residuals: np.ndarray   # weighted squared error per ground-truth sample
    weights: LossWeights


def _loss_terms(pred: Trajectory, gt: Trajectory, weights: LossWeights, want_grad: bool):
    times = pred.times
    res = np.empty(len(gt))
    grad = np.zeros((len(pred), 18)) if want_grad else None
    for n, (t, g) in enumerate(gt):
        k, s = bracket(times, t, ALIGN_TOL)
        a = pred.states[k]
        if s == 0.0:
            x, R = a.x, a.R
        else:
            b = pred.states[k + 1]
            x = a.x + s * (b.x - a.x)
            R = sample_at(pred, [t])[0].R if weights.w_R else None
        dx = x - g.x
        val = weights.w_x * float(dx @ dx)
        if weights.w_R:
            dR = R - g.R
            val += weights.w_R * float(np.sum(dR * dR))
        res[n] = val
        if want_grad:
            gx = 2.0 * weights.w_x * dx
            if s == 0.0:
                grad[k, 0:3] += gx
            else:
                grad[k, 0:3] += (1.0 - s) * gx
                grad[k + 1, 0:3] += s * gx
            if weights.w_R:
                if s != 0.0:
                    raise ValueError(f"rotation loss needs prediction samples at every ground-truth time (t={t})")
                grad[k, 6:15] += 2.0 * weights.w_R * (R - g.R).ravel()
    return res, grad


def trajectory_loss(pred: Trajectory, gt: Trajectory, weights: LossWeights = LossWeights()) -> TrajectoryLoss:
    """Sum over ground-truth stamps of w_x |x - x_gt|^2 + w_R |R - R_gt|_F^2,
    with the prediction resampled at the ground-truth times."""
    res, _ = _loss_terms(pred, gt, weights, False)
    return TrajectoryLoss(float(np.sum(res)), res, weights)


def trajectory_loss_grad(pred: Trajectory, gt: Trajectory,
                         weights: LossWeights = LossWeights()) -> tuple[TrajectoryLoss, np.ndarray]:
    """Loss and its gradient with respect to ``pred``'s samples, shape (len(pred), 18).

    Positions may fall between prediction samples (the gradient is split by
    the linear interpolation weights); the rotation term needs aligned stamps.
    """
    res, grad = _loss_terms(pred, gt, weights, True)
    return TrajectoryLoss(float(np.sum(res)), res, weights), grad


# --------------------------------------------------------------------------
# chunks

@dataclass(frozen=True)
class Chunk:
    s0: RigidState
    gt: Trajectory          # timestamps relative to the chunk start
    u: WaypointControl
    duration: float
    start: float            # absolute start time in the source trajectory


def make_chunks(gt: Trajectory, chunk_duration: float = 1.0) -> list[Chunk]:
    """Split ``gt`` into consecutive non-overlapping chunks; a trailing
    remainder shorter than ``chunk_duration`` is dropped.

    Each chunk starts from the ground-truth state at its start and steers
    toward the ground-truth pose at its end.
    """
    if not chunk_duration > 0:
        raise ValueError("chunk duration must be positive")
    span = gt.duration
    count = int(math.floor(span / chunk_duration + 1e-9))
    if count < 1:
        raise ValueError(f"trajectory spans {span:.6g} s, shorter than one chunk of {chunk_duration:.6g} s")
    t_first = gt.times[0]
    chunks = []
    for c in range(count):
        t0 = t_first + c * chunk_duration
        t1 = t0 + chunk_duration
        s0, s1 = sample_at(gt, [t0, t1])
        samples = [(max(t - t0, 0.0), s) for t, s in gt
                   if t0 - ALIGN_TOL <= t <= t1 + ALIGN_TOL]
        if not samples:
            samples = [(0.0, s0)]
        u = WaypointControl(float(s1.x[0]), float(s1.x[1]), heading_of(s1))
        chunks.append(Chunk(s0, Trajectory.from_samples(samples), u, chunk_duration, t0))
    return chunks


def chunk_config(chunk: Chunk, dt: float) -> SimConfig:
    return SimConfig(dt=dt, duration=chunk.duration, record_stride=1)


def chunk_loss(chunk: Chunk, hmap: HeightMap, model: RobotModel, dt: float, physics,
               weights: LossWeights = LossWeights()) -> TrajectoryLoss:
    ro = simulate(chunk.s0, hmap, chunk.u, model, chunk_config(chunk, dt), physics)
    return trajectory_loss(ro.trajectory, chunk.gt, weights)


def chunk_gradient(chunk: Chunk, hmap: HeightMap, model: RobotModel, dt: float, physics,
                   weights: LossWeights = LossWeights()) -> tuple[float, GradientBundle]:
    ro, tape = rollout_with_tape(chunk.s0, hmap, chunk.u, model, chunk_config(chunk, dt), physics)
    loss, up = trajectory_loss_grad(ro.trajectory, chunk.gt, weights)
    return loss.value, backward(tape, up)


def total_loss_and_gradient(chunks, hmap, model, dt, physics, weights=LossWeights()):
    """Summed loss over chunks and the accumulated gradient."""
    total, acc = 0.0, None
    for ch in chunks:
        val, g = chunk_gradient(ch, hmap, model, dt, physics, weights)
        total += val
        acc = g if acc is None else acc + g
    return total, acc


# --------------------------------------------------------------------------
# terrain optimization

def softplus(z):
    z = np.asarray(z, dtype=float)
    return np.logaddexp(0.0, z)


def softplus_inv(y):
    """Inverse of softplus for y > 0; values at or below zero map to a tiny positive."""
    y = np.maximum(np.asarray(y, dtype=float), 1e-12)
    return y + np.log(-np.expm1(-y))


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    return np.exp(-np.logaddexp(0.0, -z))


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 0.02
    iterations: int = 200
    optimizer: str = "adam"                  # or "gd"
    channels: tuple[str, ...] = ("h", "e", "d")
    chunk_duration: float = 1.0
    dt: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    rel_tol: float = 1e-2                    # converged once loss <= rel_tol * initial
    # below this the fit is exact to rounding; Adam would blow the noise up to full-size steps
    abs_tol: float = 1e-20
    weights: LossWeights = LossWeights()

    def __post_init__(self):
        if self.optimizer not in ("adam", "gd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}; expected 'adam' or 'gd'")
        if not (self.lr > 0 and self.iterations >= 0 and self.dt > 0):
            raise ValueError("lr and dt must be positive, iterations non-negative")
        bad = set(self.channels) - {"h", "e", "d"}
        if bad:
            raise ValueError(f"unknown channels {sorted(bad)}")


@dataclass
class OptimReport:
    loss_curve: list[float]
    terrain: HeightMap
    iterations: int
    converged: bool
    chunks: list[Chunk] = field(default_factory=list, repr=False)


class OptimizationError(RuntimeError):
    def __init__(self, message: str, iteration: int):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


class _Adam:
    def __init__(self, shape, cfg: OptimConfig):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0
        self.cfg = cfg

    def step(self, g: np.ndarray) -> np.ndarray:
        c = self.cfg
        self.t += 1
        self.m = c.beta1 * self.m + (1 - c.beta1) * g
        self.v = c.beta2 * self.v + (1 - c.beta2) * g * g
        mh = self.m / (1 - c.beta1 ** self.t)
        vh = self.v / (1 - c.beta2 ** self.t)
        return c.lr * mh / (np.sqrt(vh) + c.eps)


def optimize_terrain(gt: Trajectory, init: HeightMap, model: RobotModel,
                     cfg: OptimConfig = OptimConfig(), kind=ContactModel.VERTICAL,
                     callback=None) -> OptimReport:
    """Fit the terrain so chunked rollouts reproduce ``gt``.

    Heights are optimized directly; elasticity and damping through a softplus
    so they stay positive. Gradients are summed over all chunks before each
    update. ``callback(iteration, loss)`` is called once per evaluation.
    """
    physics = _as_physics(kind)
    chunks = make_chunks(gt, cfg.chunk_duration)
    raw = {"h": np.array(init.h, dtype=float), "e": softplus_inv(init.e), "d": softplus_inv(init.d)}
    # channels only change once they receive a nonzero gradient, so the rest stay bit-exact
    vals = {"h": init.h, "e": init.e, "d": init.d}

    states = {name: _Adam(init.grid.shape, cfg) for name in cfg.channels}
    curve: list[float] = []
    converged = False
    hmap = init
    for it in range(cfg.iterations + 1):
        try:
            val, grad = total_loss_and_gradient(chunks, hmap, model, cfg.dt, physics, cfg.weights)
        except SimulationError as exc:
            raise OptimizationError(f"rollout failed ({exc})", it) from exc
        if not math.isfinite(val):
            raise OptimizationError(f"non-finite loss {val}", it)
        curve.append(val)
        if callback is not None:
            callback(it, val)
        if curve[0] == 0.0 or val <= cfg.rel_tol * curve[0]:
            converged = True
        if it == cfg.iterations or val <= cfg.abs_tol:
            continue
        for name in cfg.channels:
            g = getattr(grad, name)
            if name != "h":
                g = g * sigmoid(raw[name])
            if not np.all(np.isfinite(g)):
                raise OptimizationError(f"non-finite gradient for channel {name}", it)
            if not g.any():
                continue
            step = states[name].step(g) if cfg.optimizer == "adam" else cfg.lr * g
            raw[name] = raw[name] - step
            vals[name] = raw[name] if name == "h" else softplus(raw[name])
        hmap = init.replace(**vals)
    return OptimReport(curve, hmap, cfg.iterations, converged, chunks)


def flat_initial_map(gt: Trajectory, model: RobotModel, grid: GridSpec,
                     elasticity: float = DEFAULT_ELASTICITY, damping: float = DEFAULT_DAMPING) -> HeightMap:
    """Flat terrain at the height of the lowest body point at the first
    ground-truth sample, so every body point starts in (or at) contact."""
    s = gt.states[0]
    z = s.x[2] + model.points @ s.R[2]
    return HeightMap.flat(grid, float(np.min(z)), elasticity, damping)


# --------------------------------------------------------------------------
# heightmap-space losses

def traversed_mask(gt: Trajectory, model: RobotModel, grid: GridSpec,
                   min_weight: float = 1e-9) -> np.ndarray:
    """Cells whose bilinear weight exceeds ``min_weight`` for some body point
    at some ground-truth sample.

    The threshold drops weights that only exist through rounding (a point
    sitting on a cell row up to 1e-15). Points beyond the half-cell margin
    exert no force and mark nothing.
    """
    mask = np.zeros(grid.shape, dtype=bool)
    if len(gt) == 0:
        return mask
    R = gt.rotations()
    xs = gt.positions()[:, None, :] + np.einsum("kij,nj->kni", R, model.points)
    gx = ((xs[..., 0] - grid.origin[0]) / grid.resolution).ravel()
    gy = ((xs[..., 1] - grid.origin[1]) / grid.resolution).ravel()
    active = (gx >= -0.5) & (gx <= grid.nx - 0.5) & (gy >= -0.5) & (gy <= grid.ny - 0.5)
    gx = np.clip(gx[active], 0, grid.nx - 1)
    gy = np.clip(gy[active], 0, grid.ny - 1)
    i0 = np.minimum(np.floor(gx), grid.nx - 2).astype(np.intp)
    j0 = np.minimum(np.floor(gy), grid.ny - 2).astype(np.intp)
    fu, fv = gx - i0, gy - j0
    for di, dj, w in ((0, 0, (1 - fu) * (1 - fv)), (1, 0, fu * (1 - fv)),
                      (0, 1, (1 - fu) * fv), (1, 1, fu * fv)):
        nz = w > min_weight
        mask[i0[nz] + di, j0[nz] + dj] = True
    return mask


def composite_heightmap_loss(pred: HeightMap, optimized: HeightMap, mask, lidar: HeightMap,
                             lam: float) -> float:
    """Masked squared height error to the optimized map plus ``lam`` times
    the squared error to the lidar estimate over all cells."""
    if not (pred.grid == optimized.grid == lidar.grid):
        raise ValueError("heightmaps must share one grid")
    mask = np.asarray(mask)
    if mask.shape != pred.grid.shape:
        raise ValueError(f"mask shape {mask.shape} does not match grid {pred.grid.shape}")
    if not np.all((mask == 0) | (mask == 1)):
        raise ValueError("mask must be binary")
    if not lam >= 0:
        raise ValueError("lambda must be non-negative")
    a = mask * (pred.h - optimized.h)
    b = pred.h - lidar.h
    return float(np.sum(a * a) + lam * np.sum(b * b))


def rms_height_error(a: HeightMap, b: HeightMap, mask) -> float:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty mask")
    diff = (a.h - b.h)[mask]
    return float(np.sqrt(np.mean(diff * diff)))
