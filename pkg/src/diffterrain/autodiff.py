"""Reverse-mode gradients of the discrete Euler rollout.

The tape keeps every pre-step state together with the per-step intermediates
of the compiled integrator (bilinear stencils, contact and saturation flags,
the un-projected rotation update). :func:`backward` sweeps the steps in
reverse holding every branch decision fixed, so the result is the exact
gradient of the program that was run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels as K
from .core import RigidState, RobotModel, SimConfig, WaypointControl, exp_so3, skew
from .dynamics import ContactModel, Physics, StepEval, kind_code, model_arrays
from .integrator import Buffers, Rollout, _as_physics, integrate, record, simulate
from .terrain import GridSpec, HeightMap

STATE_DIM = 18
DEFAULT_MAX_TAPE_STEPS = 200_000


@dataclass
class Tape:
    s0: RigidState
    hmap: HeightMap
    u: WaypointControl
    model: RobotModel
    config: SimConfig
    physics: Physics
    buffers: Buffers = field(repr=False)

    def __len__(self) -> int:
        return self.config.n_steps

    @property
    def n_samples(self) -> int:
        return len(self) // self.config.record_stride + 1

    def step(self, k: int) -> StepEval:
        """Intermediates of step ``k`` as a :class:`StepEval`."""
        b = self.buffers
        return StepEval.from_rows(b.T[k], b.P[k], b.G[k])

    def _contact(self) -> np.ndarray:
        return self.buffers.P[:len(self), :, K.P_CONTACT] > 0.5

    def contact_events(self) -> int:
        """Number of (step, point) pairs that were in contact."""
        return int(np.count_nonzero(self._contact()))

    def contact_cells(self) -> np.ndarray:
        """Boolean grid of cells with nonzero bilinear weight in a contact event."""
        touched = np.zeros(self.hmap.grid.shape, dtype=bool)
        c = self._contact()
        if not c.any():
            return touched
        rows = self.buffers.T[:len(self)][c]
        i0 = rows[:, K.T_I0].astype(np.intp)
        j0 = rows[:, K.T_J0].astype(np.intp)
        fu, fv = rows[:, K.T_FU], rows[:, K.T_FV]
        for di, dj, w in ((0, 0, (1 - fu) * (1 - fv)), (1, 0, fu * (1 - fv)),
                          (0, 1, (1 - fu) * fv), (1, 1, fu * fv)):
            nz = w > 0
            touched[i0[nz] + di, j0[nz] + dj] = True
        return touched

    def replay(self) -> Rollout:
        return simulate(self.s0, self.hmap, self.u, self.model, self.config, self.physics)

    def margins(self) -> dict[str, float]:
        """Smallest distance of any recorded quantity to a branch boundary."""
        n = len(self)
        out = {"contact": math.inf, "cell_edge": math.inf, "speed_clamp": math.inf,
               "turn_clamp": math.inf, "wrap": math.inf, "goal": math.inf}
        if n == 0:
            return out
        grid = self.hmap.grid
        T, P, G = self.buffers.T[:n], self.buffers.P[:n], self.buffers.G[:n]
        pos = P[:, :, K.P_POS:K.P_POS + 3]
        out["contact"] = float(np.min(np.abs(pos[..., 2] - T[..., K.T_H])))
        if self.physics.clamp_contact:
            live = P[..., K.P_CONTACT] > 0.5
            if live.any():
                out["contact"] = min(out["contact"], float(np.min(np.abs(P[..., K.P_MAG][live]))))
        # kinks of the bilinear patch: cell edges, grid border, force margin
        res = grid.resolution
        for c, org, m in ((0, grid.origin[0], grid.nx), (1, grid.origin[1], grid.ny)):
            g = (pos[..., c] - org) / res
            edge = np.abs(g - np.round(np.clip(g, 0, m - 1)))
            outer = np.minimum(np.abs(g + 0.5), np.abs(g - (m - 0.5)))
            out["cell_edge"] = min(out["cell_edge"], float(np.min(np.minimum(edge, outer))) * res)
        dist = G[:, K.G_DIST]
        out["goal"] = float(np.min(dist))
        away = dist > 0
        if away.any():
            out["speed_clamp"] = float(np.min(np.abs(self.model.k_v * dist[away] - self.model.v_max)))
            out["wrap"] = float(np.min(math.pi - np.abs(G[away, K.G_DTHETA])))
        out["turn_clamp"] = float(np.min(np.abs(np.abs(G[:, K.G_WZ_RAW]) - self.model.omega_max)))
        out["wrap"] = min(out["wrap"], float(np.min(math.pi - np.abs(G[:, K.G_DPHI]))))
        return out


@dataclass
class ModelGradient:
    masses: np.ndarray     # total derivative; the total mass is the sum of masses
    inertia: np.ndarray    # 3x3, entries treated as independent
    points: np.ndarray     # (N, 3) body-frame offsets


@dataclass
class GradientBundle:
    h: np.ndarray
    e: np.ndarray
    d: np.ndarray
    s0: np.ndarray         # x(3), v(3), rotation tangent(3), omega(3)
    s0_R: np.ndarray       # raw dL/dR0 (3x3)
    model: ModelGradient
    u: np.ndarray          # x_g, y_g, phi_g

    def __add__(self, other: "GradientBundle") -> "GradientBundle":
        return GradientBundle(self.h + other.h, self.e + other.e, self.d + other.d,
                              self.s0 + other.s0, self.s0_R + other.s0_R,
                              ModelGradient(self.model.masses + other.model.masses,
                                            self.model.inertia + other.model.inertia,
                                            self.model.points + other.model.points),
                              self.u + other.u)

    def scaled(self, a: float) -> "GradientBundle":
        return GradientBundle(a * self.h, a * self.e, a * self.d, a * self.s0, a * self.s0_R,
                              ModelGradient(a * self.model.masses, a * self.model.inertia,
                                            a * self.model.points), a * self.u)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.h.ravel(), self.e.ravel(), self.d.ravel(), self.s0,
                               self.model.masses, self.model.inertia.ravel(),
                               self.model.points.ravel(), self.u])


def rollout_with_tape(s0: RigidState, hmap: HeightMap, u: WaypointControl, model: RobotModel,
                      cfg: SimConfig, kind=ContactModel.VERTICAL,
                      max_steps: int = DEFAULT_MAX_TAPE_STEPS) -> tuple[Rollout, Tape]:
    """Forward rollout that keeps what :func:`backward` needs.

    Raises MemoryError when the rollout is longer than ``max_steps``; split
    long horizons into chunks instead.
    """
    if cfg.n_steps > max_steps:
        raise MemoryError(f"rollout of {cfg.n_steps} steps exceeds the tape cap of {max_steps}")
    physics = _as_physics(kind)
    buf = integrate(s0, hmap, u, model, cfg.dt, cfg.n_steps, physics, full=True)
    rollout = Rollout(record(buf.S, cfg.dt, cfg.record_stride), cfg.n_steps, cfg, physics)
    return rollout, Tape(s0, hmap, u, model, cfg, physics, buf)


def polar_vjp(A: np.ndarray, grad_Q: np.ndarray) -> np.ndarray:
    """Pull ``dL/dQ`` back through Q = polar(A) = U V^T."""
    return K.polar_vjp(np.ascontiguousarray(A, dtype=float), np.ascontiguousarray(grad_Q, dtype=float))


def backward(tape: Tape, upstream) -> GradientBundle:
    """Gradient of a loss given ``upstream = dL/d(recorded states)``.

    ``upstream`` has one row per recorded sample, laid out like
    :meth:`RigidState.as_vector` (x, v, R row-major, omega).
    """
    up = np.ascontiguousarray(upstream, dtype=float)
    if up.shape != (tape.n_samples, STATE_DIM):
        raise ValueError(f"upstream gradient must have shape {(tape.n_samples, STATE_DIM)}, got {up.shape}")
    n = len(tape)
    b = tape.buffers
    pts, masses, J, J_inv, ctrl = model_arrays(tape.model)
    shape = tape.hmap.grid.shape
    H_bar, E_bar, D_bar = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    m_bar, J_bar, P_bar = np.zeros(len(masses)), np.zeros((3, 3)), np.zeros_like(pts)
    u_bar, s_bar = np.zeros(3), np.zeros(STATE_DIM)
    K.backward(b.S, b.A[:n], b.T[:n], b.P[:n], b.G[:n], up, tape.config.record_stride,
               tape.config.dt, pts, masses, J, J_inv, ctrl, float(tape.model.gravity),
               tape.hmap.grid.resolution, kind_code(tape.physics), tape.physics.gyroscopic,
               H_bar, E_bar, D_bar, m_bar, J_bar, P_bar, u_bar, s_bar)
    aR = s_bar[6:15].reshape(3, 3).copy()
    R0 = tape.s0.R
    a_rot = np.array([np.sum(aR * (skew(e) @ R0)) for e in np.eye(3)])
    s0_grad = np.concatenate([s_bar[0:3], s_bar[3:6], a_rot, s_bar[15:18]])
    return GradientBundle(H_bar, E_bar, D_bar, s0_grad, aR, ModelGradient(m_bar, J_bar, P_bar), u_bar)


# --------------------------------------------------------------------------
# finite-difference validation

@dataclass
class GradCheckEntry:
    name: str
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    tolerance: float
    skipped: bool = False
    reason: str = ""
    margins: dict = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        return max((en.rel_error for en in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        if self.skipped:
            return False
        return all(math.isfinite(en.analytic) and math.isfinite(en.numeric) and en.rel_error <= self.tolerance
                   for en in self.entries)

    def failures(self) -> list[GradCheckEntry]:
        return [en for en in self.entries if not (en.rel_error <= self.tolerance)]

    def table(self) -> str:
        lines = [f"{'parameter':<18} {'analytic':>16} {'numeric':>16} {'rel.error':>10}"]
        for en in self.entries:
            lines.append(f"{en.name:<18} {en.analytic:>16.8e} {en.numeric:>16.8e} {en.rel_error:>10.2e}")
        verdict = "SKIPPED (" + self.reason + ")" if self.skipped else ("PASS" if self.passed else "FAIL")
        lines.append(f"max rel. error {self.max_rel_error:.3e} (tol {self.tolerance:.1e}): {verdict}")
        return "\n".join(lines)


LossFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass
class GradProblem:
    """A rollout plus a scalar loss on its recorded states."""

    s0: RigidState
    hmap: HeightMap
    u: WaypointControl
    model: RobotModel
    config: SimConfig
    physics: Physics
    loss: LossFn   # (K, 18) states -> (value, dL/dstates)

    def value(self, s0=None, hmap=None, u=None, model=None) -> float:
        ro = simulate(self.s0 if s0 is None else s0, self.hmap if hmap is None else hmap,
                      self.u if u is None else u, self.model if model is None else model,
                      self.config, self.physics)
        return self.loss(ro.trajectory.as_array())[0]

    def gradient(self) -> tuple[float, GradientBundle, Tape]:
        ro, tape = rollout_with_tape(self.s0, self.hmap, self.u, self.model, self.config, self.physics)
        val, up = self.loss(ro.trajectory.as_array())
        return val, backward(tape, up), tape


def _perturbers(prob: GradProblem, grads: GradientBundle, groups, cells=None):
    """Yield (name, analytic, f(delta)) for every checked scalar parameter."""
    hmap, model, s0, u = prob.hmap, prob.model, prob.s0, prob.u
    shape = hmap.grid.shape
    if cells is None:
        cells = [(i, j) for i in range(shape[0]) for j in range(shape[1])]
    for ch in ("h", "e", "d"):
        if ch not in groups:
            continue
        base = getattr(hmap, ch)
        for (i, j) in cells:
            def f(delta, ch=ch, i=i, j=j, base=base):
                arr = base.copy()
                arr[i, j] += delta
                return prob.value(hmap=hmap.replace(**{ch: arr}))
            yield f"{ch}[{i},{j}]", float(getattr(grads, ch)[i, j]), base[i, j], f
    if "masses" in groups:
        for i in range(model.n_points):
            def f(delta, i=i):
                mm = model.masses.copy()
                mm[i] += delta
                return prob.value(model=model.replace(masses=mm))
            yield f"mass[{i}]", float(grads.model.masses[i]), model.masses[i], f
    if "inertia" in groups:
        for i in range(3):
            def f(delta, i=i):
                J = model.inertia.copy()
                J[i, i] += delta
                return prob.value(model=model.replace(inertia=J))
            yield f"J[{i},{i}]", float(grads.model.inertia[i, i]), model.inertia[i, i], f
    if "points" in groups:
        for i in range(model.n_points):
            for c in range(3):
                def f(delta, i=i, c=c):
                    pp = model.points.copy()
                    pp[i, c] += delta
                    return prob.value(model=model.replace(points=pp))
                yield f"point[{i},{c}]", float(grads.model.points[i, c]), model.points[i, c], f
    if "s0" in groups:
        for c, label in enumerate(("x", "y", "z")):
            def f(delta, c=c):
                x = s0.x.copy()
                x[c] += delta
                return prob.value(s0=s0.replace(x=x))
            yield f"s0.{label}", float(grads.s0[c]), s0.x[c], f
        for c, label in enumerate(("vx", "vy", "vz")):
            def f(delta, c=c):
                v = s0.v.copy()
                v[c] += delta
                return prob.value(s0=s0.replace(v=v))
            yield f"s0.{label}", float(grads.s0[3 + c]), s0.v[c], f
        for c, label in enumerate(("rx", "ry", "rz")):
            def f(delta, c=c):
                return prob.value(s0=s0.replace(R=exp_so3(delta * np.eye(3)[c]) @ s0.R))
            yield f"s0.{label}", float(grads.s0[6 + c]), 0.0, f
        for c, label in enumerate(("wx", "wy", "wz")):
            def f(delta, c=c):
                w = s0.omega.copy()
                w[c] += delta
                return prob.value(s0=s0.replace(omega=w))
            yield f"s0.{label}", float(grads.s0[9 + c]), s0.omega[c], f
    if "u" in groups:
        for c, label in enumerate(("x_g", "y_g", "phi_g")):
            def f(delta, c=c):
                arr = u.as_array()
                arr[c] += delta
                return prob.value(u=WaypointControl(*arr))
            yield f"u.{label}", float(grads.u[c]), u.as_array()[c], f


ALL_GROUPS = ("h", "e", "d", "masses", "inertia", "points", "s0", "u")


def grad_check(prob: GradProblem, eps: float = 1e-5, tolerance: float = 1e-4,
               groups=ALL_GROUPS, cells=None, boundary_tol: float = 1e-4,
               clamp_tol: float = 1e-6, floor: float = 1e-7) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    The step for parameter p is ``eps * max(|p|, 1)``. Relative error is
    ``|a - n| / max(|a|, |n|, floor * max(1, max|n|))``. Runs whose recorded
    trajectory passes within ``boundary_tol`` metres of a contact or cell
    boundary, or within ``clamp_tol`` of a controller clamp, are reported as
    skipped because the finite difference would straddle a branch.
    """
    _, grads, tape = prob.gradient()
    margins = tape.margins()
    close = [name for name, tol in (("contact", boundary_tol), ("cell_edge", boundary_tol),
                                    ("speed_clamp", clamp_tol), ("turn_clamp", clamp_tol),
                                    ("wrap", clamp_tol)) if margins[name] < tol]
    if 0.0 < margins["goal"] < boundary_tol:
        close.append("goal")
    if close:
        return GradCheckReport([], tolerance, True, "near branch boundary: " + ", ".join(close), margins)
    rows = []
    for name, analytic, p, f in _perturbers(prob, grads, groups, cells):
        step = eps * max(abs(float(p)), 1.0)
        numeric = (f(step) - f(-step)) / (2 * step)
        rows.append([name, analytic, numeric])
    scale = max([1.0] + [abs(r[2]) for r in rows if math.isfinite(r[2])])
    entries = []
    for name, a, n in rows:
        if not (math.isfinite(a) and math.isfinite(n)):
            entries.append(GradCheckEntry(name, a, n, math.inf))
            continue
        denom = max(abs(a), abs(n), floor * scale)
        entries.append(GradCheckEntry(name, a, n, abs(a - n) / denom))
    return GradCheckReport(entries, tolerance, margins=margins)


def random_problem(seed: int, kind=ContactModel.VERTICAL, gyroscopic: bool = False,
                   n_points: int = 4, grid_size: int = 6, duration: float = 0.4,
                   dt: float = 0.01, stride: int = 5) -> GradProblem:
    """Seeded smooth instance: a small rigid body settling onto random terrain
    while steering toward a waypoint, with a quadratic loss on all recorded
    state components."""
    rng = np.random.default_rng(seed)
    res = 0.4
    grid = GridSpec(grid_size, grid_size, res, (-res * (grid_size - 1) / 2,) * 2)
    hmap = HeightMap(grid, 0.1 * rng.standard_normal(grid.shape), rng.uniform(200, 600, grid.shape),
                     rng.uniform(5, 30, grid.shape))
    pts = rng.uniform(-0.3, 0.3, (n_points, 3))
    m = rng.uniform(0.5, 1.5, n_points)
    pts -= (m[:, None] * pts).sum(0) / m.sum()
    J = np.diag(rng.uniform(0.2, 0.5, 3))
    model = RobotModel(pts, m, J, k_v=0.8, k_theta=0.7, k_phi=0.5, v_max=5.0, omega_max=5.0)
    s0 = RigidState(np.array([0.0, 0.0, 0.15]), rng.normal(0, 0.1, 3), exp_so3(rng.normal(0, 0.1, 3)),
                    rng.normal(0, 0.3, 3))
    u = WaypointControl(*rng.uniform([0.3, -0.5, -1.0], [0.8, 0.5, 1.0]))
    cfg = SimConfig(dt, duration, stride)
    target = rng.normal(size=(cfg.n_steps // stride + 1, STATE_DIM))

    def loss(S):
        r = S - target
        return 0.5 * float(np.sum(r * r)), r

    return GradProblem(s0, hmap, u, model, cfg, Physics(kind, gyroscopic), loss)
