"""The ten acceptance criteria, one test each; every test records a PASS/FAIL line."""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from diffterrain.autodiff import ALL_GROUPS, grad_check, random_problem
from diffterrain.cli import main
from diffterrain.core import RigidState, SimConfig, Trajectory, WaypointControl, heading_of, rotx, rotz
from diffterrain.dynamics import ContactModel, Physics
from diffterrain.integrator import format_trajectory, parse_trajectory, simulate
from diffterrain.metrics import rotation_angle_deg, tracking_errors
from diffterrain.scenarios import box_robot, drop_test, equilibrium, free_fall
from diffterrain.terrain import GridSpec, HeightMap, format_heightmap, parse_heightmap

from conftest import ACCEPTANCE_LINES, random_rotation
from oracles import drop_height
from shared import bump_recovery
from test_integrator import mechanical_energy


def verdict(n: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_1_gradient_correctness():
    t0 = time.perf_counter()
    reports, skipped, seed = [], 0, 0
    while len(reports) < 20:
        kind = (ContactModel.VERTICAL, ContactModel.NORMAL)[seed % 2]
        rep = grad_check(random_problem(seed, kind), groups=ALL_GROUPS)
        seed += 1
        if rep.skipped:
            skipped += 1
            continue
        reports.append(rep)
    elapsed = time.perf_counter() - t0
    worst = max(r.max_rel_error for r in reports)
    n_entries = sum(len(r.entries) for r in reports)
    covered = {en.name.split("[")[0].split(".")[0] for r in reports for en in r.entries}
    ok = (all(r.passed for r in reports) and worst <= 1e-4 and elapsed < 60
          and {"h", "e", "d", "mass", "J", "s0", "u"} <= covered)
    verdict(1, "gradient correctness", ok,
            f"20 instances, {n_entries} entries, max rel err {worst:.2e}, {skipped} near-boundary "
            f"instances excluded, {elapsed:.1f} s")


def test_2_free_fall():
    exact = 10.0 - 0.5 * 9.81
    err = {dt: abs(free_fall(10.0, 1.0, dt).run().trajectory.states[-1].x[2] - exact) for dt in (1e-3, 5e-4)}
    # explicit Euler lags the parabola by exactly g T dt / 2
    first_order = abs(err[1e-3] - 0.5 * 9.81 * 1e-3) <= 1e-9
    ok = err[1e-3] <= 1e-2 and err[5e-4] <= err[1e-3] / 2 and first_order
    verdict(2, "analytic free fall", ok,
            f"error {err[1e-3]:.6e} m at dt=1e-3, {err[5e-4]:.6e} m at dt=5e-4, "
            f"ratio {err[1e-3] / err[5e-4]:.6f}")


def test_3_damped_settling():
    height, details, ok = 0.1, [], True
    for e, d in ((400.0, 10.0), (400.0, 60.0)):
        zeta = d / (2 * math.sqrt(e * 1.0))
        z = drop_test(height, e, d, duration=2.0, dt=1e-3).run().trajectory.states[-1].x[2]
        ref = drop_height(2.0, height, 1.0, e, d)
        err = abs(z - ref)
        ok &= err <= 0.02 * height
        details.append(f"zeta={zeta:.2f}: |dz|={err:.2e} m")
    verdict(3, "damped settling vs closed form", ok, ", ".join(details) + f", bound {0.02 * height:.0e} m")


def test_4_equilibrium():
    tr = equilibrium(duration=5.0).run().trajectory
    s0, s1 = tr.states[0], tr.states[-1]
    dx = float(np.linalg.norm(s1.x - s0.x))
    dr = math.radians(rotation_angle_deg(s0.R, s1.R))
    drift_x = max(float(np.linalg.norm(s.x - s0.x)) for s in tr.states)
    ok = dx <= 1e-6 and dr <= 1e-6 and drift_x <= 1e-6
    verdict(4, "static equilibrium fixed point", ok, f"max drift {drift_x:.2e} m, final rotation {dr:.2e} rad")


def test_5_terrain_recovery():
    t0 = time.perf_counter()
    sc, gt, init, rep, mask, rms = bump_recovery()
    elapsed = time.perf_counter() - t0
    ratio = rep.loss_curve[-1] / rep.loss_curve[0]
    ok = (gt.duration >= 5.0 - 1e-9 and rep.iterations <= 500 and ratio <= 0.01 and rms <= 0.05
          and elapsed < 300)
    verdict(5, "terrain recovery round trip", ok,
            f"{rep.iterations} iterations, loss ratio {ratio:.2e}, RMS {rms:.4f} m on {int(mask.sum())} "
            f"traversed cells, {elapsed:.1f} s")


def test_6_model_equivalence():
    hm = HeightMap.flat(GridSpec(41, 41, 0.1, (-2.0, -2.0)), 0.05, 800.0, 30.0)
    m = box_robot(nx=3, ny=2, k_v=2.0)
    cases = [
        (RigidState.at_rest((0.0, 0.0, 0.2), R=rotz(0.4) @ rotx(0.3)), WaypointControl(1.0, 0.5, 1.2)),
        (RigidState(np.array([0.1, -0.3, 0.0]), np.array([0.2, 0.0, -0.1]), rotx(-0.1),
                    np.array([0.1, 0.2, -0.3])), WaypointControl(-1.0, -1.0, -2.0)),
    ]
    same = True
    for s0, u in cases:
        for gyro in (False, True):
            a = simulate(s0, hm, u, m, SimConfig(0.01, 3.0), Physics(ContactModel.VERTICAL, gyro)).trajectory
            b = simulate(s0, hm, u, m, SimConfig(0.01, 3.0), Physics(ContactModel.NORMAL, gyro)).trajectory
            same &= a.as_array().tobytes() == b.as_array().tobytes()
    verdict(6, "normal model on flat terrain equals vertical", same, "4 rollouts x 301 samples, compared bytewise")


def test_7_planar_invariance():
    m = box_robot()
    hm = HeightMap.flat(GridSpec(41, 41, 0.1, (-2.0, -2.0)), 0.0)
    s0 = RigidState.at_rest((0.3, -0.2, 0.05), R=rotx(0.2))
    tr = simulate(s0, hm, WaypointControl.hold(s0), m, SimConfig(0.01, 5.0)).trajectory
    dev = max(max(abs(s.x[0] - 0.3), abs(s.x[1] + 0.2), abs(heading_of(s))) for s in tr.states)
    moved = np.ptp(tr.positions()[:, 2]) > 1e-3
    verdict(7, "vertical-model planar invariance", dev <= 1e-12 and moved, f"max x/y/heading deviation {dev:.1e}")


def test_8_metrics():
    rng = np.random.default_rng(8)
    tr = Trajectory(tuple(0.1 * k for k in range(20)),
                    tuple(RigidState(rng.normal(size=3), np.zeros(3), random_rotation(rng), np.zeros(3))
                          for _ in range(20)))
    self_rep = tracking_errors(tr, tr)
    yaw = tracking_errors(Trajectory(tr.times, tuple(s.replace(R=s.R @ rotz(math.radians(30))) for s in tr.states)), tr)
    off = tracking_errors(Trajectory(tr.times, tuple(s.replace(x=s.x + [0.3, 0.4, 0.0]) for s in tr.states)), tr)
    ok = ((self_rep.delta_x, self_rep.delta_R) == (0.0, 0.0) and abs(yaw.delta_R - 30.0) <= 1e-9
          and abs(off.delta_x - 0.5) <= 1e-12)
    verdict(8, "metrics self-consistency", ok,
            f"self ({self_rep.delta_x}, {self_rep.delta_R}), yaw {yaw.delta_R:.12f} deg, offset {off.delta_x:.15f} m")


def test_9_energy_dissipation():
    worst, ok = -math.inf, True
    for kind in ContactModel:
        for height, e, d in ((0.1, 400.0, 10.0), (0.3, 1000.0, 2.0), (0.05, 2000.0, 50.0)):
            sc = drop_test(height, e, d, duration=3.0, dt=1e-3)
            E = np.array([mechanical_energy(s, sc.model, sc.hmap)
                          for s in sc.run(physics=Physics(kind)).trajectory.states])
            rise = float(np.max(np.diff(E))) / (10 * 1e-3 * E[0])
            worst = max(worst, rise)
            ok &= rise <= 1.0 and E[-1] < E[0]
    verdict(9, "energy dissipation", ok, f"largest per-step rise {worst:.3f} x tolerance (10 dt E0)")


def test_10_determinism_and_formats(tmp_path):
    def runs(name, *argv):
        got = []
        for k in range(2):
            d = tmp_path / f"{name}{k}"
            assert main([str(a) for a in argv] + ["--out-dir", str(d)]) == 0
            got.append({p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "manifest.json"})
        return got[0] == got[1] and bool(got[0])

    src = tmp_path / "src"
    assert main(["scenario", "bump", "--duration", "2", "--out-dir", str(src)]) == 0
    robot, gt, hm = src / "robot.json", src / "trajectory.csv", src / "map.csv"
    (tmp_path / "r.csv").write_text("iter,loss\n0,1\n1,0.5\n")
    grid = ["--nx", "51", "--ny", "21", "--res", "0.1", "--origin=-1,-1"]
    checks = {
        "scenario": runs("scn", "scenario", "drop", "--duration", "0.5"),
        "simulate": runs("sim", "simulate", "--robot", robot, "--map", hm, "--state", src / "state.json",
                         "--goal", "1,0,0", "--forces"),
        "optimize-terrain": runs("opt", "optimize-terrain", "--gt", gt, "--robot", robot, "--iters", "3", *grid),
        "cloud2height": runs("c2h", "cloud2height", src / "cloud.xyz", *grid),
        "eval": runs("ev", "eval", "--gt", gt, "--robot", robot, "--map", f"true={hm}"),
        "gradcheck": runs("gc", "gradcheck", "--seed", "3", "--groups", "u"),
        "plot": runs("pl", "plot", "xy", gt, "--gt", gt, "--out", "xy.svg")
        and runs("pm", "plot", "map", hm, "--out", "m.pgm")
        and runs("plo", "plot", "loss", tmp_path / "r.csv", "--out", "l.svg"),
    }
    rng = np.random.default_rng(10)
    g = GridSpec(9, 7, 0.1 + 1e-16, (-1 / 3, math.pi))
    hmap = HeightMap(g, rng.normal(size=g.shape), rng.uniform(0, 1e4, g.shape), rng.uniform(0, 100, g.shape))
    map_ok = parse_heightmap(format_heightmap(hmap)) == hmap
    tr = parse_trajectory(Path(gt).read_text())
    traj_ok = format_trajectory(parse_trajectory(format_trajectory(tr))) == Path(gt).read_text()
    traj_ok &= all(np.array_equal(a.x, b.x) and np.array_equal(a.v, b.v)
                   for a, b in zip(parse_trajectory(format_trajectory(tr)).states, tr.states))
    ok = all(checks.values()) and map_ok and traj_ok
    bad = [k for k, v in checks.items() if not v]
    verdict(10, "determinism and formats", ok,
            f"{len(checks)} commands byte-identical{' except ' + ', '.join(bad) if bad else ''}, "
            f"heightmap round trip {'exact' if map_ok else 'LOSSY'}, trajectory round trip "
            f"{'exact' if traj_ok else 'LOSSY'}")
