"""Command-line entry point.

Exit codes: 0 success, 2 input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import ALL_GROUPS, grad_check, random_problem
from .core import (RigidState, SimConfig, WaypointControl, load_robot, load_state, save_robot,
                   save_state)
from .dynamics import ContactModel, Physics
from .integrator import SimulationError, format_trajectory, load_trajectory, save_trajectory, simulate
from .metrics import compare_encoders, format_table
from .optim import OptimConfig, OptimizationError, flat_initial_map, optimize_terrain
from .plotting import heightmap_pgm, loss_svg, xy_svg, z_svg
from .scenarios import SCENARIOS, build, synthetic_cloud
from .terrain import (GridSpec, cloud_to_heightmap, format_heightmap, load_heightmap, read_cloud,
                      save_heightmap, write_cloud)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class InputError(Exception):
    """Unreadable or malformed input; maps to exit code 2."""


class NumericalError(Exception):
    """Simulation, optimization or gradient-check failure; maps to exit code 3."""


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict = field(default_factory=dict)    # path -> sha256
    outputs: dict = field(default_factory=dict)   # path -> sha256
    duration_s: float = 0.0
    version: str = __version__


def sha256_of(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_atomic(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Run:
    """Collects inputs/outputs of one command and writes its manifest."""

    def __init__(self, args):
        self.args = args
        self.out_dir = Path(args.out_dir)
        self.inputs: dict[str, str] = {}
        self.outputs: list[Path] = []
        self.t0 = time.monotonic()

    def read(self, path, loader):
        p = Path(path)
        if not p.is_file():
            raise InputError(f"{p}: no such file")
        try:
            value = loader(p)
        except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
            msg = str(exc)
            raise InputError(msg if str(p) in msg else f"{p}: {msg}") from exc
        self.inputs[str(p)] = sha256_of(p)
        return value

    def out(self, name) -> Path:
        p = Path(name)
        p = p if p.is_absolute() else self.out_dir / p
        p.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(p)
        return p

    def write_text(self, name, text: str) -> Path:
        p = self.out(name)
        write_atomic(p, text.encode())
        return p

    def write_bytes(self, name, data: bytes) -> Path:
        p = self.out(name)
        write_atomic(p, data)
        return p

    def finish(self) -> None:
        cfg = {k: v for k, v in vars(self.args).items() if k != "func"}
        man = RunManifest(self.args.command, cfg, self.inputs,
                          {str(p): sha256_of(p) for p in self.outputs},
                          round(time.monotonic() - self.t0, 6))
        write_atomic(self.out_dir / "manifest.json",
                     (json.dumps(asdict(man), indent=2, sort_keys=True, default=str) + "\n").encode())


def _floats(text: str, n: tuple[int, ...], what: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise InputError(f"{what}: expected comma-separated numbers, got {text!r}") from None
    if len(vals) not in n or not all(np.isfinite(vals)):
        raise InputError(f"{what}: expected {' or '.join(map(str, n))} finite numbers, got {text!r}")
    return vals


def _physics(args) -> Physics:
    return Physics(ContactModel.parse(args.contact), args.gyroscopic, args.clamp_contact)


def _grid(args) -> GridSpec:
    if args.nx is None or args.ny is None or args.res is None:
        raise InputError("grid needs --nx, --ny and --res")
    ox, oy = _floats(args.origin, (2,), "--origin")
    try:
        return GridSpec(args.nx, args.ny, args.res, (ox, oy))
    except ValueError as exc:
        raise InputError(str(exc)) from None


# --------------------------------------------------------------------------
# commands

def cmd_simulate(args, run: Run) -> None:
    model = run.read(args.robot, load_robot)
    hmap = run.read(args.map, load_heightmap)
    if args.state:
        s0 = run.read(args.state, load_state)
    else:
        vals = _floats(args.start, (3, 4), "--start")
        s0 = RigidState.at_rest(vals[:3], yaw=vals[3] if len(vals) == 4 else 0.0)
    u = WaypointControl(*_floats(args.goal, (3,), "--goal")) if args.goal else WaypointControl.hold(s0)
    try:
        cfg = SimConfig(args.dt, args.duration, args.stride)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    try:
        ro = simulate(s0, hmap, u, model, cfg, _physics(args), keep_forces=args.forces is not None)
    except SimulationError as exc:
        raise NumericalError(f"simulation failed at {exc}") from exc
    run.write_text(args.out, format_trajectory(ro.trajectory))
    if args.forces is not None:
        lines = ["t,point,fx,fy,fz,contact"]
        for k, fs in enumerate(ro.forces):
            t = k * cfg.record_stride * cfg.dt
            for i, (f, c) in enumerate(zip(fs.forces, fs.contact)):
                lines.append(f"{t:.17g},{i},{f[0]:.17g},{f[1]:.17g},{f[2]:.17g},{int(c)}")
        run.write_text(args.forces, "\n".join(lines) + "\n")


def cmd_optimize(args, run: Run) -> None:
    gt = run.read(args.gt, load_trajectory)
    model = run.read(args.robot, load_robot)
    if args.init == "flat":
        init = flat_initial_map(gt, model, _grid(args))
    elif args.init.startswith("file:"):
        init = run.read(args.init[5:], load_heightmap)
    else:
        raise InputError(f"--init must be 'flat' or 'file:<map.csv>', got {args.init!r}")
    try:
        cfg = OptimConfig(lr=args.lr, iterations=args.iters, optimizer=args.optimizer,
                          channels=tuple(args.channels), chunk_duration=args.chunk, dt=args.dt)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    try:
        rep = optimize_terrain(gt, init, model, cfg, _physics(args))
    except (OptimizationError, SimulationError) as exc:
        raise NumericalError(str(exc)) from exc
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    run.write_text(args.out, format_heightmap(rep.terrain))
    report = ["iter,loss"] + [f"{i},{v:.17g}" for i, v in enumerate(rep.loss_curve)]
    run.write_text(args.report, "\n".join(report) + "\n")
    print(f"loss {rep.loss_curve[0]:.6g} -> {rep.loss_curve[-1]:.6g} after {rep.iterations} iterations")


def cmd_cloud2height(args, run: Run) -> None:
    pts = run.read(args.cloud, read_cloud)
    grid = _grid(args)
    try:
        hmap = cloud_to_heightmap(pts, grid, args.elasticity, args.damping)
    except ValueError as exc:
        raise InputError(f"{args.cloud}: {exc}") from None
    run.write_text(args.out, format_heightmap(hmap))


def cmd_eval(args, run: Run) -> None:
    model = run.read(args.robot, load_robot)
    gts = [run.read(p, load_trajectory) for p in args.gt]
    sources = []
    for spec in args.map:
        name, sep, path = spec.partition("=")
        if not sep:
            name, path = Path(spec).stem, spec
        sources.append((name, run.read(path, load_heightmap)))
    try:
        rows = compare_encoders(gts, sources, model, args.dt, _physics(args), args.chunk)
    except SimulationError as exc:
        raise NumericalError(str(exc)) from exc
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    table = format_table(rows)
    run.write_text(args.out, table)
    sys.stdout.write(table)


def cmd_gradcheck(args, run: Run) -> None:
    groups = tuple(args.groups) if args.groups else ALL_GROUPS
    prob = random_problem(args.seed, ContactModel.parse(args.contact), args.gyroscopic,
                          duration=args.duration, dt=args.dt)
    try:
        rep = grad_check(prob, eps=args.eps, tolerance=args.tol, groups=groups)
    except SimulationError as exc:
        raise NumericalError(str(exc)) from exc
    text = rep.table() + "\n"
    run.write_text(args.out, text)
    sys.stdout.write(text)
    if not rep.passed:
        raise NumericalError("gradient check skipped: " + rep.reason if rep.skipped
                             else f"gradient check failed for {len(rep.failures())} parameter(s)")


def cmd_plot(args, run: Run) -> None:
    if args.kind == "loss":
        def load_report(p):
            rows = Path(p).read_text().split()
            if not rows or rows[0] != "iter,loss":
                raise ValueError(f"{p}:1: expected header 'iter,loss'")
            its, vals = [], []
            for ln, row in enumerate(rows[1:], start=2):
                try:
                    a, b = row.split(",")
                    its.append(int(a))
                    vals.append(float(b))
                except ValueError:
                    raise ValueError(f"{p}:{ln}: malformed row {row!r}") from None
            if not vals:
                raise ValueError(f"{p}: no rows")
            return its, vals
        its, vals = run.read(args.input, load_report)
        run.write_text(args.out, loss_svg(vals, its))
    elif args.kind in ("xy", "z"):
        pred = run.read(args.input, load_trajectory)
        gt = run.read(args.gt, load_trajectory) if args.gt else None
        run.write_text(args.out, (xy_svg if args.kind == "xy" else z_svg)(pred, gt))
    else:
        hmap = run.read(args.input, load_heightmap)
        run.write_bytes(args.out, heightmap_pgm(hmap, args.channel))


def cmd_scenario(args, run: Run) -> None:
    kw = {"duration": args.duration}
    if args.name in ("free-fall", "drop"):
        kw["dt"] = args.dt if args.dt_given else 1e-3
    else:
        kw["dt"] = args.dt
    if args.name in ("ramp", "bump"):
        kw["physics"] = _physics(args)
    sc = build(args.name, **kw)
    save_robot(sc.model, run.out("robot.json"))
    save_heightmap(sc.hmap, run.out("map.csv"))
    save_state(sc.s0, run.out("state.json"))
    meta = {"name": sc.name, "goal": [sc.u.x_g, sc.u.y_g, sc.u.phi_g], "dt": sc.config.dt,
            "duration": sc.config.duration, "contact": sc.physics.contact.value}
    run.write_text("scenario.json", json.dumps(meta, indent=2) + "\n")
    try:
        ro = sc.run()
    except SimulationError as exc:
        raise NumericalError(str(exc)) from exc
    save_trajectory(ro.trajectory, run.out("trajectory.csv"))
    if args.name in ("ramp", "bump"):
        write_cloud(synthetic_cloud(sc.hmap, noise=args.noise, seed=args.seed), run.out("cloud.xyz"))


# --------------------------------------------------------------------------
# parser

def _common(p: argparse.ArgumentParser, duration: float = 1.0) -> None:
    p.add_argument("--dt", type=float, default=None, help="integration step [s] (default 0.01)")
    p.add_argument("--duration", type=float, default=duration, help="simulated time [s]")
    p.add_argument("--contact", choices=[c.value for c in ContactModel], default="vertical")
    p.add_argument("--gyroscopic", action="store_true", help="add the omega x J omega torque")
    p.add_argument("--clamp-contact", action="store_true", help="forbid pulling contact forces")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".")


def _grid_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--nx", type=int)
    p.add_argument("--ny", type=int)
    p.add_argument("--res", type=float)
    p.add_argument("--origin", default="0,0", help="x0,y0 of cell (0,0)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="diffterrain", description="Differentiable rigid-body/terrain engine")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="roll out a trajectory")
    _common(p)
    p.add_argument("--robot", required=True)
    p.add_argument("--map", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--state", help="initial state JSON")
    g.add_argument("--start", default="0,0,0", help="x,y,z[,yaw] at rest")
    p.add_argument("--goal", help="x_g,y_g,phi_g (default: hold the start pose)")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--out", default="trajectory.csv")
    p.add_argument("--forces", nargs="?", const="forces.csv", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("optimize-terrain", help="fit terrain to a ground-truth trajectory")
    _common(p)
    _grid_flags(p)
    p.add_argument("--gt", required=True)
    p.add_argument("--robot", required=True)
    p.add_argument("--init", default="flat", help="flat | file:<map.csv>")
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.02)
    p.add_argument("--optimizer", choices=["adam", "gd"], default="adam")
    p.add_argument("--channels", default="hed", help="subset of 'hed' to optimize")
    p.add_argument("--chunk", type=float, default=1.0, help="chunk duration [s]")
    p.add_argument("--out", default="map.csv")
    p.add_argument("--report", default="report.csv")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("cloud2height", help="grid a point cloud into a heightmap")
    _common(p)
    _grid_flags(p)
    p.add_argument("cloud")
    p.add_argument("--elasticity", type=float, default=1000.0)
    p.add_argument("--damping", type=float, default=50.0)
    p.add_argument("--out", default="map.csv")
    p.set_defaults(func=cmd_cloud2height)

    p = sub.add_parser("eval", help="tracking errors per terrain source")
    _common(p)
    p.add_argument("--gt", required=True, action="append")
    p.add_argument("--robot", required=True)
    p.add_argument("--map", action="append", default=[], help="name=map.csv (repeatable)")
    p.add_argument("--chunk", type=float, default=1.0)
    p.add_argument("--out", default="eval.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check on a seeded random instance")
    _common(p, duration=0.4)
    p.add_argument("--groups", nargs="*", choices=ALL_GROUPS)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out", default="gradcheck.txt")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("plot", help="SVG line plots and PGM heightmaps")
    _common(p)
    p.add_argument("kind", choices=["loss", "xy", "z", "map"])
    p.add_argument("input")
    p.add_argument("--gt")
    p.add_argument("--channel", choices=["h", "e", "d"], default="h")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("scenario", help="write a built-in synthetic scenario")
    _common(p, duration=5.0)
    p.add_argument("name", choices=sorted(SCENARIOS))
    p.add_argument("--noise", type=float, default=0.01, help="cloud noise std [m]")
    p.set_defaults(func=cmd_scenario)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    args.dt_given = args.dt is not None
    if args.dt is None:
        args.dt = 0.01
    run = Run(args)
    try:
        args.func(args, run)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    run.finish()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
