import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from diffterrain.autodiff import (ALL_GROUPS, GradProblem, backward, grad_check, polar_vjp, random_problem,
                                  rollout_with_tape)
from diffterrain.core import RigidState, SimConfig, WaypointControl, project_to_so3
from diffterrain.dynamics import ContactModel, Physics
from diffterrain.integrator import simulate
from diffterrain.scenarios import drop_test, point_robot
from diffterrain.terrain import GridSpec, HeightMap

seeds = st.integers(0, 2**31 - 1)
kinds = st.sampled_from(list(ContactModel))


def final_z_loss(target):
    def loss(S):
        r = S[-1, 2] - target
        up = np.zeros_like(S)
        up[-1, 2] = 2 * r
        return r * r, up
    return loss


def position_loss(target):
    def loss(S):
        r = S[-1, 0:3] - target
        up = np.zeros_like(S)
        up[-1, 0:3] = 2 * r
        return float(r @ r), up
    return loss


def toy_problem():
    """Point mass in free flight far above the terrain, goal under the robot."""
    hm = HeightMap.flat(GridSpec(5, 5, 0.5, (-1.23, -0.97)), -1000.0)
    s0 = RigidState(np.array([0.0, 0.0, 2.0]), np.array([0.0, 0.0, 0.7]), np.eye(3), np.zeros(3))

    def loss(S):
        r = S[:, 2] - 1.0
        up = np.zeros_like(S)
        up[:, 2] = 2 * r
        up[:, 5] = 2 * S[:, 5]
        return float(r @ r + S[:, 5] @ S[:, 5]), up

    return GradProblem(s0, hm, WaypointControl(0.0, 0.0, 0.0), point_robot(), SimConfig(0.01, 0.5, 5),
                       Physics(), loss)


def drop_problem(z0=0.1, xy=(0.013, -0.021)):
    sc = drop_test(z0, 400.0, 10.0, duration=0.5, dt=0.005)
    s0 = sc.s0.replace(x=np.array([xy[0], xy[1], z0]))
    return GradProblem(s0, sc.hmap, WaypointControl.hold(s0), sc.model, sc.config, Physics(),
                       final_z_loss(0.05))


class TestTape:
    @given(seeds, kinds, st.booleans())
    def test_forward_equivalence(self, seed, kind, gyro):
        p = random_problem(seed, kind, gyro)
        ro, tape = rollout_with_tape(p.s0, p.hmap, p.u, p.model, p.config, p.physics)
        ref = simulate(p.s0, p.hmap, p.u, p.model, p.config, p.physics)
        assert ro.trajectory.as_array().tobytes() == ref.trajectory.as_array().tobytes()
        assert ro.trajectory.times == ref.trajectory.times
        assert tape.replay().trajectory.as_array().tobytes() == ref.trajectory.as_array().tobytes()

    def test_free_fall_has_no_events(self):
        p = toy_problem()
        _, grads, tape = p.gradient()
        assert tape.contact_events() == 0
        assert not tape.contact_cells().any()
        assert np.array_equal(grads.h, np.zeros_like(grads.h))

    def test_contact_events_match_recount(self):
        sc = drop_test(0.1, 400.0, 10.0, duration=1.0, dt=0.005)
        ro, tape = rollout_with_tape(sc.s0, sc.hmap, sc.u, sc.model, sc.config)
        # independent counter: flat ground at h = 0, one point at the COM
        z = ro.trajectory.positions()[:-1, 2]
        assert tape.contact_events() == int(np.count_nonzero(z <= 0.0)) > 0

    def test_tape_cap(self):
        sc = drop_test(duration=1.0, dt=1e-3)
        with pytest.raises(MemoryError):
            rollout_with_tape(sc.s0, sc.hmap, sc.u, sc.model, sc.config, max_steps=999)

    def test_tape_length(self):
        p = random_problem(0)
        _, tape = rollout_with_tape(p.s0, p.hmap, p.u, p.model, p.config, p.physics)
        assert len(tape) == p.config.n_steps and len(tape.buffers.G) == p.config.n_steps


class TestBackward:
    def test_upstream_shape_checked(self):
        p = random_problem(1)
        _, tape = rollout_with_tape(p.s0, p.hmap, p.u, p.model, p.config, p.physics)
        with pytest.raises(ValueError, match="shape"):
            backward(tape, np.zeros((tape.n_samples + 1, 18)))

    @given(seeds, kinds)
    @settings(max_examples=20)
    def test_linearity(self, seed, kind):
        p = random_problem(seed, kind)
        _, tape = rollout_with_tape(p.s0, p.hmap, p.u, p.model, p.config, p.physics)
        rng = np.random.default_rng(seed)
        g1, g2 = rng.normal(size=(2, tape.n_samples, 18))
        a, b = rng.normal(size=2)
        lhs = backward(tape, a * g1 + b * g2).flat()
        rhs = (backward(tape, g1).scaled(a) + backward(tape, g2).scaled(b)).flat()
        assert np.max(np.abs(lhs - rhs)) <= 1e-10 * max(1.0, np.max(np.abs(rhs)))

    @given(seeds)
    @settings(max_examples=20)
    def test_h_support_is_contact_cells(self, seed):
        p = random_problem(seed, ContactModel.VERTICAL)
        _, grads, tape = p.gradient()
        assert np.array_equal(grads.h != 0, tape.contact_cells())
        assert np.array_equal(grads.e != 0, tape.contact_cells())

    @given(seeds)
    @settings(max_examples=20)
    def test_normal_support_within_stencil(self, seed):
        p = random_problem(seed, ContactModel.NORMAL)
        _, grads, tape = p.gradient()
        n = len(tape)
        live = tape.buffers.P[:n, :, 12] > 0.5
        rows = tape.buffers.T[:n][live]
        stencil = np.zeros(p.hmap.grid.shape, dtype=bool)
        for di in (0, 1):
            for dj in (0, 1):
                stencil[rows[:, 0].astype(int) + di, rows[:, 1].astype(int) + dj] = True
        assert not np.any((grads.h != 0) & ~stencil)

    @given(seeds)
    def test_polar_vjp_matches_differences(self, seed):
        rng = np.random.default_rng(seed)
        A = np.eye(3) + 0.2 * rng.normal(size=(3, 3))
        assume(np.linalg.det(A) > 0.1)
        G = rng.normal(size=(3, 3))
        analytic = polar_vjp(A, G)
        eps = 1e-6
        numeric = np.zeros((3, 3))
        for i in range(3):
            for j in range(3):
                dA = np.zeros((3, 3))
                dA[i, j] = eps
                numeric[i, j] = (np.sum(G * project_to_so3(A + dA)) - np.sum(G * project_to_so3(A - dA))) / (2 * eps)
        assert np.allclose(analytic, numeric, atol=1e-7)

    def test_sign_under_robot(self):
        # cell (2, 2) is directly under the point; target above the rest height
        sc = drop_test(0.1, 400.0, 10.0, duration=2.0, dt=0.005)
        prob = GradProblem(sc.s0, sc.hmap, sc.u, sc.model, sc.config, Physics(), final_z_loss(0.05))
        _, grads, _ = prob.gradient()
        assert grads.h[2, 2] != 0
        bump = lambda dh: prob.value(hmap=sc.hmap.replace(h=sc.hmap.h + dh * (np.arange(25).reshape(5, 5) == 12)))
        fd_sign = np.sign(bump(1e-4) - bump(-1e-4))
        assert np.sign(grads.h[2, 2]) == fd_sign == -1.0


class TestGradCheck:
    def test_linear_toy(self):
        rep = grad_check(toy_problem(), groups=("s0", "u", "h"))
        assert not rep.skipped and rep.passed
        assert rep.max_rel_error <= 1e-8

    def test_vertical_drop(self):
        prob = drop_problem()
        assert prob.config.n_steps == 100
        rep = grad_check(prob, groups=("h", "e", "d", "masses", "s0", "u"))
        assert not rep.skipped, rep.reason
        assert rep.max_rel_error <= 1e-4
        assert any(abs(en.analytic) > 1e-3 for en in rep.entries if en.name.startswith("h["))

    def test_exact_boundary_is_skipped(self):
        rep = grad_check(drop_problem(z0=0.0))
        assert rep.skipped and "contact" in rep.reason
        assert not rep.passed

    def test_report_table(self):
        rep = grad_check(toy_problem(), groups=("u",))
        lines = rep.table().splitlines()
        assert lines[0].split() == ["parameter", "analytic", "numeric", "rel.error"]
        assert lines[-1].endswith("PASS") and len(lines) == 5

    def test_non_finite_fails_with_location(self):
        prob = drop_problem()
        bad = GradProblem(prob.s0, prob.hmap, prob.u, prob.model, prob.config, prob.physics,
                          lambda S: (float("nan"), np.zeros_like(S)))
        rep = grad_check(bad, groups=("u",))
        assert not rep.passed and rep.failures()[0].name == "u.x_g"

    @given(seeds, kinds, st.booleans())
    @settings(max_examples=10)
    def test_random_instances(self, seed, kind, gyro):
        rep = grad_check(random_problem(seed, kind, gyro), groups=ALL_GROUPS)
        assume(not rep.skipped)
        assert rep.passed, rep.table()
