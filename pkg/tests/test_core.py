import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from diffterrain.core import (RigidState, RobotModel, SimConfig, Trajectory, WaypointControl,
                              exp_so3, heading_of, log_so3, project_to_so3, quaternion_to_rotation,
                              rotation_to_quaternion, rotx, rotz, skew, state_from_json,
                              state_to_json, wrap_angle)

from conftest import random_rotation

finite = st.floats(-1e6, 1e6, allow_nan=False)


class TestHeading:
    def test_identity(self):
        assert heading_of(RigidState.at_rest()) == 0.0

    def test_quarter_turn(self):
        assert heading_of(RigidState.at_rest(R=rotz(math.pi / 2))) == pytest.approx(math.pi / 2, abs=1e-15)

    def test_negative_two(self):
        assert abs(heading_of(RigidState.at_rest(R=rotz(-2.0))) + 2.0) <= 1e-12

    def test_random_yaws_match_wrap(self):
        rng = np.random.default_rng(7)
        for theta in rng.uniform(-10, 10, 100):
            got = heading_of(RigidState.at_rest(R=rotz(theta)))
            # compare on the circle so values straddling +-pi agree
            assert abs(wrap_angle(got - wrap_angle(theta))) <= 1e-12


class TestWrap:
    def test_examples(self):
        assert wrap_angle(0.0) == 0.0
        assert wrap_angle(3 * math.pi) == pytest.approx(math.pi, abs=1e-12)
        assert wrap_angle(-3.5 * math.pi) == pytest.approx(math.pi / 2, abs=1e-12)

    def test_range_boundaries(self):
        assert wrap_angle(math.pi) == math.pi
        assert wrap_angle(-math.pi) == pytest.approx(math.pi)

    @given(finite)
    def test_idempotent_and_congruent(self, a):
        w = wrap_angle(a)
        assert wrap_angle(w) == w
        assert -math.pi < w <= math.pi
        k = (a - w) / (2 * math.pi)
        assert abs(k - round(k)) < 1e-6


class TestRotations:
    @given(st.integers(0, 2**32 - 1))
    def test_quaternion_round_trip(self, seed):
        R = random_rotation(np.random.default_rng(seed))
        q = rotation_to_quaternion(R)
        assert q[0] >= 0
        assert np.allclose(quaternion_to_rotation(q), R, atol=1e-12)

    @given(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
    def test_exp_log(self, w):
        w = np.array(w)
        R = exp_so3(w)
        assert np.linalg.norm(R.T @ R - np.eye(3)) < 1e-12
        if np.linalg.norm(w) < 3.0:
            assert np.allclose(log_so3(R), w, atol=1e-8)

    def test_projection_fixes_rotations(self):
        R = rotx(0.4) @ rotz(1.1)
        assert np.allclose(project_to_so3(R), R, atol=1e-14)
        A = R + 1e-3 * np.arange(9).reshape(3, 3)
        P = project_to_so3(A)
        assert np.linalg.norm(P.T @ P - np.eye(3)) < 1e-12 and np.linalg.det(P) > 0

    def test_skew_is_cross(self):
        a, b = np.array([1.0, -2.0, 0.5]), np.array([0.3, 0.7, -1.0])
        assert np.allclose(skew(a) @ b, np.cross(a, b))


class TestRobotModel:
    def _model(self, **kw):
        base = dict(points=[[0.1, 0, 0], [-0.1, 0, 0]], masses=[1.0, 2.0], inertia=np.eye(3))
        base.update(kw)
        return RobotModel(**base)

    def test_total_mass_derived(self):
        assert self._model().total_mass == 3.0

    @pytest.mark.parametrize("kw", [
        dict(masses=[1.0]),
        dict(masses=[1.0, -1.0]),
        dict(inertia=np.diag([1.0, 1.0, -1.0])),
        dict(inertia=np.array([[1, 0.5, 0], [0, 1, 0], [0, 0, 1.0]])),
        dict(points=[[0, 0], [1, 1]]),
        dict(k_v=0.0),
        dict(v_max=-1.0),
        dict(omega_max=0.0),
    ])
    def test_rejects_invalid(self, kw):
        with pytest.raises(ValueError):
            self._model(**kw)

    def test_json_round_trip(self):
        m = self._model(k_v=2.0, v_max=0.7, gravity=3.7)
        back = RobotModel.from_json(m.to_json())
        assert back.to_json() == m.to_json()

    def test_immutable(self):
        m = self._model()
        with pytest.raises(ValueError):
            m.points[0, 0] = 5.0


class TestRigidState:
    def test_rejects_non_rotation(self):
        with pytest.raises(ValueError):
            RigidState(np.zeros(3), np.zeros(3), 2 * np.eye(3), np.zeros(3))
        with pytest.raises(ValueError):
            RigidState(np.zeros(3), np.zeros(3), np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            RigidState(np.zeros(2), np.zeros(3), np.eye(3), np.zeros(3))

    def test_vector_round_trip(self):
        s = RigidState(np.array([1.0, 2, 3]), np.array([0.1, 0, 0]), rotz(0.3), np.array([0, 0, 1.0]))
        assert RigidState.from_vector(s.as_vector()) == s

    def test_json_round_trip(self):
        s = RigidState(np.array([1.0, 2, 3]), np.array([0.1, 0, 0]), rotz(0.3), np.array([0, 0, 1.0]))
        assert state_from_json(state_to_json(s)) == s


class TestWaypoint:
    def test_heading_wrapped(self):
        assert WaypointControl(0, 0, 3 * math.pi).phi_g == pytest.approx(math.pi)

    def test_non_finite(self):
        with pytest.raises(ValueError):
            WaypointControl(float("nan"), 0, 0)

    def test_hold_copies_pose(self):
        s = RigidState.at_rest((1.0, -2.0, 0.5), yaw=0.7)
        u = WaypointControl.hold(s)
        assert (u.x_g, u.y_g) == (1.0, -2.0) and u.phi_g == pytest.approx(0.7, abs=1e-15)


class TestTrajectoryAndConfig:
    def test_requires_increasing_times(self):
        s = RigidState.at_rest()
        with pytest.raises(ValueError):
            Trajectory((0.0, 0.0), (s, s))
        with pytest.raises(ValueError):
            Trajectory((), ())

    def test_n_steps_tolerates_float_noise(self):
        assert SimConfig(0.01, 1.0).n_steps == 100
        assert SimConfig(1e-3, 5.0).n_steps == 5000

    @pytest.mark.parametrize("kw", [dict(dt=0.0), dict(dt=0.1, duration=0.05), dict(record_stride=0)])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            SimConfig(**kw)
