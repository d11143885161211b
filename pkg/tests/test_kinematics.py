"""Kinematics tests: rotation conventions, FK against hand trig, IK recovery,
calibration, and clip post-processing."""

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robomotion import kinematics as K


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=float)


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=float)


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=float)


angles = st.floats(-np.pi, np.pi, allow_nan=False)
safe_pitch = st.floats(-np.pi / 2 + 1e-4, np.pi / 2 - 1e-4, allow_nan=False)


class TestRotations:
    def test_matches_explicit_matrix_product(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            r, p, y = rng.uniform(-np.pi, np.pi, 3)
            want = rot_z(y) @ rot_y(p) @ rot_x(r)
            np.testing.assert_allclose(K.rpy_to_matrix([r, p, y]), want, atol=1e-14)

    @given(angles, safe_pitch, angles)
    @settings(max_examples=80, deadline=None)
    def test_round_trip_away_from_lock(self, r, p, y):
        rpy = np.array([K.wrap_angle(r), p, K.wrap_angle(y)])
        # wrap_angle maps -pi to +pi; compare matrices, then angles
        back = K.matrix_to_rpy(K.rpy_to_matrix(rpy))
        np.testing.assert_allclose(K.rpy_to_matrix(back), K.rpy_to_matrix(rpy), atol=1e-8)
        np.testing.assert_allclose(K.wrap_angle(back - rpy), 0.0, atol=1e-8)

    def test_gimbal_lock_roll_zeroed(self):
        for pitch in (np.pi / 2, -np.pi / 2):
            R = K.rpy_to_matrix([0.4, pitch, 0.9])
            rpy = K.matrix_to_rpy(R)
            assert rpy[0] == 0.0
            np.testing.assert_allclose(rpy[1], pitch, atol=1e-12)
            # yaw absorbs the lost DoF: matrix still reproduced
            np.testing.assert_allclose(K.rpy_to_matrix(rpy), R, atol=1e-6)

    def test_pitch_range_respected(self):
        # a pose built with pitch outside [-pi/2, pi/2] comes back inside it
        R = K.rpy_to_matrix([0.0, 2.5, 0.0])
        rpy = K.matrix_to_rpy(R)
        assert -np.pi / 2 <= rpy[1] <= np.pi / 2
        np.testing.assert_allclose(K.rpy_to_matrix(rpy), R, atol=1e-8)

    def test_non_orthonormal_rejected(self):
        with pytest.raises(ValueError):
            K.matrix_to_rpy(np.eye(3) * 1.01)

    def test_batched_shapes(self):
        rpy = np.zeros((4, 7, 3))
        assert K.rpy_to_matrix(rpy).shape == (4, 7, 3, 3)
        assert K.matrix_to_rpy(np.broadcast_to(np.eye(3), (5, 3, 3)).copy()).shape == (5, 3)

    @given(st.floats(-30, 30, allow_nan=False))
    @settings(max_examples=60, deadline=None)
    def test_wrap_angle_interval(self, a):
        w = K.wrap_angle(a)
        assert -np.pi < w <= np.pi
        np.testing.assert_allclose(np.sin(w), np.sin(a), atol=1e-9)
        np.testing.assert_allclose(np.cos(w), np.cos(a), atol=1e-9)

    def test_wrap_angle_pi_maps_to_pi(self):
        assert K.wrap_angle(np.pi) == np.pi
        assert K.wrap_angle(-np.pi) == np.pi


def two_link_model():
    """Planar 2-link arm hanging along -z, rotating about y."""
    joints = (
        K.JointSpec("shoulder", None, (0.0, 0.0, 0.0), (0.0, 1.0, 0.0), (-3.2, 3.2)),
        K.JointSpec("elbow", 0, (0.0, 0.0, -1.0), (0.0, 1.0, 0.0), (-3.2, 3.2)),
    )
    bindings = (
        K.KeypointBinding("elbow", 0, (0.0, 0.0, -1.0), None),
        K.KeypointBinding("hand", 1, (0.0, 0.0, -0.5), 0),
    )
    m = K.RobotModel(joints, bindings, 2, (True, True), (0.0, 0.0), name="two_link")
    m.validate()
    return m


class TestForwardKinematics:
    def test_two_link_matches_trig(self):
        # rotation about +y by q tilts the -z segment toward -x:
        # elbow = (-l1 sin q1, 0, -l1 cos q1), hand adds the second segment
        # at the summed angle
        m = two_link_model()
        for q1, q2 in [(0.0, 0.0), (0.3, 0.0), (0.0, 0.7), (0.5, -1.1), (-2.0, 1.3)]:
            kf = K.forward_kinematics(m, K.Frame(np.zeros(3), np.zeros(3), np.array([q1, q2])))
            elbow = np.array([-np.sin(q1), 0.0, -np.cos(q1)])
            hand = elbow + 0.5 * np.array([-np.sin(q1 + q2), 0.0, -np.cos(q1 + q2)])
            np.testing.assert_allclose(kf.positions[0], elbow, atol=1e-12)
            np.testing.assert_allclose(kf.positions[1], hand, atol=1e-12)

    def test_root_pose_composes(self):
        m = two_link_model()
        q = np.array([0.4, -0.2])
        base = K.forward_kinematics(m, K.Frame(np.zeros(3), np.zeros(3), q))
        pos = np.array([1.0, 2.0, 3.0])
        rpy = np.array([0.1, -0.3, 0.8])
        moved = K.forward_kinematics(m, K.Frame(pos, rpy, q))
        R = K.rpy_to_matrix(rpy)
        np.testing.assert_allclose(moved.positions, base.positions @ R.T + pos, atol=1e-12)

    def test_keypoint_orientation_is_bound_joint_orientation(self):
        m = two_link_model()
        kf = K.forward_kinematics(m, K.Frame(np.zeros(3), np.zeros(3), np.array([0.6, 0.9])))
        np.testing.assert_allclose(K.rpy_to_matrix(kf.orientations_rpy[1]),
                                   rot_y(1.5), atol=1e-12)

    def test_batched_fk_matches_loop(self):
        m = K.default_model()
        rng = np.random.default_rng(1)
        T = 5
        root_pos = rng.normal(size=(T, 3))
        root_rpy = rng.uniform(-1, 1, size=(T, 3))
        dofs = rng.uniform(-0.5, 0.5, size=(T, m.dof_count))
        pos, rpy = K.fk_keypoints(m, root_pos, root_rpy, dofs)
        for t in range(T):
            kf = K.forward_kinematics(m, K.Frame(root_pos[t], root_rpy[t], dofs[t]))
            np.testing.assert_allclose(pos[t], kf.positions, atol=1e-12)
            np.testing.assert_allclose(rpy[t], kf.orientations_rpy, atol=1e-12)


class TestDefaultModel:
    def test_counts(self):
        m = K.default_model()
        assert m.dof_count == 29
        assert m.keypoint_count == 17
        assert int(m.active_mask.sum()) == 23
        assert K.representation_dim(m) == 137

    def test_standing_pose_grounded(self):
        m = K.default_model()
        f = K.Frame(np.array([0.0, 0.0, K.STANDING_ROOT_HEIGHT]), np.zeros(3), m.tpose)
        z = K.forward_kinematics(m, f).positions[:, 2]
        np.testing.assert_allclose(z.min(), 0.0, atol=1e-12)

    def test_tpose_mirror_symmetry(self):
        m = K.default_model()
        f = K.Frame(np.zeros(3), np.zeros(3), m.tpose)
        kf = K.forward_kinematics(m, f)
        names = [b.name for b in m.keypoint_bindings]
        for ln in (n for n in names if n.startswith("left_")):
            li, ri = names.index(ln), names.index(ln.replace("left_", "right_"))
            l, r = kf.positions[li], kf.positions[ri]
            np.testing.assert_allclose(l * np.array([1.0, -1.0, 1.0]), r, atol=1e-12)

    def test_tpose_within_limits(self):
        m = K.default_model()
        assert (m.tpose >= m.limits_lo).all() and (m.tpose <= m.limits_hi).all()

    def test_validation_catches_bad_parent_order(self):
        good = two_link_model()
        bad = dataclasses.replace(
            good,
            joints=(dataclasses.replace(good.joints[0], parent=1), good.joints[1]),
        )
        with pytest.raises(K.ModelValidationError):
            bad.validate()

    def test_validation_catches_non_unit_axis(self):
        good = two_link_model()
        bad = dataclasses.replace(
            good, joints=(dataclasses.replace(good.joints[0], axis=(0.0, 2.0, 0.0)),
                          good.joints[1]))
        with pytest.raises(K.ModelValidationError):
            bad.validate()


class TestRepresentationRows:
    def test_round_trip(self):
        m = K.default_model()
        rng = np.random.default_rng(2)
        frame = K.Frame(rng.normal(size=3), rng.uniform(-1, 1, 3), rng.uniform(-0.3, 0.3, 29))
        kf = K.forward_kinematics(m, frame)
        row = K.assemble_representation(frame, kf)
        assert row.shape == (137,)
        f2, k2 = K.disassemble_representation(row, m)
        np.testing.assert_array_equal(f2.root_pos, frame.root_pos)
        np.testing.assert_array_equal(f2.root_rpy, frame.root_rpy)
        np.testing.assert_array_equal(f2.dofs, frame.dofs)
        np.testing.assert_array_equal(k2.positions, kf.positions)
        np.testing.assert_array_equal(k2.orientations_rpy, kf.orientations_rpy)

    def test_layout_order(self):
        m = K.default_model()
        frame = K.Frame(np.array([1.0, 2.0, 3.0]), np.array([0.1, 0.2, 0.3]), np.zeros(29))
        kf = K.forward_kinematics(m, frame)
        row = K.assemble_representation(frame, kf)
        np.testing.assert_array_equal(row[:6], [1.0, 2.0, 3.0, 0.1, 0.2, 0.3])
        np.testing.assert_array_equal(row[6 + 29:6 + 29 + 3], kf.positions[0])

    def test_wrong_length_rejected(self):
        with pytest.raises(ValueError):
            K.disassemble_representation(np.zeros(136), K.default_model())


class TestIk:
    def test_targets_from_init_return_init(self):
        m = K.default_model()
        init = K.Frame(np.array([0.0, 0.0, 0.7]), np.zeros(3), m.tpose)
        targets = K.forward_kinematics(m, init).positions
        res = K.retarget_ik(m, targets, init)
        assert res.converged and res.iterations == 0
        np.testing.assert_array_equal(res.frame.dofs, init.dofs)
        np.testing.assert_array_equal(res.frame.root_pos, init.root_pos)

    def test_recovers_reachable_pose(self):
        m = K.default_model()
        rng = np.random.default_rng(3)
        true_dofs = m.tpose.copy()
        act = np.flatnonzero(m.active_mask)
        true_dofs[act] += rng.uniform(-0.4, 0.4, act.size)
        true_dofs = np.clip(true_dofs, m.limits_lo, m.limits_hi)
        goal = K.Frame(np.array([0.1, -0.05, 0.68]), np.array([0.0, 0.05, 0.3]), true_dofs)
        targets = K.forward_kinematics(m, goal).positions
        init = K.Frame(np.array([0.0, 0.0, K.STANDING_ROOT_HEIGHT]), np.zeros(3), m.tpose)
        res = K.retarget_ik(m, targets, init)
        assert res.converged, f"residual {res.mean_error}"
        assert res.mean_error < 1e-4

    def test_unreachable_target_respects_limits(self):
        m = K.default_model()
        init = K.Frame(np.array([0.0, 0.0, 0.7]), np.zeros(3), m.tpose)
        targets = K.forward_kinematics(m, init).positions.copy()
        targets[5] += np.array([2.0, 2.0, 2.0])  # left wrist flung far away
        res = K.retarget_ik(m, targets, init, K.IkConfig(max_iters=40, restarts=0))
        assert not res.converged
        assert res.mean_error > 0
        assert (res.frame.dofs >= m.limits_lo - 1e-12).all()
        assert (res.frame.dofs <= m.limits_hi + 1e-12).all()

    def test_inactive_dofs_stay_fixed(self):
        m = K.default_model()
        init_dofs = m.tpose.copy()
        fixed = ~m.active_mask
        init_dofs[fixed] = 0.123
        init = K.Frame(np.array([0.0, 0.0, 0.7]), np.zeros(3), init_dofs)
        goal = K.Frame(np.array([0.05, 0.0, 0.69]), np.zeros(3), init_dofs + 0.1 * m.active_mask)
        targets = K.forward_kinematics(m, goal).positions
        res = K.retarget_ik(m, targets, init, K.IkConfig(restarts=0))
        np.testing.assert_array_equal(res.frame.dofs[fixed], 0.123)

    def test_deterministic(self):
        m = K.default_model()
        init = K.Frame(np.array([0.0, 0.0, 0.7]), np.zeros(3), m.tpose)
        goal = K.Frame(np.array([0.0, 0.1, 0.66]), np.array([0.1, 0.0, -0.4]), m.tpose * 0.5)
        targets = K.forward_kinematics(m, goal).positions
        a = K.retarget_ik(m, targets, init, K.IkConfig(seed=9))
        b = K.retarget_ik(m, targets, init, K.IkConfig(seed=9))
        np.testing.assert_array_equal(a.frame.dofs, b.frame.dofs)
        assert a.mean_error == b.mean_error

    def test_bad_target_shape_rejected(self):
        m = K.default_model()
        init = K.Frame(np.zeros(3), np.zeros(3), m.tpose)
        with pytest.raises(ValueError):
            K.retarget_ik(m, np.zeros((5, 3)), init)


class TestCalibration:
    def test_self_calibration_is_unity(self):
        m = K.default_model()
        tpose_kp = K.forward_kinematics(m, K.Frame(np.zeros(3), np.zeros(3), m.tpose)).positions
        np.testing.assert_allclose(K.tpose_scale_calibration(m, tpose_kp), 1.0, atol=1e-12)

    def test_double_size_source_halves(self):
        m = K.default_model()
        tpose_kp = K.forward_kinematics(m, K.Frame(np.zeros(3), np.zeros(3), m.tpose)).positions
        scales = K.tpose_scale_calibration(m, tpose_kp * 2.0)
        parented = m.kp_parents >= 0
        np.testing.assert_allclose(scales[parented], 0.5, atol=1e-12)
        np.testing.assert_allclose(scales[~parented], 1.0)

    def test_degenerate_segment_rejected(self):
        m = K.default_model()
        src = np.zeros((17, 3))
        with pytest.raises(ValueError):
            K.tpose_scale_calibration(m, src)

    def test_scale_keypoints_identity(self):
        m = K.default_model()
        rng = np.random.default_rng(4)
        src = rng.normal(size=(6, 17, 3))
        out = K.scale_keypoints(m, np.ones(17), src)
        np.testing.assert_allclose(out, src, atol=1e-12)

    def test_scale_keypoints_preserves_segment_ratio(self):
        m = K.default_model()
        rng = np.random.default_rng(5)
        src = rng.normal(size=(3, 17, 3))
        scales = np.full(17, 0.7)
        out = K.scale_keypoints(m, scales, src)
        for i in range(17):
            par = m.kp_parents[i]
            if par < 0:
                continue
            got = np.linalg.norm(out[:, i] - out[:, par], axis=1)
            want = 0.7 * np.linalg.norm(src[:, i] - src[:, par], axis=1)
            np.testing.assert_allclose(got, want, atol=1e-12)


class TestModelIo:
    def test_yaml_round_trip(self, tmp_path):
        m = K.default_model()
        path = tmp_path / "model.yaml"
        K.save_robot_model(m, path)
        m2 = K.load_robot_model(path)
        assert m2.content_hash() == m.content_hash()
        assert m2 == m

    def test_bad_version(self, tmp_path):
        m = K.default_model()
        doc = m.to_dict()
        doc["format_version"] = 2
        p = tmp_path / "m.yaml"
        import yaml as _yaml
        p.write_text(_yaml.safe_dump(doc))
        with pytest.raises(K.ModelParseError):
            K.load_robot_model(p)

    def test_unknown_parent_joint(self, tmp_path):
        m = K.default_model()
        doc = m.to_dict()
        doc["joints"][3]["parent"] = "no_such_joint"
        p = tmp_path / "m.yaml"
        import yaml as _yaml
        p.write_text(_yaml.safe_dump(doc))
        with pytest.raises(K.ModelParseError):
            K.load_robot_model(p)

    def test_malformed_yaml(self, tmp_path):
        p = tmp_path / "m.yaml"
        p.write_text("joints: [unclosed")
        with pytest.raises(K.ModelParseError):
            K.load_robot_model(p)
