import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blendretarget.errors import InvalidArgument
from blendretarget.rig import (
    BlendshapeRig, DeltaTarget, HeadPose, PROJECTION_CENTER, ReasonableArray, apply_weights, enforce_reasonable,
    is_reasonable, project_landmarks,
)
from blendretarget import datagen
from oracles import fixpoint_oracle


def dense_oracle(rig, w):
    """Per-vertex loop over sparse deltas, independent of the dense tensor path."""
    mesh = rig.neutral.copy()
    for k, t in enumerate(rig.targets):
        for idx, d in zip(t.indices, t.deltas):
            mesh[idx] = mesh[idx] + w[k] * d
    return mesh


def euler_oracle(pose, p):
    y, x, z = pose.yaw, pose.pitch, pose.roll
    ry = np.array([[np.cos(y), 0, np.sin(y)], [0, 1, 0], [-np.sin(y), 0, np.cos(y)]])
    rx = np.array([[1, 0, 0], [0, np.cos(x), -np.sin(x)], [0, np.sin(x), np.cos(x)]])
    rz = np.array([[np.cos(z), -np.sin(z), 0], [np.sin(z), np.cos(z), 0], [0, 0, 1]])
    out = []
    for v in p:
        c = v - PROJECTION_CENTER
        out.append((rz @ (rx @ (ry @ c)))[:2] + PROJECTION_CENTER[:2])
    return np.array(out)


class TestApplyWeights:
    def test_zero_weights_give_neutral(self, rig):
        assert np.array_equal(apply_weights(rig, np.zeros(rig.K)), rig.neutral)

    def test_unit_vector_adds_full_delta(self, rig):
        k = 5
        w = np.zeros(rig.K)
        w[k] = 1.0
        expected = rig.neutral.copy()
        expected[rig.targets[k].indices] += rig.targets[k].deltas
        np.testing.assert_allclose(apply_weights(rig, w), expected, atol=1e-12)

    def test_pair_matches_dense_oracle(self, rig):
        i, j = 3, 40
        assert rig.reasonable.allowed[i, j]
        w = np.zeros(rig.K)
        w[[i, j]] = 0.5
        np.testing.assert_allclose(apply_weights(rig, w), dense_oracle(rig, w), atol=1e-12)

    def test_dimension_mismatch(self, rig):
        with pytest.raises(InvalidArgument):
            apply_weights(rig, np.zeros(rig.K + 1))

    def test_out_of_range(self, rig):
        w = np.zeros(rig.K)
        w[0] = 1.5
        with pytest.raises(InvalidArgument):
            apply_weights(rig, w)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0, 1), st.floats(0, 1))
    def test_linearity(self, rig, seed, a, b):
        r = np.random.default_rng(seed)
        # halving keeps a*w1 + b*w2 inside [0, 1] for a, b in [0, 1]
        w1, w2 = r.random(rig.K) / 2, r.random(rig.K) / 2
        combo = a * w1 + b * w2
        n = rig.neutral
        lhs = apply_weights(rig, combo) - n
        rhs = a * (apply_weights(rig, w1) - n) + b * (apply_weights(rig, w2) - n)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)

    def test_shared_weights_drive_another_rig(self, rig):
        other = datagen.make_procedural_rig(11)
        assert other.target_names == rig.target_names
        w = np.zeros(rig.K)
        w[[0, 10, 30]] = [0.3, 0.7, 1.0]
        a, b = apply_weights(rig, w), apply_weights(other, w)
        assert a.shape == b.shape and not np.allclose(a, b)


class TestProjection:
    def test_identity_pose_is_canonical_layout(self, rig):
        lm = project_landmarks(rig, rig.neutral, HeadPose())
        np.testing.assert_allclose(lm, rig.neutral[rig.landmark_indices, :2], atol=1e-12)

    def test_roll_180_rotates_about_center(self, rig):
        lm0 = project_landmarks(rig, rig.neutral, HeadPose())
        lm = project_landmarks(rig, rig.neutral, HeadPose(0, 0, np.pi))
        np.testing.assert_allclose(lm, 2 * PROJECTION_CENTER[:2] - lm0, atol=1e-9)

    def test_random_pose_matches_rotation_oracle(self, rig, rng):
        for _ in range(20):
            pose = HeadPose(*rng.uniform(-np.pi, np.pi, 3))
            got = project_landmarks(rig, rig.neutral, pose)
            np.testing.assert_allclose(got, euler_oracle(pose, rig.neutral[rig.landmark_indices]), atol=1e-12)

    def test_frontal_layout_spans_frame(self, rig):
        lm = project_landmarks(rig, rig.neutral, HeadPose())
        assert lm.min() > -5 and lm.max() < 133
        assert np.ptp(lm[:, 0]) > 100

    def test_injective_on_landmarks(self, rig):
        lm = project_landmarks(rig, rig.neutral, HeadPose())
        d = np.linalg.norm(lm[:, None] - lm[None], axis=-1) + np.eye(68) * 1e9
        assert d.min() > 1e-3

    def test_pose_range_checked(self):
        with pytest.raises(InvalidArgument):
            HeadPose(4.0, 0, 0)

    def test_mesh_shape_checked(self, rig):
        with pytest.raises(InvalidArgument):
            project_landmarks(rig, rig.neutral[:10], HeadPose())


class TestReasonable:
    def test_examples(self):
        arr = ReasonableArray.from_disallowed(3, [(0, 1)])
        assert is_reasonable(arr, np.zeros(3))
        assert is_reasonable(arr, np.array([0.0, 0.4, 0.0]))
        assert not is_reasonable(arr, np.array([0.5, 0.4, 0.0]))

    def test_reasonable_unchanged(self):
        arr = ReasonableArray.from_disallowed(3, [(0, 1)])
        w = np.array([0.5, 0.0, 0.9])
        assert np.array_equal(enforce_reasonable(arr, w), w)

    def test_smaller_zeroed(self):
        arr = ReasonableArray.from_disallowed(2, [(0, 1)])
        np.testing.assert_array_equal(enforce_reasonable(arr, np.array([0.8, 0.3])), [0.8, 0.0])
        np.testing.assert_array_equal(enforce_reasonable(arr, np.array([0.3, 0.8])), [0.0, 0.8])

    def test_tie_zeroes_higher_index(self):
        arr = ReasonableArray.from_disallowed(2, [(0, 1)])
        np.testing.assert_array_equal(enforce_reasonable(arr, np.array([0.5, 0.5])), [0.5, 0.0])

    def test_chain_matches_fixpoint(self):
        # 0-1 and 1-2 conflict; zeroing 1 first would save 2
        arr = ReasonableArray.from_disallowed(3, [(0, 1), (1, 2)])
        w = np.array([0.9, 0.5, 0.4])
        out = enforce_reasonable(arr, w)
        np.testing.assert_array_equal(out, fixpoint_oracle(arr, w))
        np.testing.assert_array_equal(out, [0.9, 0.0, 0.4])

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_idempotent_and_only_zeroes(self, seed):
        r = np.random.default_rng(seed)
        K = int(r.integers(2, 12))
        pairs = [(i, j) for i in range(K) for j in range(i + 1, K) if r.random() < 0.3]
        arr = ReasonableArray.from_disallowed(K, pairs)
        w = np.where(r.random(K) < 0.6, r.random(K), 0.0)
        out = enforce_reasonable(arr, w)
        assert is_reasonable(arr, out)
        assert np.array_equal(enforce_reasonable(arr, out), out)
        assert np.all((out == w) | (out == 0))
        np.testing.assert_array_equal(out, fixpoint_oracle(arr, w))

    def test_matrix_invariants(self):
        with pytest.raises(InvalidArgument):
            ReasonableArray(np.array([[True, False], [True, True]]))
        with pytest.raises(InvalidArgument):
            ReasonableArray(np.array([[False, True], [True, True]]))


class TestRigBundle:
    def test_round_trip(self, small_rig, tmp_path):
        p = tmp_path / "rig.json"
        small_rig.save(p)
        back = BlendshapeRig.load(p)
        assert back.target_names == small_rig.target_names
        np.testing.assert_array_equal(back.neutral, small_rig.neutral)
        np.testing.assert_array_equal(back.dense_deltas, small_rig.dense_deltas)
        assert back.reasonable == small_rig.reasonable
        assert back.group_spec.to_dict() == small_rig.group_spec.to_dict()
        back.save(tmp_path / "again.json")
        assert (tmp_path / "again.json").read_bytes() == p.read_bytes()

    def test_invariants_checked(self, small_rig):
        targets = list(small_rig.targets)
        targets[0] = DeltaTarget(targets[0].name, np.array([0, 10**6]), np.zeros((2, 3)))
        with pytest.raises(InvalidArgument):
            BlendshapeRig("r", small_rig.neutral, targets, small_rig.landmark_indices, small_rig.reasonable,
                          small_rig.group_spec)
        with pytest.raises(InvalidArgument):
            DeltaTarget("x", np.array([1, 1]), np.zeros((2, 3)))
        dup = small_rig.landmark_indices.copy()
        dup[1] = dup[0]
        with pytest.raises(InvalidArgument):
            BlendshapeRig("r", small_rig.neutral, small_rig.targets, dup, small_rig.reasonable, small_rig.group_spec)
