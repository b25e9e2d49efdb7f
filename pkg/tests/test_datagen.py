import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blendretarget import datagen
from blendretarget.align import align_to_template
from blendretarget.errors import InvalidArgument
from blendretarget.rig import HeadPose, ReasonableArray, apply_weights, is_reasonable, project_landmarks


def check_sample(s, arr, K):
    """Independent constraint checker for one sample."""
    w = s.weights
    active = np.flatnonzero(w > 0)
    assert w.shape == (K,)
    assert np.all((w == 0) | ((w > 0) & (w <= 1)))
    assert len(active) <= 5
    for a in active:
        for b in active:
            assert arr.allowed[a, b]


class TestSampleExpression:
    def test_constraints_hold(self, rig):
        r = np.random.default_rng(0)
        for _ in range(10000):
            w = datagen.sample_expression(r, rig.reasonable, rig.K)
            active = np.flatnonzero(w > 0)
            assert 1 <= len(active) <= 5
            assert w[active].max() <= 1 and w[active].min() > 0
            assert all(rig.reasonable.allowed[a, b] for a in active for b in active)

    def test_max_active_one(self, rig):
        r = np.random.default_rng(1)
        for _ in range(500):
            assert (datagen.sample_expression(r, rig.reasonable, rig.K, max_active=1) > 0).sum() == 1

    def test_histogram_covers_all_counts(self):
        arr = ReasonableArray.all_allowed(20)
        r = np.random.default_rng(2)
        counts = np.bincount([int((datagen.sample_expression(r, arr, 20) > 0).sum()) for _ in range(10000)],
                             minlength=6)
        assert counts[0] == 0 and (counts[1:] > 0).all()

    def test_no_starvation(self, rig):
        arr = ReasonableArray.all_allowed(rig.K)
        r = np.random.default_rng(3)
        hits = sum((datagen.sample_expression(r, arr, rig.K) > 0).astype(int) for _ in range(10000))
        assert hits.min() >= 0.005 * 10000

    def test_bad_args(self, rig):
        r = np.random.default_rng(0)
        with pytest.raises(InvalidArgument):
            datagen.sample_expression(r, rig.reasonable, rig.K, max_active=0)
        with pytest.raises(InvalidArgument):
            datagen.sample_expression(r, rig.reasonable, rig.K + 1)


class TestSamplePose:
    def test_single(self):
        d = datagen.PoseDistribution((HeadPose(0.1, 0.2, 0.3),))
        r = np.random.default_rng(0)
        assert all(datagen.sample_pose(r, d) == HeadPose(0.1, 0.2, 0.3) for _ in range(20))

    def test_two_element_frequencies(self):
        a, b = HeadPose(0.1, 0, 0), HeadPose(-0.1, 0, 0)
        d = datagen.PoseDistribution((a, b))
        r = np.random.default_rng(4)
        draws = [datagen.sample_pose(r, d) for _ in range(10000)]
        frac = sum(p == a for p in draws) / len(draws)
        assert 0.48 <= frac <= 0.52

    def test_membership(self, poses):
        r = np.random.default_rng(5)
        members = set(poses.poses)
        assert all(datagen.sample_pose(r, poses) in members for _ in range(200))

    def test_empty(self):
        with pytest.raises(InvalidArgument):
            datagen.PoseDistribution(())

    def test_default_distribution_clipped(self, poses):
        arr = np.array([p.as_list() for p in poses.poses])
        assert len(arr) == 2000
        assert (np.abs(arr) <= 3 * np.array([0.3, 0.2, 0.1]) + 1e-12).all()
        np.testing.assert_allclose(arr.std(axis=0), [0.3, 0.2, 0.1], rtol=0.1)


class TestSynthSample:
    def test_neutral_frontal_is_aligned_layout(self, rig, tmpl, poses):
        s = datagen.synth_sample(rig, tmpl, rig.reasonable, poses, np.random.default_rng(0),
                                 weights=np.zeros(rig.K), pose=HeadPose())
        expected, _ = align_to_template(project_landmarks(rig, rig.neutral, HeadPose()), tmpl)
        np.testing.assert_allclose(s.landmarks, expected, atol=1e-12)
        np.testing.assert_allclose(s.landmarks, tmpl.points, atol=1e-9)

    def test_bounds(self, dataset):
        X, _ = datagen.stack(dataset)
        assert X.min() >= -32 and X.max() <= 160

    def test_deterministic(self, rig, tmpl, poses):
        a = datagen.synth_sample(rig, tmpl, rig.reasonable, poses, datagen.sample_rng(9, 3))
        b = datagen.synth_sample(rig, tmpl, rig.reasonable, poses, datagen.sample_rng(9, 3))
        assert a.to_json() == b.to_json()

    def test_pipeline_composition(self, rig, tmpl, poses):
        s = datagen.synth_sample(rig, tmpl, rig.reasonable, poses, np.random.default_rng(8))
        raw = project_landmarks(rig, apply_weights(rig, s.weights), s.pose)
        np.testing.assert_allclose(s.landmarks, align_to_template(raw, tmpl)[0], atol=1e-12)


class TestGenerateDataset:
    def test_count_zero_rejected(self):
        with pytest.raises(InvalidArgument):
            datagen.GenConfig(count=0)

    def test_every_sample_valid(self, rig, dataset):
        assert len(dataset) == 1200
        for s in dataset:
            check_sample(s, rig.reasonable, rig.K)

    def test_neutral_fraction(self, dataset):
        neutral = sum(not (s.weights > 0).any() for s in dataset)
        assert 0.02 * len(dataset) < neutral < 0.09 * len(dataset)

    def test_determinism_and_resumability(self, rig, tmpl, poses, dataset):
        cfg = datagen.GenConfig(count=1200, seed=7)
        again = datagen.generate_dataset(rig, tmpl, rig.reasonable, poses, cfg, start=0, stop=100)
        tail = datagen.generate_dataset(rig, tmpl, rig.reasonable, poses, cfg, start=1150)
        assert [s.to_json() for s in again] == [s.to_json() for s in dataset[:100]]
        assert [s.to_json() for s in tail] == [s.to_json() for s in dataset[1150:]]

    def test_audit(self, rig, dataset):
        audit = datagen.audit_samples(dataset, rig.reasonable)
        assert audit["violations"] == 0 and audit["count"] == len(dataset)
        assert sum(audit["active_histogram"].values()) == len(dataset)

    def test_audit_flags_violations(self, rig, dataset):
        i, j = rig.reasonable.disallowed_pairs()[0]
        w = np.zeros(rig.K)
        w[[i, j]] = 0.5
        bad = datagen.Sample(dataset[0].landmarks, w, HeadPose())
        assert not is_reasonable(rig.reasonable, w)
        assert datagen.audit_samples([bad], rig.reasonable)["violations"] == 1

    def test_file_round_trip(self, dataset, tmp_path):
        p = tmp_path / "d.jsonl"
        datagen.save_dataset(dataset[:50], p)
        back = datagen.load_dataset(p)
        assert len(p.read_text().splitlines()) == 50
        assert datagen.dataset_hash(back) == datagen.dataset_hash(dataset[:50])
        np.testing.assert_array_equal(back[3].landmarks, dataset[3].landmarks)


class TestProceduralRig:
    def test_deterministic(self, tmp_path):
        datagen.make_procedural_rig(5, V=800).save(tmp_path / "a.json")
        datagen.make_procedural_rig(5, V=800).save(tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_shape_and_names(self, rig):
        assert rig.K == 62 and rig.vertex_count == 2000
        prefixes = {n.split("_")[0] for n in rig.target_names}
        assert prefixes == {"brow", "eye", "nose", "mouth", "viseme"}

    def test_every_target_moves_a_landmark(self, rig):
        base = project_landmarks(rig, rig.neutral, HeadPose())
        for k in range(rig.K):
            w = np.zeros(rig.K)
            w[k] = 1.0
            moved = project_landmarks(rig, apply_weights(rig, w), HeadPose())
            assert np.linalg.norm(moved - base, axis=1).max() > 0.5, rig.target_names[k]

    def test_landmark_indices(self, rig):
        idx = rig.landmark_indices
        assert len(set(idx.tolist())) == 68 and idx.max() < rig.vertex_count

    @settings(max_examples=5, deadline=None)
    @given(st.integers(0, 1000), st.integers(8, 70))
    def test_any_k(self, seed, K):
        r = datagen.make_procedural_rig(seed, V=500, K=K)
        assert r.K == K and len(set(r.target_names)) == K

    def test_minimums(self):
        with pytest.raises(InvalidArgument):
            datagen.make_procedural_rig(0, V=400)
        with pytest.raises(InvalidArgument):
            datagen.make_procedural_rig(0, K=7)
