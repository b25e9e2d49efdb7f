import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from blendretarget.align import (
    AlignmentTemplate, SimilarityTransform, align_to_template, apply_similarity, estimate_similarity,
)
from blendretarget.errors import DegenerateInput, InvalidArgument


def residual(T, src, dst):
    return float(((apply_similarity(T, src) - dst) ** 2).sum())


def random_similarity(r, s_lo=0.1, s_hi=10.0):
    return SimilarityTransform.from_angle(np.exp(r.uniform(np.log(s_lo), np.log(s_hi))),
                                          r.uniform(-np.pi, np.pi), r.uniform(-200, 200, 2))


class TestEstimate:
    def test_identity(self, rng):
        src = rng.uniform(0, 128, (68, 2))
        T = estimate_similarity(src, src)
        assert abs(T.s - 1) < 1e-9
        np.testing.assert_allclose(T.R, np.eye(2), atol=1e-9)
        np.testing.assert_allclose(T.t, 0, atol=1e-9)

    def test_recovers_known_transform(self, rng):
        src = rng.uniform(0, 128, (68, 2))
        true = SimilarityTransform.from_angle(2.0, np.deg2rad(30), [3.0, -1.0])
        T = estimate_similarity(src, apply_similarity(true, src))
        assert abs(T.s - 2.0) < 1e-9
        assert abs(T.angle - np.deg2rad(30)) < 1e-9
        np.testing.assert_allclose(T.t, [3.0, -1.0], atol=1e-9)

    def test_noisy_fit_beats_numerical_optimum(self, rng):
        src = rng.uniform(0, 128, (68, 2))
        dst = apply_similarity(SimilarityTransform.from_angle(0.7, 1.1, [10, 20]), src) + rng.normal(0, 2, (68, 2))
        T = estimate_similarity(src, dst)

        def f(p):
            return residual(SimilarityTransform.from_angle(np.exp(p[0]), p[1], p[2:]), src, dst)

        best = np.inf
        for log_s in np.linspace(-2, 2, 5):
            for theta in np.linspace(-np.pi, np.pi, 9):
                res = minimize(f, [log_s, theta, 0.0, 0.0], method="BFGS")
                best = min(best, res.fun)
        assert residual(T, src, dst) <= best + 1e-6

    def test_no_reflection(self, rng):
        src = rng.uniform(0, 128, (68, 2))
        mirrored = src * np.array([-1.0, 1.0])
        T = estimate_similarity(src, mirrored)
        assert abs(np.linalg.det(T.R) - 1) < 1e-9
        np.testing.assert_allclose(T.R.T @ T.R, np.eye(2), atol=1e-9)
        assert T.s > 0

    def test_local_minimum(self, rng):
        src = rng.uniform(0, 128, (68, 2))
        dst = src @ np.array([[0.9, 0.2], [-0.1, 1.1]]) + rng.normal(0, 1, (68, 2))
        T = estimate_similarity(src, dst)
        base = residual(T, src, dst)
        for i in range(4):
            for d in (1e-3, -1e-3):
                p = np.array([T.s, T.angle, *T.t])
                p[i] += d
                assert residual(SimilarityTransform.from_angle(p[0], p[1], p[2:]), src, dst) >= base

    def test_degenerate(self):
        with pytest.raises(DegenerateInput):
            estimate_similarity(np.ones((68, 2)), np.zeros((68, 2)))

    def test_bad_shapes(self):
        with pytest.raises(InvalidArgument):
            estimate_similarity(np.zeros((68, 3)), np.zeros((68, 3)))
        with pytest.raises(InvalidArgument):
            estimate_similarity(np.full((68, 2), np.nan), np.zeros((68, 2)))

    def test_subset_ignores_other_points(self, rng):
        src = rng.uniform(0, 128, (68, 2))
        true = SimilarityTransform.from_angle(1.5, 0.3, [1, 2])
        dst = apply_similarity(true, src)
        dst[:17] += 50.0
        T = estimate_similarity(src, dst, subset=np.arange(17, 68))
        assert abs(T.s - 1.5) < 1e-9 and abs(T.angle - 0.3) < 1e-9


class TestApply:
    def test_identity(self, rng):
        p = rng.normal(size=(68, 2))
        np.testing.assert_array_equal(apply_similarity(SimilarityTransform.identity(), p), p)

    def test_translation(self, rng):
        p = rng.normal(size=(68, 2))
        T = SimilarityTransform(1.0, np.eye(2), np.array([5.0, 5.0]))
        np.testing.assert_allclose(apply_similarity(T, p), p + 5)

    def test_composition_matches_matrix_product(self, rng):
        p = rng.normal(size=(68, 2)) * 30
        T1, T2 = random_similarity(rng), random_similarity(rng)
        via_matrix = (T2.matrix() @ T1.matrix() @ np.column_stack([p, np.ones(68)]).T).T[:, :2]
        np.testing.assert_allclose(apply_similarity(T2, apply_similarity(T1, p)), via_matrix, rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(apply_similarity(T2.compose(T1), p), via_matrix, rtol=1e-10, atol=1e-10)

    def test_inverse(self, rng):
        p = rng.normal(size=(68, 2))
        T = random_similarity(rng)
        np.testing.assert_allclose(apply_similarity(T.inverse(), apply_similarity(T, p)), p, atol=1e-9)


class TestAlignToTemplate:
    def test_template_unchanged(self, tmpl):
        out, T = align_to_template(tmpl.points, tmpl)
        np.testing.assert_allclose(out, tmpl.points, atol=1e-9)
        assert abs(T.s - 1) < 1e-9 and abs(T.angle) < 1e-9

    def test_transformed_template_recovered(self, tmpl, rng):
        moved = apply_similarity(random_similarity(rng), tmpl.points)
        out, _ = align_to_template(moved, tmpl)
        np.testing.assert_allclose(out, tmpl.points, atol=1e-9)

    def test_centroid_matches_template(self, tmpl, rng):
        out, _ = align_to_template(rng.uniform(0, 500, (68, 2)), tmpl)
        np.testing.assert_allclose(out.mean(axis=0), tmpl.points.mean(axis=0), atol=1e-6)

    def test_idempotent(self, tmpl, rng):
        once, _ = align_to_template(tmpl.points + rng.normal(0, 3, (68, 2)), tmpl)
        _, T = align_to_template(once, tmpl)
        assert abs(T.s - 1) < 1e-6 and abs(T.angle) < 1e-6
        np.testing.assert_allclose(T.t, 0, atol=1e-6)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_similarity_invariance(self, tmpl, seed):
        r = np.random.default_rng(seed)
        lms = tmpl.points + r.normal(0, 4, (68, 2))
        T = random_similarity(r)
        a, _ = align_to_template(lms, tmpl)
        b, _ = align_to_template(apply_similarity(T, lms), tmpl)
        np.testing.assert_allclose(a, b, atol=1e-8)
        ra = ((a - tmpl.points) ** 2).sum()
        rb = ((b - tmpl.points) ** 2).sum()
        assert abs(ra - rb) <= 1e-9 * max(1.0, ra)


class TestTemplate:
    def test_inside_frame(self, tmpl):
        assert tmpl.points.min() >= 8 - 1e-9 and tmpl.points.max() <= 120 + 1e-9

    def test_rejects_collinear_and_outside(self):
        line = np.column_stack([np.linspace(10, 100, 68), np.full(68, 50.0)])
        with pytest.raises(InvalidArgument):
            AlignmentTemplate(line)
        with pytest.raises(InvalidArgument):
            AlignmentTemplate(np.random.default_rng(0).uniform(100, 200, (68, 2)))

    def test_round_trip(self, tmpl, tmp_path):
        tmpl.save(tmp_path / "t.json")
        back = AlignmentTemplate.load(tmp_path / "t.json")
        np.testing.assert_array_equal(back.points, tmpl.points)
        assert back.resolution == 128
