import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from clue.emolex import EmotionDistribution
from clue.errors import InputError, SchemaError
from clue.fusion import (
    BranchScores,
    FusionCoefficients,
    FusionConfig,
    SpeechFusionSample,
    ablation_leave_one_out,
    coefficient_gradient,
    fuse,
    huber_grad,
    huber_loss,
    joint_gradients,
    joint_loss,
    load_fusion_samples,
    mean_huber,
    project_to_simplex,
    save_fusion_samples,
    scalarize_branches,
    speech_score,
    speech_score_grad,
    text_emotion_variability,
    train_coefficients,
    write_loss_history,
)
from clue.objcount import ObjectActivity
from clue.speechnet import INPUT_LENGTH, SPEECH_CLASSES, EmotionTimeline, init_cnn

from oracles import central_difference

unit = st.floats(0, 1)
branches = st.builds(BranchScores, unit, unit, unit, unit)
simplex = st.lists(st.floats(0.01, 1), min_size=4, max_size=4).map(lambda v: np.array(v) / sum(v))


class TestFuse:
    def test_worked_example(self):
        assert fuse(FusionCoefficients(), BranchScores(0.8, 0.6, 0.7, 0.3)) == pytest.approx(0.66, abs=1e-15)

    def test_all_ones_initial(self):
        assert fuse(FusionCoefficients(), BranchScores(1, 1, 1, 1)) == 1.0

    @given(branches, simplex)
    def test_convex_range(self, b, c):
        y = fuse(FusionCoefficients.from_array(c / math.fsum(c)), b)
        x = b.to_array()
        assert x.min() - 1e-12 <= y <= x.max() + 1e-12

    @given(branches, branches, st.floats(-3, 3))
    def test_linear_in_branches(self, a, b, t):
        c = FusionCoefficients(0.3, 0.2, 0.4, 0.1)
        combo = t * a.to_array() + (1 - t) * b.to_array()
        expected = t * fuse(c, a) + (1 - t) * fuse(c, b)
        assert math.fsum(c.to_array() * combo) == pytest.approx(expected, abs=1e-12)

    def test_branch_bounds(self):
        with pytest.raises(SchemaError):
            BranchScores(1.1, 0, 0, 0)

    def test_simplex_validation(self):
        with pytest.raises(SchemaError):
            FusionCoefficients(0.5, 0.5, 0.5, 0.5)
        FusionCoefficients(0.5, 0.5, 0.5, 0.5, constrained=False)
        with pytest.raises(SchemaError):
            FusionCoefficients(theta=0)


class TestHuber:
    @given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0.01, 5))
    def test_piecewise(self, y, t, theta):
        r = abs(y - t)
        expected = 0.5 * r * r if r <= theta else theta * (r - 0.5 * theta)
        assert huber_loss(y, t, theta) == pytest.approx(expected, abs=1e-12)
        assert huber_loss(y, t, theta) >= 0
        assert abs(huber_grad(y, t, theta)) <= theta

    @given(st.floats(0.05, 5))
    def test_continuous_at_boundary(self, theta):
        for side in (theta, -theta):
            inner = huber_loss(side, 0, theta)
            outer = theta * (abs(side) - 0.5 * theta)
            assert abs(inner - outer) <= 1e-12
            assert abs(huber_grad(side, 0, theta) - math.copysign(theta, side)) <= 1e-12

    def test_symmetry_and_zero(self):
        assert huber_loss(0.3, 0.3) == 0.0 and huber_grad(0.3, 0.3) == 0.0
        assert huber_loss(2.0, 0.0) == huber_loss(-2.0, 0.0) == 1.5

    @given(st.floats(-4, 4).filter(lambda r: abs(abs(r) - 1) > 1e-3))
    def test_gradient_matches_finite_difference(self, r):
        fd = central_difference(lambda v: huber_loss(v[0], 0.0, 1.0), [r], 1e-6)[0]
        assert huber_grad(r, 0.0, 1.0) == pytest.approx(fd, abs=1e-6)

    def test_vectorized(self):
        np.testing.assert_allclose(huber_loss(np.array([0, 0.5, 3]), 0), [0, 0.125, 2.5])


class TestSimplex:
    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=8))
    def test_projection_properties(self, v):
        v = np.array(v)
        p = project_to_simplex(v)
        assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-9
        # the projection is idempotent and no feasible point is closer
        np.testing.assert_allclose(project_to_simplex(p), p, atol=1e-12)
        rng = np.random.default_rng(len(v))
        for q in rng.dirichlet(np.ones(len(v)), 20):
            assert np.linalg.norm(v - p) <= np.linalg.norm(v - q) + 1e-9

    def test_feasible_unchanged(self):
        c = np.array([0.5, 0.1, 0.2, 0.2])
        assert np.array_equal(project_to_simplex(c), c)

    def test_known(self):
        np.testing.assert_allclose(project_to_simplex([2, 0, 0, 0]), [1, 0, 0, 0])
        np.testing.assert_allclose(project_to_simplex([0, 0, 0, 0]), [0.25] * 4)


class TestTraining:
    def data(self, n=500, seed=0):
        X = np.random.default_rng(seed).random((n, 4))
        return X, X @ np.array([0.4, 0.3, 0.2, 0.1])

    def test_recovers_coefficients(self):
        X, y = self.data()
        res = train_coefficients(X, y_hat=y)
        np.testing.assert_allclose(res.coefficients.to_array(), [0.4, 0.3, 0.2, 0.1], atol=1e-2)
        assert res.loss_history[-1] < 1e-5 and res.converged

    def test_monotone_history(self):
        X, y = self.data(200, 1)
        h = train_coefficients(X, y_hat=y).loss_history
        assert all(b <= a + 1e-15 for a, b in zip(h, h[1:]))

    def test_stationary_point(self):
        X, _ = self.data(100, 2)
        c = np.array([0.5, 0.1, 0.2, 0.2])
        res = train_coefficients(X, FusionConfig(max_iters=50), y_hat=X @ c)
        assert np.array_equal(res.coefficients.to_array(), c)
        assert res.iterations == 1 and res.loss_history[0] < 1e-30

    def test_zero_iterations(self):
        X, y = self.data(10)
        res = train_coefficients(X, FusionConfig(max_iters=0), y_hat=y)
        assert res.coefficients == FusionCoefficients() and len(res.loss_history) == 1

    def test_unconstrained_leaves_simplex(self):
        X, _ = self.data(300, 3)
        c = np.array([0.6, 0.6, 0.0, 0.1])
        res = train_coefficients(X, FusionConfig(constrained=False, max_iters=5000, tol=1e-10), y_hat=np.clip(X @ c, 0, 1))
        assert not res.coefficients.constrained and res.coefficients.to_array().sum() > 1.05

    def test_pairs_input(self):
        samples = [(BranchScores(1, 0, 0, 0), 0.5), (BranchScores(0, 1, 0, 0), 0.5)]
        res = train_coefficients(samples)
        assert res.coefficients.to_array().sum() == pytest.approx(1.0)

    def test_gradient_against_finite_difference(self):
        X, y = self.data(50, 4)
        y = y + np.random.default_rng(0).normal(0, 0.05, 50).clip(-0.1, 0.1)
        c = np.array([0.25, 0.25, 0.25, 0.25])
        fd = central_difference(lambda v: mean_huber(v, X, y.clip(0, 1), 1.0), c, 1e-6)
        np.testing.assert_allclose(coefficient_gradient(c, X, y.clip(0, 1), 1.0), fd, atol=1e-8)

    @pytest.mark.parametrize("y", [[1.2], [-0.1]])
    def test_target_range(self, y):
        with pytest.raises(SchemaError):
            train_coefficients(np.ones((1, 4)) * 0.5, y_hat=y)

    def test_empty(self):
        with pytest.raises(SchemaError):
            train_coefficients([])


class TestScalarization:
    def test_entropy_extremes(self):
        assert text_emotion_variability(EmotionDistribution(np.array([1.0, 0, 0, 0, 0]))) == 0.0
        assert text_emotion_variability(EmotionDistribution(np.full(5, 0.2))) == pytest.approx(1.0)

    def test_speech_score_cases(self):
        neutral = np.zeros((4, 8))
        neutral[:, SPEECH_CLASSES.index("neutral")] = 1
        assert speech_score(neutral) == 0.5
        flip = np.zeros((4, 8))
        flip[::2, SPEECH_CLASSES.index("happy")] = 1
        flip[1::2, SPEECH_CLASSES.index("angry")] = 1
        assert speech_score(flip) == pytest.approx(0.5 * 0.5 + 0.5 * 1.0)
        assert speech_score(np.zeros((0, 8))) == 0.0

    def test_speech_grad_matches_fd(self):
        p = np.random.default_rng(5).dirichlet(np.ones(8), 6)
        fd = central_difference(lambda q: speech_score(q.reshape(6, 8)), p.ravel(), 1e-7).reshape(6, 8)
        np.testing.assert_allclose(speech_score_grad(p), fd, atol=1e-7)

    def test_scalarize(self):
        tl = EmotionTimeline(np.array([0.0]), np.eye(8)[[5]])
        b = scalarize_branches(1.3, EmotionDistribution(np.full(5, 0.2)), tl, ObjectActivity(5.0, 2, 0.5))
        np.testing.assert_allclose(b.to_array(), [1.0, 1.0, 0.5, 0.5], atol=1e-12)


class TestAblation:
    def test_leave_one_out(self):
        out = ablation_leave_one_out(FusionCoefficients(), BranchScores(0.8, 0.6, 0.7, 0.3))
        assert out["full"] == pytest.approx(0.66)
        assert out["drop_x1"] == pytest.approx(0.26)
        assert out["drop_x4"] == pytest.approx(0.60)

    @given(branches)
    def test_drops_never_increase(self, b):
        out = ablation_leave_one_out(FusionCoefficients(), b)
        assert all(out[k] <= out["full"] + 1e-15 for k in out)


class TestJoint:
    def test_gradients_match_finite_difference(self):
        rng = np.random.default_rng(0)
        cnn = init_cnn(3)
        samples = [SpeechFusionSample(0.6, 0.4, 0.2, rng.standard_normal((3, INPUT_LENGTH)), t) for t in (0.3, 0.9)]
        c = np.array([0.4, 0.2, 0.3, 0.1])
        loss, g_c, g_cnn = joint_gradients(c, cnn, samples, 1.0)
        assert loss == pytest.approx(joint_loss(c, cnn, samples, 1.0), abs=1e-15)
        fd_c = central_difference(lambda v: joint_loss(v, cnn, samples, 1.0), c, 1e-6)
        np.testing.assert_allclose(g_c, fd_c, atol=1e-9)
        for name in ("dense2.bias", "dense2.weight", "bn1.gamma", "conv1.weight"):
            p = cnn.params[name]
            for idx in list(zip(*np.unravel_index(rng.choice(p.size, 3, replace=False), p.shape))):
                old = p[idx]
                p[idx] = old + 1e-5
                up = joint_loss(c, cnn, samples, 1.0)
                p[idx] = old - 1e-5
                down = joint_loss(c, cnn, samples, 1.0)
                p[idx] = old
                fd = (up - down) / 2e-5
                assert g_cnn[name][idx] == pytest.approx(fd, rel=1e-3, abs=1e-9)


class TestFiles:
    def test_coefficients_round_trip(self, tmp_path):
        c = FusionCoefficients(0.25, 0.25, 0.3, 0.2, theta=0.5)
        c.save(tmp_path / "c.json")
        assert FusionCoefficients.load(tmp_path / "c.json") == c

    def test_coefficients_bad(self, tmp_path):
        with pytest.raises(InputError):
            FusionCoefficients.load(tmp_path / "missing.json")
        (tmp_path / "v.json").write_text(json.dumps({"format_version": 9}))
        with pytest.raises(SchemaError):
            FusionCoefficients.load(tmp_path / "v.json")
        (tmp_path / "x.json").write_text(json.dumps({"alpha": 1, "omega": 2}))
        with pytest.raises(SchemaError):
            FusionCoefficients.load(tmp_path / "x.json")

    def test_samples_round_trip(self, tmp_path):
        X = np.random.default_rng(1).random((5, 4))
        y = X.mean(axis=1)
        save_fusion_samples(tmp_path / "s.csv", X, y, ids=list("abcde"))
        ids, X2, y2 = load_fusion_samples(tmp_path / "s.csv")
        assert ids == list("abcde") and np.array_equal(X, X2) and np.array_equal(y, y2)

    def test_samples_schema(self, tmp_path):
        (tmp_path / "s.csv").write_text("x1,x2,x3,y_hat\n0,0,0,0\n")
        with pytest.raises(SchemaError):
            load_fusion_samples(tmp_path / "s.csv")
        (tmp_path / "t.csv").write_text("x1,x2,x3,x4,y_hat\n0,a,0,0,0\n")
        with pytest.raises(SchemaError):
            load_fusion_samples(tmp_path / "t.csv")

    def test_history(self, tmp_path):
        write_loss_history([0.5, 0.25], tmp_path / "h.csv")
        assert (tmp_path / "h.csv").read_text().splitlines() == ["iteration,loss", "0,0.5", "1,0.25"]
