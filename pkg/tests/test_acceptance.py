"""One test per acceptance criterion; the run summary prints a PASS/FAIL line for each."""

import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from clue import dsp
from clue import speechnet as sn
from clue.cli import main
from clue.corpus import FeatureTable
from clue.emolex import EmotionDistribution, TextEmotionConfig, predict_sentence, train_text_emotion
from clue.explain import feedback_report, shapley_exact, shapley_sampled
from clue.forest import ForestConfig, ForestModel, forest_mse, train_forest
from clue.fusion import (
    BranchScores,
    FusionCoefficients,
    coefficient_gradient,
    huber_grad,
    huber_loss,
    mean_huber,
    train_coefficients,
)
from clue.objcount import ObjectActivity
from clue.textfeat import TextFeatureVector

from fixture_models import GOLDEN, cli_args
from oracles import central_difference, direct_dft, interventional_value, shapley_by_permutations

criterion = pytest.mark.criterion


def rel_err(a, b, floor=1e-8):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


@criterion(1, "CNN parameter counts and conv output lengths")
def test_architecture():
    model = sn.init_cnn(0)
    assert model.parameter_counts() == {"total": 5_148_688, "trainable": 5_148_304, "non_trainable": 384}
    _, cache = sn.cnn_logits(model, np.zeros((1, 180)), "eval")
    assert cache["z1"].shape[1] == 161 and cache["z2"].shape[1] == 152


@criterion(2, "CNN and fusion gradients match central finite differences")
def test_gradients():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    X, y = rng.standard_normal((4, 180)), rng.integers(0, 8, 4)
    result = sn.gradient_check(sn.init_cnn(1), X, y, n_params=200, eps=1e-4, seed=0)
    assert len(result["records"]) == 200
    assert result["max_rel_error"] < 1e-3

    Xf = rng.random((60, 4))
    yf = np.clip(Xf @ [0.4, 0.3, 0.2, 0.1] + rng.normal(0, 0.3, 60), 0, 1)
    for theta in (0.05, 1.0):
        c = np.array([0.3, 0.3, 0.2, 0.2])
        fd = central_difference(lambda v: mean_huber(v, Xf, yf, theta), c, 1e-6)
        assert np.max(rel_err(coefficient_gradient(c, Xf, yf, theta), fd)) < 1e-6
    assert time.perf_counter() - start < 60


@criterion(3, "macro precision of the per-class reference values")
def test_macro_precision():
    value = sn.macro_average([0.85, 0.77, 0.85, 0.82, 0.79])
    assert abs(value - 0.816) < 1e-12 and round(value, 2) == 0.82


@criterion(4, "Huber loss and gradient follow the piecewise definition")
def test_huber():
    for theta in (0.1, 0.5, 1.0, 2.5):
        residuals = sorted({*np.linspace(-3 * theta, 3 * theta, 61), theta, -theta, 0.0})
        for r in residuals:
            quadratic = abs(r) <= theta
            loss = 0.5 * r * r if quadratic else theta * (abs(r) - 0.5 * theta)
            grad = r if quadratic else math.copysign(theta, r)
            assert abs(huber_loss(r + 0.25, 0.25, theta) - loss) < 1e-12
            assert abs(huber_grad(r + 0.25, 0.25, theta) - grad) < 1e-12
        for b in (theta, -theta):
            below, above = np.nextafter(b, 0.0), np.nextafter(b, math.copysign(np.inf, b))
            assert abs(huber_loss(below, 0.0, theta) - huber_loss(above, 0.0, theta)) < 1e-12
            assert abs(huber_grad(below, 0.0, theta) - huber_grad(above, 0.0, theta)) < 1e-12
            assert abs(0.5 * b * b - theta * (abs(b) - 0.5 * theta)) < 1e-12


@criterion(5, "fusion training recovers the generating coefficients")
def test_fusion_recovery():
    X = np.random.default_rng(0).random((500, 4))
    y = X @ np.array([0.4, 0.3, 0.2, 0.1])
    result = train_coefficients(X, y_hat=y)
    assert np.max(np.abs(result.coefficients.to_array() - [0.4, 0.3, 0.2, 0.1])) < 1e-2
    assert result.loss_history[-1] < 1e-5


@criterion(6, "Shapley efficiency, dummy, symmetry; sampled close to exact")
def test_shapley(fixture_models):
    start = time.perf_counter()
    forest = ForestModel.load(fixture_models["forest"])
    x = forest.background[0] * 1.1
    att = shapley_exact(forest, x, forest.background)
    assert att.efficiency_gap() < 1e-9

    bg = np.random.default_rng(1).random((4, 4))
    sym = shapley_exact(lambda Z: Z[:, 0] * Z[:, 1] + np.sin(Z[:, 0] + Z[:, 1]), [0.7, 0.7, 3.0, -1.0],
                        np.column_stack([bg[:, 0], bg[:, 0], bg[:, 2], bg[:, 3]]))
    assert sym.values[2] == 0.0 and sym.values[3] == 0.0
    assert abs(sym.values[0] - sym.values[1]) < 1e-12

    def toy(Z):
        return 2 * Z[:, 0] + Z[:, 1] * Z[:, 2] + np.maximum(Z[:, 3], Z[:, 2]) - 0.5 * Z[:, 3] * Z[:, 4]

    names = tuple(f"f{i}" for i in range(5))
    for seed in range(3):
        rng = np.random.default_rng(10 + seed)
        bg, point = rng.random((5, 5)), rng.random(5)
        exact = shapley_exact(toy, point, bg, names)
        np.testing.assert_allclose(exact.values, shapley_by_permutations(interventional_value(toy, point, bg), 5),
                                   atol=1e-12)
        sampled = shapley_sampled(toy, point, bg, 5000, seed=seed, feature_names=names)
        assert np.max(np.abs(sampled.values - exact.values)) <= 0.02
    assert time.perf_counter() - start < 120


@criterion(7, "DSP agrees with direct DFT, Parseval, pitch class, mel band, length")
def test_dsp():
    cfg = dsp.DEFAULT_CONFIG
    sr, n = cfg.sample_rate, cfg.frame_length
    x = np.random.default_rng(0).standard_normal(n)
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)
    ref = np.abs(direct_dft(x * window)[: n // 2 + 1]) ** 2
    assert np.max(np.abs(dsp.power_spectrogram(x)[0] - ref) / np.max(ref)) < 1e-9
    energy = np.sum(x**2)
    assert abs(np.sum(np.abs(np.fft.fft(x)) ** 2) / n - energy) / energy < 1e-9

    t = np.arange(sr) / sr
    assert dsp.PITCH_CLASSES[int(np.argmax(dsp.chroma(0.5 * np.sin(2 * np.pi * 440 * t))))] == "A"
    mel_max = 2595 * math.log10(1 + (sr / 2) / 700)
    centers = np.linspace(0, mel_max, cfg.n_mels + 2)[1:-1]
    band = int(np.argmin(np.abs(centers - 2595 * math.log10(1 + 1000 / 700))))
    assert int(np.argmax(dsp.mel_spectrogram(0.5 * np.sin(2 * np.pi * 1000 * t)))) == band
    assert dsp.speech_feature_vector(0.5 * np.sin(2 * np.pi * 300 * t)).shape == (180,)


@criterion(8, "CNN, forest and text head fit separable synthetic data")
def test_learning_sanity():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    centers = rng.standard_normal((8, 180)) * 3
    labels = np.repeat(np.arange(8), 8)
    X = centers[labels] + 0.1 * rng.standard_normal((64, 180))
    _, history = sn.train_cnn(X, labels, sn.TrainConfig(epochs=200, batch_size=16, learning_rate=1e-3),
                              target_accuracy=0.95)
    assert history[-1]["train_acc"] >= 0.95 and len(history) <= 200

    F = rng.uniform(size=(200, 14))
    F[:, 10] = rng.uniform(0, 200, 200)
    table = FeatureTable(F, F[:, 10] / 200)
    assert forest_mse(train_forest(table, ForestConfig(), seed=0), table) < 0.01

    corpus = [(f"bright sunny {w}", "joy") for w in ("morning", "field", "garden", "song")] * 5
    corpus += [(f"grey rainy {w}", "sadness") for w in ("evening", "street", "window", "song")] * 5
    head = train_text_emotion(corpus, TextEmotionConfig(epochs=100))
    hits = [int(np.argmax(predict_sentence(head, text))) == (0 if label == "joy" else 1) for text, label in corpus]
    assert all(hits)
    assert time.perf_counter() - start < 300


@criterion(9, "score and report are byte-identical across runs and thread counts")
def test_determinism(fixture_models, tmp_path, capsys):
    for command in ("score", "report"):
        for run in ("a", "b"):
            assert main([str(a) for a in cli_args(command, fixture_models, tmp_path / run)]) == 0
    for threads in ("1", "4"):
        env = {**os.environ, "OPENBLAS_NUM_THREADS": threads, "OMP_NUM_THREADS": threads}
        for command in ("score", "report"):
            subprocess.run([sys.executable, "-m", "clue", *map(str, cli_args(command, fixture_models, tmp_path / threads))],
                           check=True, env=env, capture_output=True)
    capsys.readouterr()
    names = ["photosynthesis-intro.score.json", "photosynthesis-intro.report.json", "photosynthesis-intro.report.txt"]
    for name in names:
        outputs = {(tmp_path / d / name).read_bytes() for d in ("a", "b", "1", "4")}
        assert outputs == {(GOLDEN / name).read_bytes()}


@criterion(10, "crafted violations of speaker speed and easiness give exactly those findings")
def test_threshold_rules():
    features = TextFeatureVector(
        conjugate_rate=0.05, pronoun_rate=0.08, preposition_rate=0.1, tobe_verb_rate=0.01, auxiliary_rate=0.01,
        normalization_rate=0.2, fraction_stopword_coverage=0.4, fraction_stopword_presence=0.5, easiness=55.0,
        document_entropy=6.0, word_count=1500.0, title_word_count=5.0, duration=900.0, speaker_speed=140.0,
    )
    timeline = sn.EmotionTimeline(np.arange(4) * 10.0, np.eye(8)[[1, 4, 1, 4]])
    report = feedback_report(features, EmotionDistribution(np.full(5, 0.2)), timeline, ObjectActivity(4.0, 3, 0.4),
                             FusionCoefficients(), BranchScores(0.6, 1.0, 0.75, 0.4))
    assert [(f.feature, f.rule_id) for f in report.findings] == [
        ("speaker_speed", "speaker_speed_115_120_wpm"),
        ("easiness", "easiness_above_83"),
    ]
