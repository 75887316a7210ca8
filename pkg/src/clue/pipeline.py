"""Per-lecture orchestration: one bundle in, branch scores and a report out."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import PipelineConfig
from .corpus import LectureBundle
from .emolex import EmotionDistribution, TextEmotionModel, predict_text_emotion
from .explain import FeedbackReport, ShapleyAttribution, feedback_report, shapley_exact
from .errors import SchemaError
from .forest import ForestModel
from .fusion import BranchScores, FusionCoefficients, fuse, scalarize_branches
from .objcount import ObjectActivity, object_rate_feature
from .speechnet import CnnModel, EmotionTimeline, cnn_forward, window_features
from .textfeat import LexiconSet, TextFeatureVector, extract_text_features


@dataclass
class LectureAnalysis:
    lecture_id: str
    features: TextFeatureVector
    text_emotion: EmotionDistribution
    timeline: EmotionTimeline
    activity: ObjectActivity
    branches: BranchScores


def speech_windows(bundle: LectureBundle, config: PipelineConfig) -> tuple[np.ndarray, np.ndarray]:
    if bundle.audio is None:
        raise SchemaError(f"lecture {bundle.id!r} has no audio")
    return window_features(bundle.audio, bundle.sample_rate, config.dsp)


def analyze_lecture(
    bundle: LectureBundle,
    forest: ForestModel,
    cnn: CnnModel,
    config: PipelineConfig,
    lexicons: LexiconSet,
    text_model: TextEmotionModel | None = None,
    text_probs: EmotionDistribution | None = None,
) -> LectureAnalysis:
    """Run all four heads on one lecture.

    Text emotion comes from ``text_probs`` when given (probabilities produced
    by an external classifier), otherwise from ``text_model``.
    """
    features = extract_text_features(bundle.transcript, bundle.title, bundle.duration, lexicons)
    x1 = float(forest.predict_batch(features.to_array()[None, :])[0])
    if text_probs is None:
        if text_model is None:
            raise SchemaError("need a text emotion model or external text emotion probabilities")
        text_probs = predict_text_emotion(text_model, bundle.transcript)
    starts, windows = speech_windows(bundle, config)
    timeline = EmotionTimeline(starts, cnn_forward(cnn, windows, "eval"), cnn.classes)
    activity = object_rate_feature(
        bundle.detections, bundle.duration, config.objects.min_confidence, config.objects.saturation_rate
    )
    branches = scalarize_branches(x1, text_probs, timeline, activity)
    return LectureAnalysis(bundle.id, features, text_probs, timeline, activity, branches)


def score_payload(analysis: LectureAnalysis, coeffs: FusionCoefficients) -> dict:
    return {
        "id": analysis.lecture_id,
        "score": fuse(coeffs, analysis.branches),
        "branches": analysis.branches.to_dict(),
        "coefficients": {k: getattr(coeffs, k) for k in ("alpha", "beta", "gamma", "delta")},
    }


def build_report(
    analysis: LectureAnalysis,
    forest: ForestModel,
    coeffs: FusionCoefficients,
    config: PipelineConfig,
    background: np.ndarray | None = None,
    with_shapley: bool = True,
) -> FeedbackReport:
    shap: ShapleyAttribution | None = None
    if with_shapley:
        bg = background if background is not None else forest.background
        if bg is None:
            raise SchemaError("forest model stores no background rows; pass a background table")
        shap = shapley_exact(forest, analysis.features, bg)
    return feedback_report(
        analysis.features, analysis.text_emotion, analysis.timeline, analysis.activity,
        coeffs, analysis.branches, shap, config.thresholds,
    )
