"""Shapley attributions for the forest head and the rule-based feedback report.

Predictors are batch callables mapping an ``(m, n)`` array to ``(m,)``
predictions; :class:`~clue.forest.ForestModel` instances qualify directly.
Both Shapley routines use the interventional value function
``v(S) = mean_b f(x_S, background_b on the complement of S)``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .corpus import FeatureTable
from .emolex import EmotionDistribution
from .errors import SchemaError
from .fusion import REFERENCE_ABLATION, BranchScores, FusionCoefficients, ablation_leave_one_out, fuse, speech_temporal_variability
from .objcount import ObjectActivity
from .textfeat import FEATURE_NAMES, TextFeatureVector

Predictor = Callable[[np.ndarray], np.ndarray]

MAX_EXACT_FEATURES = 15
_ROWS_PER_CALL = 1 << 16


@dataclass
class ShapleyAttribution:
    values: np.ndarray
    base_value: float
    feature_values: np.ndarray
    prediction: float
    feature_names: tuple[str, ...] = FEATURE_NAMES

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.feature_names, self.values)}

    def efficiency_gap(self) -> float:
        return abs(self.base_value + math.fsum(self.values) - self.prediction)


def _as_background(background) -> np.ndarray:
    if isinstance(background, FeatureTable):
        background = background.features
    bg = np.asarray(background, dtype=np.float64)
    if bg.ndim != 2 or len(bg) == 0:
        raise SchemaError("Shapley attribution needs a nonempty 2-D background")
    return bg


def _as_instance(instance, n: int) -> np.ndarray:
    if isinstance(instance, TextFeatureVector):
        instance = instance.to_array()
    x = np.asarray(instance, dtype=np.float64).reshape(-1)
    if len(x) != n:
        raise SchemaError(f"instance has {len(x)} features, background has {n}")
    return x


def _coalition_values(predictor: Predictor, x: np.ndarray, bg: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """v(S) for each boolean row of ``masks``, evaluated in bounded chunks."""
    n_bg = len(bg)
    chunk = max(1, _ROWS_PER_CALL // n_bg)
    out = np.empty(len(masks))
    for start in range(0, len(masks), chunk):
        m = masks[start : start + chunk]
        rows = np.where(m[:, None, :], x[None, None, :], bg[None, :, :]).reshape(-1, len(x))
        preds = np.asarray(predictor(rows), dtype=np.float64).reshape(len(m), n_bg)
        out[start : start + len(m)] = preds.mean(axis=1)
    return out


def shapley_exact(predictor: Predictor, instance, background, feature_names=FEATURE_NAMES) -> ShapleyAttribution:
    """Exact Shapley values by evaluating all 2^n coalitions."""
    bg = _as_background(background)
    n = bg.shape[1]
    if n > MAX_EXACT_FEATURES:
        raise SchemaError(f"exact Shapley supports at most {MAX_EXACT_FEATURES} features, got {n}")
    x = _as_instance(instance, n)
    codes = np.arange(1 << n)
    bits = 1 << np.arange(n)
    masks = (codes[:, None] & bits[None, :]) != 0
    v = _coalition_values(predictor, x, bg, masks)
    sizes = masks.sum(axis=1)
    weights = np.array([math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n) for s in range(n)])
    phi = np.empty(n)
    for i in range(n):
        without = codes[(codes & bits[i]) == 0]
        phi[i] = math.fsum(weights[sizes[without]] * (v[without | bits[i]] - v[without]))
    names = tuple(feature_names) if len(feature_names) == n else tuple(f"f{i}" for i in range(n))
    return ShapleyAttribution(phi, float(v[0]), x, float(v[-1]), names)


def shapley_sampled(
    predictor: Predictor, instance, background, permutations: int = 1000, seed: int = 0, feature_names=FEATURE_NAMES
) -> ShapleyAttribution:
    """Monte-Carlo estimate from ``permutations`` random feature orderings."""
    if permutations < 1:
        raise SchemaError("permutations must be >= 1")
    bg = _as_background(background)
    n = bg.shape[1]
    x = _as_instance(instance, n)
    rng = np.random.default_rng(seed)
    orders = np.array([rng.permutation(n) for _ in range(permutations)])
    # Row k*(n+1) + j holds the coalition of the first j features of ordering k.
    ranks = np.argsort(orders, axis=1)
    steps = np.arange(n + 1)
    masks = (ranks[:, None, :] < steps[None, :, None]).reshape(-1, n)
    v = _coalition_values(predictor, x, bg, masks).reshape(permutations, n + 1)
    gains = np.diff(v, axis=1)
    phi = np.zeros(n)
    np.add.at(phi, orders.reshape(-1), gains.reshape(-1))
    phi /= permutations
    names = tuple(feature_names) if len(feature_names) == n else tuple(f"f{i}" for i in range(n))
    return ShapleyAttribution(phi, float(v[0, 0]), x, float(v[0, -1]), names)


def shap_summary(table: FeatureTable, model: Predictor, background=None) -> list[ShapleyAttribution]:
    """Exact attributions for every row of ``table``.

    The background defaults to the rows stored with the model, then to the table itself.
    """
    if len(table) == 0:
        raise SchemaError("shap_summary needs a nonempty table")
    if background is None:
        background = getattr(model, "background", None)
        if background is None:
            background = table.features
    return [shapley_exact(model, row, background) for row in table.features]


def write_shap_summary(attributions: list[ShapleyAttribution], path: str | Path, row_ids=None) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "feature", "shapley_value", "feature_value"])
        for r, att in enumerate(attributions):
            rid = row_ids[r] if row_ids is not None else r
            for name, phi, val in zip(att.feature_names, att.values, att.feature_values):
                writer.writerow([rid, name, repr(float(phi)), repr(float(val))])


# -- feedback report --------------------------------------------------------


@dataclass(frozen=True)
class ReportThresholds:
    speaker_speed_low: float = 115.0
    speaker_speed_high: float = 120.0
    tobe_verb_rate_max: float = 0.03
    auxiliary_rate_max: float = 0.025
    easiness_min: float = 83.0
    normalization_rate_min: float = 0.1
    duration_max: float = 1800.0
    speech_variability_min: float = 0.2


@dataclass(frozen=True)
class Finding:
    feature: str
    observed: float
    rule_id: str
    rule: str
    verdict: str
    suggestion: str


@dataclass
class FeedbackReport:
    engagement_score: float
    branch_scores: BranchScores
    coefficients: FusionCoefficients
    ablation: dict[str, float]
    findings: list[Finding]
    passed_rules: list[str]
    text_emotion: dict[str, float] = field(default_factory=dict)
    shapley: ShapleyAttribution | None = None

    def to_dict(self) -> dict:
        shap = []
        if self.shapley is not None:
            shap = [
                {"feature": n, "shapley_value": float(p), "feature_value": float(v)}
                for n, p, v in zip(self.shapley.feature_names, self.shapley.values, self.shapley.feature_values)
            ]
        return {
            "score": self.engagement_score,
            "branches": self.branch_scores.to_dict(),
            "coefficients": {k: getattr(self.coefficients, k) for k in ("alpha", "beta", "gamma", "delta")},
            "ablation": self.ablation,
            "reference_ablation": dict(REFERENCE_ABLATION),
            "shapley_base_value": None if self.shapley is None else self.shapley.base_value,
            "shapley": shap,
            "text_emotion": self.text_emotion,
            "findings": [asdict(f) for f in self.findings],
            "passed_rules": list(self.passed_rules),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def render_text(self) -> str:
        b = self.branch_scores
        lines = [
            f"Engagement score: {self.engagement_score:.4f}",
            f"Branches: context {b.x1:.4f}, text emotion {b.x2:.4f}, speech emotion {b.x3:.4f}, objects {b.x4:.4f}",
            "Leave-one-branch-out: " + ", ".join(f"{k} {v:.4f}" for k, v in self.ablation.items()),
            "Reference (original study): " + ", ".join(f"{k} {v:.2f}" for k, v in REFERENCE_ABLATION.items()),
        ]
        if self.shapley is not None:
            top = sorted(zip(self.shapley.feature_names, self.shapley.values), key=lambda t: (-abs(t[1]), t[0]))[:5]
            lines.append("Largest context-feature attributions: " + ", ".join(f"{n} {v:+.4f}" for n, v in top))
        if self.findings:
            lines.append(f"Findings ({len(self.findings)}):")
            for f in self.findings:
                lines.append(f"  [{f.rule_id}] {f.feature} = {f.observed:.4g}: {f.verdict}. {f.suggestion}")
        else:
            lines.append("Findings: none, every rule passed.")
        lines.append("Passed: " + (", ".join(self.passed_rules) if self.passed_rules else "none"))
        return "\n".join(lines) + "\n"


def _fmt(v: float) -> str:
    return f"{v:g}"


def _rules(t: ReportThresholds):
    """(feature, rule_id, rule text, check(value) -> verdict or None, suggestion)."""
    lo, hi = t.speaker_speed_low, t.speaker_speed_high

    def speed(v):
        if v < lo:
            return "slower than the engaging range"
        if v > hi:
            return "faster than the engaging range"
        return None

    return [
        ("speaker_speed", f"speaker_speed_{_fmt(lo)}_{_fmt(hi)}_wpm", f"speaker speed {_fmt(lo)}-{_fmt(hi)} wpm", speed,
         f"Aim for a delivery pace of {_fmt(lo)} to {_fmt(hi)} words per minute."),
        ("tobe_verb_rate", f"tobe_verb_rate_below_{_fmt(t.tobe_verb_rate_max)}",
         f"to-be verb rate below {_fmt(t.tobe_verb_rate_max)}",
         lambda v: None if v < t.tobe_verb_rate_max else "to-be verbs used too often",
         "Replace forms of 'to be' with more active verbs."),
        ("auxiliary_rate", f"auxiliary_rate_below_{_fmt(t.auxiliary_rate_max)}",
         f"auxiliary verb rate below {_fmt(t.auxiliary_rate_max)}",
         lambda v: None if v < t.auxiliary_rate_max else "auxiliary verbs used too often",
         "Cut hedging auxiliaries such as 'would', 'could' and 'might'."),
        ("easiness", f"easiness_above_{_fmt(t.easiness_min)}", f"reading ease above {_fmt(t.easiness_min)}",
         lambda v: None if v > t.easiness_min else "language harder than the engaging range",
         "Use shorter sentences and shorter words."),
        ("normalization_rate", f"normalization_rate_above_{_fmt(t.normalization_rate_min)}",
         f"nominalization rate above {_fmt(t.normalization_rate_min)}",
         lambda v: None if v > t.normalization_rate_min else "few nominalized terms",
         "Name the concepts being taught explicitly (terms ending in -tion, -ment, -ence, -ance)."),
        ("duration", f"duration_at_most_{_fmt(t.duration_max)}s", f"duration at most {_fmt(t.duration_max)} s",
         lambda v: None if v <= t.duration_max else "long",
         "Split the lecture into shorter segments."),
    ]


def feedback_report(
    features: TextFeatureVector,
    text_dist: EmotionDistribution,
    timeline,
    activity: ObjectActivity,
    coeffs: FusionCoefficients,
    branches: BranchScores,
    shapley: ShapleyAttribution | None = None,
    thresholds: ReportThresholds | None = None,
) -> FeedbackReport:
    """Evaluate the delivery rules; only violated rules become findings.

    ``timeline`` is an :class:`~clue.speechnet.EmotionTimeline`.
    """
    t = thresholds or ReportThresholds()
    findings: list[Finding] = []
    passed: list[str] = []
    values = features.to_dict()
    for feature, rule_id, rule, check, suggestion in _rules(t):
        observed = float(values[feature])
        verdict = check(observed)
        if verdict is None:
            passed.append(rule_id)
        else:
            findings.append(Finding(feature, observed, rule_id, rule, verdict, suggestion))

    variability = speech_temporal_variability(np.asarray(timeline.probs))
    rule_id = f"speech_variability_at_least_{_fmt(t.speech_variability_min)}"
    if variability < t.speech_variability_min:
        findings.append(Finding("speech_emotion_variability", variability, rule_id,
                                f"speech emotion variability at least {_fmt(t.speech_variability_min)}",
                                "monotone delivery", "Vary tone and energy across the lecture."))
    else:
        passed.append(rule_id)

    if activity.x4 == 0:
        findings.append(Finding("object_activity", float(activity.x4), "visual_objects_present",
                                "visual objects or animations detected", "no visual objects/animations detected",
                                "Add diagrams, demonstrations or animations."))
    else:
        passed.append("visual_objects_present")

    return FeedbackReport(
        engagement_score=fuse(coeffs, branches),
        branch_scores=branches,
        coefficients=coeffs,
        ablation=ablation_leave_one_out(coeffs, branches),
        findings=findings,
        passed_rules=passed,
        text_emotion=text_dist.as_dict(),
        shapley=shapley,
    )
