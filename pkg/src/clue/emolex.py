"""Five-class text emotion head.

The built-in model is multinomial logistic regression over unigram counts.
Probabilities produced elsewhere (for example a fine-tuned transformer) can be
brought in through :func:`load_external_emotion_probs` with the same output
type.
"""

from __future__ import annotations

import csv
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, SchemaError
from .textfeat import tokenize

FORMAT_VERSION = 1
TEXT_CLASSES = ("joy", "sadness", "fear", "anger", "neutral")
_ALIASES = {"sad": "sadness", "angry": "anger", "happy": "joy", "fearful": "fear"}
_SENTENCE_SPLIT_RE = re.compile(r"[.!?]+")


@dataclass
class EmotionDistribution:
    """Probabilities over named classes; ``flags`` records degenerate inputs."""

    probs: np.ndarray
    classes: tuple[str, ...] = TEXT_CLASSES
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        if len(self.probs) != len(self.classes):
            raise SchemaError(f"{len(self.probs)} probabilities for {len(self.classes)} classes")
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-6:
            raise SchemaError("emotion probabilities must be nonnegative and sum to 1")

    def as_dict(self) -> dict[str, float]:
        return {c: float(p) for c, p in zip(self.classes, self.probs)}

    @classmethod
    def uniform(cls, classes=TEXT_CLASSES, flags=()) -> "EmotionDistribution":
        return cls(np.full(len(classes), 1.0 / len(classes)), tuple(classes), tuple(flags))


@dataclass(frozen=True)
class TextEmotionConfig:
    l2: float = 1e-4
    learning_rate: float = 0.5
    epochs: int = 300
    seed: int = 0
    init_scale: float = 0.01


@dataclass
class TextEmotionModel:
    vocabulary: dict[str, int]
    weights: np.ndarray
    bias: np.ndarray
    classes: tuple[str, ...] = TEXT_CLASSES
    seed: int = 0
    config: TextEmotionConfig = field(default_factory=TextEmotionConfig)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(len(self.vocabulary), len(self.classes))
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(len(self.classes))
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise SchemaError("text emotion weights must be finite")

    def vectorize(self, text: str) -> np.ndarray:
        v = np.zeros(len(self.vocabulary))
        for tok, c in Counter(tokenize(text)).items():
            j = self.vocabulary.get(tok)
            if j is not None:
                v[j] += c
        return v

    def logits(self, text: str) -> np.ndarray:
        return self.vectorize(text) @ self.weights + self.bias

    def to_dict(self) -> dict:
        vocab = sorted(self.vocabulary, key=self.vocabulary.get)
        return {
            "format_version": FORMAT_VERSION,
            "classes": list(self.classes),
            "seed": self.seed,
            "config": self.config.__dict__,
            "vocabulary": vocab,
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TextEmotionModel":
        if d.get("format_version") != FORMAT_VERSION:
            raise SchemaError(f"unsupported text model format_version {d.get('format_version')!r}")
        vocab = {tok: i for i, tok in enumerate(d["vocabulary"])}
        return cls(vocab, d["weights"], d["bias"], tuple(d["classes"]), int(d["seed"]), TextEmotionConfig(**d["config"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TextEmotionModel":
        path = Path(path)
        if not path.is_file():
            raise InputError(f"text emotion model not found: {path}")
        try:
            return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise SchemaError(f"{path}: malformed text emotion model ({exc})") from exc


def canonical_text_label(label: str) -> int:
    name = label.strip().lower()
    name = _ALIASES.get(name, name)
    if name not in TEXT_CLASSES:
        raise SchemaError(f"unknown text emotion label {label!r}; expected one of {TEXT_CLASSES}")
    return TEXT_CLASSES.index(name)


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def train_text_emotion(sentences, config: TextEmotionConfig | None = None) -> TextEmotionModel:
    """Full-batch proximal gradient descent on mean cross-entropy plus ``l2/2 * ||W||^2``.

    ``sentences`` is a sequence of ``(text, label)``; labels are class names or indices.
    """
    config = config or TextEmotionConfig()
    sentences = list(sentences)
    if not sentences:
        raise SchemaError("cannot train on an empty corpus")
    texts = [t for t, _ in sentences]
    labels = np.array([lab if isinstance(lab, (int, np.integer)) else canonical_text_label(lab) for _, lab in sentences])
    if len(set(labels.tolist())) < 2:
        raise SchemaError("training corpus needs at least two distinct classes")

    vocab_tokens = sorted({tok for t in texts for tok in tokenize(t)})
    vocab = {tok: i for i, tok in enumerate(vocab_tokens)}
    k = len(TEXT_CLASSES)
    rng = np.random.default_rng(config.seed)
    model = TextEmotionModel(vocab, rng.normal(0.0, config.init_scale, (len(vocab), k)), np.zeros(k),
                             TEXT_CLASSES, config.seed, config)

    X = np.array([model.vectorize(t) for t in texts]).reshape(len(texts), len(vocab))
    Y = np.zeros((len(texts), k))
    Y[np.arange(len(texts)), labels] = 1.0
    n = len(texts)
    for _ in range(config.epochs):
        P = _softmax_rows(X @ model.weights + model.bias)
        D = (P - Y) / n
        # Implicit step on the L2 term keeps large penalties stable.
        model.weights = (model.weights - config.learning_rate * (X.T @ D)) / (1.0 + config.learning_rate * config.l2)
        model.bias -= config.learning_rate * D.sum(axis=0)
    if not np.all(np.isfinite(model.weights)):
        raise SchemaError("text emotion training diverged; lower the learning rate")
    return model


def split_sentences(text: str) -> list[str]:
    return [s for s in (p.strip() for p in _SENTENCE_SPLIT_RE.split(text)) if tokenize(s)]


def predict_sentence(model: TextEmotionModel, sentence: str) -> np.ndarray:
    return _softmax_rows(model.logits(sentence)[None, :])[0]


def predict_text_emotion(model: TextEmotionModel, transcript: str) -> EmotionDistribution:
    """Mean of per-sentence distributions; an empty transcript gives a flagged uniform result."""
    sentences = split_sentences(transcript)
    if not sentences:
        return EmotionDistribution.uniform(model.classes, flags=("empty_transcript",))
    probs = np.mean([predict_sentence(model, s) for s in sentences], axis=0)
    return EmotionDistribution(probs / probs.sum(), model.classes)


def token_attribution(model: TextEmotionModel, sentence: str, emotion: str | int) -> list[tuple[str, float]]:
    """Leave-one-out logit change for each token occurrence.

    Positive scores push the sentence towards ``emotion``; removing a
    duplicated token removes a single occurrence.
    """
    c = emotion if isinstance(emotion, (int, np.integer)) else canonical_text_label(emotion)
    tokens = tokenize(sentence)
    full = model.logits(" ".join(tokens))[c]
    out = []
    for i, tok in enumerate(tokens):
        reduced = " ".join(tokens[:i] + tokens[i + 1 :])
        out.append((tok, float(full - model.logits(reduced)[c])))
    return out


def load_external_emotion_probs(path: str | Path, classes=TEXT_CLASSES) -> EmotionDistribution:
    """Read ``{class: probability}`` JSON; sums within [0.99, 1.01] are renormalized."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"emotion probability file not found: {path}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
    return emotion_probs_from_mapping(obj, classes, source=str(path))


def emotion_probs_from_mapping(obj: dict, classes=TEXT_CLASSES, source: str = "mapping") -> EmotionDistribution:
    if not isinstance(obj, dict):
        raise SchemaError(f"{source}: expected a JSON object of class probabilities")
    missing = [c for c in classes if c not in obj]
    if missing:
        raise SchemaError(f"{source}: missing class(es) {missing}")
    extra = sorted(set(obj) - set(classes))
    if extra:
        raise SchemaError(f"{source}: unknown class(es) {extra}")
    try:
        probs = np.array([float(obj[c]) for c in classes])
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{source}: non-numeric probability ({exc})") from exc
    if np.any(probs < 0) or not np.all(np.isfinite(probs)):
        raise SchemaError(f"{source}: probabilities must be finite and nonnegative")
    total = probs.sum()
    if not 0.99 <= total <= 1.01:
        raise SchemaError(f"{source}: probabilities sum to {total:.4f}, outside [0.99, 1.01]")
    return EmotionDistribution(probs / total, tuple(classes))


def load_text_corpus(csv_path: str | Path) -> list[tuple[str, int]]:
    """``text,label`` CSV into training pairs."""
    csv_path = Path(csv_path)
    if not csv_path.is_file():
        raise InputError(f"text corpus not found: {csv_path}")
    with csv_path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or "text" not in reader.fieldnames or "label" not in reader.fieldnames:
            raise SchemaError(f"{csv_path}: header must contain 'text' and 'label'")
        return [(row["text"], canonical_text_label(row["label"])) for row in reader]
