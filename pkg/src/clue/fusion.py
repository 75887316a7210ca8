"""Branch scalarization, convex fusion, Huber loss and coefficient training.

The engagement score is ``y = alpha*x1 + beta*x2 + gamma*x3 + delta*x4``
with every branch in [0, 1]. Coefficients are fitted by projected gradient
descent on the mean Huber loss against normalized user ratings; by default
each step is projected back onto the probability simplex so the score stays
a convex combination.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .emolex import EmotionDistribution
from .errors import InputError, NumericError, SchemaError
from .objcount import ObjectActivity
from .speechnet import SPEECH_CLASSES, Adam, CnnModel, TrainConfig, cnn_backward, cnn_logits, softmax

FORMAT_VERSION = 1
BRANCHES = ("x1", "x2", "x3", "x4")
COEFFICIENTS = ("alpha", "beta", "gamma", "delta")
INITIAL_COEFFICIENTS = (0.5, 0.1, 0.2, 0.2)
POSITIVE_SPEECH = frozenset({"calm", "happy", "neutral", "surprised"})

# Leave-one-model-out scores published for the original 50-lecture study; shown for context only.
REFERENCE_ABLATION = {"full": 0.85, "drop_x1": 0.63, "drop_x2": 0.72, "drop_x3": 0.76, "drop_x4": 0.72}


@dataclass(frozen=True)
class BranchScores:
    x1: float
    x2: float
    x3: float
    x4: float

    def __post_init__(self):
        for name in BRANCHES:
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SchemaError(f"branch {name} = {v!r} outside [0, 1]")

    def to_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2, self.x3, self.x4])

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class FusionCoefficients:
    alpha: float = INITIAL_COEFFICIENTS[0]
    beta: float = INITIAL_COEFFICIENTS[1]
    gamma: float = INITIAL_COEFFICIENTS[2]
    delta: float = INITIAL_COEFFICIENTS[3]
    theta: float = 1.0
    constrained: bool = True

    def __post_init__(self):
        if not self.theta > 0:
            raise SchemaError(f"Huber theta must be > 0, got {self.theta!r}")
        c = self.to_array()
        if not np.all(np.isfinite(c)):
            raise SchemaError("fusion coefficients must be finite")
        if self.constrained and (np.any(c < 0) or abs(math.fsum(c) - 1.0) > 1e-9):
            raise SchemaError(f"constrained coefficients must lie on the simplex, got {tuple(c)}")

    def to_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma, self.delta])

    @classmethod
    def from_array(cls, c, theta: float = 1.0, constrained: bool = True) -> "FusionCoefficients":
        return cls(*(float(v) for v in c), theta=theta, constrained=constrained)

    def to_dict(self) -> dict:
        return {"format_version": FORMAT_VERSION, **asdict(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "FusionCoefficients":
        d = dict(d)
        if d.pop("format_version", FORMAT_VERSION) != FORMAT_VERSION:
            raise SchemaError("unsupported coefficients format_version")
        try:
            return cls(**d)
        except TypeError as exc:
            raise SchemaError(f"malformed coefficients: {exc}") from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "FusionCoefficients":
        path = Path(path)
        if not path.is_file():
            raise InputError(f"coefficients file not found: {path}")
        try:
            return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON ({exc})") from exc


# -- branch scalarization ---------------------------------------------------


def text_emotion_variability(dist: EmotionDistribution) -> float:
    """Entropy of the distribution divided by its maximum, in [0, 1]."""
    p = dist.probs[dist.probs > 0]
    h = float(-np.sum(p * np.log(p)))
    return min(1.0, max(0.0, h / math.log(len(dist.probs))))


def _positive_mask(classes) -> np.ndarray:
    return np.array([c in POSITIVE_SPEECH for c in classes], dtype=float)


def speech_positive_share(probs: np.ndarray, classes=SPEECH_CLASSES) -> float:
    if len(probs) == 0:
        return 0.0
    return float(np.mean(probs @ _positive_mask(classes)))


def speech_temporal_variability(probs: np.ndarray) -> float:
    """Mean total-variation distance between consecutive windows; 0 below two windows."""
    if len(probs) < 2:
        return 0.0
    tv = 0.5 * np.abs(np.diff(probs, axis=0)).sum(axis=1)
    return float(np.mean(tv))


def speech_score(probs: np.ndarray, classes=SPEECH_CLASSES) -> float:
    probs = np.asarray(probs, dtype=float)
    x3 = 0.5 * speech_positive_share(probs, classes) + 0.5 * speech_temporal_variability(probs)
    return min(1.0, max(0.0, x3))


def speech_score_grad(probs: np.ndarray, classes=SPEECH_CLASSES) -> np.ndarray:
    """d x3 / d probs, shape (windows, classes); sign(0) = 0 at ties."""
    probs = np.asarray(probs, dtype=float)
    W = len(probs)
    grad = np.zeros_like(probs)
    if W == 0:
        return grad
    grad += 0.5 * _positive_mask(classes)[None, :] / W
    if W >= 2:
        s = np.sign(probs[:-1] - probs[1:]) * (0.5 * 0.5 / (W - 1))
        grad[:-1] += s
        grad[1:] -= s
    return grad


def scalarize_branches(x1: float, text_dist: EmotionDistribution, timeline, activity: ObjectActivity) -> BranchScores:
    """Reduce the four heads' outputs to unit-interval scalars.

    ``timeline`` is an :class:`~clue.speechnet.EmotionTimeline`.
    """
    return BranchScores(
        x1=min(1.0, max(0.0, float(x1))),
        x2=text_emotion_variability(text_dist),
        x3=speech_score(timeline.probs, timeline.classes),
        x4=float(activity.x4),
    )


# -- fusion and loss --------------------------------------------------------


def fuse(coeffs: FusionCoefficients, branches: BranchScores) -> float:
    c, x = coeffs.to_array(), branches.to_array()
    return math.fsum(c * x)


def fuse_many(c: np.ndarray, X: np.ndarray) -> np.ndarray:
    return np.array([math.fsum(c * row) for row in X])


def huber_loss(y, y_hat, theta: float = 1.0):
    r = np.abs(np.asarray(y, dtype=float) - np.asarray(y_hat, dtype=float))
    out = np.where(r <= theta, 0.5 * r * r, theta * (r - 0.5 * theta))
    return float(out) if out.ndim == 0 else out


def huber_grad(y, y_hat, theta: float = 1.0):
    """Derivative of the Huber loss with respect to the prediction ``y``."""
    r = np.asarray(y, dtype=float) - np.asarray(y_hat, dtype=float)
    out = np.where(np.abs(r) <= theta, r, theta * np.sign(r))
    return float(out) if out.ndim == 0 else out


def mean_huber(c: np.ndarray, X: np.ndarray, y_hat: np.ndarray, theta: float) -> float:
    return float(np.mean(huber_loss(fuse_many(c, X), y_hat, theta)))


def coefficient_gradient(c: np.ndarray, X: np.ndarray, y_hat: np.ndarray, theta: float) -> np.ndarray:
    h = huber_grad(fuse_many(c, X), y_hat, theta)
    return (h[:, None] * X).mean(axis=0)


def project_to_simplex(v) -> np.ndarray:
    """Euclidean projection onto {c >= 0, sum(c) = 1}; feasible points come back unchanged."""
    v = np.asarray(v, dtype=float)
    if np.all(v >= 0) and abs(math.fsum(v) - 1.0) <= 1e-12:
        return v.copy()
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, len(v) + 1)
    rho = np.count_nonzero(u - css / ind > 0)
    tau = css[rho - 1] / rho
    return np.maximum(v - tau, 0.0)


@dataclass(frozen=True)
class FusionConfig:
    learning_rate: float = 0.5
    max_iters: int = 1000
    tol: float = 1e-6
    theta: float = 1.0
    constrained: bool = True
    initial: tuple[float, float, float, float] = INITIAL_COEFFICIENTS

    def __post_init__(self):
        if self.learning_rate < 0 or self.max_iters < 0 or self.tol < 0 or not self.theta > 0:
            raise SchemaError("fusion config: learning_rate, max_iters, tol must be >= 0 and theta > 0")


@dataclass
class FusionResult:
    coefficients: FusionCoefficients
    loss_history: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def _as_training_arrays(samples, y_hat=None):
    if y_hat is None:
        samples = list(samples)
        X = np.array([(b.to_array() if isinstance(b, BranchScores) else np.asarray(b, float)) for b, _ in samples])
        y = np.array([float(t) for _, t in samples])
    else:
        X = np.array([(b.to_array() if isinstance(b, BranchScores) else np.asarray(b, float)) for b in samples])
        y = np.asarray(y_hat, dtype=float)
    X = X.reshape(-1, 4)
    if len(X) == 0:
        raise SchemaError("need at least one training sample")
    if len(X) != len(y):
        raise SchemaError("branch rows and targets differ in length")
    if np.any((y < 0) | (y > 1)):
        raise SchemaError("targets must be normalized ratings in [0, 1]")
    if np.any((X < 0) | (X > 1)):
        raise SchemaError("branch scores must lie in [0, 1]")
    return X, y


def train_coefficients(samples, config: FusionConfig | None = None, y_hat=None) -> FusionResult:
    """Projected gradient descent on the mean Huber loss.

    ``samples`` is a sequence of ``(BranchScores, y_hat)`` pairs, or a (n, 4)
    array with targets passed as ``y_hat``. Stops when no coefficient moves
    more than ``tol`` in one step, or after ``max_iters`` steps. The history
    holds the loss before the first step and after every step.
    """
    config = config or FusionConfig()
    X, y = _as_training_arrays(samples, y_hat)
    c = np.asarray(config.initial, dtype=float)
    if config.constrained:
        c = project_to_simplex(c)
    history = [mean_huber(c, X, y, config.theta)]
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        step = c - config.learning_rate * coefficient_gradient(c, X, y, config.theta)
        new = project_to_simplex(step) if config.constrained else step
        if not np.all(np.isfinite(new)):
            raise NumericError(f"coefficient training diverged at iteration {it}")
        change = float(np.max(np.abs(new - c)))
        c = new
        history.append(mean_huber(c, X, y, config.theta))
        if change <= config.tol:
            converged = True
            break
    coeffs = FusionCoefficients.from_array(c, config.theta, config.constrained)
    return FusionResult(coeffs, history, it if config.max_iters else 0, converged)


def ablation_leave_one_out(coeffs: FusionCoefficients, branches: BranchScores) -> dict[str, float]:
    """Fused score with each branch's coefficient zeroed; others are not renormalized."""
    c, x = coeffs.to_array(), branches.to_array()
    out = {"full": math.fsum(c * x)}
    for i, name in enumerate(BRANCHES):
        d = c.copy()
        d[i] = 0.0
        out[f"drop_{name}"] = math.fsum(d * x)
    return out


# -- joint fine-tuning of the speech head -----------------------------------


@dataclass
class SpeechFusionSample:
    """One lecture for joint training: fixed x1, x2, x4 plus its per-window speech features."""

    x1: float
    x2: float
    x4: float
    window_features: np.ndarray
    y_hat: float


def _speech_branch(cnn: CnnModel, feats: np.ndarray):
    logits, cache = cnn_logits(cnn, feats, "eval")
    probs = softmax(logits)
    return speech_score(probs, cnn.classes), probs, cache


def joint_loss(coeffs: np.ndarray, cnn: CnnModel, samples: list[SpeechFusionSample], theta: float) -> float:
    ys, targets = [], []
    for s in samples:
        x3, _, _ = _speech_branch(cnn, s.window_features)
        ys.append(math.fsum(coeffs * np.array([s.x1, s.x2, x3, s.x4])))
        targets.append(s.y_hat)
    return float(np.mean(huber_loss(np.array(ys), np.array(targets), theta)))


def joint_gradients(coeffs: np.ndarray, cnn: CnnModel, samples: list[SpeechFusionSample], theta: float):
    """Mean Huber loss and its gradients w.r.t. the coefficients and the CNN's trainable parameters.

    The CNN runs in eval mode (frozen BN statistics) so every lecture's
    windows are scored exactly as at inference time.
    """
    n = len(samples)
    g_c = np.zeros(4)
    g_cnn: dict[str, np.ndarray] = {}
    losses = []
    for s in samples:
        x3, probs, cache = _speech_branch(cnn, s.window_features)
        x = np.array([s.x1, s.x2, x3, s.x4])
        y = math.fsum(coeffs * x)
        losses.append(huber_loss(y, s.y_hat, theta))
        h = huber_grad(y, s.y_hat, theta) / n
        g_c += h * x
        dprobs = h * coeffs[2] * speech_score_grad(probs, cnn.classes)
        dlogits = probs * (dprobs - np.sum(probs * dprobs, axis=1, keepdims=True))
        for name, g in cnn_backward(cnn, cache, dlogits).items():
            if name in g_cnn:
                g_cnn[name] += g
            else:
                g_cnn[name] = g
    return float(np.mean(losses)), g_c, g_cnn


def train_joint(
    samples: list[SpeechFusionSample],
    cnn: CnnModel,
    config: FusionConfig | None = None,
    speech_config: TrainConfig | None = None,
    iterations: int = 50,
):
    """Alternate coefficient steps and Adam steps on the CNN through the x3 chain.

    Mutates ``cnn`` in place; returns ``(FusionResult, cnn)``.
    """
    config = config or FusionConfig()
    speech_config = speech_config or TrainConfig()
    if not samples:
        raise SchemaError("need at least one training sample")
    c = np.asarray(config.initial, dtype=float)
    if config.constrained:
        c = project_to_simplex(c)
    optimizer = Adam.from_config(speech_config)
    history = []
    for _ in range(iterations):
        loss, g_c, g_cnn = joint_gradients(c, cnn, samples, config.theta)
        if not math.isfinite(loss):
            raise NumericError("non-finite loss during joint fine-tuning")
        history.append(loss)
        step = c - config.learning_rate * g_c
        c = project_to_simplex(step) if config.constrained else step
        optimizer.step(cnn.params, g_cnn)
    history.append(joint_loss(c, cnn, samples, config.theta))
    return FusionResult(FusionCoefficients.from_array(c, config.theta, config.constrained), history, iterations, False), cnn


# -- file formats -----------------------------------------------------------


def load_fusion_samples(csv_path: str | Path):
    """``x1,x2,x3,x4,y_hat`` CSV (optional ``id``) into (ids, X, y)."""
    csv_path = Path(csv_path)
    if not csv_path.is_file():
        raise InputError(f"fusion samples not found: {csv_path}")
    with csv_path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in (*BRANCHES, "y_hat"):
            if col not in header:
                raise SchemaError(f"{csv_path}: missing column {col!r}")
        ids, X, y = [], [], []
        for i, row in enumerate(reader):
            try:
                X.append([float(row[b]) for b in BRANCHES])
                y.append(float(row["y_hat"]))
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"{csv_path}: non-numeric cell in row {i} ({exc})") from exc
            ids.append(row.get("id") or str(i))
    X, y = _as_training_arrays(np.array(X).reshape(-1, 4), y)
    return ids, X, y


def save_fusion_samples(csv_path: str | Path, X, y, ids=None) -> None:
    with Path(csv_path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow((["id"] if ids is not None else []) + [*BRANCHES, "y_hat"])
        for i, (row, t) in enumerate(zip(np.asarray(X), np.asarray(y))):
            writer.writerow(([ids[i]] if ids is not None else []) + [repr(float(v)) for v in row] + [repr(float(t))])


def write_loss_history(history, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss"])
        for i, loss in enumerate(history):
            writer.writerow([i, repr(float(loss))])
