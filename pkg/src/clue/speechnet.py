"""Speech-emotion 1-D CNN, its trainer, windowed emotion timelines and macro metrics.

Layer stack (channels-last, B = batch)::

    input      [B, 180]        -> treated as [B, 180, 1]
    conv1      [B, 161, 128]   kernel 20, stride 1, valid
    bn1 + relu
    conv2      [B, 152, 64]    kernel 10, stride 1, valid
    bn2 + relu
    flatten    [B, 9728]
    dense1     [B, 520]
    dense2     [B, 8]          softmax

Everything is plain numpy in float64; convolutions are unrolled into matrix
products over sliding windows.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dsp
from .corpus import read_wav, resample_linear
from .errors import InputError, NumericError, SchemaError

FORMAT_VERSION = 1
SPEECH_CLASSES = ("angry", "calm", "disgust", "fearful", "happy", "neutral", "sad", "surprised")
INPUT_LENGTH = dsp.FEATURE_LENGTH
CONV1_FILTERS, CONV1_KERNEL = 128, 20
CONV2_FILTERS, CONV2_KERNEL = 64, 10
CONV1_LENGTH = INPUT_LENGTH - CONV1_KERNEL + 1
CONV2_LENGTH = CONV1_LENGTH - CONV2_KERNEL + 1
FLAT_SIZE = CONV2_LENGTH * CONV2_FILTERS
HIDDEN = 520
BN_EPS = 1e-5
BN_MOMENTUM = 0.9

WINDOW_SECONDS = 10.0
HOP_SECONDS = 10.0
MIN_TAIL_SECONDS = 5.0

# Order matters: serialization and parameter accounting follow it.
PARAM_SHAPES = {
    "conv1.weight": (CONV1_KERNEL, 1, CONV1_FILTERS),
    "conv1.bias": (CONV1_FILTERS,),
    "bn1.gamma": (CONV1_FILTERS,),
    "bn1.beta": (CONV1_FILTERS,),
    "bn1.running_mean": (CONV1_FILTERS,),
    "bn1.running_var": (CONV1_FILTERS,),
    "conv2.weight": (CONV2_KERNEL, CONV1_FILTERS, CONV2_FILTERS),
    "conv2.bias": (CONV2_FILTERS,),
    "bn2.gamma": (CONV2_FILTERS,),
    "bn2.beta": (CONV2_FILTERS,),
    "bn2.running_mean": (CONV2_FILTERS,),
    "bn2.running_var": (CONV2_FILTERS,),
    "dense1.weight": (FLAT_SIZE, HIDDEN),
    "dense1.bias": (HIDDEN,),
    "dense2.weight": (HIDDEN, len(SPEECH_CLASSES)),
    "dense2.bias": (len(SPEECH_CLASSES),),
}
NON_TRAINABLE = frozenset(n for n in PARAM_SHAPES if "running" in n)
TRAINABLE = tuple(n for n in PARAM_SHAPES if n not in NON_TRAINABLE)

_LABEL_ALIASES = {"fear": "fearful", "surprise": "surprised", "anger": "angry", "sadness": "sad", "happiness": "happy"}


@dataclass
class CnnModel:
    params: dict[str, np.ndarray]
    classes: tuple[str, ...] = SPEECH_CLASSES
    mode: str = "eval"
    # Per-feature input standardization fitted on training data; not a layer parameter.
    input_mean: np.ndarray = field(default_factory=lambda: np.zeros(INPUT_LENGTH))
    input_scale: np.ndarray = field(default_factory=lambda: np.ones(INPUT_LENGTH))

    def __post_init__(self):
        for name, shape in PARAM_SHAPES.items():
            if name not in self.params:
                raise SchemaError(f"missing CNN parameter {name}")
            arr = np.asarray(self.params[name], dtype=np.float64)
            if arr.shape != shape:
                raise SchemaError(f"{name}: expected shape {shape}, got {arr.shape}")
            self.params[name] = arr
        if self.mode not in ("train", "eval"):
            raise SchemaError(f"mode must be 'train' or 'eval', got {self.mode!r}")
        self.input_mean = np.asarray(self.input_mean, dtype=np.float64).reshape(INPUT_LENGTH)
        self.input_scale = np.asarray(self.input_scale, dtype=np.float64).reshape(INPUT_LENGTH)

    def parameter_counts(self) -> dict[str, int]:
        trainable = sum(self.params[n].size for n in TRAINABLE)
        frozen = sum(self.params[n].size for n in NON_TRAINABLE)
        return {"total": trainable + frozen, "trainable": trainable, "non_trainable": frozen}

    def layer_parameter_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for name, arr in self.params.items():
            layer = name.split(".")[0]
            counts[layer] = counts.get(layer, 0) + arr.size
        return counts

    def copy(self) -> "CnnModel":
        return CnnModel({k: v.copy() for k, v in self.params.items()}, self.classes, self.mode,
                        self.input_mean.copy(), self.input_scale.copy())

    def save(self, path: str | Path) -> None:
        meta = {
            "format_version": FORMAT_VERSION,
            "classes": list(self.classes),
            "layers": [[n, list(s)] for n, s in PARAM_SHAPES.items()],
        }
        arrays = {n: self.params[n] for n in PARAM_SHAPES}
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.array(json.dumps(meta)), input_mean=self.input_mean,
                     input_scale=self.input_scale, **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "CnnModel":
        path = Path(path)
        if not path.is_file():
            raise InputError(f"CNN model not found: {path}")
        try:
            with np.load(path, allow_pickle=False) as data:
                meta = json.loads(str(data["__meta__"]))
                params = {n: data[n] for n in PARAM_SHAPES}
                mean, scale = data["input_mean"], data["input_scale"]
        except (KeyError, ValueError, OSError) as exc:
            raise SchemaError(f"{path}: not a CNN model file ({exc})") from exc
        if meta.get("format_version") != FORMAT_VERSION:
            raise SchemaError(f"{path}: unsupported format_version {meta.get('format_version')!r}")
        return cls(params, tuple(meta["classes"]), "eval", mean, scale)


def init_cnn(seed: int = 0) -> CnnModel:
    """He-normal weights, zero biases, unit BN scale, running statistics (0, 1)."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in PARAM_SHAPES.items():
        if name.endswith(".weight"):
            fan_in = int(np.prod(shape[:-1]))
            params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        elif name.endswith(("gamma", "running_var")):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return CnnModel(params)


def _windows(x: np.ndarray, k: int) -> np.ndarray:
    # (B, L, C) -> (B, L-k+1, k, C)
    return np.lib.stride_tricks.sliding_window_view(x, k, axis=1).transpose(0, 1, 3, 2)


def _bn_forward(h, gamma, beta, mean, var, training):
    if training:
        mu = h.mean(axis=(0, 1))
        var_b = h.var(axis=(0, 1))
    else:
        mu, var_b = mean, var
    inv_std = 1.0 / np.sqrt(var_b + BN_EPS)
    xhat = (h - mu) * inv_std
    return gamma * xhat + beta, (xhat, inv_std, mu, var_b)


def _bn_backward(dy, gamma, cache, training):
    xhat, inv_std, _, _ = cache
    dgamma = np.sum(dy * xhat, axis=(0, 1))
    dbeta = np.sum(dy, axis=(0, 1))
    dxhat = dy * gamma
    if not training:
        return dxhat * inv_std, dgamma, dbeta
    m = dy.shape[0] * dy.shape[1]
    dx = inv_std / m * (m * dxhat - dxhat.sum(axis=(0, 1)) - xhat * np.sum(dxhat * xhat, axis=(0, 1)))
    return dx, dgamma, dbeta


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(z))


def _check_batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != INPUT_LENGTH:
        raise SchemaError(f"CNN input must have shape (B, {INPUT_LENGTH}), got {x.shape}")
    return x


def cnn_logits(model: CnnModel, batch, mode: str | None = None, gates=None):
    """Forward pass to pre-softmax logits; returns ``(logits, cache)`` for backprop.

    ``gates`` optionally fixes the two ReLU on/off patterns instead of
    deriving them from the pre-activations (used by the gradient check).
    """
    mode = mode or model.mode
    training = mode == "train"
    p = model.params
    x = (_check_batch(batch) - model.input_mean) / model.input_scale
    B = x.shape[0]

    cols1 = np.ascontiguousarray(_windows(x[:, :, None], CONV1_KERNEL)).reshape(B * CONV1_LENGTH, CONV1_KERNEL)
    z1 = (cols1 @ p["conv1.weight"].reshape(CONV1_KERNEL, CONV1_FILTERS) + p["conv1.bias"]).reshape(B, CONV1_LENGTH, CONV1_FILTERS)
    n1, bn1 = _bn_forward(z1, p["bn1.gamma"], p["bn1.beta"], p["bn1.running_mean"], p["bn1.running_var"], training)
    g1 = n1 > 0 if gates is None else gates[0]
    a1 = n1 * g1

    cols2 = np.ascontiguousarray(_windows(a1, CONV2_KERNEL)).reshape(B * CONV2_LENGTH, CONV2_KERNEL * CONV1_FILTERS)
    z2 = (cols2 @ p["conv2.weight"].reshape(-1, CONV2_FILTERS) + p["conv2.bias"]).reshape(B, CONV2_LENGTH, CONV2_FILTERS)
    n2, bn2 = _bn_forward(z2, p["bn2.gamma"], p["bn2.beta"], p["bn2.running_mean"], p["bn2.running_var"], training)
    g2 = n2 > 0 if gates is None else gates[1]
    a2 = n2 * g2

    flat = a2.reshape(B, FLAT_SIZE)
    h = flat @ p["dense1.weight"] + p["dense1.bias"]
    logits = h @ p["dense2.weight"] + p["dense2.bias"]
    cache = dict(training=training, cols1=cols1, z1=z1, n1=n1, g1=g1, bn1=bn1, a1=a1, cols2=cols2,
                 z2=z2, n2=n2, g2=g2, bn2=bn2, flat=flat, h=h)
    return logits, cache


def cnn_forward(model: CnnModel, batch, mode: str | None = None) -> np.ndarray:
    """Class probabilities, shape (B, 8)."""
    logits, _ = cnn_logits(model, batch, mode)
    return softmax(logits)


def cnn_backward(model: CnnModel, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every trainable parameter, given dLoss/dlogits."""
    p = model.params
    training = cache["training"]
    B = dlogits.shape[0]
    g = {}

    g["dense2.weight"] = cache["h"].T @ dlogits
    g["dense2.bias"] = dlogits.sum(axis=0)
    dh = dlogits @ p["dense2.weight"].T
    g["dense1.weight"] = cache["flat"].T @ dh
    g["dense1.bias"] = dh.sum(axis=0)
    da2 = (dh @ p["dense1.weight"].T).reshape(B, CONV2_LENGTH, CONV2_FILTERS)

    dn2 = da2 * cache["g2"]
    dz2, g["bn2.gamma"], g["bn2.beta"] = _bn_backward(dn2, p["bn2.gamma"], cache["bn2"], training)
    dz2 = dz2.reshape(B * CONV2_LENGTH, CONV2_FILTERS)
    g["conv2.weight"] = (cache["cols2"].T @ dz2).reshape(PARAM_SHAPES["conv2.weight"])
    g["conv2.bias"] = dz2.sum(axis=0)
    dcols2 = (dz2 @ p["conv2.weight"].reshape(-1, CONV2_FILTERS).T).reshape(B, CONV2_LENGTH, CONV2_KERNEL, CONV1_FILTERS)
    da1 = np.zeros_like(cache["a1"])
    for k in range(CONV2_KERNEL):
        da1[:, k : k + CONV2_LENGTH, :] += dcols2[:, :, k, :]

    dn1 = da1 * cache["g1"]
    dz1, g["bn1.gamma"], g["bn1.beta"] = _bn_backward(dn1, p["bn1.gamma"], cache["bn1"], training)
    dz1 = dz1.reshape(B * CONV1_LENGTH, CONV1_FILTERS)
    g["conv1.weight"] = (cache["cols1"].T @ dz1).reshape(PARAM_SHAPES["conv1.weight"])
    g["conv1.bias"] = dz1.sum(axis=0)
    return g


def one_hot(labels, n_classes: int = len(SPEECH_CLASSES)) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim == 2:
        return labels.astype(np.float64)
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels.astype(int)] = 1.0
    return out


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> float:
    return float(-np.mean(np.sum(targets * log_softmax(logits), axis=1)))


def loss_and_grads(model: CnnModel, batch, labels, mode: str = "train", gates=None):
    """Mean categorical cross-entropy and its parameter gradients (running stats untouched)."""
    targets = one_hot(labels)
    logits, cache = cnn_logits(model, batch, mode, gates)
    loss = cross_entropy(logits, targets)
    dlogits = (softmax(logits) - targets) / len(targets)
    return loss, cnn_backward(model, cache, dlogits), cache


def _relu_masks(cache: dict) -> tuple[np.ndarray, np.ndarray]:
    return cache["g1"], cache["g2"]


def gradient_check(model: CnnModel, batch, labels, n_params: int = 200, eps: float = 1e-4, seed: int = 0,
                   mode: str = "train") -> dict:
    """Compare backprop gradients with central differences on randomly drawn parameters.

    When a +/- ``eps`` step flips a ReLU gate the loss has a kink inside the
    differencing interval, so for that draw the difference is recomputed with
    the gates held at their values at the base point. That is the smooth
    piece whose gradient backprop returns. Such draws are counted in
    ``kink_crossings`` and flagged per record. Relative error is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    rng = np.random.default_rng(seed)
    base_loss, grads, cache = loss_and_grads(model, batch, labels, mode)
    base_masks = _relu_masks(cache)
    sizes = np.array([model.params[n].size for n in TRAINABLE], dtype=float)
    records, kinks = [], 0
    for _ in range(n_params):
        # Half the draws pick a layer uniformly so small layers are not drowned out by dense1.
        if rng.random() < 0.5:
            name = TRAINABLE[rng.integers(len(TRAINABLE))]
        else:
            name = TRAINABLE[rng.choice(len(TRAINABLE), p=sizes / sizes.sum())]
        arr = model.params[name]
        flat = int(rng.integers(arr.size))
        idx = np.unravel_index(flat, arr.shape)
        old = arr[idx]
        arr[idx] = old + eps
        lp, _, cp = loss_and_grads(model, batch, labels, mode)
        arr[idx] = old - eps
        lm, _, cm = loss_and_grads(model, batch, labels, mode)
        arr[idx] = old
        crossed = any(not np.array_equal(a, b) for a, b in zip(base_masks, _relu_masks(cp))) or any(
            not np.array_equal(a, b) for a, b in zip(base_masks, _relu_masks(cm))
        )
        if crossed:
            kinks += 1
            arr[idx] = old + eps
            lp = loss_and_grads(model, batch, labels, mode, base_masks)[0]
            arr[idx] = old - eps
            lm = loss_and_grads(model, batch, labels, mode, base_masks)[0]
            arr[idx] = old
        numeric = (lp - lm) / (2 * eps)
        analytic = float(grads[name][idx])
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        records.append({"param": name, "index": tuple(int(i) for i in idx), "analytic": analytic,
                        "numeric": float(numeric), "rel_error": err, "frozen_gates": bool(crossed)})
    return {
        "loss": base_loss,
        "records": records,
        "max_rel_error": max((r["rel_error"] for r in records), default=float("nan")),
        "kink_crossings": kinks,
    }


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 190
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.learning_rate < 0:
            raise SchemaError("batch_size and epochs must be positive, learning_rate non-negative")


class Adam:
    def __init__(self, names, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.names = tuple(names)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    @classmethod
    def from_config(cls, config: TrainConfig, names=TRAINABLE) -> "Adam":
        return cls(names, config.learning_rate, config.beta1, config.beta2, config.epsilon)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        if self.lr == 0:
            return
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name in self.names:
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            denom = np.sqrt(v / c2)
            denom += self.eps
            params[name] -= (self.lr / c1) * m / denom


def _update_running_stats(model: CnnModel, cache: dict) -> None:
    for layer in ("bn1", "bn2"):
        _, _, mu, var = cache[layer]
        rm, rv = model.params[f"{layer}.running_mean"], model.params[f"{layer}.running_var"]
        rm *= BN_MOMENTUM
        rm += (1.0 - BN_MOMENTUM) * mu
        rv *= BN_MOMENTUM
        rv += (1.0 - BN_MOMENTUM) * var


def train_step(model: CnnModel, batch, labels, config: TrainConfig, optimizer: Adam) -> float:
    """One Adam step on one mini-batch in train mode; returns the batch loss."""
    loss, grads, cache = loss_and_grads(model, batch, labels, "train")
    if not np.isfinite(loss):
        raise NumericError(f"non-finite training loss {loss!r} at optimizer step {optimizer.t + 1}")
    if config.learning_rate == 0:
        return loss
    optimizer.step(model.params, grads)
    _update_running_stats(model, cache)
    return loss


def accuracy(model: CnnModel, X, y) -> float:
    pred = np.argmax(cnn_forward(model, X, "eval"), axis=1)
    return float(np.mean(pred == np.asarray(y)))


def fit_input_standardization(model: CnnModel, X: np.ndarray) -> None:
    X = np.asarray(X, dtype=np.float64)
    scale = X.std(axis=0)
    model.input_mean = X.mean(axis=0)
    model.input_scale = np.where(scale > 1e-12, scale, 1.0)


def train_cnn(
    X,
    y,
    config: TrainConfig | None = None,
    validation: tuple[np.ndarray, np.ndarray] | None = None,
    model: CnnModel | None = None,
    standardize: bool = True,
    progress=None,
    target_accuracy: float | None = None,
):
    """Mini-batch Adam training.

    Returns ``(model, history)``; each history row holds the epoch, eval-mode
    accuracy on the training and validation sets, and the mean batch loss.
    With ``target_accuracy`` set, training stops after the first epoch whose
    training accuracy reaches it.
    """
    config = config or TrainConfig()
    X = _check_batch(X)
    y = np.asarray(y, dtype=int)
    if len(X) < config.batch_size:
        raise SchemaError(f"dataset has {len(X)} samples, fewer than one batch of {config.batch_size}")
    rng = np.random.default_rng(config.seed)
    model = model or init_cnn(int(rng.integers(2**31)))
    if standardize:
        fit_input_standardization(model, X)
    optimizer = Adam.from_config(config)
    history = []
    for epoch in range(1, config.epochs + 1):
        model.mode = "train"
        order = rng.permutation(len(X))
        losses = []
        for start in range(0, len(X), config.batch_size):
            sel = order[start : start + config.batch_size]
            losses.append(train_step(model, X[sel], y[sel], config, optimizer))
        model.mode = "eval"
        row = {"epoch": epoch, "train_acc": accuracy(model, X, y), "val_acc": float("nan"), "loss": float(np.mean(losses))}
        if validation is not None:
            row["val_acc"] = accuracy(model, *validation)
        history.append(row)
        if progress is not None:
            progress(row)
        if target_accuracy is not None and row["train_acc"] >= target_accuracy:
            break
    return model, history


def write_history(history, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_acc", "val_acc", "loss"])
        for row in history:
            writer.writerow([row["epoch"], repr(row["train_acc"]), repr(row["val_acc"]), repr(row["loss"])])


def canonical_speech_label(label: str) -> int:
    name = label.strip().lower()
    name = _LABEL_ALIASES.get(name, name)
    if name not in SPEECH_CLASSES:
        raise SchemaError(f"unknown speech emotion label {label!r}; expected one of {SPEECH_CLASSES}")
    return SPEECH_CLASSES.index(name)


def load_speech_dataset(index_csv: str | Path, config: dsp.DspConfig = dsp.DEFAULT_CONFIG):
    """Read a ``path,label`` CSV index of WAV clips into (features (N, 180), labels (N,)).

    Paths are relative to the index file. Extra columns such as intensity are ignored.
    """
    index_csv = Path(index_csv)
    if not index_csv.is_file():
        raise InputError(f"dataset index not found: {index_csv}")
    X, y = [], []
    with index_csv.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or "path" not in reader.fieldnames or "label" not in reader.fieldnames:
            raise SchemaError(f"{index_csv}: header must contain 'path' and 'label'")
        for row in reader:
            samples = read_wav(index_csv.parent / row["path"], config.sample_rate)
            if len(samples) < config.frame_length:
                samples = np.pad(samples, (0, config.frame_length - len(samples)))
            X.append(dsp.speech_feature_vector(samples, config))
            y.append(canonical_speech_label(row["label"]))
    if not X:
        raise SchemaError(f"{index_csv}: no samples")
    return np.array(X), np.array(y, dtype=int)


@dataclass
class EmotionTimeline:
    starts: np.ndarray
    probs: np.ndarray
    classes: tuple[str, ...] = SPEECH_CLASSES

    def __post_init__(self):
        self.starts = np.asarray(self.starts, dtype=np.float64).reshape(-1)
        self.probs = np.asarray(self.probs, dtype=np.float64).reshape(len(self.starts), len(self.classes))
        if np.any(np.diff(self.starts) < 0):
            raise SchemaError("timeline windows must be sorted by start time")
        if len(self.probs) and (np.any(self.probs < 0) or np.any(np.abs(self.probs.sum(axis=1) - 1) > 1e-6)):
            raise SchemaError("each window distribution must be nonnegative and sum to 1")

    def __len__(self) -> int:
        return len(self.starts)

    def to_rows(self) -> list[dict]:
        return [{"start": float(s), **{c: float(v) for c, v in zip(self.classes, p)}} for s, p in zip(self.starts, self.probs)]

    def save_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["start", *self.classes])
            for s, p in zip(self.starts, self.probs):
                writer.writerow([repr(float(s)), *(repr(float(v)) for v in p)])

    @classmethod
    def load_csv(cls, path: str | Path) -> "EmotionTimeline":
        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(v) for v in r] for r in reader if r]
        if header[0] != "start":
            raise SchemaError(f"{path}: first column must be 'start'")
        arr = np.array(rows).reshape(-1, len(header))
        return cls(arr[:, 0], arr[:, 1:], tuple(header[1:]))


def window_audio(audio: np.ndarray, sample_rate: int) -> tuple[np.ndarray, np.ndarray]:
    """Split into 10 s windows with a 10 s hop.

    A trailing remainder of at least 5 s is zero-padded into a full window;
    shorter remainders are dropped. Returns ``(starts_seconds, windows)``.
    """
    audio = np.asarray(audio, dtype=np.float64)
    win = int(round(WINDOW_SECONDS * sample_rate))
    hop = int(round(HOP_SECONDS * sample_rate))
    min_tail = int(round(MIN_TAIL_SECONDS * sample_rate))
    if len(audio) < min_tail:
        raise SchemaError(f"audio lasts {len(audio) / sample_rate:.2f} s; at least {MIN_TAIL_SECONDS} s needed")
    starts, chunks = [], []
    pos = 0
    while pos < len(audio):
        chunk = audio[pos : pos + win]
        if len(chunk) < win:
            if len(chunk) < min_tail:
                break
            chunk = np.pad(chunk, (0, win - len(chunk)))
        starts.append(pos / sample_rate)
        chunks.append(chunk)
        pos += hop
    return np.array(starts), np.array(chunks)


def window_features(audio, sample_rate: int, config: dsp.DspConfig = dsp.DEFAULT_CONFIG):
    """(starts, per-window 180-vectors) after resampling to the DSP rate."""
    audio = np.asarray(audio, dtype=np.float64)
    if sample_rate != config.sample_rate:
        audio = resample_linear(audio, sample_rate, config.sample_rate)
    starts, chunks = window_audio(audio, config.sample_rate)
    return starts, np.array([dsp.speech_feature_vector(c, config) for c in chunks])


def predict_emotion_timeline(model: CnnModel, audio, sample_rate: int, config: dsp.DspConfig = dsp.DEFAULT_CONFIG) -> EmotionTimeline:
    starts, feats = window_features(audio, sample_rate, config)
    return EmotionTimeline(starts, cnn_forward(model, feats, "eval"), model.classes)


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Counts with true classes on rows and predicted classes on columns."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int)), 1)
    return cm


def macro_average(per_class) -> float:
    per_class = np.asarray(per_class, dtype=float)
    return float(per_class.sum() / len(per_class))


def _safe_ratio(num, den):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def prf_macro(confusion) -> dict:
    """Per-class precision, recall and F1 plus their unweighted class means."""
    cm = np.asarray(confusion)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise SchemaError("confusion matrix must be square")
    if np.any(cm < 0):
        raise SchemaError("confusion counts must be nonnegative")
    tp = np.diag(cm).astype(float)
    precision = _safe_ratio(tp, cm.sum(axis=0))
    recall = _safe_ratio(tp, cm.sum(axis=1))
    f1 = _safe_ratio(2 * precision * recall, precision + recall)
    return {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "macro_precision": macro_average(precision),
        "macro_recall": macro_average(recall),
        "macro_f1": macro_average(f1),
        "accuracy": float(tp.sum() / cm.sum()) if cm.sum() else 0.0,
    }


def train_config_dict(config: TrainConfig) -> dict:
    return asdict(config)
