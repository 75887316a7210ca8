"""``clue`` command-line interface.

Exit codes: 0 success, 1 unexpected failure, 2 usage, 3 I/O, 4 schema, 5 numeric.
Failures print one JSON object ``{"error", "message", "exit_code"}`` on stderr.
Outputs are staged in a temporary directory under ``--out`` and moved into
place only after the whole command succeeds.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import shutil
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import CONFIG_ENV, PipelineConfig
from .corpus import load_feature_table, load_lecture_bundle
from .emolex import TextEmotionModel, load_external_emotion_probs, load_text_corpus, train_text_emotion
from .errors import ClueError, InputError, SchemaError
from .explain import shap_summary, write_shap_summary
from .forest import ForestModel, forest_mse, train_forest, train_test_split
from .fusion import (
    FusionCoefficients,
    SpeechFusionSample,
    load_fusion_samples,
    train_coefficients,
    train_joint,
    write_loss_history,
)
from .pipeline import analyze_lecture, build_report, score_payload, speech_windows
from .speechnet import (
    CnnModel,
    EmotionTimeline,
    cnn_forward,
    confusion_matrix,
    load_speech_dataset,
    prf_macro,
    train_cnn,
    window_features,
    write_history,
)
from .textfeat import FEATURE_NAMES, extract_text_features, load_lexicons

EXIT_CODES = {"usage": 2, "io": 3, "schema": 4, "numeric": 5}
REFERENCE_FOREST_MSE = 0.0173


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


class OutputStage:
    """Collects a command's output files and publishes them together."""

    def __init__(self, out_dir: str | Path):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=".clue-stage-", dir=self.out_dir))
        self.names: list[str] = []

    def path(self, name: str) -> Path:
        self.names.append(name)
        return self.tmp / name

    def write_text(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text(text, encoding="utf-8")
        return self.out_dir / name

    def write_json(self, name: str, obj) -> Path:
        return self.write_text(name, json.dumps(obj, sort_keys=True, indent=2) + "\n")

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                for name in self.names:
                    os.replace(self.tmp / name, self.out_dir / name)
        finally:
            shutil.rmtree(self.tmp, ignore_errors=True)
        return False


def _load_config(args) -> PipelineConfig:
    path = args.config or os.environ.get(CONFIG_ENV)
    config = PipelineConfig.load(path) if path else PipelineConfig()
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    return config


def _map(fn, items, jobs: int):
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


# -- commands ---------------------------------------------------------------


def cmd_extract_features(args, config: PipelineConfig) -> None:
    lexicons = load_lexicons(config.lexicons)

    def one(manifest):
        bundle = load_lecture_bundle(manifest, config.dsp.sample_rate)
        feats = extract_text_features(bundle.transcript, bundle.title, bundle.duration, lexicons)
        starts, windows = speech_windows(bundle, config)
        return bundle, feats, starts, windows

    results = _map(one, args.manifests, args.jobs)
    ids = [b.id for b, *_ in results]
    if len(set(ids)) != len(ids):
        raise SchemaError("lecture ids must be unique across manifests")
    cnn = CnnModel.load(args.speech_model) if args.speech_model else None
    with OutputStage(args.out) as stage:
        with stage.path("features.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", *FEATURE_NAMES, "median_engagement"])
            for bundle, feats, _, _ in results:
                label = "" if bundle.rating is None else repr(bundle.rating)
                writer.writerow([bundle.id, *(repr(float(v)) for v in feats.to_array()), label])
        for bundle, _, starts, windows in results:
            np.save(stage.path(f"{bundle.id}.speech.npy"), windows)
            if cnn is not None:
                EmotionTimeline(starts, cnn_forward(cnn, windows, "eval"), cnn.classes).save_csv(
                    stage.path(f"{bundle.id}.timeline.csv")
                )
    _emit({"lectures": ids, "lexicon_version": lexicons.version, "out": str(args.out)})


def cmd_train_forest(args, config: PipelineConfig) -> None:
    table = load_feature_table(args.features)
    train, test = train_test_split(table, config.split.forest_train_fraction, config.component_seed("forest_split"))
    model = train_forest(train, config.forest, config.component_seed("forest"), n_jobs=args.jobs,
                         background_rows=config.split.background_rows)
    metrics = {
        "train_rows": len(train),
        "test_rows": len(test),
        "train_mse": forest_mse(model, train),
        "held_out_mse": forest_mse(model, test),
        "reference_mse": REFERENCE_FOREST_MSE,
        "seed": model.seed,
    }
    with OutputStage(args.out) as stage:
        stage.write_text("forest.json", model.dumps())
        stage.write_json("forest_metrics.json", metrics)
    _emit(metrics)


def cmd_train_speech(args, config: PipelineConfig) -> None:
    X, y = load_speech_dataset(args.index, config.dsp)
    rng = np.random.default_rng(config.component_seed("speech_split"))
    perm = rng.permutation(len(X))
    n_val = int(round(config.split.speech_validation_fraction * len(X)))
    val, tr = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    validation = (X[val], y[val]) if n_val else None
    progress = _print_progress if args.verbose else None
    model, history = train_cnn(X[tr], y[tr], config.speech_config(), validation, progress=progress)
    metrics = {"train_rows": int(len(tr)), "validation_rows": int(n_val), "final": history[-1]}
    if n_val:
        pred = np.argmax(cnn_forward(model, X[val], "eval"), axis=1)
        metrics["validation"] = prf_macro(confusion_matrix(y[val], pred, len(model.classes)))
    with OutputStage(args.out) as stage:
        model.save(stage.path("cnn.npz"))
        write_history(history, stage.path("speech_history.csv"))
        stage.write_json("speech_metrics.json", _jsonable(metrics))
    _emit(_jsonable(metrics))


def _print_progress(row) -> None:
    print(json.dumps(_jsonable(row), sort_keys=True), file=sys.stderr)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def cmd_train_text_emotion(args, config: PipelineConfig) -> None:
    pairs = load_text_corpus(args.corpus)
    model = train_text_emotion(pairs, config.text_emotion_config())
    with OutputStage(args.out) as stage:
        model.save(stage.path("text_emotion.json"))
    _emit({"sentences": len(pairs), "vocabulary": len(model.vocabulary)})


def cmd_train_fusion(args, config: PipelineConfig) -> None:
    fusion_config = config.fusion
    if args.unconstrained:
        fusion_config = dataclasses.replace(fusion_config, constrained=False)
    if args.finetune_speech:
        if not args.speech_model:
            raise SchemaError("--finetune-speech needs --speech-model")
        cnn = CnnModel.load(args.speech_model)
        samples = _load_joint_samples(Path(args.samples), config)
        result, cnn = train_joint(samples, cnn, fusion_config, config.speech_config(), args.finetune_iters)
    else:
        _, X, y = load_fusion_samples(args.samples)
        result = train_coefficients(X, fusion_config, y_hat=y)
        cnn = None
    with OutputStage(args.out) as stage:
        stage.write_text("coefficients.json", json.dumps(result.coefficients.to_dict(), sort_keys=True) + "\n")
        write_loss_history(result.loss_history, stage.path("fusion_history.csv"))
        if cnn is not None:
            cnn.save(stage.path("cnn_finetuned.npz"))
    out = result.coefficients.to_dict()
    out.update(iterations=result.iterations, converged=result.converged, final_loss=result.loss_history[-1])
    _emit(out)


def _load_joint_samples(path: Path, config: PipelineConfig) -> list[SpeechFusionSample]:
    if not path.is_file():
        raise InputError(f"fusion samples not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = ("manifest", "x1", "x2", "x4", "y_hat")
        if not reader.fieldnames or any(c not in reader.fieldnames for c in need):
            raise SchemaError(f"{path}: joint training needs columns {need}")
        rows = list(reader)
    samples = []
    for row in rows:
        bundle = load_lecture_bundle(path.parent / row["manifest"], config.dsp.sample_rate)
        _, windows = window_features(bundle.audio, bundle.sample_rate, config.dsp)
        try:
            samples.append(SpeechFusionSample(float(row["x1"]), float(row["x2"]), float(row["x4"]), windows,
                                              float(row["y_hat"])))
        except ValueError as exc:
            raise SchemaError(f"{path}: non-numeric cell ({exc})") from exc
    if not samples:
        raise SchemaError(f"{path}: no samples")
    return samples


def _scoring_inputs(args, config: PipelineConfig):
    forest = ForestModel.load(args.forest)
    cnn = CnnModel.load(args.speech_model)
    text_model = TextEmotionModel.load(args.text_model) if args.text_model else None
    text_probs = load_external_emotion_probs(args.text_probs) if args.text_probs else None
    if text_model is None and text_probs is None:
        raise SchemaError("pass --text-model or --text-probs")
    coeffs = FusionCoefficients.load(args.coefficients) if args.coefficients else FusionCoefficients(
        theta=config.fusion.theta, constrained=config.fusion.constrained
    )
    lexicons = load_lexicons(config.lexicons)

    def analyze(manifest):
        bundle = load_lecture_bundle(manifest, config.dsp.sample_rate)
        return analyze_lecture(bundle, forest, cnn, config, lexicons, text_model, text_probs)

    analyses = _map(analyze, args.manifests, args.jobs)
    ids = [a.lecture_id for a in analyses]
    if len(set(ids)) != len(ids):
        raise SchemaError("lecture ids must be unique across manifests")
    return forest, coeffs, analyses


def cmd_score(args, config: PipelineConfig) -> None:
    _, coeffs, analyses = _scoring_inputs(args, config)
    payloads = [score_payload(a, coeffs) for a in analyses]
    with OutputStage(args.out) as stage:
        for p in payloads:
            stage.write_json(f"{p['id']}.score.json", p)
    for p in payloads:
        _emit(p)


def cmd_report(args, config: PipelineConfig) -> None:
    forest, coeffs, analyses = _scoring_inputs(args, config)
    background = load_feature_table(args.background).features if args.background else None
    reports = [(a.lecture_id, build_report(a, forest, coeffs, config, background, not args.no_shapley))
               for a in analyses]
    with OutputStage(args.out) as stage:
        for lid, rep in reports:
            stage.write_text(f"{lid}.report.json", rep.to_json())
            stage.write_text(f"{lid}.report.txt", rep.render_text())
    for lid, rep in reports:
        _emit({"id": lid, "score": rep.engagement_score, "findings": [f.rule_id for f in rep.findings]})


def cmd_shap_summary(args, config: PipelineConfig) -> None:
    table = load_feature_table(args.features)
    forest = ForestModel.load(args.forest)
    background = load_feature_table(args.background).features if args.background else None
    attributions = shap_summary(table, forest, background)
    with OutputStage(args.out) as stage:
        write_shap_summary(attributions, stage.path("shap_summary.csv"), table.ids)
    _emit({"rows": len(table), "records": len(table) * len(FEATURE_NAMES)})


def cmd_dump_config(args, config: PipelineConfig) -> None:
    text = config.to_json()
    if args.output:
        target = Path(args.output)
        with OutputStage(target.parent if str(target.parent) else ".") as stage:
            stage.write_text(target.name, text)
    else:
        sys.stdout.write(text)


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help=f"JSON or TOML config (falls back to ${CONFIG_ENV})")
    common.add_argument("--seed", type=int, help="root seed overriding the config")
    common.add_argument("--out", default=".", help="output directory (default: current directory)")
    common.add_argument("--jobs", type=int, default=1, help="parallel lectures or trees")

    models = _Parser(add_help=False)
    models.add_argument("manifests", nargs="+", help="lecture manifest JSON file(s)")
    models.add_argument("--forest", required=True, help="forest model JSON")
    models.add_argument("--speech-model", required=True, help="CNN model .npz")
    models.add_argument("--text-model", help="text emotion model JSON")
    models.add_argument("--text-probs", help="external text emotion probabilities JSON (overrides --text-model)")
    models.add_argument("--coefficients", help="fusion coefficients JSON (default: initial coefficients)")

    parser = _Parser(prog="clue", description="Lecture engagement scoring and feedback.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract-features", parents=[common], help="text features and per-window speech vectors")
    p.add_argument("manifests", nargs="+")
    p.add_argument("--speech-model", help="also write emotion timelines with this CNN")
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("train-forest", parents=[common], help="fit the context forest on a feature CSV")
    p.add_argument("features")
    p.set_defaults(func=cmd_train_forest)

    p = sub.add_parser("train-speech", parents=[common], help="train the speech emotion CNN")
    p.add_argument("index", help="CSV with path,label columns")
    p.add_argument("--verbose", action="store_true", help="print per-epoch history to stderr")
    p.set_defaults(func=cmd_train_speech)

    p = sub.add_parser("train-text-emotion", parents=[common], help="train the text emotion head")
    p.add_argument("corpus", help="CSV with text,label columns")
    p.set_defaults(func=cmd_train_text_emotion)

    p = sub.add_parser("train-fusion", parents=[common], help="fit the fusion coefficients")
    p.add_argument("samples", help="CSV with x1,x2,x3,x4,y_hat (or manifest,x1,x2,x4,y_hat for --finetune-speech)")
    p.add_argument("--unconstrained", action="store_true", help="skip the simplex projection")
    p.add_argument("--finetune-speech", action="store_true", help="also update the CNN through the x3 branch")
    p.add_argument("--speech-model", help="CNN to fine-tune")
    p.add_argument("--finetune-iters", type=int, default=50)
    p.set_defaults(func=cmd_train_fusion)

    p = sub.add_parser("score", parents=[common, models], help="engagement score per lecture")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("report", parents=[common, models], help="feedback report per lecture")
    p.add_argument("--background", help="feature CSV used as the Shapley background")
    p.add_argument("--no-shapley", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("shap-summary", parents=[common], help="per-row Shapley values as CSV")
    p.add_argument("features")
    p.add_argument("--forest", required=True)
    p.add_argument("--background", help="feature CSV used as the background")
    p.set_defaults(func=cmd_shap_summary)

    p = sub.add_parser("dump-config", parents=[common], help="print the effective configuration")
    p.add_argument("--output", help="write to this file instead of stdout")
    p.set_defaults(func=cmd_dump_config)
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
    except UsageError as exc:
        return _fail("usage", str(exc), EXIT_CODES["usage"])
    try:
        config = _load_config(args)
        args.func(args, config)
    except ClueError as exc:
        return _fail(exc.kind, str(exc), EXIT_CODES[exc.kind])
    except OSError as exc:
        return _fail("io", str(exc), EXIT_CODES["io"])
    except (FloatingPointError, OverflowError) as exc:
        return _fail("numeric", str(exc), EXIT_CODES["numeric"])
    except Exception as exc:  # noqa: BLE001 - last-resort report for the error contract
        return _fail("internal", f"{type(exc).__name__}: {exc}", 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
