"""``ser-engine`` command line.

Every command exits 0 on success. On failure a single JSON line
``{"error": <kind>, "message": <text>, ...}`` goes to stderr and the exit
status is non-zero.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import multiprocessing
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .audio import (EMOTIONS, ManifestEntry, build_manifest, decode_wav, fix_duration, read_manifest,
                    resample, split_manifest, write_manifest)
from .augment import expand
from .config import EngineConfig, load_config
from .errors import ConfigError, SerError
from .features import (FeatureSet, FrameConfig, MelConfig, apply_scaler, config_dict, extract_features,
                       fit_scaler, log_power_spectrogram, one_hot, read_features, write_features,
                       write_spectrogram)
from .metrics import bleu_report, confusion, corpus_stats, prf_report, translation_block
from .nn import build_model, load_checkpoint, save_checkpoint, train
from .pipeline import PipelineError, SessionRecord, bind_stage, detect_emotion, load_bindings, run_pipeline
from .textprep import preprocess, read_tsv, split_records, write_tsv

log = logging.getLogger("ser_engine")


class CliError(Exception):
    def __init__(self, kind, message, **extra):
        super().__init__(message)
        self.kind = kind
        self.extra = extra


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", f"{self.prog}: {message}")


def _dump(obj, path=None):
    text = json.dumps(obj, ensure_ascii=False, indent=1, sort_keys=True) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _config(args) -> EngineConfig:
    return load_config(args.config, args.seed)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_prepare(args):
    cfg = _config(args)
    entries, warnings = build_manifest(args.data)
    if not entries:
        raise CliError("empty", f"no RAVDESS-named .wav files under {args.data}")
    entries, split_warnings = split_manifest(
        entries, cfg.audio.split, cfg.seed, args.actor_disjoint or cfg.audio.actor_disjoint)
    write_manifest(entries, args.out)
    counts = {s: sum(e.split == s for e in entries) for s in ("train", "val", "test")}
    _dump({"rows": len(entries), "splits": counts, "skipped": len(warnings),
           "warnings": split_warnings})


def _featurize_one(job):
    """Feature rows for one manifest entry (runs in worker processes)."""
    index, path, augment, cfg = job
    clip = fix_duration(resample(decode_wav(path), cfg.audio.sample_rate), cfg.audio.duration)
    clips = expand(clip, cfg.augment, index) if augment else [clip]
    return [extract_features(c, cfg.frame, cfg.mel, expected_length=None).astype(np.float32) for c in clips]


def cmd_featurize(args):
    cfg = _config(args)
    entries = read_manifest(args.manifest)
    if not entries:
        raise CliError("empty", f"manifest {args.manifest} has no rows")
    if args.augment:
        cfg.augment.validate()
    jobs = [(i, e.path, args.augment and e.split == "train", cfg) for i, e in enumerate(entries)]
    n_jobs = args.jobs or os.cpu_count() or 1
    if n_jobs > 1 and len(jobs) > 1:
        with multiprocessing.get_context("spawn").Pool(n_jobs) as pool:
            results = pool.map(_featurize_one, jobs, chunksize=max(1, len(jobs) // (4 * n_jobs)))
    else:
        results = [_featurize_one(j) for j in jobs]
    rows, labels, splits, sources = [], [], [], []
    for e, feats in zip(entries, results):
        for k, f in enumerate(feats):
            rows.append(f)
            labels.append(e.meta.emotion_index)
            splits.append(e.split or "train")
            sources.append(e.path if k == 0 else f"{e.path}#{cfg.augment.variants[k - 1]}")
    widths = {r.shape[0] for r in rows}
    if len(widths) != 1:
        raise CliError("shape", f"clips produced feature rows of different lengths {sorted(widths)}")
    info = {
        "features": {**config_dict(cfg.frame, cfg.mel),
                     "audio": {"sample_rate": cfg.audio.sample_rate, "duration": cfg.audio.duration}},
        "augment": cfg.augment.to_dict() if args.augment else None,
    }
    fs = FeatureSet(np.stack(rows), labels, EMOTIONS, splits, sources, info)
    write_features(fs, args.out)
    _dump({"rows": len(fs), "cols": fs.values.shape[1],
           "splits": {s: splits.count(s) for s in ("train", "val", "test")}})


def _xy(fs: FeatureSet, scaler):
    x = apply_scaler(fs.values, scaler) if len(fs) else fs.values
    return x, one_hot(fs.labels, range(len(fs.class_order)))


def cmd_train(args):
    cfg = _config(args)
    fs = read_features(args.features)
    train_set = fs.select("train")
    val_set = fs.select("val") if fs.splits is not None else None
    if len(train_set) == 0:
        raise CliError("empty", "feature file has no train rows")
    mcfg = cfg.model
    if mcfg.input_len != fs.values.shape[1]:
        log.info("model input_len %d taken from feature width", fs.values.shape[1])
        mcfg.input_len = int(fs.values.shape[1])
    mcfg.n_classes = len(fs.class_order)
    if args.epochs is not None:
        mcfg.epochs = args.epochs
    scaler = fit_scaler(train_set.values)
    x_tr, y_tr = _xy(train_set, scaler)
    x_va = y_va = None
    if val_set is not None and len(val_set):
        x_va, y_va = _xy(val_set, scaler)
    model = build_model(mcfg)
    best, history = train(model, x_tr, y_tr, x_va, y_va)
    extra = {"features": fs.info.get("features") or {}, "best_epoch": history.best_epoch}
    save_checkpoint(best, scaler, args.out, fs.class_order, extra)
    hist_path = args.history or str(args.out) + ".history.json"
    _dump(history.to_dict(), hist_path)
    _dump({"checkpoint": str(args.out), "history": hist_path, "epochs": len(history),
           "best_epoch": history.best_epoch,
           "final_train_accuracy": history.train_accuracy[-1] if len(history) else None,
           "best_val_accuracy": max(history.val_accuracy) if history.val_accuracy else None})


def _evaluate(fs, checkpoint, split):
    model, scaler, class_order, _extra = checkpoint
    subset = fs.select(split) if fs.splits is not None else fs
    if len(subset) == 0:
        raise CliError("empty", f"no rows in split {split!r}")
    x = apply_scaler(subset.values, scaler) if scaler is not None else subset.values
    pred = np.argmax(model.predict_proba(x), axis=1)
    names = list(class_order or fs.class_order)
    report = prf_report(confusion(subset.labels.astype(np.int64), pred, len(names)), names)
    report["split"] = split if fs.splits is not None else "all"
    return report


def cmd_evaluate(args):
    fs = read_features(args.features)
    report = _evaluate(fs, load_checkpoint(args.checkpoint), args.split)
    _dump(report, args.out)
    _dump({"macro_f1": report["macro_avg"]["f1"], "accuracy": report["accuracy"],
           "support": report["macro_avg"]["support"]})


def _feature_configs(extra, cfg):
    feats = extra.get("features") or {}
    frame = FrameConfig(**feats["frame"]) if "frame" in feats else cfg.frame
    mel = MelConfig(**feats["mel"]) if "mel" in feats else cfg.mel
    audio = feats.get("audio") or {}
    return frame, mel, audio.get("sample_rate", cfg.audio.sample_rate), audio.get("duration", cfg.audio.duration)


def cmd_predict(args):
    cfg = _config(args)
    model, scaler, class_order, extra = load_checkpoint(args.checkpoint)
    frame, mel, rate, duration = _feature_configs(extra, cfg)
    label, conf, probs = detect_emotion(args.wav, model, scaler, class_order or EMOTIONS,
                                        frame, mel, rate, duration)
    _dump({"emotion": label, "confidence": conf, "probabilities": probs})


def cmd_spectrogram(args):
    cfg = _config(args)
    clip = resample(decode_wav(args.wav), cfg.audio.sample_rate)
    matrix = log_power_spectrogram(clip, cfg.frame, cfg.mel.n_fft)
    write_spectrogram(matrix, args.out, clip.sample_rate, cfg.frame)
    _dump({"frames": int(matrix.shape[0]), "bins": int(matrix.shape[1])})


def _read_text(path):
    return Path(path).read_text(encoding="utf-8")


def cmd_bleu(args):
    cfg = _config(args)
    rows = read_tsv(_read_text(args.tsv), 3)
    if not rows:
        raise CliError("empty", f"{args.tsv} has no rows")
    refs = [r[1] for r in rows]
    hyps = [r[2] for r in rows]
    iterations = cfg.metrics.bootstrap if args.bootstrap is None else args.bootstrap
    report = bleu_report(hyps, refs, iterations, cfg.metrics.alpha, cfg.seed, cfg.metrics.max_n)
    block = translation_block(report, args.human_eval)
    block.update({"sentences": len(rows), "bootstrap_iterations": iterations if len(rows) >= 2 else 0,
                  "seed": cfg.seed})
    _dump(block, args.out)
    _dump({"bleu": block["bleu"], "ci": block["ci"]})


def cmd_textprep(args):
    cfg = _config(args)
    rows = read_tsv(_read_text(args.input), 2)
    out = []
    for en, ar in rows:
        if args.lang == "en":
            out.append([preprocess(en, "en", args.max_tokens), ar])
        else:
            out.append([en, preprocess(ar, "ar", args.max_tokens)])
    Path(args.out).write_text(write_tsv(out), encoding="utf-8")
    summary = {"rows": len(out)}
    if args.split:
        stem = str(args.out)[:-4] if str(args.out).endswith(".tsv") else str(args.out)
        for name, part in zip(("train", "val", "test"), split_records(out, seed=cfg.seed)):
            Path(f"{stem}.{name}.tsv").write_text(write_tsv(part), encoding="utf-8")
            summary[name] = len(part)
    _dump(summary)


def cmd_corpus_stats(args):
    cfg = _config(args)
    k = cfg.metrics.top_k if args.k is None else args.k
    rows = read_tsv(_read_text(args.input), 2)
    result = {}
    for col, name in enumerate(("en", "ar")):
        stats = corpus_stats([r[col] for r in rows], k)
        stats["top"] = [{"word": w, "count": c} for w, c in stats["top"]]
        result[name] = stats
    _dump(result, args.out)


def cmd_pipeline(args):
    cfg = _config(args)
    if args.stages:
        bindings = load_bindings(args.stages)
    else:
        bindings = {kind: bind_stage(kind, **{"transport": spec["transport"],
                                               **{k: v for k, v in spec.items() if k != "transport"}})
                    for kind, spec in cfg.stages.items()}
    try:
        record = run_pipeline(args.wav, args.checkpoint, bindings, args.emotion_only, args.log)
    except PipelineError as exc:
        if args.out:
            Path(args.out).write_text(exc.record.to_json() + "\n", encoding="utf-8")
        raise CliError("stage", str(exc), stage=exc.stage, record=exc.record.to_dict()) from None
    text = record.to_json() + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_synth(args):
    from .synth import write_corpus

    cfg = _config(args)
    paths = write_corpus(args.out, args.per_class, cfg.seed, cfg.audio.sample_rate)
    _dump({"files": len(paths), "root": str(args.out)})


def cmd_hash(args):
    """SHA-256 of files, for checking that two runs produced identical artifacts."""
    _dump({p: hashlib.sha256(Path(p).read_bytes()).hexdigest() for p in args.files})


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--seed", type=int, help="overrides every seed in the config")
    common.add_argument("--log-level", default="WARNING")

    parser = _Parser(prog="ser-engine", description="Speech emotion recognition engine")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        p.set_defaults(func=func)
        return p

    p = add("prepare", cmd_prepare, "scan a RAVDESS tree and write a split manifest")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--actor-disjoint", action="store_true")

    p = add("featurize", cmd_featurize, "extract a feature matrix from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--augment", action="store_true", help="expand train rows with augmented copies")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")

    p = add("train", cmd_train, "train the CNN on a feature file")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--history", help="history JSON path (default: <out>.history.json)")
    p.add_argument("--epochs", type=int)

    p = add("evaluate", cmd_evaluate, "per-class precision/recall/F1 report")
    p.add_argument("--features", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))

    p = add("predict", cmd_predict, "classify one WAV file")
    p.add_argument("--wav", required=True)
    p.add_argument("--checkpoint", required=True)

    p = add("spectrogram", cmd_spectrogram, "log-power spectrogram as CSV")
    p.add_argument("--wav", required=True)
    p.add_argument("--out", required=True)

    p = add("bleu", cmd_bleu, "corpus BLEU of source/reference/hypothesis TSV")
    p.add_argument("--tsv", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bootstrap", type=int, help="bootstrap resamples (0 disables the interval)")
    p.add_argument("--human-eval", type=float, help="externally collected mean human score")

    p = add("textprep", cmd_textprep, "clean an en/ar TSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lang", required=True, choices=("en", "ar"))
    p.add_argument("--max-tokens", type=int, default=128)
    p.add_argument("--split", action="store_true", help="also write 80/10/10 train/val/test files")

    p = add("corpus-stats", cmd_corpus_stats, "top-k words and mean sentence length per language")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--out")

    p = add("pipeline", cmd_pipeline, "emotion detection followed by ASR, MT and TTS stages")
    p.add_argument("--wav", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--stages", help="stage bindings JSON (default: config 'stages' section)")
    p.add_argument("--out")
    p.add_argument("--log", help="append the session record to this JSONL file")
    p.add_argument("--emotion-only", action="store_true")

    p = add("synth", cmd_synth, "write a synthetic tone/noise emotion corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=40)

    p = add("hash", cmd_hash, "SHA-256 of files")
    p.add_argument("files", nargs="+")
    return parser


def _error_line(kind, message, **extra):
    payload = {"error": kind, "message": " ".join(str(message).split()), **extra}
    return json.dumps(payload, ensure_ascii=False, sort_keys=True, default=str)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except CliError as exc:
        print(_error_line(exc.kind, exc), file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except CliError as exc:
        print(_error_line(exc.kind, exc, **exc.extra), file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(_error_line("config", exc, problems=exc.problems), file=sys.stderr)
        return 1
    except SerError as exc:
        print(_error_line(type(exc).__name__, exc), file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(_error_line(type(exc).__name__, exc), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
