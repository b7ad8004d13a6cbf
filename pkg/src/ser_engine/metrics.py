"""Classification reports, corpus BLEU with bootstrap intervals, corpus statistics."""

from __future__ import annotations

import math
import unicodedata
from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ParameterError


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # counts[true, predicted]

    @property
    def n_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())


def confusion(true_labels, predicted_labels, n_classes=None) -> ConfusionMatrix:
    true_labels = np.asarray(true_labels, dtype=np.int64)
    predicted_labels = np.asarray(predicted_labels, dtype=np.int64)
    if true_labels.shape != predicted_labels.shape:
        raise ParameterError(f"{true_labels.size} true labels but {predicted_labels.size} predictions")
    if n_classes is None:
        n_classes = int(max(true_labels.max(initial=-1), predicted_labels.max(initial=-1))) + 1
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (true_labels, predicted_labels), 1)
    return ConfusionMatrix(counts)


def _ratio(num, den):
    return num / den if den else 0.0


def prf_report(matrix: ConfusionMatrix, class_names=None) -> dict:
    """Per-class precision/recall/F1/support and their unweighted means.

    Any 0/0 is taken as 0.
    """
    counts = matrix.counts
    if matrix.total <= 0:
        raise ParameterError("confusion matrix is empty")
    names = list(class_names) if class_names is not None else [str(i) for i in range(matrix.n_classes)]
    rows = []
    for k in range(matrix.n_classes):
        tp = int(counts[k, k])
        fp = int(counts[:, k].sum()) - tp
        fn = int(counts[k, :].sum()) - tp
        p = _ratio(tp, tp + fp)
        r = _ratio(tp, tp + fn)
        # 2PR/(P+R) rewritten over counts: one rounding instead of four
        f1 = _ratio(2 * tp, 2 * tp + fp + fn)
        rows.append({"class": names[k], "precision": p, "recall": r, "f1": f1, "support": tp + fn})
    n = len(rows)
    macro = {key: sum(row[key] for row in rows) / n for key in ("precision", "recall", "f1")}
    macro["support"] = matrix.total
    return {
        "classes": rows,
        "macro_avg": macro,
        "accuracy": float(np.trace(counts)) / matrix.total,
        "confusion": counts.tolist(),
    }


# ---------------------------------------------------------------------------
# BLEU
# ---------------------------------------------------------------------------

def tokenize(text):
    return unicodedata.normalize("NFC", text).split()


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def sentence_stats(hypothesis, reference, max_n=4):
    """``[hyp_len, ref_len, match_1, total_1, ..., match_n, total_n]``."""
    hyp, ref = tokenize(hypothesis), tokenize(reference)
    stats = [len(hyp), len(ref)]
    for n in range(1, max_n + 1):
        h, r = _ngrams(hyp, n), _ngrams(ref, n)
        stats.append(sum(min(c, r[g]) for g, c in h.items()))
        stats.append(max(len(hyp) - n + 1, 0))
    return stats


@dataclass
class BleuReport:
    bleu: float
    n_gram_precisions: list
    brevity_penalty: float
    hyp_len: int
    ref_len: int
    ci_low: float | None = None
    ci_high: float | None = None
    smoothing: str = "epsilon: zero-match order -> 1/(2*hypothesis n-gram count)"

    def to_dict(self):
        return asdict(self)


def bleu_from_stats(stats, max_n=4):
    """Corpus BLEU from summed sentence statistics.

    Orders for which the hypothesis corpus has no n-grams at all are left
    out of the geometric mean; an order with n-grams but no matches counts
    as ``1 / (2 * total)``.
    """
    hyp_len, ref_len = int(stats[0]), int(stats[1])
    precisions, logs = [], []
    for n in range(max_n):
        match, total = stats[2 + 2 * n], stats[3 + 2 * n]
        if total == 0:
            precisions.append(0.0)
            continue
        p = match / total if match > 0 else 1.0 / (2.0 * total)
        precisions.append(match / total)
        logs.append(math.log(p))
    if hyp_len == 0 or not logs:
        return 0.0, precisions, 0.0
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    score = 100.0 * bp * math.exp(sum(logs) / len(logs))
    return score, precisions, bp


def _corpus_stats(hypotheses, references, max_n):
    if len(hypotheses) != len(references):
        raise ParameterError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    if not hypotheses:
        raise ParameterError("empty corpus")
    return np.array([sentence_stats(h, r, max_n) for h, r in zip(hypotheses, references)], dtype=np.int64)


def corpus_bleu(hypotheses, references, max_n=4) -> BleuReport:
    """Single-reference corpus BLEU in [0, 100], whitespace tokens after NFC."""
    per_sentence = _corpus_stats(hypotheses, references, max_n)
    totals = per_sentence.sum(axis=0)
    score, precisions, bp = bleu_from_stats(totals, max_n)
    return BleuReport(score, precisions, bp, int(totals[0]), int(totals[1]))


def bootstrap_ci(hypotheses, references, iterations=1000, alpha=0.05, seed=0, max_n=4):
    """Percentile bootstrap over sentence pairs.

    Resample ``i`` draws its indices from a generator seeded with
    ``(seed, i)``, so iterations are independent of evaluation order.
    """
    per_sentence = _corpus_stats(hypotheses, references, max_n)
    n = per_sentence.shape[0]
    if n < 2:
        raise ParameterError("bootstrap needs at least two sentence pairs")
    scores = np.empty(iterations)
    for i in range(iterations):
        idx = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, i]).integers(0, n, n)
        scores[i] = bleu_from_stats(per_sentence[idx].sum(axis=0), max_n)[0]
    lo, hi = np.percentile(scores, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    return float(lo), float(hi)


def bleu_report(hypotheses, references, iterations=1000, alpha=0.05, seed=0, max_n=4) -> BleuReport:
    report = corpus_bleu(hypotheses, references, max_n)
    if iterations and len(hypotheses) >= 2:
        report.ci_low, report.ci_high = bootstrap_ci(hypotheses, references, iterations, alpha, seed, max_n)
    return report


def translation_block(report: BleuReport, human_eval_mean=None):
    """The BLEU / CI / BERTScore row of an evaluation report.

    BERTScore needs pretrained embeddings and is never computed here; the
    field is kept so externally computed values can be slotted in.
    """
    ci = None if report.ci_low is None else [report.ci_low, report.ci_high]
    return {
        "bleu": report.bleu,
        "ci": ci,
        "bertscore_f1": None,
        "human_eval_mean": human_eval_mean,
        "n_gram_precisions": report.n_gram_precisions,
        "brevity_penalty": report.brevity_penalty,
        "hyp_len": report.hyp_len,
        "ref_len": report.ref_len,
        "smoothing": report.smoothing,
    }


# ---------------------------------------------------------------------------
# Corpus statistics
# ---------------------------------------------------------------------------

def corpus_stats(sentences, k=5):
    """Top-``k`` words (ties broken alphabetically) and mean sentence length in tokens."""
    counts = Counter()
    lengths = []
    for s in sentences:
        tokens = tokenize(s)
        counts.update(tokens)
        lengths.append(len(tokens))
    top = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
    avg = sum(lengths) / len(lengths) if lengths else 0.0
    return {"top": top, "average_length": avg, "sentences": len(lengths), "vocabulary": len(counts)}
