"""Cleaning of the English/Arabic parallel text used for translation."""

from __future__ import annotations

import csv
import io
import unicodedata

import numpy as np

from .audio import allocate_counts

ARABIC_RANGES = ((0x0600, 0x06FF), (0x0750, 0x077F))


def _collapse(text):
    return " ".join(text.split())


def normalize_english(text: str) -> str:
    """Lowercase, drop decimal digits and punctuation, squeeze whitespace."""
    text = unicodedata.normalize("NFC", text).lower()
    kept = []
    for ch in text:
        cat = unicodedata.category(ch)
        if cat == "Nd" or cat.startswith("P"):
            continue
        kept.append(ch)
    out = _collapse("".join(kept))
    # lowercasing and NFC can each expose the other's work; iterate to a fixed point
    again = unicodedata.normalize("NFC", out).lower()
    return out if again == out else normalize_english(again)


def _is_arabic(ch):
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in ARABIC_RANGES)


def filter_script(text: str, lang: str) -> str:
    """Keep only letters of ``lang``'s script plus whitespace.

    English keeps ``a``-``z`` (run it after :func:`normalize_english`);
    Arabic keeps U+0600-U+06FF and U+0750-U+077F.
    """
    if lang in ("english", "en"):
        keep = lambda ch: "a" <= ch <= "z"  # noqa: E731
    elif lang in ("arabic", "ar"):
        keep = _is_arabic
    else:
        raise ValueError(f"unknown language {lang!r}")
    text = unicodedata.normalize("NFC", text)
    out = "".join(ch if keep(ch) else (" " if ch.isspace() else "") for ch in text)
    out = _collapse(out)
    again = _collapse(unicodedata.normalize("NFC", out))
    return out if again == out else filter_script(again, lang)


def truncate_tokens(text: str, max_tokens: int = 128) -> str:
    """First ``max_tokens`` whitespace tokens; shorter texts come back untouched."""
    tokens = text.split()
    if len(tokens) <= max_tokens:
        return text if max_tokens > 0 else ""
    return " ".join(tokens[:max_tokens])


def preprocess(text, lang, max_tokens=128):
    if lang in ("english", "en"):
        text = filter_script(normalize_english(text), "english")
    else:
        text = filter_script(text, "arabic")
    return truncate_tokens(text, max_tokens)


def read_tsv(text: str, columns: int):
    rows = []
    reader = csv.reader(io.StringIO(text), delimiter="\t", quoting=csv.QUOTE_NONE)
    for lineno, row in enumerate(reader, start=1):
        if not row:
            continue
        if len(row) != columns:
            raise ValueError(f"line {lineno}: expected {columns} tab-separated fields, got {len(row)}")
        rows.append(row)
    return rows


def write_tsv(rows) -> str:
    return "".join("\t".join(r) + "\n" for r in rows)


def split_records(rows, ratios=(0.8, 0.1, 0.1), seed=0):
    """Seeded shuffle then contiguous train/val/test blocks (no stratification)."""
    (counts,) = allocate_counts([len(rows)], ratios)
    order = np.random.default_rng(np.uint64(seed & 0xFFFFFFFFFFFFFFFF)).permutation(len(rows))
    a, b = counts[0], counts[0] + counts[1]
    pick = lambda ix: [rows[i] for i in sorted(ix)]  # noqa: E731
    return pick(order[:a]), pick(order[a:b]), pick(order[b:])
