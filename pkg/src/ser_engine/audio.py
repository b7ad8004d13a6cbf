"""WAV ingestion, resampling, duration normalization and the RAVDESS manifest.

Everything here is pure given its inputs, so per-file work can be fanned
out across processes without affecting results.
"""

from __future__ import annotations

import csv
import io
import logging
import os
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DecodeError, ParameterError, ParseError, UnsupportedFormatError

log = logging.getLogger(__name__)

CANONICAL_RATE = 22050
CANONICAL_DURATION = 3.0

EMOTIONS = ("neutral", "calm", "happy", "sad", "angry", "fearful", "disgust", "surprised")
MODALITIES = ("full-AV", "video-only", "audio-only")
CHANNELS = ("speech", "song")
INTENSITIES = ("normal", "strong")
SPLITS = ("train", "val", "test")

MANIFEST_COLUMNS = (
    "path", "modality", "channel", "emotion", "intensity",
    "statement", "repetition", "actor", "sex", "split",
)

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono float64 samples plus their sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ParameterError(f"samples must be 1-D, got shape {samples.shape}")
        if samples.size == 0:
            raise ParameterError("samples must be non-empty")
        if not np.all(np.isfinite(samples)):
            raise ParameterError("samples must be finite")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ParameterError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.samples.size / self.sample_rate

    def with_samples(self, samples):
        return AudioClip(samples, self.sample_rate)


# ---------------------------------------------------------------------------
# RIFF/WAVE
# ---------------------------------------------------------------------------

def _read_chunks(data):
    if len(data) < 12:
        raise DecodeError("RIFF", "file shorter than the 12-byte RIFF header")
    riff, _size, wave = struct.unpack("<4sI4s", data[:12])
    if riff != b"RIFF":
        raise DecodeError("RIFF", f"bad magic {riff!r}")
    if wave != b"WAVE":
        raise DecodeError("RIFF", f"form type is {wave!r}, expected b'WAVE'")
    pos = 12
    while pos + 8 <= len(data):
        cid, csize = struct.unpack("<4sI", data[pos:pos + 8])
        body = data[pos + 8:pos + 8 + csize]
        name = cid.decode("latin-1")
        yield name, body, csize
        pos += 8 + csize + (csize & 1)


def decode_wav(path) -> AudioClip:
    """Read a PCM16 or float32 WAV file, averaging stereo down to mono."""
    with open(path, "rb") as fh:
        data = fh.read()
    return decode_wav_bytes(data)


def decode_wav_bytes(data: bytes) -> AudioClip:
    fmt = None
    pcm = None
    for name, body, declared in _read_chunks(data):
        if name == "fmt ":
            if len(body) < 16 or declared < 16:
                raise DecodeError("fmt ", f"chunk is {len(body)} bytes, need at least 16")
            tag, channels, rate, _byte_rate, block_align, bits = struct.unpack("<HHIIHH", body[:16])
            if tag == _WAVE_FORMAT_EXTENSIBLE:
                if len(body) < 40:
                    raise DecodeError("fmt ", "extensible format chunk shorter than 40 bytes")
                tag = struct.unpack("<H", body[24:26])[0]
            fmt = (tag, channels, rate, block_align, bits)
        elif name == "data":
            if len(body) < declared:
                raise DecodeError("data", f"chunk declares {declared} bytes but only {len(body)} present")
            pcm = body
            break
    if fmt is None:
        raise DecodeError("fmt ", "missing format chunk")
    if pcm is None:
        raise DecodeError("data", "missing data chunk")

    tag, channels, rate, block_align, bits = fmt
    if channels not in (1, 2):
        raise UnsupportedFormatError(f"{channels} channels (only mono and stereo are supported)")
    if rate <= 0:
        raise DecodeError("fmt ", f"invalid sample rate {rate}")
    if tag == _WAVE_FORMAT_PCM and bits == 16:
        dtype = np.dtype("<i2")
    elif tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype = np.dtype("<f4")
    else:
        raise UnsupportedFormatError(f"format tag {tag:#06x} with {bits} bits per sample")
    frame_bytes = dtype.itemsize * channels
    if len(pcm) % frame_bytes:
        raise DecodeError("data", f"{len(pcm)} bytes is not a whole number of {frame_bytes}-byte frames")
    if not pcm:
        raise DecodeError("data", "no samples")

    raw = np.frombuffer(pcm, dtype=dtype).reshape(-1, channels)
    if dtype.kind == "i":
        samples = raw.astype(np.float64) / 32768.0
    else:
        samples = raw.astype(np.float64)
        if not np.all(np.isfinite(samples)):
            raise DecodeError("data", "non-finite float samples")
        samples = np.clip(samples, -1.0, 1.0)
    return AudioClip(samples.mean(axis=1), rate)


def encode_wav_bytes(clip: AudioClip, sample_format="pcm16") -> bytes:
    if sample_format == "pcm16":
        ints = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
        tag, bits, payload = _WAVE_FORMAT_PCM, 16, ints.tobytes()
    elif sample_format == "float32":
        tag, bits, payload = _WAVE_FORMAT_IEEE_FLOAT, 32, clip.samples.astype("<f4").tobytes()
    else:
        raise UnsupportedFormatError(f"cannot encode sample format {sample_format!r}")
    block = bits // 8
    fmt = struct.pack("<HHIIHH", tag, 1, clip.sample_rate, clip.sample_rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    return b"RIFF" + struct.pack("<I", len(body)) + body


def encode_wav(clip: AudioClip, path, sample_format="pcm16"):
    """Write a mono WAV file (PCM16 by default)."""
    Path(path).write_bytes(encode_wav_bytes(clip, sample_format))


# ---------------------------------------------------------------------------
# Resampling and duration
# ---------------------------------------------------------------------------

RESAMPLE_TAPS = 64
KAISER_BETA = 8.6
_TABLE_RES = 2048  # kernel samples per input-sample spacing


def kaiser_sinc(offset, cutoff, half_width=RESAMPLE_TAPS // 2, beta=KAISER_BETA):
    """Low-pass interpolation kernel evaluated at ``offset`` input samples."""
    offset = np.asarray(offset, dtype=np.float64)
    ratio = np.clip(offset / half_width, -1.0, 1.0)
    window = np.i0(beta * np.sqrt(1.0 - ratio * ratio)) / np.i0(beta)
    h = cutoff * np.sinc(cutoff * offset) * window
    return np.where(np.abs(offset) < half_width, h, 0.0)


def _kernel_table(cutoff):
    half = RESAMPLE_TAPS // 2
    grid = np.arange(-half * _TABLE_RES, half * _TABLE_RES + 2) / _TABLE_RES
    return kaiser_sinc(grid, cutoff)


def resample_to_length(samples, n_out):
    """Windowed-sinc interpolation of ``samples`` onto ``n_out`` evenly spaced points.

    Output point ``n`` sits at source position ``n * len(samples) / n_out``.
    When shrinking, the sinc cutoff drops to the new Nyquist so the filter
    also acts as the anti-aliasing low-pass. The kernel is read from a
    table sampled 2048 times per input sample and linearly interpolated.
    """
    x = np.asarray(samples, dtype=np.float64)
    n_in = x.size
    if n_out == n_in:
        return x.copy()
    if n_out <= 0:
        raise ParameterError(f"output length must be positive, got {n_out}")
    ratio = n_out / n_in
    table = _kernel_table(min(1.0, ratio))
    half = RESAMPLE_TAPS // 2
    taps = np.arange(-half + 1, half + 1)
    xp = np.concatenate([np.zeros(half), x, np.zeros(half + 1)])
    out = np.empty(n_out)
    # chunked so the (chunk, taps) work arrays stay small on long inputs
    step = 8192
    for start in range(0, n_out, step):
        pos = np.arange(start, min(start + step, n_out)) / ratio
        base = np.floor(pos).astype(np.int64)
        frac = pos - base
        # offset of tap j is frac - taps[j]; map to table coordinates
        t = (frac[:, None] - taps[None, :] + half) * _TABLE_RES
        ti = t.astype(np.int64)
        tf = t - ti
        h = table[ti] * (1.0 - tf) + table[ti + 1] * tf
        vals = xp[base[:, None] + taps[None, :] + half]
        out[start:start + pos.size] = np.einsum("ij,ij->i", vals, h)
    return out


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Band-limited sample-rate conversion (64-tap Kaiser-windowed sinc)."""
    if target_rate <= 0:
        raise ParameterError(f"target_rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return AudioClip(clip.samples.copy(), clip.sample_rate)
    n_out = max(1, int(round(len(clip) * target_rate / clip.sample_rate)))
    return AudioClip(resample_to_length(clip.samples, n_out), target_rate)


def fit_length(samples, n_target):
    """Center-crop or symmetrically zero-pad to exactly ``n_target`` samples.

    Odd surpluses put the extra sample at the end.
    """
    x = np.asarray(samples, dtype=np.float64)
    n = x.size
    if n == n_target:
        return x.copy()
    if n > n_target:
        start = (n - n_target) // 2
        return x[start:start + n_target].copy()
    lead = (n_target - n) // 2
    return np.concatenate([np.zeros(lead), x, np.zeros(n_target - n - lead)])


def fix_duration(clip: AudioClip, seconds: float) -> AudioClip:
    if seconds <= 0:
        raise ParameterError(f"seconds must be positive, got {seconds}")
    n_target = int(round(seconds * clip.sample_rate))
    return clip.with_samples(fit_length(clip.samples, n_target))


def load_canonical(path, rate=CANONICAL_RATE, duration=CANONICAL_DURATION) -> AudioClip:
    """Decode, resample and duration-normalize one file."""
    return fix_duration(resample(decode_wav(path), rate), duration)


# ---------------------------------------------------------------------------
# RAVDESS naming and manifests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RavdessMeta:
    modality: str
    vocal_channel: str
    emotion: str
    intensity: str
    statement: int
    repetition: int
    actor: int

    @property
    def sex(self):
        return "male" if self.actor % 2 else "female"

    @property
    def emotion_index(self):
        return EMOTIONS.index(self.emotion)


_FIELDS = ("modality", "vocal_channel", "emotion", "intensity", "statement", "repetition", "actor")


def _code(field_name, token, table):
    value = int(token)
    if not 1 <= value <= len(table):
        raise ParseError(field_name, f"code {token} out of range 01-{len(table):02d}")
    return table[value - 1]


def parse_ravdess_name(filename) -> RavdessMeta:
    """Decode the seven two-digit identifiers of a RAVDESS file name."""
    base = os.path.basename(str(filename))
    if not base.endswith(".wav"):
        raise ParseError("extension", f"{base!r} does not end in .wav")
    parts = base[:-4].split("-")
    if len(parts) != len(_FIELDS):
        raise ParseError("name", f"{base!r} has {len(parts)} fields, expected 7")
    for name, token in zip(_FIELDS, parts):
        if len(token) != 2 or not token.isascii() or not token.isdigit():
            raise ParseError(name, f"{token!r} is not a two-digit code")
    modality = _code("modality", parts[0], MODALITIES)
    channel = _code("vocal_channel", parts[1], CHANNELS)
    emotion = _code("emotion", parts[2], EMOTIONS)
    intensity = _code("intensity", parts[3], INTENSITIES)
    statement = _code("statement", parts[4], (1, 2))
    repetition = _code("repetition", parts[5], (1, 2))
    actor = int(parts[6])
    if not 1 <= actor <= 24:
        raise ParseError("actor", f"code {parts[6]} out of range 01-24")
    if emotion == "neutral" and intensity == "strong":
        raise ParseError("intensity", "neutral has no strong intensity")
    return RavdessMeta(modality, channel, emotion, intensity, statement, repetition, actor)


def ravdess_name(meta: RavdessMeta) -> str:
    codes = (
        MODALITIES.index(meta.modality) + 1,
        CHANNELS.index(meta.vocal_channel) + 1,
        EMOTIONS.index(meta.emotion) + 1,
        INTENSITIES.index(meta.intensity) + 1,
        meta.statement,
        meta.repetition,
        meta.actor,
    )
    return "-".join(f"{c:02d}" for c in codes) + ".wav"


@dataclass
class ManifestEntry:
    path: str
    meta: RavdessMeta
    split: str | None = None


def build_manifest(root_dir):
    """Collect every parseable ``.wav`` under ``root_dir``.

    Returns ``(entries, warnings)``; unparseable names only produce warnings.
    Entries come back sorted by path.
    """
    entries, warnings = [], []
    root = Path(root_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"not a directory: {root}")
    for dirpath, _dirnames, filenames in os.walk(root):
        for name in filenames:
            if not name.lower().endswith(".wav"):
                continue
            path = Path(dirpath, name).as_posix()
            try:
                meta = parse_ravdess_name(name)
            except ParseError as exc:
                warnings.append(f"{path}: {exc}")
                continue
            entries.append(ManifestEntry(path, meta))
    entries.sort(key=lambda e: e.path)
    warnings.sort()
    for w in warnings:
        log.warning("skipping %s", w)
    return entries, warnings


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------

def _check_ratios(ratios):
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ParameterError(f"ratios must be three non-negative numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ParameterError(f"ratios must sum to 1, got {sum(ratios)!r}")
    return ratios


def allocate_counts(sizes, ratios):
    """Per-group split counts, each the floor or ceiling of ``size * ratio``.

    Groups are visited in order; the ceilings a group must hand out go to the
    splits whose running total lags its ideal the most, which keeps the
    column totals on target (exactly, when the ideal totals are integers).
    """
    ratios = _check_ratios(ratios)
    counts = []
    ideal_cum = np.zeros(3)
    alloc_cum = np.zeros(3)
    for n in sizes:
        ideal = np.array([n * r for r in ratios])
        base = np.floor(ideal + 1e-9)
        frac = ideal - base
        extra = int(round(n - base.sum()))
        ideal_cum += ideal
        take = np.zeros(3)
        if extra:
            lag = ideal_cum - alloc_cum - base
            order = sorted((j for j in range(3) if frac[j] > 1e-9), key=lambda j: (-lag[j], j))
            for j in order[:extra]:
                take[j] = 1
        row = (base + take).astype(int)
        alloc_cum += row
        counts.append(tuple(int(c) for c in row))
    return counts


def _shuffle_assign(items, counts, rng):
    order = rng.permutation(len(items))
    labels = [SPLITS[0]] * counts[0] + [SPLITS[1]] * counts[1] + [SPLITS[2]] * counts[2]
    return {items[i]: labels[k] for k, i in enumerate(order)}


def split_manifest(entries, ratios=(0.85, 0.075, 0.075), seed=0, actor_disjoint=False):
    """Assign train/val/test, stratified by emotion.

    Within each stratum the members are shuffled with a generator seeded
    from ``seed`` and then cut into contiguous blocks. Strata smaller than 3
    go entirely to train. With ``actor_disjoint`` the actors, not files, are
    shuffled and split, so no speaker appears in two splits.
    Returns ``(entries, warnings)`` where the entries are new objects.
    """
    ratios = _check_ratios(ratios)
    rng = np.random.default_rng(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    warnings = []
    out = [replace(e) for e in entries]

    if actor_disjoint:
        actors = sorted({e.meta.actor for e in out})
        (counts,) = allocate_counts([len(actors)], ratios)
        assign = _shuffle_assign(actors, counts, rng)
        for e in out:
            e.split = assign[e.meta.actor]
        return out, warnings

    strata = {}
    for i, e in enumerate(out):
        strata.setdefault(e.meta.emotion, []).append(i)
    keys = [k for k in EMOTIONS if k in strata] + sorted(k for k in strata if k not in EMOTIONS)
    small = [k for k in keys if len(strata[k]) < 3]
    for k in small:
        warnings.append(f"stratum {k!r} has {len(strata[k])} entries; assigned to train")
        for i in strata[k]:
            out[i].split = "train"
    keys = [k for k in keys if k not in small]
    for k, counts in zip(keys, allocate_counts([len(strata[k]) for k in keys], ratios)):
        members = strata[k]
        assign = _shuffle_assign(list(range(len(members))), counts, rng)
        for pos, i in enumerate(members):
            out[i].split = assign[pos]
    for w in warnings:
        log.warning(w)
    return out, warnings


# ---------------------------------------------------------------------------
# Manifest CSV
# ---------------------------------------------------------------------------

def manifest_to_csv(entries) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_COLUMNS)
    for e in entries:
        m = e.meta
        writer.writerow([
            e.path, m.modality, m.vocal_channel, m.emotion, m.intensity,
            m.statement, m.repetition, m.actor, m.sex, e.split or "",
        ])
    return buf.getvalue()


def manifest_from_csv(text: str):
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != MANIFEST_COLUMNS:
        raise ParseError("header", f"expected {','.join(MANIFEST_COLUMNS)}")
    entries = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(MANIFEST_COLUMNS):
            raise ParseError("row", f"line {lineno} has {len(row)} columns")
        rec = dict(zip(MANIFEST_COLUMNS, row))
        meta = RavdessMeta(
            rec["modality"], rec["channel"], rec["emotion"], rec["intensity"],
            int(rec["statement"]), int(rec["repetition"]), int(rec["actor"]),
        )
        if meta.sex != rec["sex"]:
            raise ParseError("sex", f"line {lineno}: actor {meta.actor} is {meta.sex}")
        split = rec["split"] or None
        if split is not None and split not in SPLITS:
            raise ParseError("split", f"line {lineno}: unknown split {split!r}")
        entries.append(ManifestEntry(rec["path"], meta, split))
    return entries


def write_manifest(entries, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(manifest_to_csv(entries))


def read_manifest(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return manifest_from_csv(fh.read())
