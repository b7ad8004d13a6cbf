"""Frame-level acoustic features, scaling and label encoding.

Per frame the engine keeps ``[zcr, rmse, mfcc_0 .. mfcc_{n-1}]`` and
flattens frames in time order, so a 3 s clip at 22050 Hz gives
126 frames x 22 values = 2772 features.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .audio import CANONICAL_DURATION, CANONICAL_RATE, EMOTIONS, AudioClip
from .errors import FeatureFileError, ParameterError, ShapeError

LOG_FLOOR = 1e-10
DB_FLOOR = -100.0
STD_FLOOR = 1e-8


@dataclass(frozen=True)
class FrameConfig:
    frame_len: int = 2048
    hop: int = 512
    window: str = "hann"

    def __post_init__(self):
        if not 0 < self.hop <= self.frame_len:
            raise ParameterError(f"need 0 < hop <= frame_len, got hop={self.hop}, frame_len={self.frame_len}")
        if self.window not in ("hann", "rectangular"):
            raise ParameterError(f"unknown window {self.window!r}")


@dataclass(frozen=True)
class MelConfig:
    n_fft: int = 2048
    n_mels: int = 40
    n_mfcc: int = 20
    fmin: float = 0.0
    fmax: float | None = None  # None means Nyquist

    def __post_init__(self):
        if self.n_mfcc > self.n_mels:
            raise ParameterError(f"n_mfcc ({self.n_mfcc}) must not exceed n_mels ({self.n_mels})")
        if self.n_mfcc < 1 or self.n_fft < 2:
            raise ParameterError("n_mfcc and n_fft must be positive")

    def upper(self, sample_rate):
        fmax = sample_rate / 2 if self.fmax is None else self.fmax
        if not self.fmin < fmax <= sample_rate / 2:
            raise ParameterError(f"need fmin < fmax <= Nyquist, got fmin={self.fmin}, fmax={fmax}")
        return fmax


def window_fn(name, n):
    if name == "rectangular":
        return np.ones(n)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _samples(clip):
    return clip.samples if isinstance(clip, AudioClip) else np.asarray(clip, dtype=np.float64)


def frame_signal(clip, config: FrameConfig = FrameConfig()) -> np.ndarray:
    """Overlapping frames as a ``(n_frames, frame_len)`` array; the tail is dropped."""
    x = _samples(clip)
    if x.size < config.frame_len:
        raise ShapeError(f"signal of {x.size} samples is shorter than one frame ({config.frame_len})")
    n_frames = 1 + (x.size - config.frame_len) // config.hop
    idx = np.arange(config.frame_len)[None, :] + config.hop * np.arange(n_frames)[:, None]
    return x[idx]


def zcr(frame) -> float | np.ndarray:
    """Fraction of adjacent sample pairs with a sign change, over the frame length.

    Accepts one frame or a 2-D stack of frames.
    """
    f = np.asarray(frame, dtype=np.float64)
    crossings = np.count_nonzero(f[..., 1:] * f[..., :-1] < 0, axis=-1)
    return crossings / f.shape[-1]


def rmse(frame) -> float | np.ndarray:
    f = np.asarray(frame, dtype=np.float64)
    return np.sqrt(np.mean(f * f, axis=-1))


def power_spectrum(frames, n_fft, window="hann"):
    frames = np.asarray(frames, dtype=np.float64)
    w = window_fn(window, frames.shape[-1])
    spec = np.fft.rfft(frames * w, n=n_fft, axis=-1)
    return spec.real ** 2 + spec.imag ** 2


def log_power_spectrogram(clip, config: FrameConfig = FrameConfig(), n_fft=None):
    """dB power per frame and bin, floored at -100 dB."""
    n_fft = config.frame_len if n_fft is None else n_fft
    power = power_spectrum(frame_signal(clip, config), n_fft, config.window)
    return 10.0 * np.log10(power + LOG_FLOOR)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=16)
def _filterbank(n_fft, n_mels, fmin, fmax, sample_rate):
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lower) / (center - lower)
    falling = (upper - freqs[None, :]) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


def mel_filterbank(config: MelConfig, sample_rate: int) -> np.ndarray:
    """Triangular filters of unit height, centers evenly spaced in mel.

    Shape ``(n_mels, n_fft // 2 + 1)``.
    """
    return _filterbank_for(config, sample_rate).copy()


def filter_centers(config: MelConfig, sample_rate: int) -> np.ndarray:
    fmax = config.upper(sample_rate)
    return mel_to_hz(np.linspace(hz_to_mel(config.fmin), hz_to_mel(fmax), config.n_mels + 2))[1:-1]


@lru_cache(maxsize=16)
def _dct_matrix(n_out, n_in):
    # orthonormal DCT-II rows
    k = np.arange(n_out)[:, None]
    n = np.arange(n_in)[None, :]
    m = np.cos(np.pi * k * (2 * n + 1) / (2 * n_in)) * np.sqrt(2.0 / n_in)
    m[0] /= np.sqrt(2.0)
    m.setflags(write=False)
    return m


def dct_ii(x, n_out=None):
    """Orthonormal DCT-II along the last axis, truncated to ``n_out`` terms."""
    x = np.asarray(x, dtype=np.float64)
    n_out = x.shape[-1] if n_out is None else n_out
    return x @ _dct_matrix(n_out, x.shape[-1]).T


def mfcc(clip, frame_config: FrameConfig = FrameConfig(), mel_config: MelConfig = MelConfig(),
         sample_rate=None):
    """``(n_frames, n_mfcc)`` cepstra: power spectrum, mel bank, log, DCT-II."""
    if sample_rate is None:
        sample_rate = clip.sample_rate
    return _cepstra(frame_signal(clip, frame_config), frame_config, mel_config, sample_rate)


def _cepstra(frames, frame_config, mel_config, sample_rate):
    fb = _filterbank_for(mel_config, sample_rate)
    power = power_spectrum(frames, mel_config.n_fft, frame_config.window)
    return dct_ii(np.log(power @ fb.T + LOG_FLOOR), mel_config.n_mfcc)


def _filterbank_for(mel_config, sample_rate):
    fmax = mel_config.upper(sample_rate)
    return _filterbank(mel_config.n_fft, mel_config.n_mels, float(mel_config.fmin), float(fmax), int(sample_rate))


def frame_features(clip, frame_config=FrameConfig(), mel_config=MelConfig()):
    """``(n_frames, 2 + n_mfcc)`` matrix of per-frame ``[zcr, rmse, mfcc...]``."""
    frames = frame_signal(clip, frame_config)
    ceps = _cepstra(frames, frame_config, mel_config, clip.sample_rate)
    return np.column_stack([zcr(frames), rmse(frames), ceps])


def feature_length(n_samples, frame_config=FrameConfig(), mel_config=MelConfig()):
    n_frames = 1 + (n_samples - frame_config.frame_len) // frame_config.hop
    return n_frames * (2 + mel_config.n_mfcc)


def canonical_length(sample_rate=CANONICAL_RATE, duration=CANONICAL_DURATION):
    return int(round(duration * sample_rate))


def extract_features(clip: AudioClip, frame_config=FrameConfig(), mel_config=MelConfig(),
                     expected_length=-1) -> np.ndarray:
    """Flattened frame-major feature vector for one clip.

    ``expected_length`` guards against clips that skipped duration
    normalization; the default demands the canonical 3 s at the clip's rate,
    ``None`` disables the check.
    """
    if expected_length == -1:
        expected_length = canonical_length(clip.sample_rate)
    if expected_length is not None and len(clip) != expected_length:
        raise ShapeError(f"clip has {len(clip)} samples, expected {expected_length}")
    return frame_features(clip, frame_config, mel_config).ravel()


@dataclass
class FeatureVector:
    values: np.ndarray
    label: str


@dataclass
class ScalerParams:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self):
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def fit_scaler(train_matrix) -> ScalerParams:
    """Per-column mean and population std; std is floored at 1e-8."""
    x = np.asarray(train_matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeError(f"need a non-empty 2-D matrix, got shape {x.shape}")
    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0), STD_FLOOR)
    return ScalerParams(mean, std)


def apply_scaler(matrix, params: ScalerParams) -> np.ndarray:
    x = np.asarray(matrix, dtype=np.float64)
    if x.shape[-1] != params.mean.size:
        raise ShapeError(f"matrix has {x.shape[-1]} columns, scaler expects {params.mean.size}")
    return (x - params.mean) / params.std


def invert_scaler(matrix, params: ScalerParams) -> np.ndarray:
    return np.asarray(matrix, dtype=np.float64) * params.std + params.mean


def one_hot(labels, class_order=EMOTIONS) -> np.ndarray:
    lookup = {c: i for i, c in enumerate(class_order)}
    out = np.zeros((len(labels), len(class_order)))
    for row, label in enumerate(labels):
        if label not in lookup:
            raise ParameterError(f"unknown label {label!r}")
        out[row, lookup[label]] = 1.0
    return out


def decode_one_hot(matrix, class_order=EMOTIONS) -> list:
    return [class_order[i] for i in np.argmax(np.asarray(matrix), axis=1)]


# ---------------------------------------------------------------------------
# Feature files
# ---------------------------------------------------------------------------

FEATURE_MAGIC = b"SERF"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sHII")


@dataclass
class FeatureSet:
    """A feature matrix with integer labels.

    ``splits`` and ``sources`` are optional per-row annotations kept in a JSON
    sidecar next to the binary file.
    """

    values: np.ndarray
    labels: np.ndarray
    class_order: tuple = EMOTIONS
    splits: list | None = None
    sources: list | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.uint16)
        if self.values.ndim != 2 or self.labels.shape != (self.values.shape[0],):
            raise ShapeError(f"values {self.values.shape} and labels {self.labels.shape} disagree")

    def __len__(self):
        return self.values.shape[0]

    def select(self, split):
        if self.splits is None:
            return self
        keep = np.array([s == split for s in self.splits], dtype=bool)
        return FeatureSet(
            self.values[keep], self.labels[keep], self.class_order,
            [s for s, k in zip(self.splits, keep) if k],
            None if self.sources is None else [s for s, k in zip(self.sources, keep) if k],
            dict(self.info),
        )


def feature_bytes(fs: FeatureSet) -> bytes:
    rows, cols = fs.values.shape
    return (
        _HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, rows, cols)
        + fs.values.astype("<f4").tobytes()
        + fs.labels.astype("<u2").tobytes()
    )


def parse_feature_bytes(data: bytes):
    if len(data) < _HEADER.size:
        raise FeatureFileError("file shorter than the feature header")
    magic, version, rows, cols = _HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise FeatureFileError(f"bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise FeatureFileError(f"unsupported feature file version {version}")
    body = rows * cols * 4
    need = _HEADER.size + body + rows * 2
    if len(data) != need:
        raise FeatureFileError(f"expected {need} bytes for {rows}x{cols}, found {len(data)}")
    values = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=_HEADER.size).reshape(rows, cols)
    labels = np.frombuffer(data, dtype="<u2", count=rows, offset=_HEADER.size + body)
    return values.astype(np.float32), labels.astype(np.uint16)


def _sidecar(path):
    return Path(str(path) + ".json")


def write_features(fs: FeatureSet, path):
    Path(path).write_bytes(feature_bytes(fs))
    meta = {"class_order": list(fs.class_order), "splits": fs.splits, "sources": fs.sources, "info": fs.info}
    _sidecar(path).write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")


def read_features(path) -> FeatureSet:
    values, labels = parse_feature_bytes(Path(path).read_bytes())
    side = _sidecar(path)
    if side.exists():
        meta = json.loads(side.read_text(encoding="utf-8"))
        return FeatureSet(values, labels, tuple(meta.get("class_order") or EMOTIONS),
                          meta.get("splits"), meta.get("sources"), meta.get("info") or {})
    return FeatureSet(values, labels)


def features_to_csv(fs: FeatureSet) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"f{i}" for i in range(fs.values.shape[1])] + ["label"])
    for row, label in zip(fs.values, fs.labels):
        writer.writerow([repr(float(v)) for v in row] + [fs.class_order[label]])
    return buf.getvalue()


def write_spectrogram(matrix, path, sample_rate, frame_config: FrameConfig):
    """CSV of ``frames x bins`` dB values plus a JSON sidecar for plotting."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in np.asarray(matrix):
            writer.writerow([f"{v:.6f}" for v in row])
    meta = {"sample_rate": int(sample_rate), "frame_len": frame_config.frame_len,
            "hop": frame_config.hop, "db_floor": DB_FLOOR}
    Path(str(path)[:-4] + ".json" if str(path).endswith(".csv") else str(path) + ".json").write_text(
        json.dumps(meta, indent=1) + "\n", encoding="utf-8")


def config_dict(frame_config: FrameConfig, mel_config: MelConfig):
    return {"frame": asdict(frame_config), "mel": asdict(mel_config)}
