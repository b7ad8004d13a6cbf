"""Training-time augmentation: noise, pitch shift, time stretch, time shift."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .audio import AudioClip, fit_length, resample_to_length
from .errors import ParameterError, PolicyError

TRANSFORMS = ("noise", "pitch", "stretch", "shift")

STRETCH_FRAME = 2048
STRETCH_HOP = 512


def _rng(seed, index=0):
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, int(index)])


def add_noise(clip: AudioClip, noise_factor: float, seed: int, index: int = 0) -> AudioClip:
    """``y + noise_factor * N(0, 1)``, clamped back into [-1, 1]."""
    if noise_factor < 0:
        raise ParameterError(f"noise_factor must be >= 0, got {noise_factor}")
    if noise_factor == 0:
        return clip.with_samples(clip.samples.copy())
    noise = _rng(seed, index).standard_normal(len(clip))
    return clip.with_samples(np.clip(clip.samples + noise_factor * noise, -1.0, 1.0))


def time_shift(clip: AudioClip, shift_fraction: float) -> AudioClip:
    """Circular roll to the right by ``round(fraction * len)`` samples."""
    if not 0 <= shift_fraction < 1:
        raise ParameterError(f"shift_fraction must be in [0, 1), got {shift_fraction}")
    k = int(round(shift_fraction * len(clip)))
    return clip.with_samples(np.roll(clip.samples, k))


def _hann(n):
    # periodic Hann: overlap-adds to a constant at hop n/4
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _stft(x, n_fft, hop, window):
    padded = np.pad(x, n_fft // 2)
    n_frames = 1 + (padded.size - n_fft) // hop
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    return np.fft.rfft(padded[idx] * window, axis=1)


def _istft(spec, n_fft, hop, window, length):
    n_frames = spec.shape[0]
    frames = np.fft.irfft(spec, n=n_fft, axis=1) * window
    total = n_fft + hop * (n_frames - 1)
    out = np.zeros(total)
    norm = np.zeros(total)
    wsq = window * window
    for i in range(n_frames):
        out[i * hop:i * hop + n_fft] += frames[i]
        norm[i * hop:i * hop + n_fft] += wsq
    nonzero = norm > 1e-10
    out[nonzero] /= norm[nonzero]
    out = out[n_fft // 2:]
    if out.size >= length:
        return out[:length]
    return np.concatenate([out, np.zeros(length - out.size)])


def phase_vocoder(samples, rate, n_fft=STRETCH_FRAME, hop=STRETCH_HOP):
    """Change duration by ``1/rate`` while keeping the instantaneous frequencies.

    Analysis frames are sampled at fractional positions ``0, rate, 2*rate, ...``;
    magnitudes are linearly interpolated between neighbouring frames and the
    phase is propagated with each bin's measured phase advance.
    """
    x = np.asarray(samples, dtype=np.float64)
    window = _hann(n_fft)
    spec = _stft(x, n_fft, hop, window)
    n_frames, n_bins = spec.shape
    steps = np.arange(0.0, n_frames, rate)
    spec = np.vstack([spec, np.zeros((2, n_bins), dtype=spec.dtype)])
    lo = steps.astype(np.int64)
    alpha = (steps - lo)[:, None]
    left, right = spec[lo], spec[lo + 1]
    mag = (1.0 - alpha) * np.abs(left) + alpha * np.abs(right)

    expected = 2.0 * np.pi * hop * np.arange(n_bins) / n_fft
    dphase = np.angle(right) - np.angle(left) - expected
    dphase -= 2.0 * np.pi * np.round(dphase / (2.0 * np.pi))
    advance = expected + dphase
    phase = np.empty_like(mag)
    phase[0] = np.angle(spec[0])
    if steps.size > 1:
        phase[1:] = phase[0] + np.cumsum(advance[:-1], axis=0)
    stretched = mag * np.exp(1j * phase)
    length = int(round(x.size / rate))
    return _istft(stretched, n_fft, hop, window, length)


def time_stretch(clip: AudioClip, rate: float) -> AudioClip:
    """Phase-vocoder tempo change; output length is ``round(len / rate)``."""
    if not 0.25 <= rate <= 4.0:
        raise ParameterError(f"stretch rate must be in [0.25, 4], got {rate}")
    if rate == 1.0:
        return clip.with_samples(clip.samples.copy())
    return clip.with_samples(phase_vocoder(clip.samples, rate))


def pitch_shift(clip: AudioClip, semitones: float) -> AudioClip:
    """Move every frequency by ``2**(semitones/12)`` at unchanged duration.

    The clip is first stretched to ``len * 2**(semitones/12)`` samples at the
    original pitch, then resampled back to ``len`` samples, which scales all
    frequencies by the same factor.
    """
    if abs(semitones) > 12:
        raise ParameterError(f"|semitones| must be <= 12, got {semitones}")
    if semitones == 0:
        return clip.with_samples(clip.samples.copy())
    factor = 2.0 ** (semitones / 12.0)
    stretched = phase_vocoder(clip.samples, 1.0 / factor)
    out = resample_to_length(stretched, len(clip))
    return clip.with_samples(np.clip(out, -1.0, 1.0))


@dataclass
class AugmentPolicy:
    """How each training clip fans out into variants.

    With ``randomize`` on, the per-clip magnitudes are drawn from the seed:
    pitch gets a random sign on ``pitch_semitones``, stretch picks
    ``stretch_rate`` or its reciprocal, and the shift is uniform in
    ``[0, shift_fraction]``. With it off the fields are used verbatim.
    """

    noise_factor: float = 0.035
    pitch_semitones: float = 2.0
    stretch_rate: float = 0.8
    shift_fraction: float = 0.2
    seed: int = 0
    variants: list = field(default_factory=lambda: list(TRANSFORMS))
    randomize: bool = True

    def validate(self):
        problems = []
        if self.noise_factor < 0:
            problems.append(f"noise_factor must be >= 0, got {self.noise_factor}")
        if abs(self.pitch_semitones) > 12:
            problems.append(f"|pitch_semitones| must be <= 12, got {self.pitch_semitones}")
        if self.stretch_rate <= 0:
            problems.append(f"stretch_rate must be > 0, got {self.stretch_rate}")
        elif not 0.25 <= self.stretch_rate <= 4.0:
            problems.append(f"stretch_rate must be in [0.25, 4], got {self.stretch_rate}")
        if not 0 <= self.shift_fraction < 1:
            problems.append(f"shift_fraction must be in [0, 1), got {self.shift_fraction}")
        for tag in self.variants:
            if tag not in TRANSFORMS:
                problems.append(f"unknown augmentation {tag!r}; choose from {', '.join(TRANSFORMS)}")
        if problems:
            raise PolicyError("; ".join(problems))
        return self

    def to_dict(self):
        return asdict(self)


def expand(clip: AudioClip, policy: AugmentPolicy, index: int = 0) -> list:
    """``[clip]`` plus one independently transformed copy per policy tag.

    Variants are made from the original (never chained) and fitted back to
    the original length. ``index`` identifies the clip so that parallel
    workers derive the same random draws regardless of scheduling.
    """
    policy.validate()
    rng = _rng(policy.seed, index)
    n = len(clip)
    out = [clip]
    for k, tag in enumerate(policy.variants):
        if tag == "noise":
            v = add_noise(clip, policy.noise_factor, policy.seed, index=(int(index) << 8) | k)
        elif tag == "pitch":
            steps = policy.pitch_semitones
            if policy.randomize and rng.random() < 0.5:
                steps = -steps
            v = pitch_shift(clip, steps)
        elif tag == "stretch":
            rate = policy.stretch_rate
            if policy.randomize and rng.random() < 0.5:
                rate = 1.0 / rate
            v = time_stretch(clip, rate)
        else:
            frac = policy.shift_fraction
            if policy.randomize:
                frac = rng.uniform(0.0, policy.shift_fraction)
            v = time_shift(clip, frac)
        out.append(clip.with_samples(fit_length(v.samples, n)))
    return out
