"""Synthetic stand-in for an acted-emotion corpus.

Each class is a harmonic tone with its own fundamental and its own level of
broadband noise, with per-clip jitter in pitch, loudness, length and
envelope. Files carry valid RAVDESS names so the normal ``prepare`` path
handles them.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio import (CANONICAL_RATE, CHANNELS, EMOTIONS, INTENSITIES, MODALITIES, AudioClip, RavdessMeta,
                    encode_wav, ravdess_name)

# about 4.8 semitones apart, so a +-2 semitone pitch augmentation never
# lands one class on its neighbour
FUNDAMENTALS = tuple(150.0 * 2.0 ** (0.4 * k) for k in range(len(EMOTIONS)))
NOISE_LEVELS = (0.0, 0.12, 0.03, 0.2, 0.06, 0.16, 0.01, 0.09)


def synth_clip(class_index, rng, sample_rate=CANONICAL_RATE, duration=3.0, jitter=True):
    """One clip of class ``class_index`` drawn from ``rng``."""
    f0 = FUNDAMENTALS[class_index]
    noise = NOISE_LEVELS[class_index]
    if jitter:
        f0 *= 2.0 ** (rng.uniform(-0.5, 0.5) / 12.0)
        duration *= rng.uniform(0.85, 1.15)
        noise *= rng.uniform(0.8, 1.2)
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    phase = rng.uniform(0, 2 * np.pi, 4)
    tone = sum(0.5 ** h * np.sin(2 * np.pi * f0 * (h + 1) * t + phase[h]) for h in range(4))
    attack = min(n, int(0.05 * sample_rate))
    env = np.ones(n)
    env[:attack] = np.linspace(0.0, 1.0, attack)
    env[n - attack:] = np.linspace(1.0, 0.0, attack)
    amp = rng.uniform(0.3, 0.5) if jitter else 0.4
    x = amp * env * tone / 1.875 + noise * rng.standard_normal(n)
    return AudioClip(np.clip(x, -1.0, 1.0), sample_rate)


def _names(class_index, count):
    """``count`` distinct RAVDESS metadata records for one emotion."""
    emotion = EMOTIONS[class_index]
    intensities = INTENSITIES[:1] if emotion == "neutral" else INTENSITIES
    out = []
    for actor in range(1, 25):
        for intensity in intensities:
            for statement in (1, 2):
                for repetition in (1, 2):
                    out.append(RavdessMeta(MODALITIES[2], CHANNELS[0], emotion, intensity, statement, repetition, actor))
    # interleave actors so small counts still cover many speakers
    out.sort(key=lambda m: (m.repetition, m.statement, m.intensity, m.actor))
    if count > len(out):
        raise ValueError(f"at most {len(out)} distinct names for {emotion}")
    return out[:count]


def write_corpus(root, clips_per_class=40, seed=0, sample_rate=CANONICAL_RATE):
    """Write the corpus under ``root/Actor_XX/``; returns the list of paths."""
    root = Path(root)
    paths = []
    for k in range(len(EMOTIONS)):
        rng = np.random.default_rng([seed, k])
        for meta in _names(k, clips_per_class):
            clip = synth_clip(k, rng, sample_rate)
            folder = root / f"Actor_{meta.actor:02d}"
            folder.mkdir(parents=True, exist_ok=True)
            path = folder / ravdess_name(meta)
            encode_wav(clip, path)
            paths.append(path)
    return paths
