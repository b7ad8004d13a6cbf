"""Shared fixtures-by-function for the nn, pipeline and acceptance tests."""

import numpy as np

from ser_engine.nn import ModelConfig, build_model, train
from ser_engine.nn import layers as L

SMALL = dict(conv_filters=[4, 8, 8], dense_units=16, input_len=32, n_classes=8)


def relative_error(a, n):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)


def gradient_check(seed, h=1e-5, batch=6):
    """Max relative error between backprop and central differences, every parameter."""
    cfg = ModelConfig(**SMALL, seed=seed)
    model = build_model(cfg, dtype=np.float64)
    rng = np.random.default_rng(seed + 1000)
    # move BN away from its identity initialization so its gradients are exercised
    for k, v in model.params.items():
        if k.endswith("gamma"):
            v[...] = 1.0 + rng.normal(0.0, 0.3, v.shape)
        elif k.endswith("beta") or k.endswith(".b"):
            v[...] = rng.normal(0.0, 0.3, v.shape)
    x = rng.standard_normal((batch, cfg.input_len))
    y = np.eye(cfg.n_classes)[rng.integers(0, cfg.n_classes, batch)]

    def loss():
        probs, _ = model.forward(x, train=True, dropout=False, update_stats=False)
        return L.cross_entropy(probs, y)

    _, _, grads = model.loss_and_grads(x, y, dropout=False, update_stats=False)
    worst = 0.0
    for name, p in model.params.items():
        flat = p.reshape(-1)
        num = np.empty(flat.size)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = loss()
            flat[i] = old - h
            down = loss()
            flat[i] = old
            num[i] = (up - down) / (2 * h)
        worst = max(worst, float(relative_error(grads[name].reshape(-1), num).max()))
    return worst


def memorization_data(seed=0, n=32, input_len=256, n_classes=8):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, input_len)).astype(np.float32)
    labels = np.arange(n) % n_classes
    return x, np.eye(n_classes, dtype=np.float32)[labels], labels


def memorize(seed=0, epochs=500, input_len=256, **overrides):
    """Train the default-width network on 32 random vectors with dropout off."""
    x, y, labels = memorization_data(seed, input_len=input_len)
    cfg = ModelConfig(input_len=input_len, epochs=epochs, seed=seed, **overrides)
    best, history = train(build_model(cfg), x, y, dropout=False)
    return best, history, x, y, labels


def clip_features(path):
    """Feature row for a WAV file, computed the way the pipeline computes it."""
    from ser_engine.audio import CANONICAL_DURATION, CANONICAL_RATE, decode_wav, fix_duration, resample
    from ser_engine.features import extract_features
    clip = fix_duration(resample(decode_wav(path), CANONICAL_RATE), CANONICAL_DURATION)
    return extract_features(clip)


def memorization_checkpoint(root, seed=0, epochs=60):
    """Memorize 32 synthetic clips (4 per class) and save a checkpoint.

    The network is narrower than the default so the whole fixture takes a few
    seconds; the protocol (32 samples, 8 classes, dropout off) is the same.
    Returns ``(checkpoint_path, wav_paths, labels, history)``.
    """
    from pathlib import Path

    from ser_engine.audio import EMOTIONS
    from ser_engine.features import apply_scaler, fit_scaler
    from ser_engine.nn import save_checkpoint
    from ser_engine.synth import write_corpus

    root = Path(root)
    paths = write_corpus(root / "clips", clips_per_class=4, seed=seed)
    labels = [EMOTIONS[i // 4] for i in range(len(paths))]
    raw = np.stack([clip_features(p) for p in paths])
    scaler = fit_scaler(raw)
    x = apply_scaler(raw, scaler).astype(np.float32)
    y = np.eye(len(EMOTIONS), dtype=np.float32)[[EMOTIONS.index(l) for l in labels]]
    cfg = ModelConfig(conv_filters=[8, 16, 16], dense_units=32, input_len=x.shape[1],
                      epochs=epochs, seed=seed)
    best, history = train(build_model(cfg), x, y, dropout=False)
    ckpt = root / "memorized.serm"
    save_checkpoint(best, scaler, ckpt, class_order=EMOTIONS)
    return ckpt, paths, labels, history
