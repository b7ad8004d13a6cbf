"""Slow, loop-based reference implementations used as test oracles.

Nothing here calls the package or numpy's FFT; each function follows the
textbook definition one element at a time.
"""

import math
from collections import Counter

import numpy as np


def zcr_oracle(frame):
    count = 0
    for t in range(1, len(frame)):
        if frame[t] * frame[t - 1] < 0:
            count += 1
    return count / len(frame)


def rmse_oracle(frame):
    total = 0.0
    for v in frame:
        total += float(v) * float(v)
    return math.sqrt(total / len(frame))


def direct_dft(x):
    n = len(x)
    k = np.arange(n)
    return np.array([np.sum(x * np.exp(-2j * np.pi * f * k / n)) for f in range(n)])


def _mel(f):
    return 2595.0 * math.log10(1.0 + f / 700.0)


def _hz(m):
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


def filterbank_oracle(n_fft, n_mels, fmin, fmax, rate):
    lo, hi = _mel(fmin), _mel(fmax)
    edges = [_hz(lo + (hi - lo) * i / (n_mels + 1)) for i in range(n_mels + 2)]
    out = np.zeros((n_mels, n_fft // 2 + 1))
    for m in range(n_mels):
        left, center, right = edges[m], edges[m + 1], edges[m + 2]
        for b in range(n_fft // 2 + 1):
            f = b * rate / n_fft
            if left < f <= center:
                out[m, b] = (f - left) / (center - left)
            elif center < f < right:
                out[m, b] = (right - f) / (right - center)
    return out


def mfcc_oracle(x, frame_len, hop, window, n_fft, n_mels, n_mfcc, fmin, fmax, rate):
    fb = filterbank_oracle(n_fft, n_mels, fmin, fmax, rate)
    n_frames = 1 + (len(x) - frame_len) // hop
    rows = []
    for i in range(n_frames):
        frame = x[i * hop:i * hop + frame_len]
        if window == "hann":
            frame = [frame[t] * (0.5 - 0.5 * math.cos(2 * math.pi * t / frame_len)) for t in range(frame_len)]
        power = []
        for k in range(n_fft // 2 + 1):
            re = im = 0.0
            for t, v in enumerate(frame):
                re += v * math.cos(2 * math.pi * k * t / n_fft)
                im -= v * math.sin(2 * math.pi * k * t / n_fft)
            power.append(re * re + im * im)
        logmel = [math.log(sum(fb[m, k] * power[k] for k in range(len(power))) + 1e-10) for m in range(n_mels)]
        ceps = []
        for k in range(n_mfcc):
            s = sum(logmel[n] * math.cos(math.pi * k * (2 * n + 1) / (2 * n_mels)) for n in range(n_mels))
            scale = math.sqrt(1.0 / n_mels) if k == 0 else math.sqrt(2.0 / n_mels)
            ceps.append(s * scale)
        rows.append(ceps)
    return np.array(rows)


# -- neural network kernels -------------------------------------------------------

def conv1d_oracle(x, w, b):
    """'same' convolution (cross-correlation), x (N, L, C), w (K, C, F)."""
    n, length, c = x.shape
    k, _, f = w.shape
    pad = (k - 1) // 2
    out = np.zeros((n, length, f))
    for i in range(n):
        for t in range(length):
            for o in range(f):
                acc = b[o]
                for j in range(k):
                    src = t + j - pad
                    if 0 <= src < length:
                        for ch in range(c):
                            acc += x[i, src, ch] * w[j, ch, o]
                out[i, t, o] = acc
    return out


def maxpool_oracle(x, pool):
    n, length, c = x.shape
    out = np.zeros((n, length // pool, c))
    for i in range(n):
        for t in range(length // pool):
            for ch in range(c):
                out[i, t, ch] = max(x[i, t * pool + j, ch] for j in range(pool))
    return out


def batchnorm_oracle(x, gamma, beta, eps):
    n, length, c = x.shape
    out = np.zeros_like(x)
    for ch in range(c):
        vals = [x[i, t, ch] for i in range(n) for t in range(length)]
        mean = sum(vals) / len(vals)
        var = sum((v - mean) ** 2 for v in vals) / len(vals)
        for i in range(n):
            for t in range(length):
                out[i, t, ch] = gamma[ch] * (x[i, t, ch] - mean) / math.sqrt(var + eps) + beta[ch]
    return out


def softmax_oracle(z):
    out = []
    for row in z:
        top = max(row)
        ex = [math.exp(v - top) for v in row]
        s = sum(ex)
        out.append([e / s for e in ex])
    return np.array(out)


# -- BLEU -------------------------------------------------------------------------

def bleu_oracle(hyps, refs, max_n=4):
    """Corpus BLEU straight from the definition, with the engine's smoothing rule."""
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for h, r in zip(hyps, refs):
        ht, rt = h.split(), r.split()
        hyp_len += len(ht)
        ref_len += len(rt)
        for n in range(1, max_n + 1):
            hg = Counter(tuple(ht[i:i + n]) for i in range(len(ht) - n + 1))
            rg = Counter(tuple(rt[i:i + n]) for i in range(len(rt) - n + 1))
            for g, c in hg.items():
                matches[n - 1] += min(c, rg.get(g, 0))
                totals[n - 1] += c
    logs = []
    for m, t in zip(matches, totals):
        if t == 0:
            continue
        logs.append(math.log(m / t if m else 0.5 / t))
    if hyp_len == 0 or not logs:
        return 0.0
    bp = 1.0 if hyp_len > ref_len else math.exp(1 - ref_len / hyp_len)
    return 100 * bp * math.exp(sum(logs) / len(logs))
