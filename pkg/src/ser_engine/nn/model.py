"""The emotion CNN: three conv blocks, a hidden dense layer and a softmax head.

Block ``i`` is Conv(filters[i], kernel) -> BatchNorm -> ReLU -> MaxPool ->
Dropout; after flattening comes Dense(dense_units) -> ReLU -> Dropout ->
Dense(n_classes) -> softmax.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..errors import ParameterError, ShapeError
from . import layers as L


@dataclass
class ModelConfig:
    conv_filters: list = field(default_factory=lambda: [64, 128, 256])
    kernel_size: int = 3
    pool_size: int = 2
    conv_dropout: float = 0.15
    dense_dropout: float = 0.25
    dense_units: int = 256
    n_classes: int = 8
    input_len: int = 2772
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 64
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    seed: int = 0

    def validate(self):
        problems = []
        for name in ("kernel_size", "pool_size", "dense_units", "n_classes", "input_len",
                     "batch_size", "adam_eps", "bn_eps"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive")
        if self.learning_rate < 0:
            problems.append("learning_rate must be >= 0")
        if self.epochs < 0:
            problems.append("epochs must be >= 0")
        if not self.conv_filters or any(f <= 0 for f in self.conv_filters):
            problems.append("conv_filters must be a non-empty list of positive integers")
        for name in ("conv_dropout", "dense_dropout"):
            if not 0 <= getattr(self, name) < 1:
                problems.append(f"{name} must be in [0, 1)")
        for name in ("adam_beta1", "adam_beta2", "bn_momentum"):
            if not 0 <= getattr(self, name) < 1:
                problems.append(f"{name} must be in [0, 1)")
        if not problems and self.flatten_len() <= 0:
            problems.append(f"input_len {self.input_len} is too short for {len(self.conv_filters)} pooling stages")
        if problems:
            raise ParameterError("; ".join(problems))
        return self

    def pooled_lengths(self):
        n, out = self.input_len, []
        for _ in self.conv_filters:
            n //= self.pool_size
            out.append(n)
        return out

    def flatten_len(self):
        return self.pooled_lengths()[-1] * self.conv_filters[-1]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ParameterError(f"unknown model config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.conv_filters = list(cfg.conv_filters)
        return cfg


class Model:
    """Parameters, batch-norm buffers and the forward/backward passes.

    ``params`` holds the trainable arrays; ``buffers`` holds the running
    batch-norm statistics. Both are insertion-ordered dicts, and that order
    is the on-disk order of checkpoints.
    """

    def __init__(self, config: ModelConfig, params, buffers):
        self.config = config
        self.params = params
        self.buffers = buffers

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def copy(self):
        return Model(self.config,
                     {k: v.copy() for k, v in self.params.items()},
                     {k: v.copy() for k, v in self.buffers.items()})

    def state(self):
        """Every array in checkpoint order."""
        out = dict(self.params)
        out.update(self.buffers)
        return out

    # -- forward / backward -------------------------------------------------

    def forward(self, x, train=False, rng=None, dropout=True, update_stats=True):
        """Return ``(probabilities, caches)`` for a ``(batch, input_len)`` or 3-D batch."""
        cfg = self.config
        p, buf = self.params, self.buffers
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 2:
            x = x[:, :, None]
        if x.shape[1:] != (cfg.input_len, 1):
            raise ShapeError(f"expected inputs of shape (batch, {cfg.input_len}, 1), got {x.shape}")
        if train and dropout and rng is None:
            raise ValueError("train-mode dropout needs a random generator")
        use_drop = train and dropout
        caches = []
        h = x
        for i in range(len(cfg.conv_filters)):
            h, c_conv = L.conv1d_forward(h, p[f"conv{i}.w"], p[f"conv{i}.b"])
            h, c_bn = L.batchnorm_forward(
                h, p[f"bn{i}.gamma"], p[f"bn{i}.beta"], buf[f"bn{i}.mean"], buf[f"bn{i}.var"],
                train, cfg.bn_momentum, cfg.bn_eps, update=update_stats, overwrite=True,
            )
            # ReLU is monotone, so it commutes with max-pooling; applying it
            # after the pool touches 1/pool_size of the elements
            h, c_pool = L.maxpool_forward(h, cfg.pool_size)
            h, c_relu = L.relu_forward(h)
            h, c_drop = L.dropout_forward(h, cfg.conv_dropout, rng, use_drop)
            caches.append((c_conv, c_bn, c_relu, c_pool, c_drop))
        shape = h.shape
        h = h.reshape(shape[0], -1)
        h, c_d0 = L.dense_forward(h, p["dense0.w"], p["dense0.b"])
        h, c_r0 = L.relu_forward(h)
        h, c_dr0 = L.dropout_forward(h, cfg.dense_dropout, rng, use_drop)
        logits, c_d1 = L.dense_forward(h, p["dense1.w"], p["dense1.b"])
        probs = L.softmax(logits)
        return probs, (caches, shape, c_d0, c_r0, c_dr0, c_d1)

    def backward(self, dlogits, cache):
        """Gradients of every parameter given the gradient at the logits.

        Returns ``(grads, None)``; the input gradient is never needed.
        """
        caches, shape, c_d0, c_r0, c_dr0, c_d1 = cache
        g = {}
        dh, g["dense1.w"], g["dense1.b"] = L.dense_backward(dlogits, c_d1)
        dh = L.dropout_backward(dh, c_dr0)
        dh = L.relu_backward(dh, c_r0)
        dh, g["dense0.w"], g["dense0.b"] = L.dense_backward(dh, c_d0)
        dh = dh.reshape(shape)
        for i in reversed(range(len(caches))):
            c_conv, c_bn, c_relu, c_pool, c_drop = caches[i]
            dh = L.dropout_backward(dh, c_drop)
            dh = L.relu_backward(dh, c_relu)
            dh = L.maxpool_backward(dh, c_pool)
            dh, g[f"bn{i}.gamma"], g[f"bn{i}.beta"] = L.batchnorm_backward(dh, c_bn)
            dh, g[f"conv{i}.w"], g[f"conv{i}.b"] = L.conv1d_backward(dh, c_conv, need_dx=i > 0)
        grads = {k: g[k] for k in self.params}
        return grads, dh

    def loss_and_grads(self, x, targets, rng=None, dropout=True, update_stats=True):
        probs, cache = self.forward(x, train=True, rng=rng, dropout=dropout, update_stats=update_stats)
        loss = L.cross_entropy(probs, targets)
        grads, _ = self.backward(L.softmax_cross_entropy_backward(probs, targets.astype(probs.dtype)), cache)
        return loss, probs, grads

    def predict_proba(self, x, batch_size=256):
        x = np.asarray(x)
        out = []
        for start in range(0, x.shape[0], batch_size):
            probs, _ = self.forward(x[start:start + batch_size], train=False)
            out.append(probs)
        if not out:
            return np.zeros((0, self.config.n_classes), dtype=self.dtype)
        return np.concatenate(out)


def build_model(config: ModelConfig, dtype=np.float32) -> Model:
    """He-normal weights and zero biases, drawn from ``config.seed``."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    params, buffers = {}, {}
    in_ch = 1
    for i, filters in enumerate(config.conv_filters):
        fan_in = config.kernel_size * in_ch
        params[f"conv{i}.w"] = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                                          (config.kernel_size, in_ch, filters)).astype(dtype)
        params[f"conv{i}.b"] = np.zeros(filters, dtype=dtype)
        params[f"bn{i}.gamma"] = np.ones(filters, dtype=dtype)
        params[f"bn{i}.beta"] = np.zeros(filters, dtype=dtype)
        buffers[f"bn{i}.mean"] = np.zeros(filters, dtype=dtype)
        buffers[f"bn{i}.var"] = np.ones(filters, dtype=dtype)
        in_ch = filters
    flat = config.flatten_len()
    params["dense0.w"] = rng.normal(0.0, np.sqrt(2.0 / flat), (flat, config.dense_units)).astype(dtype)
    params["dense0.b"] = np.zeros(config.dense_units, dtype=dtype)
    params["dense1.w"] = rng.normal(0.0, np.sqrt(2.0 / config.dense_units),
                                    (config.dense_units, config.n_classes)).astype(dtype)
    params["dense1.b"] = np.zeros(config.n_classes, dtype=dtype)
    return Model(config, params, buffers)
