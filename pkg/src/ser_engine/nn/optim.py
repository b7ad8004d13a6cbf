import numpy as np

# elements per Adam block: five float32 blocks of this size fit in a 2 MB L2
CHUNK = 1 << 15


class AdamState:
    """First/second moment buffers, the step counter and a reusable scratch block."""

    def __init__(self, params):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.scratch = {}
        self.step = 0


def adam_step(params, grads, state: AdamState, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, applied to ``params`` in place.

    ``p -= lr * m_hat / (sqrt(v_hat) + eps)`` with ``m_hat = m / (1 - beta1**t)``
    and ``v_hat = v / (1 - beta2**t)``.

    Large tensors are updated block by block so every intermediate stays in
    cache; the per-element arithmetic is the same either way.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        if not (p.flags.c_contiguous and state.m[name].flags.c_contiguous):
            raise ValueError(f"Adam updates {name} in place and needs a C-contiguous array")
        one = p.dtype.type
        scratch = state.scratch.get(p.dtype)
        if scratch is None:
            scratch = state.scratch[p.dtype] = np.empty(CHUNK, dtype=p.dtype)
        flat = [a.reshape(-1) for a in (p, grads[name], state.m[name], state.v[name])]
        for lo in range(0, p.size, CHUNK):
            pp, g, m, v = (a[lo:lo + CHUNK] for a in flat)
            s = scratch[:g.size]
            np.multiply(g, one(1.0 - beta1), out=s)
            m *= one(beta1)
            m += s
            np.multiply(g, g, out=s)
            s *= one(1.0 - beta2)
            v *= one(beta2)
            v += s
            np.divide(v, one(c2), out=s)
            np.sqrt(s, out=s)
            s += one(eps)
            np.divide(m, s, out=s)
            s *= one(lr / c1)
            pp -= s
    return params
