from __future__ import annotations

import numpy as np

FULL_SCALE_LR = 3e-5


def xavier_uniform(shape: tuple[int, ...], rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    """Glorot uniform. Linear weights are (in, out); conv kernels (kh, kw, in, out)
    count the receptive field in both fans."""
    if len(shape) == 2:
        fan_in, fan_out = shape
    elif len(shape) == 4:
        rf = shape[0] * shape[1]
        fan_in, fan_out = shape[2] * rf, shape[3] * rf
    else:
        raise ValueError(f"xavier_uniform supports 2-D and 4-D shapes, got {shape}")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def adam_step(param, grad, m, v, t, lr=FULL_SCALE_LR, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update at step t (1-based). Returns (param, m, v)."""
    m = beta1 * m + (1 - beta1) * grad
    v = beta2 * v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr=FULL_SCALE_LR, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p) for k, p in params.items()}
        self.v = {k: np.zeros_like(p) for k, p in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update `params` in place."""
        self.t += 1
        for k, p in params.items():
            new, self.m[k], self.v[k] = adam_step(
                p, grads[k].astype(p.dtype, copy=False), self.m[k], self.v[k], self.t,
                self.lr, self.beta1, self.beta2, self.eps,
            )
            p[...] = new
