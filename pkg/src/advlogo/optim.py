"""Adam with bias correction, shared by the detector trainer and the attack."""

from dataclasses import dataclass

import numpy as np

from .errors import NumericError


@dataclass
class AdamMoments:
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def like(cls, arr):
        return cls(np.zeros_like(arr, dtype=np.float64), np.zeros_like(arr, dtype=np.float64))


def adam_update(param, grad, moments: AdamMoments, step: int, lr: float,
                beta1=0.9, beta2=0.999, eps=1e-8, mask=None):
    """In-place Adam update of ``param``; ``step`` is the 1-based step count.

    With ``mask``, moments and parameters change only where the mask is true.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if not np.isfinite(grad).all():
        raise NumericError("non-finite gradient")
    m, v = moments.m, moments.v
    m_new = beta1 * m + (1.0 - beta1) * grad
    v_new = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m_new / (1.0 - beta1 ** step)
    v_hat = v_new / (1.0 - beta2 ** step)
    delta = lr * m_hat / (np.sqrt(v_hat) + eps)
    if mask is None:
        m[...] = m_new
        v[...] = v_new
        param -= delta
    else:
        m[...] = np.where(mask, m_new, m)
        v[...] = np.where(mask, v_new, v)
        param -= np.where(mask, delta, 0.0)
    return param
