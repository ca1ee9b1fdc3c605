"""Scalar losses returning ``(value, grad_wrt_prediction)``; all are means over samples."""
import numpy as np

from ..errors import InvalidArgumentError

BCE_EPS = 1e-7


def bce(p, y, eps=BCE_EPS):
    """Binary cross-entropy of probabilities ``p`` against 0/1 targets, elementwise."""
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1.0 - eps)
    y = np.asarray(y, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def bce_grad(p, y, eps=BCE_EPS):
    """d bce / d p of the clamped form (zero where the clamp is active)."""
    inside = (p > eps) & (p < 1.0 - eps)
    pc = np.clip(p, eps, 1.0 - eps)
    return np.where(inside, (pc - y) / (pc * (1.0 - pc)), 0.0).astype(p.dtype)


def mse(pred, target):
    diff = pred - target
    return float(np.mean(diff.astype(np.float64) ** 2)), (2.0 / diff.size) * diff


def softmax_xent(logits, labels):
    """Mean cross-entropy of integer ``labels`` under row-wise softmax ``logits``."""
    if logits.shape[0] != labels.shape[0]:
        raise InvalidArgumentError("logits and labels disagree on batch size")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    n = logits.shape[0]
    loss = -float(logp[np.arange(n), labels].astype(np.float64).mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n
