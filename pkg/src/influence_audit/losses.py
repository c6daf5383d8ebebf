"""Output-space losses, their derivatives, and Bregman divergences.

All functions work on a batch: ``y`` is ``(n, m)`` network outputs and
``t`` the matching targets. Squared error uses the ``0.5 * ||y - t||^2``
convention so that its output Hessian is the identity. Binary and softmax
cross-entropy take logits.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, log_softmax, logsumexp, softmax

from .errors import ConfigurationError, ShapeError

LOSS_KINDS = ("squared_error", "binary_cross_entropy", "softmax_cross_entropy")


def _check_kind(kind):
    if kind not in LOSS_KINDS:
        raise ConfigurationError(f"unsupported loss kind {kind!r}")


def prepare_targets(t, kind, m):
    """Coerce stored targets to the array layout a loss expects."""
    _check_kind(kind)
    t = np.asarray(t)
    if kind == "softmax_cross_entropy":
        if t.ndim != 1:
            raise ShapeError("softmax cross-entropy expects integer class labels")
        return t.astype(np.int64)
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 1:
        t = t.reshape(-1, 1)
    if t.shape[1] != m:
        raise ShapeError(f"targets have width {t.shape[1]}, network outputs {m}")
    return t


def _softplus(y):
    return np.logaddexp(0.0, y)


def value(y, t, kind):
    """Per-example loss values, shape ``(n,)``."""
    _check_kind(kind)
    if kind == "squared_error":
        return 0.5 * np.sum((y - t) ** 2, axis=1)
    if kind == "binary_cross_entropy":
        return np.sum(_softplus(y) - t * y, axis=1)
    return logsumexp(y, axis=1) - y[np.arange(len(y)), t]


def grad(y, t, kind):
    """Per-example gradient of the loss with respect to the outputs."""
    _check_kind(kind)
    if kind == "squared_error":
        return y - t
    if kind == "binary_cross_entropy":
        return expit(y) - t
    g = softmax(y, axis=1)
    g[np.arange(len(y)), t] -= 1.0
    return g


def hess_vp(y, kind, v):
    """Output-Hessian times ``v`` for every row; ``v`` has the shape of ``y``.

    The output Hessian of all three losses is independent of the target.
    """
    _check_kind(kind)
    if kind == "squared_error":
        return v.copy()
    if kind == "binary_cross_entropy":
        s = expit(y)
        return s * (1.0 - s) * v
    p = softmax(y, axis=1)
    return p * v - p * np.sum(p * v, axis=1, keepdims=True)


def output_hessian(y, t, kind):
    """Dense ``m x m`` Hessian of the loss at a single output vector ``y``."""
    _check_kind(kind)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if kind == "squared_error":
        return np.eye(len(y))
    if kind == "binary_cross_entropy":
        s = expit(y)
        return np.diag(s * (1.0 - s))
    p = softmax(y)
    return np.diag(p) - np.outer(p, p)


def bregman(y, ys, kind):
    """Per-example Bregman divergence ``D(y, ys)`` of the loss.

    For both cross-entropies the target cancels and ``D`` is a KL
    divergence between the predictive distributions at ``ys`` and ``y``.
    Those are evaluated in closed form and clipped at zero against
    rounding.
    """
    _check_kind(kind)
    if kind == "squared_error":
        return 0.5 * np.sum((y - ys) ** 2, axis=1)
    if kind == "binary_cross_entropy":
        s = expit(ys)
        d = s * (_softplus(-y) - _softplus(-ys)) + (1.0 - s) * (_softplus(y) - _softplus(ys))
        return np.maximum(np.sum(d, axis=1), 0.0)
    lps = log_softmax(ys, axis=1)
    d = np.sum(np.exp(lps) * (lps - log_softmax(y, axis=1)), axis=1)
    return np.maximum(d, 0.0)


def bregman_grad(y, ys, kind):
    """Gradient of ``D(y, ys)`` with respect to ``y``."""
    _check_kind(kind)
    if kind == "squared_error":
        return y - ys
    if kind == "binary_cross_entropy":
        return expit(y) - expit(ys)
    return softmax(y, axis=1) - softmax(ys, axis=1)
