"""Softmax, cross entropy, label smoothing and temperature-softened KL.

Every loss is computed per sample; the batch value is the mean. Logs of
probabilities always go through a max-shifted log-sum-exp.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError

DEFAULT_TAU = 3.0
DEFAULT_ALPHA_TAU = 1.0


@dataclass
class LossValue:
    value: float
    per_sample: np.ndarray
    # d per_sample[i] / d z[i]; the batch-mean gradient is this divided by B
    grad_per_sample: np.ndarray | None = None

    @property
    def grad(self):
        if self.grad_per_sample is None:
            return None
        return self.grad_per_sample / self.grad_per_sample.shape[0]


def _as_logits(z):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = z[None, :]
    if z.ndim != 2:
        raise ShapeError(f"logits must be (B, C), got shape {z.shape}")
    return z


def _check_labels(labels, z):
    labels = np.asarray(labels)
    if labels.ndim == 0:
        labels = labels[None]
    if labels.shape != (z.shape[0],):
        raise ShapeError(f"{labels.shape[0]} labels for {z.shape[0]} rows")
    if not np.issubdtype(labels.dtype, np.integer):
        raise DataError("labels must be integers")
    if labels.min() < 0 or labels.max() >= z.shape[1]:
        raise DataError(f"labels must lie in [0, {z.shape[1]})")
    return labels


def _check_temperature(t, name="tau"):
    if not t > 0:
        raise ConfigError(f"{name} must be positive, got {t}")


def log_softmax(z, tau=1.0):
    z = _as_logits(z) / tau
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(z, tau: float = 1.0) -> np.ndarray:
    """Row-wise softmax of ``z / tau``. 1-D input gives 1-D output."""
    _check_temperature(tau)
    squeeze = np.ndim(z) == 1
    z = _as_logits(z) / tau
    e = np.exp(z - z.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    return p[0] if squeeze else p


def _one_hot(labels, C):
    y = np.zeros((labels.shape[0], C))
    y[np.arange(labels.shape[0]), labels] = 1.0
    return y


def _target_ce(z, targets):
    logp = log_softmax(z)
    per = -(targets * logp).sum(axis=1)
    grad = np.exp(logp) - targets
    return LossValue(float(per.mean()), per, grad)


def cross_entropy(z, labels) -> LossValue:
    z = _as_logits(z)
    labels = _check_labels(labels, z)
    return _target_ce(z, _one_hot(labels, z.shape[1]))


def lsr_loss(z, labels, eps: float) -> LossValue:
    """Cross entropy against ``(1 - eps) * onehot + eps / C``."""
    if not 0 <= eps < 1:
        raise ConfigError(f"label smoothing eps must lie in [0, 1), got {eps}")
    z = _as_logits(z)
    labels = _check_labels(labels, z)
    C = z.shape[1]
    targets = (1.0 - eps) * _one_hot(labels, C) + eps / C
    return _target_ce(z, targets)


def kl_soft(z_teacher, z_student, tau: float) -> LossValue:
    """Per-sample ``tau**2 * KL(softmax(z_t/tau) || softmax(z_s/tau))``.

    The teacher side is a constant: only the gradient with respect to
    ``z_student`` is returned.
    """
    _check_temperature(tau)
    zt, zs = _as_logits(z_teacher), _as_logits(z_student)
    if zt.shape != zs.shape:
        raise ShapeError(f"teacher logits {zt.shape} vs student logits {zs.shape}")
    log_pt = log_softmax(zt, tau)
    log_qs = log_softmax(zs, tau)
    pt = np.exp(log_pt)
    per = tau * tau * (pt * (log_pt - log_qs)).sum(axis=1)
    per = np.maximum(per, 0.0)
    grad = tau * (np.exp(log_qs) - pt)
    return LossValue(float(per.mean()), per, grad)


def soft_target_ce(z, labels, alpha_tau: float, soften: str = "logits") -> np.ndarray:
    """Per-sample cross entropy of temperature-softened predictions vs true labels.

    ``soften="logits"`` divides the logits by ``alpha_tau`` before the
    softmax. ``soften="probs"`` first turns logits into probabilities and
    then applies the softmax to ``probs / alpha_tau``. The result only feeds
    the weight assignment and is never differentiated.
    """
    _check_temperature(alpha_tau, "alpha_tau")
    z = _as_logits(z)
    labels = _check_labels(labels, z)
    if soften == "logits":
        inner = z
    elif soften == "probs":
        inner = softmax(z)
    else:
        raise ConfigError(f"unknown soften mode {soften!r}")
    logp = log_softmax(inner, alpha_tau)
    return -logp[np.arange(z.shape[0]), labels]
