"""Distillation weight schedules: epoch-linear ramps and adaptive weight assignment."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError

SCHEDULE_KINDS = ("fixed", "epoch_linear_up", "epoch_linear_down", "awa")


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str = "fixed"
    fixed_value: float = 0.0
    warmup_epochs: int = 0
    warmup_value: float = 0.0

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if self.fixed_value < 0 or self.warmup_value < 0:
            raise ConfigError("schedule weights must be non-negative")
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs must be non-negative")


@dataclass(frozen=True)
class AwaConfig:
    alpha: float = 1.3
    alpha_tau: float = 1.0
    granularity: str = "per_sample"
    soften: str = "logits"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if not self.alpha_tau > 0:
            raise ConfigError("alpha_tau must be positive")
        if self.granularity not in ("per_sample", "per_batch"):
            raise ConfigError(f"unknown granularity {self.granularity!r}")
        if self.soften not in ("logits", "probs"):
            raise ConfigError(f"unknown soften mode {self.soften!r}")


@dataclass
class WeightPair:
    w_lb: np.ndarray | float
    w_kd: np.ndarray | float


def epoch_schedule(spec: ScheduleSpec, t: int, T: int) -> float:
    """Weight for epoch ``t`` of ``T``.

    Warmup overrides the schedule for ``t < warmup_epochs``. ``awa`` has no
    epoch-level value; asking for one is a configuration error.
    """
    if T < 1:
        raise ConfigError("total epochs T must be >= 1")
    if not 0 <= t <= T:
        raise ConfigError(f"epoch {t} outside [0, {T}]")
    if t < spec.warmup_epochs:
        return float(spec.warmup_value)
    if spec.kind == "fixed":
        return float(spec.fixed_value)
    if spec.kind == "epoch_linear_up":
        return t / T
    if spec.kind == "epoch_linear_down":
        return 1.0 - t / T
    raise ConfigError("the awa schedule is computed per iteration, not per epoch")


def awa_weights(l_on, l_of, cfg: AwaConfig) -> WeightPair:
    """Online weight ``exp(l_of - l_on)`` and offline weight ``max(alpha - w_lb, 0)``.

    ``l_on`` and ``l_of`` are the soft-target cross entropies of the
    previous-iteration student and of the offline student. With per-batch
    granularity both are averaged first and scalars are returned.
    """
    l_on = np.asarray(l_on, dtype=np.float64)
    l_of = np.asarray(l_of, dtype=np.float64)
    if l_on.shape != l_of.shape:
        raise NumericError(f"l_on {l_on.shape} and l_of {l_of.shape} differ in shape")
    if not (np.all(np.isfinite(l_on)) and np.all(np.isfinite(l_of))):
        raise NumericError("non-finite soft-target loss")
    if cfg.granularity == "per_batch":
        l_on, l_of = l_on.mean(), l_of.mean()
    # scalar libm exp: numpy's vectorised exp can differ in the last bit
    # depending on the CPU's SIMD features, which would break reproducibility
    diff = l_of - l_on
    try:
        w_lb = np.array([math.exp(v) for v in diff.ravel()], dtype=np.float64).reshape(diff.shape)
    except OverflowError:
        raise NumericError("online weight overflowed") from None
    w_kd = np.maximum(cfg.alpha - w_lb, 0.0)
    if w_lb.ndim == 0:
        return WeightPair(float(w_lb), float(w_kd))
    return WeightPair(w_lb, w_kd)
