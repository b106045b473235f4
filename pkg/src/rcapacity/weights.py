"""Weibull-tail edge weights, P(tau > t) = exp(-(alpha - tilt) t^r).

Tilting acts on the natural statistic t^r, so a tilted model is again
Weibull with rate ``alpha - tilt`` and the likelihood ratio is closed form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTilt, ValidationError

__all__ = [
    "WeightModel",
    "ConstantWeights",
    "sample",
    "log_likelihood_ratio",
    "tail",
    "mean",
    "tilt_for_mean",
]


@dataclass(frozen=True)
class WeightModel:
    alpha: float
    r: float
    tilt: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "r", "tilt"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.alpha > 0 and self.r > 0):
            raise ValidationError(f"need alpha > 0 and r > 0, got {self.alpha}, {self.r}")
        if self.tilt < 0:
            raise ValidationError("tilt must be nonnegative")
        if self.tilt >= self.alpha:
            raise DegenerateTilt(f"tilt {self.tilt} must stay below alpha {self.alpha}")

    @property
    def rate(self) -> float:
        return self.alpha - self.tilt

    def with_tilt(self, tilt: float) -> "WeightModel":
        return WeightModel(self.alpha, self.r, tilt)

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        # 1 - U lies in (0, 1], so log never sees 0
        u = 1.0 - rng.random(size)
        return (-np.log(u) / self.rate) ** (1.0 / self.r)

    def describe(self) -> dict:
        return {"alpha": self.alpha, "r": self.r, "tilt": self.tilt}


@dataclass(frozen=True)
class ConstantWeights:
    """Deterministic weights; handy for exact checks of the simulators."""

    c: float

    def draw(self, rng, size) -> np.ndarray:
        return np.full(size, float(self.c))

    def describe(self) -> dict:
        return {"constant": self.c}


def sample(model: WeightModel, u):
    """Inverse-tail transform of uniforms; strictly decreasing in ``u``."""
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise ValidationError("u must lie in (0, 1)")
    out = (-np.log(u) / model.rate) ** (1.0 / model.r)
    return float(out) if out.ndim == 0 else out


def log_likelihood_ratio(model: WeightModel, value):
    """log dP_untilted/dP_tilted at ``value``: -tilt * value^r + log(alpha/(alpha - tilt))."""
    v = np.asarray(value, dtype=float)
    out = -model.tilt * v**model.r + math.log(model.alpha / model.rate)
    return float(out) if out.ndim == 0 else out


def tail(model: WeightModel, t):
    t = np.asarray(t, dtype=float)
    out = np.exp(-model.rate * t**model.r)
    return float(out) if out.ndim == 0 else out


def mean(model: WeightModel) -> float:
    return math.gamma(1.0 + 1.0 / model.r) / model.rate ** (1.0 / model.r)


def tilt_for_mean(alpha: float, r: float, target) -> np.ndarray:
    """Tilt making the tilted mean equal ``target`` (clipped to [0, alpha)).

    The Weibull mean is monotone in the rate, so the root is closed form:
    rate = (Gamma(1 + 1/r) / target)^r.
    """
    target = np.asarray(target, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        rate = (math.gamma(1.0 + 1.0 / r) / target) ** r
    tilt = alpha - rate
    return np.clip(tilt, 0.0, alpha * (1.0 - 1e-12))
