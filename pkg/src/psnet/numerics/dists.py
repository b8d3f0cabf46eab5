"""The three elementary distribution families used by programs and heads.

Each spec is an immutable tagged value supporting exact log density / log
mass and sampling from a provided generator.  Values outside the support of
Uniform or Categorical raise SupportError rather than returning -inf; the
caller decides how to treat impossible values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from ..errors import ConfigurationError, SupportError

__all__ = [
    "Normal",
    "Uniform",
    "Categorical",
    "SquashedNormal",
    "DistributionSpec",
    "log_prob",
    "sample",
    "softmax_logits_to_probs",
    "spec_to_json",
    "spec_from_json",
]

_LOG_2PI = math.log(2.0 * math.pi)
_PROB_SUM_TOL = 1e-9


@dataclass(frozen=True)
class Normal:
    mean: float
    stddev: float

    kind = "normal"

    def __post_init__(self):
        if not (self.stddev > 0.0) or not math.isfinite(self.stddev):
            raise ConfigurationError(f"normal stddev must be positive, got {self.stddev}")
        if not math.isfinite(self.mean):
            raise ConfigurationError(f"normal mean must be finite, got {self.mean}")

    def log_prob(self, x: float) -> float:
        z = (x - self.mean) / self.stddev
        return -0.5 * (_LOG_2PI + z * z) - math.log(self.stddev)

    def sample(self, rng: np.random.Generator) -> float:
        return self.mean + self.stddev * rng.standard_normal()

    def params(self) -> list:
        return [self.mean, self.stddev]


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    kind = "uniform"

    def __post_init__(self):
        if not (self.low < self.high):
            raise ConfigurationError(f"uniform needs low < high, got [{self.low}, {self.high}]")

    def log_prob(self, x: float) -> float:
        if x < self.low or x > self.high:
            raise SupportError(f"{x} outside Uniform[{self.low}, {self.high}]")
        return -math.log(self.high - self.low)

    def sample(self, rng: np.random.Generator) -> float:
        return self.low + (self.high - self.low) * rng.random()

    def params(self) -> list:
        return [self.low, self.high]


@dataclass(frozen=True)
class Categorical:
    probs: tuple

    kind = "categorical"

    def __init__(self, probs):
        object.__setattr__(self, "probs", tuple(float(p) for p in probs))
        if len(self.probs) < 1:
            raise ConfigurationError("categorical needs at least one category")
        if any(p < 0 for p in self.probs):
            raise ConfigurationError("categorical probabilities must be nonnegative")
        if abs(sum(self.probs) - 1.0) > _PROB_SUM_TOL:
            raise ConfigurationError(
                f"categorical probabilities sum to {sum(self.probs)}, not 1"
            )

    def log_prob(self, k) -> float:
        idx = int(k)
        if idx != k or idx < 0 or idx >= len(self.probs):
            raise SupportError(f"invalid category {k} for {len(self.probs)} categories")
        p = self.probs[idx]
        if p <= 0.0:
            raise SupportError(f"category {idx} has zero probability")
        return math.log(p)

    def sample(self, rng: np.random.Generator) -> int:
        u = rng.random()
        acc = 0.0
        for idx, p in enumerate(self.probs):
            acc += p
            if u < acc:
                return idx
        return len(self.probs) - 1

    def params(self) -> list:
        return list(self.probs)


@dataclass(frozen=True)
class SquashedNormal:
    """A Normal in logit space squashed onto (low, high).

    x = low + (high - low) * sigmoid(z) with z ~ Normal(mu_z, sigma_z); the
    log density includes the change-of-variables term.  Used by learned
    value heads and proposals at bounded-support sites; programs themselves
    only ever use the three plain families.
    """

    low: float
    high: float
    mu_z: float
    sigma_z: float

    kind = "squashed_normal"

    _Z_CLIP = 30.0  # keeps sampled values strictly inside (low, high) in f64

    def __post_init__(self):
        if not (self.low < self.high):
            raise ConfigurationError(
                f"squashed normal needs low < high, got [{self.low}, {self.high}]"
            )
        if not (self.sigma_z > 0.0):
            raise ConfigurationError("squashed normal needs sigma_z > 0")

    def log_prob(self, x: float) -> float:
        if not (self.low < x < self.high):
            raise SupportError(f"{x} outside open interval ({self.low}, {self.high})")
        width = self.high - self.low
        s = (x - self.low) / width
        z = math.log(s) - math.log1p(-s)
        zn = (z - self.mu_z) / self.sigma_z
        log_normal = -0.5 * (_LOG_2PI + zn * zn) - math.log(self.sigma_z)
        return log_normal - math.log(width * s * (1.0 - s))

    def sample(self, rng: np.random.Generator) -> float:
        z = self.mu_z + self.sigma_z * rng.standard_normal()
        z = min(max(z, -self._Z_CLIP), self._Z_CLIP)
        s = 1.0 / (1.0 + math.exp(-z))
        return self.low + (self.high - self.low) * s

    def params(self) -> list:
        return [self.low, self.high, self.mu_z, self.sigma_z]


DistributionSpec = Union[Normal, Uniform, Categorical, SquashedNormal]


def log_prob(spec: DistributionSpec, x) -> float:
    return spec.log_prob(x)


def sample(spec: DistributionSpec, rng: np.random.Generator):
    return spec.sample(rng)


def softmax_logits_to_probs(logits: np.ndarray) -> np.ndarray:
    """Max-subtracted stable softmax; output sums to 1 within 1e-12."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(logits).all():
        raise ConfigurationError("softmax requires finite logits")
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def spec_to_json(spec: DistributionSpec) -> dict:
    return {"kind": spec.kind, "params": spec.params()}


def spec_from_json(obj: dict) -> DistributionSpec:
    kind = obj["kind"]
    params = obj["params"]
    if kind == "normal":
        return Normal(params[0], params[1])
    if kind == "uniform":
        return Uniform(params[0], params[1])
    if kind == "categorical":
        return Categorical(params)
    if kind == "squashed_normal":
        return SquashedNormal(params[0], params[1], params[2], params[3])
    raise ConfigurationError(f"unknown distribution kind {kind!r}")
