"""Self-normalized sequential importance sampling over programs or surrogates.

Each particle is an independent guided run with log weight
log(target joint) - log(proposal); estimators self-normalize in log space
with max subtraction, so uniform rescaling of the weights is exactly
invariant and long traces cannot underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateWeightsError
from .numerics import rng as rngmod
from .proposal import IcController, ProposalModel, observation_vector
from .runtime import PriorController, run_guided
from .sims import SimModel
from .surrogate import SurrogateModel
from .traces import Trace

__all__ = [
    "WeightedSample",
    "SimExecutor",
    "SurrogateExecutor",
    "prior_proposal",
    "ic_proposal",
    "sis_infer",
    "posterior_expectation",
    "ess",
    "bootstrap_se",
    "normalized_weights",
]


@dataclass
class WeightedSample:
    trace: Trace
    log_weight: float
    cached: dict = field(default_factory=dict)


class SimExecutor:
    """Guided execution of the real program."""

    def __init__(self, sim: SimModel):
        self.sim = sim
        self.family = sim.family

    def run(self, controller, observations: dict, rng: np.random.Generator,
            trace_id: int = 0):
        return run_guided(self.sim.program(), controller, observations,
                          t_max=self.sim.t_max, trace_id=trace_id)


class SurrogateExecutor:
    """Guided execution of a trained surrogate over the same contract."""

    def __init__(self, model: SurrogateModel):
        self.model = model
        self.family = model.family

    def run(self, controller, observations: dict, rng: np.random.Generator,
            trace_id: int = 0):
        return self.model.run_guided(controller, observations, rng,
                                     trace_id=trace_id)


def prior_proposal():
    """Proposal factory: sample every latent site from the distribution the
    executor presents (the ground-truth mode)."""

    def factory(rng, observations):
        return PriorController(rng)

    return factory


def ic_proposal(model: ProposalModel):
    """Proposal factory backed by a trained inference network."""

    def factory(rng, observations):
        vec = observation_vector(model.family, model.sim_config, observations)
        return IcController(model, vec, rng)

    return factory


def sis_infer(executor, proposal_factory, observations: dict, n_particles: int,
              seed: int = 0) -> list[WeightedSample]:
    """K independent guided runs; returns unnormalized weighted samples."""
    if n_particles < 1:
        raise DegenerateWeightsError("need at least one particle")
    out = []
    for k in range(n_particles):
        rng = rngmod.stream(seed, "sis-particle", k)
        controller = proposal_factory(rng, observations)
        trace, log_target, log_q = executor.run(controller, observations, rng,
                                                trace_id=k)
        out.append(WeightedSample(trace, log_target - log_q))
    if not any(math.isfinite(w.log_weight) for w in out):
        raise DegenerateWeightsError("all importance weights vanished")
    return out


def _log_weights(samples) -> np.ndarray:
    lw = np.array([s.log_weight for s in samples])
    if not np.any(np.isfinite(lw)):
        raise DegenerateWeightsError("all importance weights vanished")
    return lw


def normalized_weights(samples) -> np.ndarray:
    lw = _log_weights(samples)
    w = np.exp(lw - lw.max())
    return w / w.sum()


def posterior_expectation(samples, f) -> float:
    """Self-normalized estimate of E[f] under the targeted posterior."""
    lw = _log_weights(samples)
    w = np.exp(lw - lw.max())
    total = w.sum()
    if total <= 0.0:
        raise DegenerateWeightsError("zero total weight")
    values = np.array([float(f(s.trace)) for s in samples])
    return float((w * values).sum() / total)


def ess(samples) -> float:
    """(sum w)^2 / sum w^2, computed stably in log space; lies in [1, K]."""
    lw = _log_weights(samples)
    m = lw.max()
    w = np.exp(lw - m)
    return float(w.sum() ** 2 / (w * w).sum())


def bootstrap_se(samples, f, n_boot: int = 1000, seed: int = 0) -> float:
    """Standard error of posterior_expectation by resampling particles."""
    lw = _log_weights(samples)
    w = np.exp(lw - lw.max())
    values = np.array([float(f(s.trace)) for s in samples])
    rng = rngmod.stream(seed, "bootstrap")
    n = len(samples)
    estimates = np.empty(n_boot)
    for i in range(n_boot):
        idx = rng.integers(0, n, size=n)
        wi = w[idx]
        estimates[i] = (wi * values[idx]).sum() / wi.sum()
    return float(estimates.std(ddof=1))
