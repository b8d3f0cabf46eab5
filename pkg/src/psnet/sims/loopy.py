"""Variable-length loop benchmark program.

Each iteration draws a value at ``step`` and a continue/stop decision at
``cont``; the noisy sum is observed at the end.  Trace length is geometric,
which exercises loop addressing (step__0, step__1, ...) and variable-T
handling end to end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics.dists import Categorical, Normal
from ..runtime import SiteRequest, run_guided, run_prior

__all__ = ["LoopyConfig", "loopy_program", "loopy"]

CONTINUE, STOP = 0, 1


@dataclass(frozen=True)
class LoopyConfig:
    continue_prob: float = 0.8
    step_stddev: float = 1.0
    obs_stddev: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.continue_prob < 1.0):
            raise ValueError("continue probability must lie in [0, 1)")


def loopy_program(config: LoopyConfig = LoopyConfig()):
    def program():
        p = config.continue_prob
        total = 0.0
        while True:
            x = yield SiteRequest("step", Normal(0.0, config.step_stddev))
            total += x
            decision = yield SiteRequest("cont", Categorical([p, 1.0 - p]))
            if decision == STOP:
                break
        yield SiteRequest("obs", Normal(total, config.obs_stddev), observed=True)

    return program


def loopy(rng_or_controller, config: LoopyConfig = LoopyConfig(),
          observations=None, trace_id: int = 0):
    program = loopy_program(config)
    if isinstance(rng_or_controller, np.random.Generator):
        return run_prior(program, rng_or_controller, trace_id=trace_id)
    return run_guided(program, rng_or_controller, observations or {}, trace_id=trace_id)


def iteration_count(trace) -> int:
    """Number of loop iterations recorded in a trace."""
    return sum(1 for e in trace.entries if e.addr.startswith("step__"))
