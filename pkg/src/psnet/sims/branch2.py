"""Two-branch benchmark program.

Four sites: a standard-normal draw at ``a1`` picks one of two branches
(``a2``: Normal, ``a3``: Uniform), and the branch value is observed through
Gaussian noise at ``a4``.  Exactly two address paths exist, which makes the
posterior tractable by one-dimensional quadrature and the program a good
ground-truth case for structure learning and inference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numerics.dists import Normal, Uniform
from ..runtime import PriorController, SiteRequest, run_guided, run_prior

__all__ = ["Branch2Config", "branch2_program", "branch2", "branch2_posterior_quadrature"]


@dataclass(frozen=True)
class Branch2Config:
    threshold: float = 0.0
    pos_branch: Normal = field(default_factory=lambda: Normal(2.0, 1.0))
    neg_branch: Uniform = field(default_factory=lambda: Uniform(-3.0, -1.0))
    obs_stddev: float = 0.5

    def __post_init__(self):
        if not self.obs_stddev > 0:
            raise ValueError("observation noise stddev must be positive")


def branch2_program(config: Branch2Config = Branch2Config()):
    """Program factory implementing the two-branch generative model."""

    def program():
        x1 = yield SiteRequest("a1", Normal(0.0, 1.0))
        if x1 > config.threshold:
            x = yield SiteRequest("a2", config.pos_branch)
        else:
            x = yield SiteRequest("a3", config.neg_branch)
        yield SiteRequest("a4", Normal(x, config.obs_stddev), observed=True)

    return program


def branch2(rng_or_controller, config: Branch2Config = Branch2Config(),
            observations=None, trace_id: int = 0):
    """Run the program once.

    With a Generator, draws a prior trace.  With a Controller, runs guided
    and returns (trace, log_p, log_q); observations must then cover a4.
    """
    program = branch2_program(config)
    if isinstance(rng_or_controller, np.random.Generator):
        return run_prior(program, rng_or_controller, trace_id=trace_id)
    ctrl = rng_or_controller
    if not isinstance(ctrl, PriorController) and observations is None:
        raise ValueError("guided branch2 needs observations")
    return run_guided(program, ctrl, observations or {}, trace_id=trace_id)


def branch2_posterior_quadrature(y: float, config: Branch2Config = Branch2Config(),
                                 n_grid: int = 100_000):
    """Ground-truth posterior quantities for observation y at a4, by
    quadrature only (no analytic convolutions).

    Returns (P(a2 branch | y), E[x_a1 | y]).  The first-site value x1 feeds
    the observation only through the branch decision, so both integrals are
    one-dimensional: a grid over x1 for the outer expectation and grids over
    the branch values for the conditional evidence of each path.
    """
    s_obs = config.obs_stddev

    def normal_pdf(x, mean, std):
        z = (x - mean) / std
        return np.exp(-0.5 * z * z) / (std * np.sqrt(2.0 * np.pi))

    # Evidence of y along each branch, by quadrature over the branch value.
    pb = config.pos_branch
    xs = np.linspace(pb.mean - 8 * pb.stddev, pb.mean + 8 * pb.stddev, n_grid)
    p_y_pos = np.trapezoid(normal_pdf(xs, pb.mean, pb.stddev) * normal_pdf(y, xs, s_obs), xs)

    nb = config.neg_branch
    us = np.linspace(nb.low, nb.high, n_grid)
    p_y_neg = np.trapezoid(normal_pdf(y, us, s_obs) / (nb.high - nb.low), us)

    # Outer quadrature over x1.
    x1 = np.linspace(-8.0, 8.0, n_grid)
    w1 = normal_pdf(x1, 0.0, 1.0)
    lik = np.where(x1 > config.threshold, p_y_pos, p_y_neg)
    z = np.trapezoid(w1 * lik, x1)
    p_pos = np.trapezoid(w1 * lik * (x1 > config.threshold), x1) / z
    e_x1 = np.trapezoid(w1 * lik * x1, x1) / z
    return float(p_pos), float(e_x1)
