"""Benchmark simulators and their configuration files.

A simulator is described by a JSON object with a ``family`` tag; the
front-end resolves either a path to such a file or one of the built-in
names: ``branch2``, ``loopy``, ``heat1d-small``, ``heat1d-large``.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from ..errors import ConfigurationError
from ..numerics.dists import Normal, Uniform
from .branch2 import Branch2Config, branch2, branch2_posterior_quadrature, branch2_program
from .heat1d import (
    Heat1dConfig,
    Heat1dSolver,
    QueryMuW,
    heat1d,
    heat1d_large_config,
    heat1d_program,
    heat1d_small_config,
    make_observations,
    mu_w,
    percentile_inputs,
)
from .loopy import LoopyConfig, iteration_count, loopy, loopy_program

__all__ = [
    "Branch2Config",
    "Heat1dConfig",
    "Heat1dSolver",
    "LoopyConfig",
    "QueryMuW",
    "SimModel",
    "branch2",
    "branch2_posterior_quadrature",
    "branch2_program",
    "builtin_sim",
    "heat1d",
    "heat1d_large_config",
    "heat1d_program",
    "heat1d_small_config",
    "iteration_count",
    "load_sim",
    "loopy",
    "loopy_program",
    "make_observations",
    "mu_w",
    "percentile_inputs",
    "sim_to_json",
]


@dataclass(frozen=True)
class SimModel:
    """A program family plus its concrete configuration."""

    family: str
    config: object

    def program(self):
        if self.family == "branch2":
            return branch2_program(self.config)
        if self.family == "loopy":
            return loopy_program(self.config)
        if self.family == "heat1d":
            return heat1d_program(self.config)
        raise ConfigurationError(f"unknown program family {self.family!r}")

    @property
    def t_max(self) -> int:
        if self.family == "heat1d":
            return max(4096, 4 + 3 * self.config.n_record + 1)
        return 4096


def builtin_sim(name: str) -> SimModel:
    if name == "branch2":
        return SimModel("branch2", Branch2Config())
    if name == "loopy":
        return SimModel("loopy", LoopyConfig())
    if name == "heat1d-small":
        return SimModel("heat1d", heat1d_small_config())
    if name == "heat1d-large":
        return SimModel("heat1d", heat1d_large_config())
    raise ConfigurationError(f"unknown built-in simulator {name!r}")


def sim_to_json(sim: SimModel) -> dict:
    if sim.family == "branch2":
        c: Branch2Config = sim.config
        return {
            "family": "branch2",
            "threshold": c.threshold,
            "pos_branch": [c.pos_branch.mean, c.pos_branch.stddev],
            "neg_branch": [c.neg_branch.low, c.neg_branch.high],
            "obs_stddev": c.obs_stddev,
        }
    if sim.family == "loopy":
        c = sim.config
        return {
            "family": "loopy",
            "continue_prob": c.continue_prob,
            "step_stddev": c.step_stddev,
            "obs_stddev": c.obs_stddev,
        }
    if sim.family == "heat1d":
        d = dataclasses.asdict(sim.config)
        d["air_schedules"] = [[list(bp) for bp in s] for s in sim.config.air_schedules]
        d["family"] = "heat1d"
        return d
    raise ConfigurationError(f"unknown program family {sim.family!r}")


def sim_from_json(obj: dict) -> SimModel:
    family = obj.get("family")
    if family == "branch2":
        return SimModel(
            "branch2",
            Branch2Config(
                threshold=obj["threshold"],
                pos_branch=Normal(*obj["pos_branch"]),
                neg_branch=Uniform(*obj["neg_branch"]),
                obs_stddev=obj["obs_stddev"],
            ),
        )
    if family == "loopy":
        return SimModel(
            "loopy",
            LoopyConfig(
                continue_prob=obj["continue_prob"],
                step_stddev=obj["step_stddev"],
                obs_stddev=obj["obs_stddev"],
            ),
        )
    if family == "heat1d":
        fields = {f.name for f in dataclasses.fields(Heat1dConfig)}
        kwargs = {k: v for k, v in obj.items() if k in fields}
        missing = fields - kwargs.keys()
        if missing:
            raise ConfigurationError(f"heat1d config missing fields: {sorted(missing)}")
        for tup in ("h_top_prior", "h_bot_prior", "thickness_prior", "window"):
            kwargs[tup] = tuple(kwargs[tup])
        kwargs["air_schedules"] = tuple(
            tuple(tuple(bp) for bp in s) for s in obj["air_schedules"]
        )
        return SimModel("heat1d", Heat1dConfig(**kwargs))
    raise ConfigurationError(f"unknown program family {family!r}")


def load_sim(path_or_name: str) -> SimModel:
    """Resolve a simulator from a built-in name or a JSON config path."""
    try:
        return builtin_sim(path_or_name)
    except ConfigurationError:
        pass
    try:
        with open(path_or_name, encoding="utf-8") as fh:
            return sim_from_json(json.load(fh))
    except FileNotFoundError:
        raise ConfigurationError(
            f"{path_or_name!r} is neither a built-in simulator nor a config file"
        ) from None
