"""Stochastic 1D through-thickness heat-transfer and cure benchmark.

A tool plate and a curing part are discretized on a shared uniform grid.
Convection couples both outer surfaces to the autoclave air, which follows
one of three ramp-hold schedules; part nodes release exothermic heat as a
first-order cure reaction proceeds.  Per trace the program draws the
convection coefficients and the part thickness from their priors, observes
the schedule id, then records per recorded step the (noisy) air temperature
driving the solver, the tracked-depth internal temperature as a latent
sample, and the bottom-surface temperature as an observation.

The solver itself is an explicit finite-difference scheme taking
``record_every`` stability-bounded substeps per recorded step.  It is kept
deliberately plain (vectorized numpy, no compiled kernels): this program
plays the role of the expensive reference simulator that surrogates are
meant to out-run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..errors import ConfigurationError, ProgramError, ValidationError
from ..numerics.dists import Categorical, Normal, Uniform
from ..runtime import SiteRequest, run_guided, run_prior
from ..traces import Trace

__all__ = [
    "Heat1dConfig",
    "QueryMuW",
    "Heat1dSolver",
    "heat1d_program",
    "heat1d",
    "mu_w",
    "percentile_inputs",
    "make_observations",
    "heat1d_small_config",
    "heat1d_large_config",
]

KELVIN_OFFSET = 273.15
MAX_PHYSICAL_TEMP = 1000.0  # degC; beyond this the solver is declared broken

INPUT_ADDRESSES = ("h_top__0", "h_bot__0", "thick__0")
CONFIG_ADDRESS = "cfg__0"


@dataclass(frozen=True)
class Heat1dConfig:
    # discretization
    n_nodes: int
    n_record: int          # M recorded steps
    dt: float              # solver substep (s); must satisfy the CFL bound
    record_every: int      # substeps per recorded step
    tool_nodes: int        # nodes 0..tool_nodes-1 are tool, the rest part
    tool_thickness: float  # m
    # material
    kappa_tool: float      # m^2/s
    kappa_part: float
    vol_heat_cap_tool: float   # J/(m^3 K), used by the convection balance
    vol_heat_cap_part: float
    # priors over latent inputs
    h_top_prior: tuple     # (low, high) W/(m^2 K)
    h_bot_prior: tuple
    thickness_prior: tuple  # part thickness (m)
    # air schedules: one per config id, breakpoints (recorded step, degC)
    air_schedules: tuple
    # cure kinetics: d(alpha) = dt * A * exp(-(E/R)/T_K) * (1 - alpha)
    cure_rate_constant: float    # A, 1/s
    cure_activation_ratio: float  # E/R, K
    cure_heat_rise: float        # Q/c, adiabatic temperature rise, degC
    # noise
    sigma_proc: float      # degC, on recorded internal temperatures
    sigma_obs: float       # degC, on bottom-surface temperatures
    sigma_air: float       # degC, on the air temperature actually imposed
    # misc
    initial_temp: float    # degC
    tracked_node: int      # depth index whose temperature is recorded
    window: tuple          # (lo, hi) recorded-step indices, inclusive

    def __post_init__(self):
        if self.n_nodes < 4 or not (0 < self.tool_nodes < self.n_nodes - 1):
            raise ConfigurationError("need at least one tool node, two part nodes")
        if min(self.sigma_proc, self.sigma_obs, self.sigma_air) <= 0:
            raise ConfigurationError("all noise stddevs must be positive")
        for lo, hi in (self.h_top_prior, self.h_bot_prior, self.thickness_prior):
            if not lo < hi:
                raise ConfigurationError("prior bounds must be ordered")
        if not (self.tool_nodes <= self.tracked_node < self.n_nodes):
            raise ConfigurationError("tracked node must lie in the part")
        lo, hi = self.window
        if not (0 <= lo <= hi < self.n_record):
            raise ConfigurationError("query window must be a nonempty recorded-step range")
        # Explicit-scheme stability at the smallest grid spacing the priors allow.
        dx_min = self.grid_dx(self.thickness_prior[0])
        r = max(self.kappa_tool, self.kappa_part) * self.dt / dx_min**2
        if r > 0.5:
            raise ConfigurationError(
                f"stability violated: max(kappa)*dt/dx^2 = {r:.3f} > 0.5"
            )

    def grid_dx(self, part_thickness: float) -> float:
        return (self.tool_thickness + part_thickness) / (self.n_nodes - 1)

    def nominal_thickness(self) -> float:
        lo, hi = self.thickness_prior
        return 0.5 * (lo + hi)

    def schedule(self, config_id: int) -> np.ndarray:
        """Air setpoint per recorded step, linearly interpolated breakpoints."""
        bps = self.air_schedules[config_id]
        steps = [b[0] for b in bps]
        temps = [b[1] for b in bps]
        return np.interp(np.arange(self.n_record), steps, temps)


@dataclass(frozen=True)
class QueryMuW:
    """Mean tracked-depth temperature over a recorded-step window."""

    depth_node: int
    w_lo: int
    w_hi: int

    def __post_init__(self):
        if self.w_lo > self.w_hi:
            raise ConfigurationError("query window is empty")

    @classmethod
    def from_config(cls, config: Heat1dConfig) -> "QueryMuW":
        return cls(config.tracked_node, config.window[0], config.window[1])


class Heat1dSolver:
    """Explicit FD integrator for one drawn set of inputs."""

    def __init__(self, config: Heat1dConfig, h_top: float, h_bot: float,
                 part_thickness: float):
        self.config = config
        n = config.n_nodes
        dx = config.grid_dx(part_thickness)
        part = np.zeros(n, dtype=bool)
        part[config.tool_nodes :] = True
        kappa = np.where(part, config.kappa_part, config.kappa_tool)
        rho_c = np.where(part, config.vol_heat_cap_part, config.vol_heat_cap_tool)

        self.part = part
        self.r = kappa * config.dt / dx**2
        self.conv_bot = 2.0 * h_bot * config.dt / (rho_c[0] * dx)
        self.conv_top = 2.0 * h_top * config.dt / (rho_c[-1] * dx)
        self.temps = np.full(n, config.initial_temp, dtype=np.float64)
        self.alpha = np.zeros(n)
        self._delta = np.empty(n)
        self.steps_done = 0

    def advance(self, air_temp: float) -> None:
        """One recorded step: record_every substeps under a held air temp."""
        cfg = self.config
        temps, alpha, d = self.temps, self.alpha, self._delta
        r, part = self.r, self.part
        for _ in range(cfg.record_every):
            d[1:-1] = r[1:-1] * (temps[2:] - 2.0 * temps[1:-1] + temps[:-2])
            d[0] = 2.0 * r[0] * (temps[1] - temps[0]) + self.conv_bot * (air_temp - temps[0])
            d[-1] = 2.0 * r[-1] * (temps[-2] - temps[-1]) + self.conv_top * (air_temp - temps[-1])
            rate = cfg.cure_rate_constant * np.exp(
                -cfg.cure_activation_ratio / (temps + KELVIN_OFFSET)
            )
            d_alpha = np.minimum(cfg.dt * rate, 1.0) * (1.0 - alpha)
            d_alpha[~part] = 0.0
            temps += d
            temps += cfg.cure_heat_rise * d_alpha
            alpha += d_alpha
        self.steps_done += 1
        if not np.isfinite(temps).all() or temps.max() > MAX_PHYSICAL_TEMP:
            raise ProgramError(
                f"solver produced non-physical temperatures at recorded step {self.steps_done}"
            )


def heat1d_program(config: Heat1dConfig):
    def program():
        h_top = yield SiteRequest("h_top", Uniform(*config.h_top_prior))
        h_bot = yield SiteRequest("h_bot", Uniform(*config.h_bot_prior))
        thickness = yield SiteRequest("thick", Uniform(*config.thickness_prior))
        n_sched = len(config.air_schedules)
        cfg_id = yield SiteRequest(
            "cfg", Categorical([1.0 / n_sched] * n_sched), observed=True
        )
        setpoints = config.schedule(int(cfg_id))
        solver = Heat1dSolver(config, h_top, h_bot, thickness)
        for m in range(config.n_record):
            air = yield SiteRequest(
                "Tair", Normal(float(setpoints[m]), config.sigma_air), observed=True
            )
            solver.advance(air)
            yield SiteRequest(
                "Tint", Normal(float(solver.temps[config.tracked_node]), config.sigma_proc)
            )
            yield SiteRequest(
                "Tbot", Normal(float(solver.temps[0]), config.sigma_obs), observed=True
            )

    return program


def heat1d(rng_or_controller, config: Heat1dConfig, observations=None,
           trace_id: int = 0, pins=None):
    program = heat1d_program(config)
    if isinstance(rng_or_controller, np.random.Generator):
        return run_prior(program, rng_or_controller, trace_id=trace_id, pins=pins,
                         t_max=max(4096, 4 + 3 * config.n_record + 1))
    return run_guided(program, rng_or_controller, observations or {},
                      trace_id=trace_id, t_max=max(4096, 4 + 3 * config.n_record + 1))


def mu_w(trace: Trace, query: QueryMuW) -> float:
    """Arithmetic mean of tracked-depth temperatures over the query window."""
    wanted = {f"Tint__{m}" for m in range(query.w_lo, query.w_hi + 1)}
    values = [e.value for e in trace.entries if e.addr in wanted]
    if len(values) != len(wanted):
        missing = sorted(wanted - {e.addr for e in trace.entries})
        raise ValidationError(f"trace lacks window entries: {missing[:4]}...")
    return float(np.mean(values))


def percentile_inputs(config: Heat1dConfig, q: float) -> dict:
    """Pin map placing every latent input at prior quantile q."""
    def uq(bounds):
        lo, hi = bounds
        return lo + q * (hi - lo)

    return {
        "h_top__0": uq(config.h_top_prior),
        "h_bot__0": uq(config.h_bot_prior),
        "thick__0": uq(config.thickness_prior),
    }


def make_observations(config: Heat1dConfig, rng: np.random.Generator,
                      pins: dict | None = None, config_id: int = 1):
    """Simulate one run (optionally at pinned inputs) and split out the
    observation set an inference call conditions on.

    Returns (observations, trace)."""
    all_pins = {CONFIG_ADDRESS: config_id}
    if pins:
        all_pins.update(pins)
    trace = heat1d(rng, config, pins=all_pins)
    return trace.observed_values(), trace


def _schedules(hold_temps, first_hold, ramp1, hold1_end, ramp2, hold2_end, m_total,
               cool_to=60.0, start=25.0):
    out = []
    for hold in hold_temps:
        out.append(
            (
                (0, start),
                (ramp1, first_hold),
                (hold1_end, first_hold),
                (ramp2, hold),
                (hold2_end, hold),
                (m_total, cool_to),
            )
        )
    return tuple(out)


def heat1d_small_config() -> Heat1dConfig:
    """Desk-scale configuration: N=24 nodes, M=180 recorded steps (60 s each).

    The bottom surface is strongly coupled to the air (large, narrowly known
    h_bot), so the observed series carries a moderate amount of information
    about each latent input; internal temperatures remain strongly
    input-sensitive through conduction lag and the cure exotherm.  That
    balance keeps prior-proposal importance sampling usable while the three
    observation regimes still produce clearly distinct posteriors.
    """
    return Heat1dConfig(
        n_nodes=24,
        n_record=180,
        dt=3.0,
        record_every=20,
        tool_nodes=9,
        tool_thickness=0.018,
        kappa_tool=3.0e-7,
        kappa_part=4.5e-7,
        vol_heat_cap_tool=2.2e6,
        vol_heat_cap_part=1.9e6,
        h_top_prior=(80.0, 120.0),
        h_bot_prior=(290.0, 310.0),
        thickness_prior=(0.0238, 0.0282),
        air_schedules=_schedules((170.0, 180.0, 190.0), 110.0, 35, 60, 100, 155, 180,
                                 cool_to=55.0),
        cure_rate_constant=2.4e4,
        cure_activation_ratio=8000.0,
        cure_heat_rise=40.0,
        sigma_proc=0.1,
        sigma_obs=0.25,
        sigma_air=0.75,
        initial_temp=25.0,
        tracked_node=19,
        window=(100, 125),
    )


def heat1d_large_config() -> Heat1dConfig:
    """Finer grid, more recorded steps; markedly slower to simulate."""
    small = heat1d_small_config()
    return replace(
        small,
        n_nodes=64,
        n_record=240,
        dt=0.4,
        record_every=112,
        tool_nodes=26,
        air_schedules=_schedules((170.0, 180.0, 190.0), 110.0, 47, 80, 133, 207, 240,
                                 cool_to=55.0),
        tracked_node=52,
        window=(133, 167),
    )
