"""Program execution: the suspend/resume contract between models and drivers.

A probabilistic program is a generator function.  Each time it needs a
random value it yields a SiteRequest (label, distribution, observed flag)
and suspends; the driver picks a value and sends it back, resuming the
program.  The driver delegates latent choices to a Controller, which is
exactly the interface a learned proposal implements, so the same controller
can drive a real simulator or a trained surrogate without modification.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator, Optional

import numpy as np

from .errors import InferenceError, ProgramError, RunawayProgramError
from .numerics.dists import DistributionSpec
from .traces import Address, Trace, TraceEntry

__all__ = [
    "SiteRequest",
    "Program",
    "Controller",
    "PriorController",
    "PinnedController",
    "run_prior",
    "run_guided",
    "T_MAX_DEFAULT",
]

T_MAX_DEFAULT = 4096


@dataclass
class SiteRequest:
    """What a suspended program hands to the driver."""

    label: str
    spec: DistributionSpec
    observed: bool = False


# A program is any nullary callable returning a fresh generator of SiteRequests.
Program = Callable[[], Iterator[SiteRequest]]


class Controller:
    """Chooses values for latent sites.

    choose() returns (value, proposal log density or None).  Controllers are
    stateless between traces unless reset() is called by the driver at the
    start of each run.
    """

    def reset(self) -> None:  # pragma: no cover - default is stateless
        pass

    def choose(self, addr: str, spec: DistributionSpec):
        raise NotImplementedError


class PriorController(Controller):
    """Samples every latent site from its own distribution."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def choose(self, addr: str, spec: DistributionSpec):
        value = spec.sample(self.rng)
        return value, spec.log_prob(value)


class PinnedController(Controller):
    """Forces chosen addresses to fixed values, delegating the rest."""

    def __init__(self, inner: Controller, pins: dict):
        self.inner = inner
        self.pins = dict(pins)

    def reset(self) -> None:
        self.inner.reset()

    def choose(self, addr: str, spec: DistributionSpec):
        if addr in self.pins:
            value = self.pins[addr]
            return value, spec.log_prob(value)
        return self.inner.choose(addr, spec)


def _check_spec_finite(spec: DistributionSpec, addr: str) -> None:
    if not all(math.isfinite(p) for p in spec.params()):
        raise ProgramError(f"non-finite distribution parameter at {addr}")


class _Recorder:
    """Shared bookkeeping for both execution modes."""

    def __init__(self, t_max: int):
        self.entries: list[TraceEntry] = []
        self.counts: dict[str, int] = {}
        self.t_max = t_max
        self.log_p = 0.0
        self.log_q = 0.0

    def next_address(self, label: str) -> str:
        k = self.counts.get(label, 0)
        self.counts[label] = k + 1
        return Address(label, k).render()

    def record(self, addr: str, spec, value, observed: bool) -> float:
        if len(self.entries) >= self.t_max:
            raise RunawayProgramError(
                f"trace exceeded T_max={self.t_max} at {addr}"
            )
        lp = spec.log_prob(value)
        self.entries.append(
            TraceEntry(len(self.entries), addr, spec, value, observed, lp)
        )
        self.log_p += lp
        return lp

    def finish(self, trace_id: int) -> Trace:
        if not self.entries:
            raise ProgramError("program produced an empty trace")
        return Trace(trace_id, self.entries, self.log_p, terminated=True)


def _drive(program: Program, handler, t_max: int, trace_id: int) -> _Recorder:
    rec = _Recorder(t_max)
    gen = program()
    try:
        req = next(gen)
    except StopIteration:
        raise ProgramError("program produced an empty trace") from None
    while True:
        if not isinstance(req, SiteRequest):
            raise ProgramError(f"program yielded {type(req).__name__}, not a SiteRequest")
        addr = rec.next_address(req.label)
        _check_spec_finite(req.spec, addr)
        value = handler(rec, addr, req)
        try:
            req = gen.send(value)
        except StopIteration:
            break
    return rec


def run_prior(program: Program, rng: np.random.Generator,
              t_max: int = T_MAX_DEFAULT, trace_id: int = 0,
              pins: Optional[dict] = None) -> Trace:
    """Run a program forward, drawing every site (observed ones included)
    from its own distribution.  `pins` force given addresses to fixed values,
    which is how synthetic observation sets and fixed-settings studies are
    produced."""
    pins = pins or {}

    def handler(rec: _Recorder, addr: str, req: SiteRequest):
        value = pins[addr] if addr in pins else req.spec.sample(rng)
        rec.record(addr, req.spec, value, req.observed)
        return value

    rec = _drive(program, handler, t_max, trace_id)
    return rec.finish(trace_id)


def run_guided(program: Program, controller: Controller, observations: dict,
               t_max: int = T_MAX_DEFAULT, trace_id: int = 0):
    """Run a program with latent sites chosen by a controller and observe
    sites consuming supplied values.

    Returns (trace, log_p, log_q): the trace's log joint under the program
    and the accumulated proposal log density over latent sites.  The
    importance weight exp(log_p - log_q) is the caller's business.
    """
    controller.reset()

    def handler(rec: _Recorder, addr: str, req: SiteRequest):
        if req.observed:
            if addr not in observations:
                raise InferenceError(f"missing observation for address {addr}")
            value = observations[addr]
            rec.record(addr, req.spec, value, True)
        else:
            value, log_q = controller.choose(addr, req.spec)
            rec.record(addr, req.spec, value, False)
            if log_q is not None:
                rec.log_q += log_q
        return value

    rec = _drive(program, handler, t_max, trace_id)
    return rec.finish(trace_id), rec.log_p, rec.log_q
