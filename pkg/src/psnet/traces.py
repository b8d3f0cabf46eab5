"""Execution traces: the ordered record of every random choice a program made.

A trace is a sequence of entries (time index, address, distribution, value,
observed flag, log probability) plus the total log joint, which is always
the plain left-to-right sum of the entry log probabilities.  Traces persist
as JSON Lines, one trace per line; floats are rendered with Python's
shortest round-trip representation so reloading is lossless.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .errors import SchemaVersionError, ValidationError
from .numerics.dists import DistributionSpec, spec_from_json, spec_to_json

__all__ = [
    "Address",
    "TraceEntry",
    "Trace",
    "trace_logjoint",
    "save_traces",
    "load_traces",
    "iter_traces",
    "TraceWriter",
    "END_ADDRESS",
    "START_ADDRESS",
    "TRACE_SCHEMA_VERSION",
]

TRACE_SCHEMA_VERSION = 1

# Synthetic addresses bracketing every trace; never stored in entries.
START_ADDRESS = "<start>"
END_ADDRESS = "<end>"

_LABEL_RE = re.compile(r"^[A-Za-z0-9]+(?:_[A-Za-z0-9]+)*$")


@dataclass(frozen=True)
class Address:
    """A random-choice site: stable label plus per-trace occurrence count."""

    label: str
    instance: int

    def __post_init__(self):
        if not _LABEL_RE.match(self.label):
            raise ValidationError(
                f"bad site label {self.label!r}: use words joined by single underscores"
            )
        if self.instance < 0:
            raise ValidationError("address instance must be nonnegative")

    def render(self) -> str:
        return f"{self.label}__{self.instance}"

    @classmethod
    def parse(cls, rendered: str) -> "Address":
        label, _, inst = rendered.rpartition("__")
        if not label:
            raise ValidationError(f"unparseable address {rendered!r}")
        return cls(label, int(inst))


@dataclass
class TraceEntry:
    t: int
    addr: str
    spec: DistributionSpec
    value: float | int
    observed: bool
    log_prob: float


@dataclass
class Trace:
    trace_id: int
    entries: list[TraceEntry] = field(default_factory=list)
    log_joint: float = 0.0
    terminated: bool = False  # the END marker

    @property
    def length(self) -> int:
        return len(self.entries)

    def addresses(self) -> tuple[str, ...]:
        return tuple(e.addr for e in self.entries)

    def value_at(self, addr: str):
        for e in self.entries:
            if e.addr == addr:
                return e.value
        raise KeyError(addr)

    def observed_values(self) -> dict[str, float | int]:
        return {e.addr: e.value for e in self.entries if e.observed}


def trace_logjoint(trace: Trace) -> float:
    """Recompute the log joint from stored specs and values.

    Uses the same left-to-right summation as trace recording, so the result
    equals the stored log_joint exactly for any trace this package produced.
    """
    if not trace.terminated or trace.length < 1:
        raise ValidationError("trace must contain at least one entry and end with END")
    total = 0.0
    for e in trace.entries:
        try:
            lp = e.spec.log_prob(e.value)
        except Exception as exc:
            raise ValidationError(f"entry at {e.addr}: {exc}") from exc
        total += lp
    return total


def _trace_to_json(trace: Trace) -> dict:
    return {
        "id": trace.trace_id,
        "entries": [
            {
                "t": e.t,
                "addr": e.addr,
                "dist": spec_to_json(e.spec),
                "value": e.value,
                "observed": e.observed,
                "lp": e.log_prob,
            }
            for e in trace.entries
        ],
        "log_joint": trace.log_joint,
        "v": TRACE_SCHEMA_VERSION,
    }


def _trace_from_json(obj: dict) -> Trace:
    if obj.get("v") != TRACE_SCHEMA_VERSION:
        raise SchemaVersionError(
            f"trace schema version {obj.get('v')!r}, expected {TRACE_SCHEMA_VERSION}"
        )
    entries = [
        TraceEntry(
            t=e["t"],
            addr=e["addr"],
            spec=spec_from_json(e["dist"]),
            value=e["value"],
            observed=e["observed"],
            log_prob=e["lp"],
        )
        for e in obj["entries"]
    ]
    return Trace(obj["id"], entries, obj["log_joint"], terminated=True)


class TraceWriter:
    """Append-only JSONL writer (one writer per file)."""

    def __init__(self, path):
        self._fh = open(path, "w", encoding="utf-8")

    def write(self, trace: Trace) -> None:
        self._fh.write(json.dumps(_trace_to_json(trace)) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def save_traces(traces, path) -> None:
    with TraceWriter(path) as writer:
        for trace in traces:
            writer.write(trace)


def iter_traces(path):
    """Stream traces from a JSONL file without holding them all in memory."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield _trace_from_json(json.loads(line))


def load_traces(path) -> list[Trace]:
    return list(iter_traces(path))
