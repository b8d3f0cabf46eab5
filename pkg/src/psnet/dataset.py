"""Columnar view of a trace dataset, grouped by address structure.

Traces sharing an address sequence differ only in their values, so each
group packs values (and the runtime distribution parameters the proposal
network conditions on) into dense arrays.  Training then batches whole
groups through the recurrent cores instead of stepping trace by trace,
which is what makes the pure-numpy training loops viable.

Large JSONL files are compacted while streaming; full Trace objects are
never held in memory all at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaConflictError, TrainingError
from .traces import Trace, iter_traces

__all__ = ["StructureGroup", "TraceDataset"]

_PARAM_WIDTH = 2  # normal: (mean, stddev); uniform: (low, high)


@dataclass
class StructureGroup:
    """All traces sharing one address sequence."""

    addresses: tuple
    kinds: tuple
    observed: tuple
    trace_ids: list = field(default_factory=list)
    _value_rows: list = field(default_factory=list)
    _param_rows: list = field(default_factory=list)
    _cat_rows: dict = field(default_factory=dict)  # t -> list of prob vectors
    values: np.ndarray | None = None       # (n, T) float64; categorical as indices
    spec_params: np.ndarray | None = None  # (n, T, 2); zeros at categorical sites
    cat_probs: dict = field(default_factory=dict)  # t -> (n, k)

    @property
    def n_traces(self) -> int:
        return len(self.trace_ids)

    @property
    def length(self) -> int:
        return len(self.addresses)

    def _add(self, trace: Trace) -> None:
        self.trace_ids.append(trace.trace_id)
        vals = np.empty(self.length)
        pars = np.zeros((self.length, _PARAM_WIDTH))
        for t, e in enumerate(trace.entries):
            vals[t] = float(e.value)
            if e.spec.kind == "categorical":
                self._cat_rows.setdefault(t, []).append(np.asarray(e.spec.probs))
            else:
                p = e.spec.params()
                pars[t, 0], pars[t, 1] = p[0], p[1]
        self._value_rows.append(vals)
        self._param_rows.append(pars)

    def _seal(self) -> None:
        self.values = np.vstack(self._value_rows)
        self.spec_params = np.stack(self._param_rows)
        for t, rows in self._cat_rows.items():
            self.cat_probs[t] = np.vstack(rows)
        self._value_rows = []
        self._param_rows = []
        self._cat_rows = {}


class TraceDataset:
    def __init__(self, groups: list[StructureGroup], n_traces: int):
        self.groups = groups
        self.n_traces = n_traces

    @classmethod
    def from_traces(cls, traces) -> "TraceDataset":
        groups: dict[tuple, StructureGroup] = {}
        n = 0
        for trace in traces:
            key = trace.addresses()
            grp = groups.get(key)
            if grp is None:
                grp = groups[key] = StructureGroup(
                    addresses=key,
                    kinds=tuple(e.spec.kind for e in trace.entries),
                    observed=tuple(e.observed for e in trace.entries),
                )
            else:
                kinds = tuple(e.spec.kind for e in trace.entries)
                if kinds != grp.kinds:
                    raise SchemaConflictError(
                        f"trace {trace.trace_id}: distribution kinds changed within "
                        f"one address structure"
                    )
            grp._add(trace)
            n += 1
        if n == 0:
            raise TrainingError("dataset is empty")
        out = list(groups.values())
        for grp in out:
            grp._seal()
        return cls(out, n)

    @classmethod
    def from_jsonl(cls, path) -> "TraceDataset":
        return cls.from_traces(iter_traces(path))

    def split(self, holdout_fraction: float, rng: np.random.Generator):
        """Deterministic row-level split into (train, holdout) datasets."""
        train_groups, hold_groups = [], []
        n_train = n_hold = 0
        for grp in self.groups:
            n = grp.n_traces
            k = int(round(n * holdout_fraction))
            perm = rng.permutation(n)
            hold_idx, train_idx = perm[:k], perm[k:]
            for idx, bucket in ((train_idx, train_groups), (hold_idx, hold_groups)):
                if len(idx) == 0:
                    continue
                sub = StructureGroup(grp.addresses, grp.kinds, grp.observed)
                sub.trace_ids = [grp.trace_ids[i] for i in idx]
                sub.values = grp.values[idx]
                sub.spec_params = grp.spec_params[idx]
                sub.cat_probs = {t: p[idx] for t, p in grp.cat_probs.items()}
                bucket.append(sub)
            n_train += len(train_idx)
            n_hold += len(hold_idx)
        return TraceDataset(train_groups, n_train), TraceDataset(hold_groups, n_hold)
