"""Autoregressive trace surrogate with dynamically grown architecture.

The model factorizes a distribution over whole traces as, per step, a
categorical choice of the next address (truncated to successors seen in
training) followed by a value draw from a per-address head conditioned on
the recurrent state.  Heads, embeddings, and successor sets are created
just in time as training data reveals new addresses, so the network's
shape mirrors the control-flow structure of the program it imitates.

A trained model runs behind the same suspend/resume contract as a real
program: the same controllers (prior sampler, learned proposal) drive
either, which is what lets the surrogate stand in for the simulator during
importance-sampling inference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import StructureGroup, TraceDataset
from .encoding import KIND_ORDER, SiteEmbedder
from .errors import (
    ConfigurationError,
    CoverageError,
    InferenceError,
    RunawayProgramError,
    SchemaConflictError,
    TrainingError,
)
from .numerics.dists import Categorical, Normal, SquashedNormal
from .numerics.lstm import LSTM, Linear, RecurrentState
from .numerics.params import ParamStore, adam_step, load_checkpoint, save_checkpoint
from .numerics.tensor import (
    Var,
    add,
    backward,
    concat_cols,
    constant,
    div,
    log as vlog,
    logsumexp_rows,
    lstm_step_np,
    matmul,
    scale,
    slice_cols,
    softplus,
    square,
    sub,
    take_per_row,
    vsum,
)
from .numerics import rng as rngmod
from .runtime import Controller, PriorController, T_MAX_DEFAULT
from .traces import END_ADDRESS, START_ADDRESS, Trace, TraceEntry

__all__ = [
    "SurrogateConfig",
    "PsnTrainConfig",
    "AddressInfo",
    "SurrogateModel",
    "psn_logprob",
    "psn_train",
    "psn_sample",
    "run_guided_surrogate",
    "save_surrogate",
    "load_surrogate",
]

_LOG_2PI = math.log(2.0 * math.pi)
_STD_FLOOR = 1e-3  # added to softplus outputs of every scale head
_STAT_STD_FLOOR = 1e-6


@dataclass(frozen=True)
class SurrogateConfig:
    hidden: int = 128
    addr_embed: int = 64
    value_embed: int = 16


@dataclass(frozen=True)
class PsnTrainConfig:
    epochs: int = 10
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0
    clip_norm: float = 10.0


@dataclass
class AddressInfo:
    kind: str
    observed: bool
    n_categories: int | None = None
    bounds: tuple | None = None
    successors: list = field(default_factory=list)
    stat_mean: float = 0.0
    stat_std: float = 1.0


def _softplus_scalar(x: float) -> float:
    return float(np.logaddexp(0.0, x))


class SurrogateModel:
    def __init__(self, config: SurrogateConfig = SurrogateConfig(),
                 init_seed: int = 0, family: str = "", sim_config: dict | None = None):
        self.config = config
        self.family = family
        self.sim_config = sim_config or {}
        self.store = ParamStore(init_seed)
        self.embedder = SiteEmbedder(self.store, config.addr_embed, config.value_embed)
        self.core = LSTM(self.store, "core", self.embedder.width, config.hidden)
        self.registry: dict[str, AddressInfo] = {}
        self.start_successors: list = []
        self.traces_seen = 0
        self.epochs_done = 0
        self.loss_history: list = []
        self.first_address: str | None = None

    # ---------------------------------------------------------------- registry

    def register_address(self, addr: str, kind: str, observed: bool = False,
                         n_categories: int | None = None,
                         bounds: tuple | None = None) -> None:
        """Create embedding, zero-initialized value head, and empty successor
        set for a new address.  Re-registration with identical schema is a
        no-op; a conflicting schema is an error."""
        if kind not in KIND_ORDER:
            raise ConfigurationError(f"unknown distribution kind {kind!r}")
        existing = self.registry.get(addr)
        if existing is not None:
            if existing.kind != kind:
                raise SchemaConflictError(
                    f"{addr}: registered as {existing.kind}, dataset says {kind}"
                )
            if kind == "categorical" and existing.n_categories != n_categories:
                raise SchemaConflictError(
                    f"{addr}: category count changed "
                    f"({existing.n_categories} vs {n_categories})"
                )
            if kind == "uniform" and bounds is not None and existing.bounds != tuple(bounds):
                raise SchemaConflictError(
                    f"{addr}: uniform bounds changed ({existing.bounds} vs {bounds})"
                )
            return
        if kind == "categorical":
            if not n_categories or n_categories < 1:
                raise ConfigurationError(f"{addr}: categorical needs a category count")
            width = n_categories
        else:
            width = 2  # location and raw scale
        if kind == "uniform":
            if bounds is None:
                raise ConfigurationError(f"{addr}: uniform site needs static bounds")
            bounds = tuple(bounds)
        self.embedder.ensure_address(addr)
        Linear(self.store, f"val/{addr}", self.config.hidden, width, zero_init=True)
        self.registry[addr] = AddressInfo(
            kind=kind, observed=observed, n_categories=n_categories, bounds=bounds
        )

    def successors_of(self, prev: str) -> list:
        if prev == START_ADDRESS:
            return self.start_successors
        info = self.registry.get(prev)
        if info is None:
            raise CoverageError(f"address {prev} was never registered")
        return info.successors

    def register_transition(self, prev: str, nxt: str) -> None:
        succs = self.successors_of(prev)
        if nxt not in succs:
            succs.append(nxt)
            self.store.add_zeros(f"trans/{prev}/{nxt}/w", (self.config.hidden, 1))
            self.store.add_zeros(f"trans/{prev}/{nxt}/b", (1,))
            if prev == START_ADDRESS and self.first_address is None:
                self.first_address = nxt

    def set_value_stats(self, addr: str, mean: float, std: float) -> None:
        info = self.registry[addr]
        info.stat_mean = float(mean)
        info.stat_std = float(max(std, _STAT_STD_FLOOR))

    def register_dataset(self, dataset: TraceDataset) -> None:
        """First training pass: addresses, successor sets, value stats."""
        for grp in dataset.groups:
            prev = START_ADDRESS
            for t, addr in enumerate(grp.addresses):
                kind = grp.kinds[t]
                n_cat = grp.cat_probs[t].shape[1] if kind == "categorical" else None
                bounds = None
                if kind == "uniform":
                    lo = grp.spec_params[:, t, 0]
                    hi = grp.spec_params[:, t, 1]
                    if np.ptp(lo) != 0.0 or np.ptp(hi) != 0.0:
                        raise SchemaConflictError(
                            f"{addr}: uniform bounds vary across traces; "
                            "bounded sites must have static bounds"
                        )
                    bounds = (float(lo[0]), float(hi[0]))
                self.register_address(addr, kind, observed=grp.observed[t],
                                      n_categories=n_cat, bounds=bounds)
                self.register_transition(prev, addr)
                prev = addr
            self.register_transition(prev, END_ADDRESS)
        # Running stats over all values seen per continuous address.
        sums: dict[str, list] = {}
        for grp in dataset.groups:
            for t, addr in enumerate(grp.addresses):
                if grp.kinds[t] != "categorical":
                    sums.setdefault(addr, []).append(grp.values[:, t])
        for addr, chunks in sums.items():
            vals = np.concatenate(chunks)
            self.set_value_stats(addr, vals.mean(), vals.std())

    # ------------------------------------------------------------ head outputs

    def _head_out_np(self, addr: str, h: np.ndarray) -> np.ndarray:
        p = self.store.params
        return h @ p[f"val/{addr}/w"] + p[f"val/{addr}/b"]

    def value_spec(self, addr: str, h: np.ndarray):
        """Distribution emitted by the value head of `addr` given hidden
        state row `h` (shape (hidden,))."""
        info = self.registry.get(addr)
        if info is None:
            raise CoverageError(f"address {addr} was never registered")
        out = self._head_out_np(addr, h)
        if info.kind == "normal":
            mean = info.stat_mean + info.stat_std * out[0]
            std = info.stat_std * (_softplus_scalar(out[1]) + _STD_FLOOR)
            return Normal(float(mean), float(std))
        if info.kind == "uniform":
            lo, hi = info.bounds
            return SquashedNormal(lo, hi, float(out[0]),
                                  _softplus_scalar(out[1]) + _STD_FLOOR)
        probs = _stable_softmax(out)
        return Categorical(probs)

    def transition_dist(self, prev: str, h: np.ndarray):
        """(successors, probabilities) for the next-address choice."""
        succs = self.successors_of(prev)
        if not succs:
            raise CoverageError(f"address {prev} has an empty successor set")
        if len(succs) == 1:
            return succs, np.array([1.0])
        p = self.store.params
        logits = np.array(
            [float(h @ p[f"trans/{prev}/{s}/w"][:, 0] + p[f"trans/{prev}/{s}/b"][0])
             for s in succs]
        )
        return succs, _stable_softmax(logits)

    def _input_rows(self, addr: str, values: np.ndarray) -> np.ndarray:
        info = self.registry[addr]
        if info.kind == "categorical":
            v = values.astype(np.float64)
        else:
            v = (values - info.stat_mean) / info.stat_std
        return self.embedder.rows_np(addr, info.kind, v)

    # ---------------------------------------------------------------- logprob

    def logprob_parts(self, trace: Trace) -> tuple[float, float]:
        """(transition log prob, value log prob) of a trace under the model."""
        h = np.zeros((1, self.config.hidden))
        c = np.zeros_like(h)
        state = self.core.step_np(np.zeros((1, self.embedder.width)),
                                  _mk_state(h, c))
        prev = START_ADDRESS
        lp_trans = 0.0
        lp_value = 0.0
        for e in trace.entries:
            info = self.registry.get(e.addr)
            if info is None:
                raise CoverageError(f"address {e.addr} was never registered")
            succs, probs = self.transition_dist(prev, state.h[0])
            if e.addr not in succs:
                raise CoverageError(f"transition {prev} -> {e.addr} was never registered")
            lp_trans += math.log(probs[succs.index(e.addr)])
            spec = self.value_spec(e.addr, state.h[0])
            lp_value += spec.log_prob(e.value)
            state = self.core.step_np(
                self._input_rows(e.addr, np.array([float(e.value)])), state
            )
            prev = e.addr
        succs, probs = self.transition_dist(prev, state.h[0])
        if END_ADDRESS not in succs:
            raise CoverageError(f"transition {prev} -> {END_ADDRESS} was never registered")
        lp_trans += math.log(probs[succs.index(END_ADDRESS)])
        return lp_trans, lp_value

    def logprob(self, trace: Trace) -> float:
        lp_trans, lp_value = self.logprob_parts(trace)
        return lp_trans + lp_value

    # ---------------------------------------------------------------- training

    def _plan(self, grp: StructureGroup):
        plan = getattr(grp, "_psn_plan", None)
        if plan is not None and plan["registry_size"] == len(self.registry):
            return plan
        steps = []
        prev = START_ADDRESS
        for t, addr in enumerate(grp.addresses):
            info = self.registry[addr]
            succs = self.successors_of(prev)
            step = {
                "addr": addr,
                "kind": info.kind,
                "succ_prev": prev if len(succs) > 1 else None,
                "succ_j": succs.index(addr) if len(succs) > 1 else 0,
                "succ_names": list(succs),
            }
            vals = grp.values[:, t]
            if info.kind == "normal":
                vnorm = (vals - info.stat_mean) / info.stat_std
                step["x_norm"] = vnorm[:, None]
                step["embed_v"] = vnorm
                step["const_per_trace"] = 0.5 * _LOG_2PI + math.log(info.stat_std)
            elif info.kind == "uniform":
                lo, hi = info.bounds
                s = np.clip((vals - lo) / (hi - lo), 1e-12, 1.0 - 1e-12)
                z = np.log(s) - np.log1p(-s)
                step["x_norm"] = z[:, None]
                step["embed_v"] = (vals - info.stat_mean) / info.stat_std
                step["jac"] = np.log((hi - lo) * s * (1.0 - s))
                step["const_per_trace"] = 0.5 * _LOG_2PI
            else:
                step["cat_idx"] = vals.astype(np.intp)
                step["embed_v"] = vals.astype(np.float64)
                step["const_per_trace"] = 0.0
            steps.append(step)
            prev = addr
        end_succs = self.successors_of(prev)
        plan = {
            "registry_size": len(self.registry),
            "steps": steps,
            "end_prev": prev if len(end_succs) > 1 else None,
            "end_j": end_succs.index(END_ADDRESS) if len(end_succs) > 1 else 0,
            "end_names": list(end_succs),
        }
        grp._psn_plan = plan
        return plan

    def _trans_logits(self, prev: str, names: list, h: Var) -> Var:
        s = self.store
        cols = [
            add(matmul(h, s.var(f"trans/{prev}/{n}/w")), s.var(f"trans/{prev}/{n}/b"))
            for n in names
        ]
        return concat_cols(cols) if len(cols) > 1 else cols[0]

    def batch_loss(self, grp: StructureGroup, rows: np.ndarray) -> Var:
        """Mean per-trace negative log likelihood of the selected rows."""
        plan = self._plan(grp)
        b = len(rows)
        hidden = self.config.hidden
        h = constant(np.zeros((b, hidden)))
        c = constant(np.zeros((b, hidden)))
        x = constant(np.zeros((b, self.embedder.width)))
        h, c = self.core.step(x, h, c)
        terms = []
        const_total = 0.0
        for step in plan["steps"]:
            if step["succ_prev"] is not None:
                logits = self._trans_logits(step["succ_prev"], step["succ_names"], h)
                lse = logsumexp_rows(logits)
                chosen = slice_cols(logits, step["succ_j"], step["succ_j"] + 1)
                terms.append(vsum(sub(lse, chosen)))
            s = self.store
            out = add(matmul(h, s.var(f"val/{step['addr']}/w")),
                      s.var(f"val/{step['addr']}/b"))
            kind = step["kind"]
            if kind in ("normal", "uniform"):
                mu = slice_cols(out, 0, 1)
                sd = add(softplus(slice_cols(out, 1, 2)), _STD_FLOOR)
                zdiff = div(sub(constant(step["x_norm"][rows]), mu), sd)
                terms.append(vsum(add(vlog(sd), scale(square(zdiff), 0.5))))
                const_total += b * step["const_per_trace"]
                if kind == "uniform":
                    const_total += float(step["jac"][rows].sum())
            else:
                lse = logsumexp_rows(out)
                chosen = take_per_row(out, step["cat_idx"][rows])
                terms.append(vsum(sub(lse, chosen)))
                const_total += b * step["const_per_trace"]
            xin = self.embedder.rows_var(step["addr"], kind, step["embed_v"][rows])
            h, c = self.core.step(xin, h, c)
        if plan["end_prev"] is not None:
            logits = self._trans_logits(plan["end_prev"], plan["end_names"], h)
            lse = logsumexp_rows(logits)
            chosen = slice_cols(logits, plan["end_j"], plan["end_j"] + 1)
            terms.append(vsum(sub(lse, chosen)))
        total = terms[0]
        for t in terms[1:]:
            total = add(total, t)
        return scale(add(total, constant(const_total)), 1.0 / b)

    def dataset_nll(self, dataset: TraceDataset) -> float:
        """Mean per-trace NLL without touching gradients."""
        total = 0.0
        for grp in dataset.groups:
            rows = np.arange(grp.n_traces)
            for lo in range(0, grp.n_traces, 512):
                sel = rows[lo : lo + 512]
                total += float(self.batch_loss(grp, sel).value) * len(sel)
        return total / dataset.n_traces

    def train(self, dataset: TraceDataset, cfg: PsnTrainConfig) -> list:
        if dataset.n_traces == 0:
            raise TrainingError("dataset is empty")
        if self.traces_seen == 0:
            self.register_dataset(dataset)
        else:
            # Growing an existing model: new structure only, stats preserved.
            before = {a: (i.stat_mean, i.stat_std) for a, i in self.registry.items()}
            self.register_dataset(dataset)
            for addr, (m, s) in before.items():
                self.set_value_stats(addr, m, s)
        self.traces_seen += dataset.n_traces
        history = []
        for _ in range(cfg.epochs):
            epoch_rng = rngmod.stream(cfg.seed, "psn-train-epoch", self.epochs_done)
            batches = _batch_schedule(dataset, cfg.batch_size, epoch_rng)
            total = 0.0
            for grp, sel in batches:
                loss = self.batch_loss(grp, sel)
                if not np.isfinite(loss.value):
                    ids = [grp.trace_ids[i] for i in sel[:8]]
                    raise TrainingError(f"non-finite loss on traces {ids}")
                backward(loss)
                adam_step(self.store, lr=cfg.lr, clip_norm=cfg.clip_norm)
                total += float(loss.value) * len(sel)
            history.append(total / dataset.n_traces)
            self.epochs_done += 1
        self.loss_history.extend(history)
        return history

    # ---------------------------------------------------------------- sampling

    def sample(self, rng: np.random.Generator, t_max: int = T_MAX_DEFAULT,
               pins: dict | None = None, trace_id: int = 0) -> Trace:
        """Generate one trace; log_joint is the model's own joint log density
        (transition factors included)."""
        traces = self.sample_batch(rng, 1, t_max=t_max, pins=pins,
                                   first_trace_id=trace_id)
        return traces[0]

    def sample_batch(self, rng: np.random.Generator, n: int,
                     t_max: int = T_MAX_DEFAULT, pins: dict | None = None,
                     first_trace_id: int = 0) -> list[Trace]:
        """Vectorized ensemble sampling: all live instances share each LSTM
        step; heads are evaluated per address group."""
        if self.first_address is None:
            raise CoverageError("model has no registered start transition")
        pins = pins or {}
        hidden = self.config.hidden
        h = np.zeros((n, hidden))
        c = np.zeros((n, hidden))
        x = np.zeros((n, self.embedder.width))
        prev = np.full(n, START_ADDRESS, dtype=object)
        active = np.ones(n, dtype=bool)
        entries = [[] for _ in range(n)]
        lp_val = np.zeros(n)
        lp_trans = np.zeros(n)
        steps = 0
        p = self.store.params
        while active.any():
            if steps > t_max:
                raise RunawayProgramError(
                    f"surrogate exceeded T_max={t_max} with {int(active.sum())} live traces"
                )
            steps += 1
            hc = lstm_np_full(x, h, c, p)
            h, c = hc
            nxt = np.full(n, END_ADDRESS, dtype=object)
            for pv in sorted(set(prev[active])):
                sel = active & (prev == pv)
                succs = self.successors_of(pv)
                if len(succs) == 1:
                    nxt[sel] = succs[0]
                    continue
                w = np.hstack([p[f"trans/{pv}/{s}/w"] for s in succs])
                bias = np.concatenate([p[f"trans/{pv}/{s}/b"] for s in succs])
                logits = h[sel] @ w + bias
                logits -= logits.max(axis=1, keepdims=True)
                probs = np.exp(logits)
                probs /= probs.sum(axis=1, keepdims=True)
                draws = rng.random(int(sel.sum()))
                idx = (probs.cumsum(axis=1) < draws[:, None]).sum(axis=1)
                idx = np.minimum(idx, len(succs) - 1)
                nxt[sel] = np.array(succs, dtype=object)[idx]
                lp_trans[sel] += np.log(probs[np.arange(len(idx)), idx])
            finishing = active & (nxt == END_ADDRESS)
            active = active & ~finishing
            for addr in sorted(set(nxt[active])):
                sel = active & (nxt == addr)
                rows = np.flatnonzero(sel)
                info = self.registry[addr]
                out = h[rows] @ p[f"val/{addr}/w"] + p[f"val/{addr}/b"]
                values = np.empty(len(rows))
                pinned = pins.get(addr)
                if info.kind == "normal":
                    mean = info.stat_mean + info.stat_std * out[:, 0]
                    std = info.stat_std * (np.logaddexp(0.0, out[:, 1]) + _STD_FLOOR)
                    values[:] = (mean + std * rng.standard_normal(len(rows))
                                 if pinned is None else pinned)
                    zs = (values - mean) / std
                    lps = -0.5 * (_LOG_2PI + zs * zs) - np.log(std)
                    specs = [Normal(float(m), float(s)) for m, s in zip(mean, std)]
                elif info.kind == "uniform":
                    lo, hi = info.bounds
                    mu_z = out[:, 0]
                    sd_z = np.logaddexp(0.0, out[:, 1]) + _STD_FLOOR
                    if pinned is None:
                        z = np.clip(mu_z + sd_z * rng.standard_normal(len(rows)),
                                    -30.0, 30.0)
                        s = 1.0 / (1.0 + np.exp(-z))
                        values[:] = lo + (hi - lo) * s
                    else:
                        values[:] = pinned
                        s = np.clip((values - lo) / (hi - lo), 1e-15, 1 - 1e-15)
                        z = np.log(s) - np.log1p(-s)
                    zn = (z - mu_z) / sd_z
                    lps = (-0.5 * (_LOG_2PI + zn * zn) - np.log(sd_z)
                           - np.log((hi - lo) * s * (1.0 - s)))
                    specs = [SquashedNormal(lo, hi, float(m), float(s_))
                             for m, s_ in zip(mu_z, sd_z)]
                else:
                    logits = out - out.max(axis=1, keepdims=True)
                    probs = np.exp(logits)
                    probs /= probs.sum(axis=1, keepdims=True)
                    if pinned is None:
                        draws = rng.random(len(rows))
                        idx = (probs.cumsum(axis=1) < draws[:, None]).sum(axis=1)
                        idx = np.minimum(idx, info.n_categories - 1)
                    else:
                        idx = np.full(len(rows), int(pinned), dtype=np.intp)
                    values[:] = idx
                    lps = np.log(probs[np.arange(len(rows)), idx])
                    specs = [Categorical(pr) for pr in probs]
                lp_val[rows] += lps
                for r, row in enumerate(rows):
                    val = float(values[r]) if info.kind != "categorical" else int(values[r])
                    entries[row].append(
                        TraceEntry(len(entries[row]), addr, specs[r], val,
                                   info.observed, float(lps[r]))
                    )
                x[rows] = self._input_rows(addr, values)
            prev = nxt
        out_traces = []
        for i in range(n):
            out_traces.append(
                Trace(first_trace_id + i, entries[i],
                      float(lp_val[i] + lp_trans[i]), terminated=True)
            )
        return out_traces

    # ------------------------------------------------------------ guided runs

    def run_guided(self, controller: Controller, observations: dict,
                   rng: np.random.Generator, t_max: int = T_MAX_DEFAULT,
                   trace_id: int = 0):
        """Guided execution with the surrogate as the generative model.

        Returns (trace, log_s, log_q) where log_s is the surrogate's joint
        log density of the realized trace and log_q adds the controller's
        latent log densities to the shared transition log probabilities, so
        exp(log_s - log_q) is the importance weight.
        """
        for addr in observations:
            if addr not in self.registry:
                raise InferenceError(f"observation at unregistered address {addr}")
        controller.reset()
        state = _mk_state(np.zeros((1, self.config.hidden)),
                          np.zeros((1, self.config.hidden)))
        state = self.core.step_np(np.zeros((1, self.embedder.width)), state)
        prev = START_ADDRESS
        lp_s = 0.0
        lp_q = 0.0
        entries = []
        while True:
            if len(entries) > t_max:
                raise RunawayProgramError(f"surrogate exceeded T_max={t_max}")
            succs, probs = self.transition_dist(prev, state.h[0])
            if len(succs) == 1:
                nxt = succs[0]
            else:
                u = rng.random()
                idx = int((probs.cumsum() < u).sum())
                idx = min(idx, len(succs) - 1)
                nxt = succs[idx]
                lp = math.log(probs[idx])
                lp_s += lp
                lp_q += lp
            if nxt == END_ADDRESS:
                break
            spec = self.value_spec(nxt, state.h[0])
            info = self.registry[nxt]
            if info.observed:
                if nxt not in observations:
                    raise InferenceError(f"missing observation for address {nxt}")
                value = observations[nxt]
                lp = spec.log_prob(value)
                lp_s += lp
            else:
                value, log_q = controller.choose(nxt, spec)
                lp = spec.log_prob(value)
                lp_s += lp
                if log_q is not None:
                    lp_q += log_q
            entries.append(TraceEntry(len(entries), nxt, spec, value, info.observed, lp))
            state = self.core.step_np(
                self._input_rows(nxt, np.array([float(value)])), state
            )
            prev = nxt
        trace = Trace(trace_id, entries, lp_s, terminated=True)
        return trace, lp_s, lp_q


def lstm_np_full(x, h, c, params):
    return lstm_step_np(x, h, c, params["core/wx"], params["core/wh"], params["core/b"])


def _mk_state(h, c):
    return RecurrentState(h, c)


def _stable_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def _batch_schedule(dataset: TraceDataset, batch_size: int,
                    rng: np.random.Generator):
    batches = []
    for grp in dataset.groups:
        perm = rng.permutation(grp.n_traces)
        for lo in range(0, grp.n_traces, batch_size):
            batches.append((grp, perm[lo : lo + batch_size]))
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


# ---------------------------------------------------------------- public ops


def psn_logprob(model: SurrogateModel, trace: Trace) -> float:
    return model.logprob(trace)


def psn_train(model: SurrogateModel, dataset: TraceDataset,
              cfg: PsnTrainConfig = PsnTrainConfig()) -> list:
    return model.train(dataset, cfg)


def psn_sample(model: SurrogateModel, rng: np.random.Generator,
               t_max: int = T_MAX_DEFAULT, pins: dict | None = None,
               trace_id: int = 0) -> Trace:
    return model.sample(rng, t_max=t_max, pins=pins, trace_id=trace_id)


def run_guided_surrogate(model: SurrogateModel, controller: Controller,
                         observations: dict, rng: np.random.Generator,
                         t_max: int = T_MAX_DEFAULT, trace_id: int = 0):
    return model.run_guided(controller, observations, rng, t_max=t_max,
                            trace_id=trace_id)


def self_controller(rng: np.random.Generator) -> Controller:
    """The surrogate's own conditionals as the proposal (prior-style run)."""
    return PriorController(rng)


# ------------------------------------------------------------- persistence


def save_surrogate(model: SurrogateModel, path) -> None:
    config = {
        "kind": "surrogate",
        "family": model.family,
        "sim_config": model.sim_config,
        "model": {
            "hidden": model.config.hidden,
            "addr_embed": model.config.addr_embed,
            "value_embed": model.config.value_embed,
        },
        "registry": {
            addr: {
                "kind": info.kind,
                "observed": info.observed,
                "n_categories": info.n_categories,
                "bounds": list(info.bounds) if info.bounds else None,
                "successors": list(info.successors),
                "stat_mean": info.stat_mean,
                "stat_std": info.stat_std,
            }
            for addr, info in model.registry.items()
        },
        "start_successors": list(model.start_successors),
        "first_address": model.first_address,
        "traces_seen": model.traces_seen,
        "epochs_done": model.epochs_done,
        "loss_history": model.loss_history,
    }
    save_checkpoint(path, model.store, config)


def load_surrogate(path) -> SurrogateModel:
    store, config = load_checkpoint(path)
    if config.get("kind") != "surrogate":
        raise SchemaConflictError(f"{path} is not a surrogate checkpoint")
    mc = config["model"]
    model = SurrogateModel.__new__(SurrogateModel)
    model.config = SurrogateConfig(mc["hidden"], mc["addr_embed"], mc["value_embed"])
    model.family = config.get("family", "")
    model.sim_config = config.get("sim_config", {})
    model.store = store
    model.embedder = SiteEmbedder(store, model.config.addr_embed,
                                  model.config.value_embed)
    model.core = LSTM(store, "core", model.embedder.width, model.config.hidden)
    model.registry = {}
    for addr, info in config["registry"].items():
        model.registry[addr] = AddressInfo(
            kind=info["kind"],
            observed=info["observed"],
            n_categories=info["n_categories"],
            bounds=tuple(info["bounds"]) if info["bounds"] else None,
            successors=list(info["successors"]),
            stat_mean=info["stat_mean"],
            stat_std=info["stat_std"],
        )
    model.start_successors = list(config["start_successors"])
    model.first_address = config.get("first_address")
    model.traces_seen = config["traces_seen"]
    model.epochs_done = config["epochs_done"]
    model.loss_history = list(config["loss_history"])
    return model
