"""Learned proposal network for amortized sequential importance sampling.

A recurrent network conditions on a fixed-length summary of the observed
variables and on the latent history, and emits, per latent address, a
correction to the distribution the executing model presents at that site:
Normal sites are shifted and rescaled around the presented location/scale,
bounded sites are perturbed in logit space, categorical sites are tilted in
log probability.  Untrained layers therefore propose (a mildly narrowed
version of) the presented distribution, and sites the observations carry no
information about stay near it after training, which keeps importance
weights well behaved on long traces.

Unknown latent addresses fall back to the presented distribution exactly,
so the sampler stays correct on rarely-visited paths.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import StructureGroup, TraceDataset
from .encoding import KIND_ORDER, SiteEmbedder
from .errors import ConfigurationError, SchemaConflictError, TrainingError
from .numerics.dists import Categorical, Normal, SquashedNormal, Uniform
from .numerics.lstm import LSTM, RecurrentState
from .numerics.params import ParamStore, adam_step, load_checkpoint, save_checkpoint
from .numerics import rng as rngmod
from .numerics.tensor import (
    add,
    backward,
    concat_cols,
    constant,
    div,
    log as vlog,
    logsumexp_rows,
    matmul,
    scale,
    slice_cols,
    softplus,
    square,
    sub,
    take_per_row,
    tanh,
    tile_rows,
    vsum,
)
from .runtime import Controller
from .traces import Trace

__all__ = [
    "ProposalConfig",
    "IcTrainConfig",
    "ProposalModel",
    "IcController",
    "ic_train",
    "propose",
    "save_proposal",
    "load_proposal",
    "observation_vector",
    "extractor_dim",
]

log = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)
_STD_FLOOR = 1e-3
_STAT_STD_FLOOR = 1e-6


@dataclass(frozen=True)
class ProposalConfig:
    hidden: int = 128
    addr_embed: int = 64
    value_embed: int = 16
    obs_embed: int = 64
    obs_hidden: int = 64


@dataclass(frozen=True)
class IcTrainConfig:
    epochs: int = 10
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0
    clip_norm: float = 10.0


# ------------------------------------------------------- observation summaries


def _downsample(series: np.ndarray, k: int) -> np.ndarray:
    if len(series) <= k:
        out = np.zeros(k)
        out[: len(series)] = series
        return out
    idx = np.linspace(0, len(series) - 1, k).round().astype(int)
    return series[idx]


def extractor_dim(family: str, sim_config: dict) -> int:
    if family == "branch2":
        return 1
    if family == "loopy":
        return 1
    if family == "heat1d":
        return 32 + 16 + len(sim_config["air_schedules"])
    raise ConfigurationError(f"no observation extractor for family {family!r}")


def observation_vector(family: str, sim_config: dict, observations: dict) -> np.ndarray:
    """Fixed-length summary of one observation set."""
    if family == "branch2":
        return np.array([float(observations["a4__0"])])
    if family == "loopy":
        return np.array([float(observations["obs__0"])])
    if family == "heat1d":
        m = int(sim_config["n_record"])
        tbot = np.array([float(observations[f"Tbot__{i}"]) for i in range(m)])
        tair = np.array([float(observations[f"Tair__{i}"]) for i in range(m)])
        n_sched = len(sim_config["air_schedules"])
        onehot = np.zeros(n_sched)
        onehot[int(observations["cfg__0"])] = 1.0
        return np.concatenate([_downsample(tbot, 32), _downsample(tair, 16), onehot])
    raise ConfigurationError(f"no observation extractor for family {family!r}")


# ------------------------------------------------------------------ the model


@dataclass
class ProposalSite:
    kind: str
    n_categories: int | None = None
    stat_mean: float = 0.0
    stat_std: float = 1.0


class ProposalModel:
    def __init__(self, config: ProposalConfig = ProposalConfig(),
                 init_seed: int = 0, family: str = "", sim_config: dict | None = None,
                 obs_dim: int | None = None):
        self.config = config
        self.family = family
        self.sim_config = sim_config or {}
        self.obs_dim = obs_dim if obs_dim is not None else (
            extractor_dim(family, self.sim_config) if family else 0
        )
        self.store = ParamStore(init_seed)
        self.embedder = SiteEmbedder(self.store, config.addr_embed, config.value_embed)
        # Input per latent step: observation embedding, previous latent
        # site's (address, kind, value) block, current site's block.
        self.core = LSTM(
            self.store, "core",
            config.obs_embed + 2 * self.embedder.width, config.hidden,
        )
        if self.obs_dim:
            self.store.add_matrix("obs/w1", self.obs_dim, config.obs_hidden)
            self.store.add_zeros("obs/b1", (config.obs_hidden,))
            self.store.add_matrix("obs/w2", config.obs_hidden, config.obs_embed)
            self.store.add_zeros("obs/b2", (config.obs_embed,))
        self.registry: dict[str, ProposalSite] = {}
        self.obs_mean = np.zeros(self.obs_dim)
        self.obs_std = np.ones(self.obs_dim)
        self.traces_seen = 0
        self.epochs_done = 0
        self.loss_history: list = []
        self._warned_unknown: set = set()

    # registry -----------------------------------------------------------

    def register_site(self, addr: str, kind: str, n_categories: int | None = None):
        if kind not in KIND_ORDER:
            raise ConfigurationError(f"unknown distribution kind {kind!r}")
        existing = self.registry.get(addr)
        if existing is not None:
            if existing.kind != kind or (
                kind == "categorical" and existing.n_categories != n_categories
            ):
                raise SchemaConflictError(f"{addr}: proposal site schema changed")
            return
        width = n_categories if kind == "categorical" else 2
        self.embedder.ensure_address(addr)
        self.store.add_zeros(f"prop/{addr}/w", (self.config.hidden, width))
        self.store.add_zeros(f"prop/{addr}/b", (width,))
        self.registry[addr] = ProposalSite(kind=kind, n_categories=n_categories)

    # observation embedding ------------------------------------------------

    def _normalize_obs(self, vec: np.ndarray) -> np.ndarray:
        return (vec - self.obs_mean) / self.obs_std

    def obs_embedding_np(self, vec: np.ndarray) -> np.ndarray:
        p = self.store.params
        hid = np.tanh(self._normalize_obs(vec) @ p["obs/w1"] + p["obs/b1"])
        return hid @ p["obs/w2"] + p["obs/b2"]

    def obs_embedding_var(self, mat: np.ndarray):
        s = self.store
        normed = (mat - self.obs_mean) / self.obs_std
        hid = tanh(add(matmul(constant(normed), s.var("obs/w1")), s.var("obs/b1")))
        return add(matmul(hid, s.var("obs/w2")), s.var("obs/b2"))

    # proposal heads --------------------------------------------------------

    def head_spec(self, addr: str, prior_spec, h: np.ndarray):
        """Proposal distribution at a site, as a correction of the presented
        distribution.  h is the LSTM output row for this site."""
        site = self.registry[addr]
        p = self.store.params
        out = h @ p[f"prop/{addr}/w"] + p[f"prop/{addr}/b"]
        if site.kind == "normal":
            mu_p, sd_p = prior_spec.mean, prior_spec.stddev
            return Normal(mu_p + sd_p * float(out[0]),
                          sd_p * (float(np.logaddexp(0.0, out[1])) + _STD_FLOOR))
        if site.kind == "uniform":
            if prior_spec.kind == "squashed_normal":
                base_mu, base_sd = prior_spec.mu_z, prior_spec.sigma_z
                lo, hi = prior_spec.low, prior_spec.high
            else:
                base_mu, base_sd = 0.0, 1.0
                lo, hi = prior_spec.low, prior_spec.high
            return SquashedNormal(
                lo, hi,
                base_mu + base_sd * float(out[0]),
                base_sd * (float(np.logaddexp(0.0, out[1])) + _STD_FLOOR),
            )
        logits = np.log(np.asarray(prior_spec.probs) + 1e-300) + out
        z = logits - logits.max()
        e = np.exp(z)
        return Categorical(e / e.sum())

    def value_norm(self, addr: str, value: float) -> float:
        site = self.registry[addr]
        if site.kind == "categorical":
            return float(value)
        return (float(value) - site.stat_mean) / site.stat_std

    # training ---------------------------------------------------------------

    def register_dataset(self, dataset: TraceDataset) -> None:
        stats: dict[str, list] = {}
        for grp in dataset.groups:
            for t, addr in enumerate(grp.addresses):
                if grp.observed[t]:
                    continue
                kind = grp.kinds[t]
                n_cat = grp.cat_probs[t].shape[1] if kind == "categorical" else None
                self.register_site(addr, kind, n_cat)
                if kind != "categorical":
                    stats.setdefault(addr, []).append(grp.values[:, t])
        for addr, chunks in stats.items():
            vals = np.concatenate(chunks)
            site = self.registry[addr]
            site.stat_mean = float(vals.mean())
            site.stat_std = float(max(vals.std(), _STAT_STD_FLOOR))
        obs = np.vstack([self._group_obs(grp) for grp in dataset.groups])
        self.obs_mean = obs.mean(axis=0)
        self.obs_std = np.maximum(obs.std(axis=0), _STAT_STD_FLOOR)

    def _group_obs(self, grp: StructureGroup) -> np.ndarray:
        cached = getattr(grp, "_ic_obs", None)
        if cached is not None:
            return cached
        obs_cols = [t for t in range(grp.length) if grp.observed[t]]
        mat = np.empty((grp.n_traces, self.obs_dim))
        for i in range(grp.n_traces):
            observations = {grp.addresses[t]: grp.values[i, t] for t in obs_cols}
            mat[i] = observation_vector(self.family, self.sim_config, observations)
        grp._ic_obs = mat
        return mat

    def _plan(self, grp: StructureGroup):
        plan = getattr(grp, "_ic_plan", None)
        if plan is not None and plan["registry_size"] == len(self.registry):
            return plan
        steps = []
        prev_embed = None  # (addr, values) of the previous latent site
        for t, addr in enumerate(grp.addresses):
            if grp.observed[t]:
                continue
            site = self.registry[addr]
            kind = grp.kinds[t]
            vals = grp.values[:, t]
            step = {"addr": addr, "kind": kind, "prev": prev_embed}
            if kind == "normal":
                mu_p = grp.spec_params[:, t, 0]
                sd_p = grp.spec_params[:, t, 1]
                step["z"] = ((vals - mu_p) / sd_p)[:, None]
                step["const"] = 0.5 * _LOG_2PI * grp.n_traces + float(np.log(sd_p).sum())
                step["const_rows"] = np.log(sd_p)
            elif kind == "uniform":
                lo = grp.spec_params[:, t, 0]
                hi = grp.spec_params[:, t, 1]
                s = np.clip((vals - lo) / (hi - lo), 1e-12, 1 - 1e-12)
                z = np.log(s) - np.log1p(-s)
                step["z"] = z[:, None]
                jac = np.log((hi - lo) * s * (1.0 - s))
                step["const_rows"] = jac + 0.5 * _LOG_2PI
            else:
                step["cat_idx"] = vals.astype(np.intp)
                step["log_prior"] = np.log(grp.cat_probs[t] + 1e-300)
                step["const_rows"] = np.zeros(grp.n_traces)
            norm = self.value_norm
            step["embed_v"] = np.array([norm(addr, v) for v in vals]) \
                if kind != "categorical" else vals.astype(np.float64)
            steps.append(step)
            prev_embed = (addr, step["embed_v"])
        plan = {"registry_size": len(self.registry), "steps": steps}
        grp._ic_plan = plan
        return plan

    def batch_loss(self, grp: StructureGroup, rows: np.ndarray):
        plan = self._plan(grp)
        if not plan["steps"]:
            return None
        b = len(rows)
        s = self.store
        hidden = self.config.hidden
        obs_emb = self.obs_embedding_var(self._group_obs(grp)[rows])
        h = constant(np.zeros((b, hidden)))
        c = constant(np.zeros((b, hidden)))
        terms = []
        const_total = 0.0
        for step in plan["steps"]:
            if step["prev"] is None:
                prev_rows = constant(np.zeros((b, self.embedder.width)))
            else:
                paddr, pvals = step["prev"]
                prev_rows = self.embedder.rows_var(
                    paddr, self.registry[paddr].kind, pvals[rows]
                )
            # current address identity rides on the same embedder, value 0
            cur_rows = self.embedder.rows_var(
                step["addr"], step["kind"], np.zeros(b)
            )
            x = concat_cols([obs_emb, prev_rows, cur_rows])
            h, c = self.core.step(x, h, c)
            out = add(matmul(h, s.var(f"prop/{step['addr']}/w")),
                      s.var(f"prop/{step['addr']}/b"))
            if step["kind"] in ("normal", "uniform"):
                mu = slice_cols(out, 0, 1)
                sd = add(softplus(slice_cols(out, 1, 2)), _STD_FLOOR)
                zdiff = div(sub(constant(step["z"][rows]), mu), sd)
                terms.append(vsum(add(vlog(sd), scale(square(zdiff), 0.5))))
                const_total += float(step["const_rows"][rows].sum())
            else:
                logits = add(out, constant(step["log_prior"][rows]))
                lse = logsumexp_rows(logits)
                chosen = take_per_row(logits, step["cat_idx"][rows])
                terms.append(vsum(sub(lse, chosen)))
        total = terms[0]
        for t in terms[1:]:
            total = add(total, t)
        return scale(add(total, constant(const_total)), 1.0 / b)

    def dataset_nll(self, dataset: TraceDataset) -> float:
        total = 0.0
        n_used = 0
        for grp in dataset.groups:
            for lo in range(0, grp.n_traces, 512):
                sel = np.arange(lo, min(lo + 512, grp.n_traces))
                loss = self.batch_loss(grp, sel)
                if loss is None:
                    continue
                total += float(loss.value) * len(sel)
                n_used += len(sel)
        if n_used == 0:
            raise TrainingError("no latent sites anywhere in the dataset")
        return total / n_used

    def train(self, dataset: TraceDataset, cfg: IcTrainConfig) -> list:
        if dataset.n_traces == 0:
            raise TrainingError("dataset is empty")
        if self.traces_seen == 0:
            self.register_dataset(dataset)
        self.traces_seen += dataset.n_traces
        history = []
        for _ in range(cfg.epochs):
            epoch_rng = rngmod.stream(cfg.seed, "ic-train-epoch", self.epochs_done)
            batches = []
            for grp in dataset.groups:
                if not any(not o for o in grp.observed):
                    log.warning("skipping structure with no latent sites "
                                "(first trace id %s)", grp.trace_ids[0])
                    continue
                perm = epoch_rng.permutation(grp.n_traces)
                for lo in range(0, grp.n_traces, cfg.batch_size):
                    batches.append((grp, perm[lo : lo + cfg.batch_size]))
            order = epoch_rng.permutation(len(batches))
            total = 0.0
            n_used = 0
            for bi in order:
                grp, sel = batches[bi]
                loss = self.batch_loss(grp, sel)
                if loss is None:
                    continue
                if not np.isfinite(loss.value):
                    ids = [grp.trace_ids[i] for i in sel[:8]]
                    raise TrainingError(f"non-finite loss on traces {ids}")
                backward(loss)
                adam_step(self.store, lr=cfg.lr, clip_norm=cfg.clip_norm)
                total += float(loss.value) * len(sel)
                n_used += len(sel)
            history.append(total / max(n_used, 1))
            self.epochs_done += 1
        self.loss_history.extend(history)
        return history


# ----------------------------------------------------------------- controller


class IcController(Controller):
    """Drives guided runs with learned proposals; one instance per particle."""

    def __init__(self, model: ProposalModel, obs_vector_raw: np.ndarray,
                 rng: np.random.Generator):
        self.model = model
        self.rng = rng
        self.obs_emb = model.obs_embedding_np(np.asarray(obs_vector_raw, float))
        self.reset()

    def reset(self) -> None:
        hidden = self.model.config.hidden
        self.state = RecurrentState.zeros(hidden)
        self.prev: tuple | None = None

    def choose(self, addr: str, spec):
        model = self.model
        if addr not in model.registry:
            if addr not in model._warned_unknown:
                model._warned_unknown.add(addr)
                log.warning("no proposal layer for %s; using the presented "
                            "distribution", addr)
            value = spec.sample(self.rng)
            return value, spec.log_prob(value)
        site = model.registry[addr]
        if self.prev is None:
            prev_rows = np.zeros((1, model.embedder.width))
        else:
            paddr, pval = self.prev
            prev_rows = model.embedder.rows_np(
                paddr, model.registry[paddr].kind,
                np.array([model.value_norm(paddr, pval)]),
            )
        cur_rows = model.embedder.rows_np(addr, site.kind, np.zeros(1))
        x = np.concatenate([self.obs_emb[None, :], prev_rows, cur_rows], axis=1)
        self.state = model.core.step_np(x, self.state)
        q = model.head_spec(addr, spec, self.state.h[0])
        value = q.sample(self.rng)
        self.prev = (addr, value)
        return value, q.log_prob(value)


def propose(model: ProposalModel, addr: str, prior_spec, history: list,
            obs_vector_raw: np.ndarray):
    """Proposal distribution for one site given the latent history.

    history is the list of (address, value) latent pairs already realized,
    in order.  Replays the recurrent encoding the controller maintains
    incrementally; used directly by tests and diagnostics.
    """
    if addr not in model.registry:
        return prior_spec
    obs_emb = model.obs_embedding_np(np.asarray(obs_vector_raw, float))
    state = RecurrentState.zeros(model.config.hidden)
    prev = None
    for past_addr, past_val in list(history) + [(addr, None)]:
        if past_addr not in model.registry:
            continue
        site = model.registry[past_addr]
        if prev is None:
            prev_rows = np.zeros((1, model.embedder.width))
        else:
            paddr, pval = prev
            prev_rows = model.embedder.rows_np(
                paddr, model.registry[paddr].kind,
                np.array([model.value_norm(paddr, pval)]),
            )
        cur_rows = model.embedder.rows_np(past_addr, site.kind, np.zeros(1))
        x = np.concatenate([obs_emb[None, :], prev_rows, cur_rows], axis=1)
        state = model.core.step_np(x, state)
        if past_val is not None:
            prev = (past_addr, past_val)
    return model.head_spec(addr, prior_spec, state.h[0])


def ic_train(model: ProposalModel, dataset: TraceDataset,
             cfg: IcTrainConfig = IcTrainConfig()) -> list:
    return model.train(dataset, cfg)


# ---------------------------------------------------------------- persistence


def save_proposal(model: ProposalModel, path) -> None:
    config = {
        "kind": "proposal",
        "family": model.family,
        "sim_config": model.sim_config,
        "obs_dim": model.obs_dim,
        "model": {
            "hidden": model.config.hidden,
            "addr_embed": model.config.addr_embed,
            "value_embed": model.config.value_embed,
            "obs_embed": model.config.obs_embed,
            "obs_hidden": model.config.obs_hidden,
        },
        "registry": {
            addr: {
                "kind": site.kind,
                "n_categories": site.n_categories,
                "stat_mean": site.stat_mean,
                "stat_std": site.stat_std,
            }
            for addr, site in model.registry.items()
        },
        "obs_mean": list(model.obs_mean),
        "obs_std": list(model.obs_std),
        "traces_seen": model.traces_seen,
        "epochs_done": model.epochs_done,
        "loss_history": model.loss_history,
    }
    save_checkpoint(path, model.store, config)


def load_proposal(path) -> ProposalModel:
    store, config = load_checkpoint(path)
    if config.get("kind") != "proposal":
        raise SchemaConflictError(f"{path} is not a proposal checkpoint")
    mc = config["model"]
    model = ProposalModel.__new__(ProposalModel)
    model.config = ProposalConfig(
        hidden=mc["hidden"], addr_embed=mc["addr_embed"],
        value_embed=mc["value_embed"], obs_embed=mc["obs_embed"],
        obs_hidden=mc["obs_hidden"],
    )
    model.family = config["family"]
    model.sim_config = config["sim_config"]
    model.obs_dim = config["obs_dim"]
    model.store = store
    model.embedder = SiteEmbedder(store, model.config.addr_embed,
                                  model.config.value_embed)
    model.core = LSTM(store, "core", model.config.obs_embed + model.embedder.width,
                      model.config.hidden)
    model.registry = {
        addr: ProposalSite(
            kind=site["kind"],
            n_categories=site["n_categories"],
            stat_mean=site["stat_mean"],
            stat_std=site["stat_std"],
        )
        for addr, site in config["registry"].items()
    }
    model.obs_mean = np.asarray(config["obs_mean"], float)
    model.obs_std = np.asarray(config["obs_std"], float)
    model.traces_seen = config["traces_seen"]
    model.epochs_done = config["epochs_done"]
    model.loss_history = list(config["loss_history"])
    model._warned_unknown = set()
    return model
