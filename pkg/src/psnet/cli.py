"""Batch front-end: record datasets, train both networks, run inference,
evaluate surrogate fidelity, and benchmark throughput.

Every run writes its outputs plus a sidecar ``<out>.manifest.json`` holding
the subcommand, configuration, seed, worker count, referenced checkpoints,
and wall-clock measurements.  Payload outputs (trace files, checkpoints,
loss tables, estimates) are byte-identical across repeats of the same
manifest; measured wall-time fields are reported in the manifest and in the
timing columns of reports, and are the only nondeterministic values.

Errors exit nonzero with a single machine-readable JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import multiprocessing
import sys
import time

import numpy as np

from . import __version__
from .dataset import TraceDataset
from .errors import ConfigurationError, DegenerateWeightsError, PsnetError, SchemaConflictError
from .inference import (
    SimExecutor,
    SurrogateExecutor,
    bootstrap_se,
    ess,
    ic_proposal,
    posterior_expectation,
    prior_proposal,
    sis_infer,
)
from .numerics import rng as rngmod
from .proposal import IcTrainConfig, ProposalConfig, ProposalModel, load_proposal, save_proposal
from .runtime import PriorController, run_prior
from .sims import SimModel, load_sim, mu_w, sim_to_json
from .sims.heat1d import QueryMuW
from .surrogate import (
    PsnTrainConfig,
    SurrogateConfig,
    SurrogateModel,
    load_surrogate,
    save_surrogate,
)
from .traces import TraceWriter, iter_traces

REPORT_COLUMNS = [
    "observation_id", "executor", "proposal", "K", "query",
    "estimate", "bootstrap_se", "ess", "wall_seconds", "traces_per_second",
]
EVAL_COLUMNS = [
    "step", "channel", "sim_mean", "psn_mean", "sim_var", "psn_var",
    "sq_err_mean", "control_sq_err_mean",
]
BENCH_COLUMNS = ["engine", "task", "n_traces", "wall_seconds", "traces_per_second"]


def _write_manifest(out_path: str, args: argparse.Namespace, extra: dict) -> None:
    manifest = {
        "tool_version": __version__,
        "subcommand": args.command,
        "seed": getattr(args, "seed", None),
        "workers": getattr(args, "workers", None),
        "config": getattr(args, "config", None),
        "out": out_path,
        "checkpoint": getattr(args, "checkpoint", None),
    }
    manifest.update(extra)
    with open(out_path + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ------------------------------------------------------------------ record

_RECORD_SIM: SimModel | None = None


def _record_one(task):
    trace_id, seed, pins = task
    rng = rngmod.stream(seed, "record", trace_id)
    trace = run_prior(_RECORD_SIM.program(), rng, t_max=_RECORD_SIM.t_max,
                      trace_id=trace_id, pins=pins)
    return trace


def _record_init(sim_json):
    global _RECORD_SIM
    from .sims import sim_from_json

    _RECORD_SIM = sim_from_json(sim_json)


def cmd_record(args) -> None:
    sim = load_sim(args.config)
    pins = {}
    if args.pin:
        with open(args.pin, encoding="utf-8") as fh:
            pins = json.load(fh)
    tasks = [(i, args.seed, pins) for i in range(args.traces)]
    t0 = time.perf_counter()
    if args.workers > 1 and args.traces > 1:
        sim_json = sim_to_json(sim)
        with multiprocessing.Pool(args.workers, initializer=_record_init,
                                  initargs=(sim_json,)) as pool:
            traces = pool.map(_record_one, tasks, chunksize=16)
    else:
        global _RECORD_SIM
        _RECORD_SIM = sim
        traces = [_record_one(t) for t in tasks]
    traces.sort(key=lambda t: t.trace_id)
    with TraceWriter(args.out) as writer:
        for trace in traces:
            writer.write(trace)
    wall = time.perf_counter() - t0
    if args.observations_out:
        if not traces:
            raise ConfigurationError("cannot extract observations from zero traces")
        obs = traces[0].observed_values()
        with open(args.observations_out, "w", encoding="utf-8") as fh:
            json.dump({"v": 1, "observations": obs}, fh, indent=2, sort_keys=True)
            fh.write("\n")
    _write_manifest(args.out, args, {
        "family": sim.family,
        "n_traces": args.traces,
        "pins": pins,
        "wall_seconds": wall,
        "traces_per_second": args.traces / wall if wall > 0 else None,
    })


# ------------------------------------------------------------------ training


def _load_train_config(path: str) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _check_family(dataset_path: str, model_registry: dict, what: str) -> None:
    """Refuse checkpoints whose address schema conflicts with the dataset."""
    first = next(iter_traces(dataset_path), None)
    if first is None:
        return
    mismatched = [
        e.addr for e in first.entries
        if e.addr in model_registry and model_registry[e.addr].kind != e.spec.kind
    ]
    if mismatched:
        raise SchemaConflictError(
            f"{what}: dataset kinds conflict with checkpoint at addresses "
            + ", ".join(mismatched[:5])
        )


def cmd_train_psn(args) -> None:
    tc = _load_train_config(args.config)
    sim = load_sim(tc["sim"]) if "sim" in tc else None
    dataset = TraceDataset.from_jsonl(args.dataset)
    if args.checkpoint:
        model = load_surrogate(args.checkpoint)
        _check_family(args.dataset, model.registry, "train-psn")
    else:
        model = SurrogateModel(
            SurrogateConfig(
                hidden=int(tc.get("hidden", 128)),
                addr_embed=int(tc.get("addr_embed", 64)),
                value_embed=int(tc.get("value_embed", 16)),
            ),
            init_seed=args.seed,
            family=sim.family if sim else tc.get("family", ""),
            sim_config=sim_to_json(sim) if sim else {},
        )
    cfg = PsnTrainConfig(
        epochs=int(tc.get("epochs", 10)),
        batch_size=int(tc.get("batch_size", 128)),
        lr=float(tc.get("lr", 1e-3)),
        seed=args.seed,
        clip_norm=float(tc.get("clip_norm", 10.0)),
    )
    t0 = time.perf_counter()
    history = model.train(dataset, cfg)
    wall = time.perf_counter() - t0
    save_surrogate(model, args.out)
    loss_path = args.out + ".loss.csv"
    with open(loss_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_nll"])
        for i, nll in enumerate(model.loss_history):
            writer.writerow([i, repr(float(nll))])
    _write_manifest(args.out, args, {
        "dataset": args.dataset,
        "train_config": tc,
        "epochs_this_run": cfg.epochs,
        "final_nll": history[-1] if history else None,
        "wall_seconds": wall,
    })


def cmd_train_ic(args) -> None:
    tc = _load_train_config(args.config)
    sim = load_sim(tc["sim"]) if "sim" in tc else None
    if sim is None:
        raise ConfigurationError("train-ic config must name the simulator ('sim')")
    dataset = TraceDataset.from_jsonl(args.dataset)
    if args.checkpoint:
        model = load_proposal(args.checkpoint)
        if model.family != sim.family:
            raise SchemaConflictError(
                f"train-ic: checkpoint family {model.family!r} != {sim.family!r}"
            )
    else:
        model = ProposalModel(
            ProposalConfig(
                hidden=int(tc.get("hidden", 128)),
                addr_embed=int(tc.get("addr_embed", 64)),
                value_embed=int(tc.get("value_embed", 16)),
                obs_embed=int(tc.get("obs_embed", 64)),
                obs_hidden=int(tc.get("obs_hidden", 64)),
            ),
            init_seed=args.seed,
            family=sim.family,
            sim_config=sim_to_json(sim),
        )
    cfg = IcTrainConfig(
        epochs=int(tc.get("epochs", 10)),
        batch_size=int(tc.get("batch_size", 128)),
        lr=float(tc.get("lr", 1e-3)),
        seed=args.seed,
        clip_norm=float(tc.get("clip_norm", 10.0)),
    )
    t0 = time.perf_counter()
    history = model.train(dataset, cfg)
    wall = time.perf_counter() - t0
    save_proposal(model, args.out)
    with open(args.out + ".loss.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_nll"])
        for i, nll in enumerate(model.loss_history):
            writer.writerow([i, repr(float(nll))])
    _write_manifest(args.out, args, {
        "dataset": args.dataset,
        "train_config": tc,
        "final_nll": history[-1] if history else None,
        "wall_seconds": wall,
    })


# ------------------------------------------------------------------ queries


def make_query(name: str, sim: SimModel):
    """Resolve a --query string to (label, trace -> value)."""
    if name == "mu_w":
        if sim.family != "heat1d":
            raise ConfigurationError("query mu_w needs a heat1d simulator")
        q = QueryMuW.from_config(sim.config)
        return "mu_w", lambda trace: mu_w(trace, q)
    if name == "branch_a2":
        return "branch_a2", lambda trace: 1.0 if any(
            e.addr == "a2__0" for e in trace.entries
        ) else 0.0
    if name.startswith("value:"):
        addr = name.split(":", 1)[1]
        return name, lambda trace: float(trace.value_at(addr))
    raise ConfigurationError(
        f"unknown query {name!r}; use mu_w, branch_a2, or value:<address>"
    )


def _load_observations(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("v") != 1 or "observations" not in obj:
        raise ConfigurationError(f"{path}: expected an observations file (v=1)")
    return obj["observations"]


def cmd_infer(args) -> None:
    sim = load_sim(args.config)
    observations = _load_observations(args.observations)
    if args.executor == "sim":
        executor = SimExecutor(sim)
    else:
        executor = SurrogateExecutor(load_surrogate(args.checkpoint))
    if args.proposal == "prior":
        factory = prior_proposal()
        proposal_name = "prior"
    else:
        proposal = load_proposal(args.ic_checkpoint)
        if proposal.family != sim.family:
            raise SchemaConflictError(
                f"infer: proposal family {proposal.family!r} != {sim.family!r}"
            )
        factory = ic_proposal(proposal)
        proposal_name = "ic"
    label, query_fn = make_query(args.query, sim)
    t0 = time.perf_counter()
    samples = sis_infer(executor, factory, observations, args.particles,
                        seed=args.seed)
    wall = time.perf_counter() - t0
    estimate = posterior_expectation(samples, query_fn)
    se = bootstrap_se(samples, query_fn, n_boot=1000, seed=args.seed)
    sample_ess = ess(samples)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        writer.writerow([
            args.observation_id, args.executor, proposal_name, args.particles,
            label, repr(float(estimate)), repr(float(se)), repr(float(sample_ess)),
            f"{wall:.3f}", f"{args.particles / wall:.3f}" if wall > 0 else "",
        ])
    _write_manifest(args.out, args, {
        "observations": args.observations,
        "executor": args.executor,
        "proposal": proposal_name,
        "particles": args.particles,
        "query": label,
        "estimate": estimate,
        "bootstrap_se": se,
        "ess": sample_ess,
        "ic_checkpoint": args.ic_checkpoint,
        "wall_seconds": wall,
        "traces_per_second": args.particles / wall if wall > 0 else None,
    })


# ------------------------------------------------------------- eval-surrogate


def _trajectory_stats(traces, n_record):
    """Per-(step, channel) mean and variance of Tint/Tbot trajectories."""
    chans = ("Tint", "Tbot")
    out_mean = {ch: np.zeros(n_record) for ch in chans}
    out_var = {ch: np.zeros(n_record) for ch in chans}
    series = {ch: np.empty((len(traces), n_record)) for ch in chans}
    for i, tr in enumerate(traces):
        per = {ch: series[ch][i] for ch in chans}
        for e in tr.entries:
            name, _, idx = e.addr.partition("__")
            if name in chans:
                per[name][int(idx)] = e.value
    for ch in chans:
        out_mean[ch] = series[ch].mean(axis=0)
        out_var[ch] = series[ch].var(axis=0)
    return out_mean, out_var


def cmd_eval_surrogate(args) -> None:
    sim = load_sim(args.config)
    if sim.family != "heat1d":
        raise ConfigurationError("eval-surrogate compares heat1d trajectories")
    model = load_surrogate(args.checkpoint)
    pins = {}
    if args.settings:
        with open(args.settings, encoding="utf-8") as fh:
            pins = json.load(fh)
    for addr, value in pins.items():
        if addr in ("h_top__0", "h_bot__0", "thick__0"):
            lo, hi = {
                "h_top__0": sim.config.h_top_prior,
                "h_bot__0": sim.config.h_bot_prior,
                "thick__0": sim.config.thickness_prior,
            }[addr]
            if not (lo <= value <= hi):
                print(f"warning: pinned {addr}={value} outside prior "
                      f"[{lo}, {hi}]", file=sys.stderr)
    n = args.draws
    t0 = time.perf_counter()
    sim_traces_a = [
        run_prior(sim.program(), rngmod.stream(args.seed, "eval-sim-a", i),
                  t_max=sim.t_max, trace_id=i, pins=pins)
        for i in range(n)
    ]
    sim_traces_b = [
        run_prior(sim.program(), rngmod.stream(args.seed, "eval-sim-b", i),
                  t_max=sim.t_max, trace_id=i, pins=pins)
        for i in range(n)
    ]
    wall_sim = time.perf_counter() - t0
    t0 = time.perf_counter()
    psn_traces = model.sample_batch(rngmod.stream(args.seed, "eval-psn"), n,
                                    t_max=sim.t_max, pins=pins)
    wall_psn = time.perf_counter() - t0
    m = sim.config.n_record
    mean_a, var_a = _trajectory_stats(sim_traces_a, m)
    mean_b, var_b = _trajectory_stats(sim_traces_b, m)
    mean_p, var_p = _trajectory_stats(psn_traces, m)
    rows = []
    for ch in ("Tint", "Tbot"):
        for step in range(m):
            rows.append([
                step, ch,
                repr(float(mean_a[ch][step])), repr(float(mean_p[ch][step])),
                repr(float(var_a[ch][step])), repr(float(var_p[ch][step])),
                repr(float((mean_p[ch][step] - mean_a[ch][step]) ** 2)),
                repr(float((mean_b[ch][step] - mean_a[ch][step]) ** 2)),
            ])
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(EVAL_COLUMNS)
        writer.writerows(rows)
    dat_path = args.out + ".dat"
    with open(dat_path, "w", encoding="utf-8") as fh:
        fh.write("# step sq_err_Tint sq_err_Tbot control_Tint control_Tbot\n")
        for step in range(m):
            fh.write(
                f"{step} "
                f"{(mean_p['Tint'][step]-mean_a['Tint'][step])**2!r} "
                f"{(mean_p['Tbot'][step]-mean_a['Tbot'][step])**2!r} "
                f"{(mean_b['Tint'][step]-mean_a['Tint'][step])**2!r} "
                f"{(mean_b['Tbot'][step]-mean_a['Tbot'][step])**2!r}\n"
            )
    _write_manifest(args.out, args, {
        "settings": pins,
        "draws": n,
        "wall_seconds_sim": wall_sim,
        "wall_seconds_psn": wall_psn,
    })


# ------------------------------------------------------------------ bench


def cmd_bench(args) -> None:
    sim = load_sim(args.config)
    model = load_surrogate(args.checkpoint)
    proposal = load_proposal(args.ic_checkpoint) if args.ic_checkpoint else None
    n_fwd = args.forward_traces
    n_sis = args.sis_traces
    rows = []

    t0 = time.perf_counter()
    for i in range(n_fwd):
        run_prior(sim.program(), rngmod.stream(args.seed, "bench-sim", i),
                  t_max=sim.t_max, trace_id=i)
    w = time.perf_counter() - t0
    rows.append(["sim", "forward", n_fwd, w, n_fwd / w])

    t0 = time.perf_counter()
    model.sample_batch(rngmod.stream(args.seed, "bench-psn"), n_fwd, t_max=sim.t_max)
    w = time.perf_counter() - t0
    rows.append(["psn", "forward", n_fwd, w, n_fwd / w])

    if proposal is not None:
        obs, _ = _bench_observations(sim, args.seed)
        factory = ic_proposal(proposal)
        t0 = time.perf_counter()
        sis_infer(SimExecutor(sim), factory, obs, n_sis, seed=args.seed)
        w = time.perf_counter() - t0
        rows.append(["sim", "sis_ic", n_sis, w, n_sis / w])
        t0 = time.perf_counter()
        sis_infer(SurrogateExecutor(model), factory, obs, n_sis, seed=args.seed)
        w = time.perf_counter() - t0
        rows.append(["psn", "sis_ic", n_sis, w, n_sis / w])

    by = {(r[0], r[1]): r[4] for r in rows}
    ratio_rows = []
    if ("sim", "forward") in by and ("psn", "forward") in by:
        ratio_rows.append(["speedup", "forward", "",
                           "", by[("psn", "forward")] / by[("sim", "forward")]])
    if ("sim", "sis_ic") in by and ("psn", "sis_ic") in by:
        ratio_rows.append(["speedup", "sis_ic", "",
                           "", by[("psn", "sis_ic")] / by[("sim", "sis_ic")]])
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(BENCH_COLUMNS)
        for r in rows + ratio_rows:
            writer.writerow([r[0], r[1], r[2],
                             f"{r[3]:.4f}" if r[3] != "" else "",
                             f"{r[4]:.4f}"])
    _write_manifest(args.out, args, {
        "forward_traces": n_fwd,
        "sis_traces": n_sis,
        "ic_checkpoint": args.ic_checkpoint,
        "cells": {f"{r[0]}/{r[1]}": r[4] for r in rows},
        "speedups": {r[1]: r[4] for r in ratio_rows},
    })


def _bench_observations(sim: SimModel, seed: int):
    trace = run_prior(sim.program(), rngmod.stream(seed, "bench-obs"),
                      t_max=sim.t_max)
    return trace.observed_values(), trace


# ------------------------------------------------------------------ plumbing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="psnet",
        description="Surrogate-accelerated simulation and amortized inference",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False):
        p.add_argument("--config", required=True,
                       help="simulator config path or built-in name")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--out", required=True)
        if checkpoint:
            p.add_argument("--checkpoint", default=None)

    p = sub.add_parser("record", help="sample prior traces to JSONL")
    common(p)
    p.add_argument("--traces", "-n", type=int, required=True)
    p.add_argument("--pin", default=None,
                   help="JSON file of address->value pins")
    p.add_argument("--observations-out", default=None,
                   help="also write the first trace's observations file")

    p = sub.add_parser("train-psn", help="train the trace surrogate")
    p.add_argument("--config", default=None, help="training config JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", default=None, help="resume from checkpoint")

    p = sub.add_parser("train-ic", help="train the proposal network")
    p.add_argument("--config", default=None, help="training config JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", default=None, help="resume from checkpoint")

    p = sub.add_parser("infer", help="posterior estimation by SIS")
    common(p, checkpoint=True)
    p.add_argument("--executor", choices=["sim", "psn"], required=True)
    p.add_argument("--proposal", choices=["prior", "ic"], required=True)
    p.add_argument("--observations", required=True)
    p.add_argument("--observation-id", default="obs0")
    p.add_argument("--particles", "-K", type=int, required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--ic-checkpoint", default=None)

    p = sub.add_parser("eval-surrogate",
                       help="conditional-trajectory fidelity study")
    common(p, checkpoint=True)
    p.add_argument("--settings", default=None,
                   help="JSON pins for the fixed settings")
    p.add_argument("--draws", type=int, default=500)

    p = sub.add_parser("bench", help="traces/s for sim and surrogate")
    common(p, checkpoint=True)
    p.add_argument("--ic-checkpoint", default=None)
    p.add_argument("--forward-traces", type=int, default=50)
    p.add_argument("--sis-traces", type=int, default=20)
    return parser


COMMANDS = {
    "record": cmd_record,
    "train-psn": cmd_train_psn,
    "train-ic": cmd_train_ic,
    "infer": cmd_infer,
    "eval-surrogate": cmd_eval_surrogate,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except PsnetError as exc:
        print(json.dumps({"error": exc.code, "type": type(exc).__name__,
                          "message": str(exc)}), file=sys.stderr)
        return 1
    except OSError as exc:
        print(json.dumps({"error": "io", "type": type(exc).__name__,
                          "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
