"""Command line interface.  Particle and state indices are printed 1-based."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import graph, harness, hmm as hmm_mod, resample, schedule, variance
from .errors import ButterflyError
from .filter import run_filter
from .rng import Streams


def _schedule_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--family", required=True, choices=schedule.FAMILIES)
    p.add_argument("--r", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--c", type=int)
    p.add_argument("--n", type=int, help="population size for the multinomial family")


def _schedule(a) -> schedule.Schedule:
    return schedule.build_schedule(a.family, r=a.r, m=a.m, c=a.c, n=a.n)


def _one_based(idx) -> list:
    return [int(i) + 1 for i in idx]


def _weight(w, exact: bool):
    return str(w) if exact and isinstance(w, Fraction) else float(w)


def _dump(obj, out) -> None:
    out.write(json.dumps(obj, indent=2) + "\n")


def _csv(rows, header, out) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)


# schedule and graph commands ------------------------------------------------

def cmd_verify(a, out) -> int:
    s = _schedule(a)
    cap = None if a.exact else schedule.PATH_WORK_CAP
    report = schedule.verify_assumptions(s, path_cap=cap)
    _dump({"schedule": s.label, "N": s.n_particles, "m": s.n_stages, **report.as_dict()}, out)
    return 0


def cmd_row(a, out) -> int:
    s = _schedule(a)
    row = schedule.stage_row(s, a.stage, a.index - 1, exact=a.exact)
    _dump({"stage": a.stage, "row": a.index,
           "entries": [[j + 1, _weight(w, a.exact)] for j, w in row.entries]}, out)
    return 0


def cmd_sets(a, out) -> int:
    s = _schedule(a)
    i, m = a.index - 1, s.n_stages
    _dump({
        "schedule": s.label,
        "index": a.index,
        "parent": {k: _one_based(graph.parent_set(s, k, i)) for k in range(1, m + 1)},
        "prime_parent": {k: _one_based(graph.prime_parent_set(s, k, i)) for k in range(m + 1)},
        "collision_start": {k: _one_based(graph.collision_start_set(s, k, i))
                            for k in range(1, m + 1)},
        "tail_product": {k: _one_based(graph.tail_product_set(s, k, i)) for k in range(1, m + 1)},
        "path_count": {k: graph.path_count_from(s, k, i) for k in range(m + 1)},
    }, out)
    return 0


def cmd_stats(a, out) -> int:
    st = graph.edge_stats(_schedule(a))
    _dump({"incoming_per_vertex": st.incoming_per_vertex, "total_edges": st.total_edges}, out)
    return 0


def cmd_partition(a, out) -> int:
    part = graph.build_partition(_schedule(a), a.d)
    _dump({"d": part.d, "block_size": part.block_size,
           "blocks": [_one_based(b) for b in part.blocks]}, out)
    return 0


# resampling commands --------------------------------------------------------

def _indexed_inputs(a, s):
    w = [float(x) for x in a.weights.split(",")] if a.weights else list(range(1, s.n_particles + 1))
    if len(w) != s.n_particles:
        raise ButterflyError(f"{len(w)} weights for {s.n_particles} particles")
    return resample.ParticleSystem.indexed(w)


def cmd_bias(a, out) -> int:
    s = _schedule(a)
    ps = _indexed_inputs(a, s)
    phi = harness.parse_phi(a.phi, s.n_particles)
    rep = resample.lack_of_bias_check(ps, s, lambda i: phi[i], exact=a.exact, seed=a.seed,
                                      replicates=a.replicates)
    _dump({"lhs": rep.lhs, "rhs": rep.rhs, "diff": rep.diff, "se": rep.se,
           "replicates": rep.replicates, "passed": rep.passed}, out)
    return 0 if rep.passed else 1


def cmd_resample_once(a, out) -> int:
    s = _schedule(a)
    ps = _indexed_inputs(a, s)
    _, trace = resample.augmented_resample(ps, s, Streams(a.seed, a.replicate))
    _dump({"schedule": s.label, "V": trace.v.tolist(),
           "parents": (trace.parents + 1).tolist(), "origins": (trace.origins + 1).tolist()}, out)
    return 0


# model commands -------------------------------------------------------------

def _model_and_obs(a):
    model = hmm_mod.load_model(a.model)
    return model, hmm_mod.load_observations(a.obs)


def cmd_exact_filter(a, out) -> int:
    model, obs = _model_and_obs(a)
    ef = hmm_mod.exact_filter(model, obs)
    rows = [[n, x + 1, repr(float(ef.pred[n, x])), repr(float(ef.filt[n, x]))]
            for n in range(ef.horizon + 1) for x in range(model.n_states)]
    _csv(rows, ["n", "state", "predictor", "filter"], out)
    return 0


def cmd_variance(a, out) -> int:
    model, obs = _model_and_obs(a)
    ef = hmm_mod.exact_filter(model, obs)
    phi = harness.parse_phi(a.phi, model.n_states)
    flavors = variance.FLAVORS if a.flavor == "all" else (a.flavor,)
    rows = []
    for fl in flavors:
        ser = variance.series(ef, model, phi, a.T, fl, None if fl == "bpf" else a.r)
        rows += [[n, fl, repr(float(ser.pred[n])), repr(float(ser.filt[n]))]
                 for n in range(len(ser.pred))]
    _csv(rows, ["n", "flavor", "sigma_pred", "sigma_filt"], out)
    return 0


def cmd_filter(a, out) -> int:
    model, obs = _model_and_obs(a)
    s = _schedule(a)
    horizon = len(obs) - 1 if a.T is None else a.T
    names = a.phi or ["indicator:1"]
    phis = np.array([harness.parse_phi(p, model.n_states) for p in names])
    run = run_filter(model, obs, s, horizon, phis, a.seed, a.replicate,
                     keep_particles=bool(a.keep_particles))
    ef = hmm_mod.exact_filter(model, obs)
    rows = []
    for n in range(horizon + 1):
        for f, name in enumerate(names):
            rows.append([n, name, repr(float(run.pred[n, f])), repr(float(run.filt[n, f])),
                         repr(ef.pred_value(phis[f], n)), repr(ef.filt_value(phis[f], n))])
    _csv(rows, ["n", "functional", "pred", "filt", "exact_pred", "exact_filt"], out)
    if a.keep_particles:
        np.save(a.keep_particles, run.particles)
    return 0


# experiments ----------------------------------------------------------------

def _config(a):
    cfg = harness.load_config(a.config)
    changes = {}
    if a.workers is not None:
        changes["workers"] = a.workers
    if a.force:
        changes["force"] = True
    return replace(cfg, **changes)


def cmd_clt(a, out) -> int:
    res = harness.run_clt_experiment(_config(a))
    info = harness.emit_results(res, a.csv, a.json)
    if not a.csv:
        out.write(harness.clt_csv_text(res))
    else:
        _dump(info, out)
    return 0 if res.passed else 1


def cmd_lln(a, out) -> int:
    rep = harness.run_lln_experiment(_config(a))
    text = rep.csv_text()
    if a.csv:
        Path(a.csv).write_text(text)
    else:
        out.write(text)
    _dump({"slopes": rep.slopes.tolist(), "passed": rep.passed}, sys.stderr)
    return 0 if rep.passed else 1


def cmd_moments(a, out) -> int:
    rep = harness.run_moment_decay(_config(a), a.d, a.p)
    text = rep.csv_text()
    if a.csv:
        Path(a.csv).write_text(text)
    else:
        out.write(text)
    _dump({"tau": rep.tau.tolist(), "pvalue": rep.pvalue.tolist(), "passed": rep.passed},
          sys.stderr)
    return 0 if rep.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="butterfly",
                                     description="Butterfly resampling for particle filters.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="check the structural properties of a schedule")
    _schedule_args(p)
    p.add_argument("--exact", action="store_true", help="check path uniqueness at any size")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("row", help="non-zero entries of one stage row")
    _schedule_args(p)
    p.add_argument("--stage", type=int, required=True)
    p.add_argument("--index", type=int, required=True, help="1-based row index")
    p.add_argument("--exact", action="store_true", help="print weights as fractions")
    p.set_defaults(fn=cmd_row)

    p = sub.add_parser("sets", help="parent, ancestor, collision and tail sets of an index")
    _schedule_args(p)
    p.add_argument("--index", type=int, required=True, help="1-based particle index")
    p.set_defaults(fn=cmd_sets)

    p = sub.add_parser("stats", help="edge counts of the schedule graph")
    _schedule_args(p)
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("partition", help="blocks with identical tail-product rows")
    _schedule_args(p)
    p.add_argument("--d", type=int, required=True)
    p.set_defaults(fn=cmd_partition)

    for name, fn, text in (("bias", cmd_bias, "mean output functional against the weighted mean"),
                           ("resample-once", cmd_resample_once, "one resampling with its trace")):
        p = sub.add_parser(name, help=text)
        _schedule_args(p)
        p.add_argument("--weights", help="comma separated input weights (default 1..N)")
        p.add_argument("--seed", type=int, default=0)
        if name == "bias":
            p.add_argument("--phi", default="identity")
            p.add_argument("--replicates", type=int, default=10_000)
            p.add_argument("--exact", action="store_true", help="enumerate instead of sampling")
        else:
            p.add_argument("--replicate", type=int, default=0)
        p.set_defaults(fn=fn)

    for name, fn, text in (("exact-filter", cmd_exact_filter, "exact predictors and filters"),
                           ("variance", cmd_variance, "asymptotic variance recursions"),
                           ("filter", cmd_filter, "one particle filter run")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--model", required=True, help="model file (TOML or JSON)")
        p.add_argument("--obs", required=True, help="observation file (JSON)")
        if name == "variance":
            p.add_argument("--phi", default="indicator:1")
            p.add_argument("--r", type=int, default=2)
            p.add_argument("--T", type=int)
            p.add_argument("--flavor", default="all", choices=("all",) + variance.FLAVORS)
        if name == "filter":
            _schedule_args(p)
            p.add_argument("--T", type=int)
            p.add_argument("--phi", action="append")
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--replicate", type=int, default=0)
            p.add_argument("--keep-particles", metavar="NPY", help="save particles to this file")
        p.set_defaults(fn=fn)

    for name, fn in (("clt", cmd_clt), ("lln", cmd_lln), ("moments", cmd_moments)):
        p = sub.add_parser(name, help=f"{name} experiment from a config file")
        p.add_argument("--config", required=True)
        p.add_argument("--csv")
        p.add_argument("--workers", type=int)
        p.add_argument("--force", action="store_true", help="ignore the work budget")
        if name == "clt":
            p.add_argument("--json")
        if name == "moments":
            p.add_argument("--d", type=int, default=2)
            p.add_argument("--p", type=float, default=2.0)
        p.set_defaults(fn=fn)
    return parser


def main(argv=None, out=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args, out or sys.stdout)
    except (ButterflyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
