"""Command-line front end: ``rbs <subcommand> ...``.

Exit status is 0 on success, 1 on domain errors (reported as one JSON line on
stderr) and 2 on usage errors.  Every output file is written atomically.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from pathlib import Path

log = logging.getLogger("rbs")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class DomainError(Exception):
    """Reported as JSON on stderr with exit status 1."""

    def __init__(self, message: str, /, **extra):
        super().__init__(message)
        self.extra = extra


# -- helpers ----------------------------------------------------------------

def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _existing(path: str | None, what: str = "file") -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if not p.is_file():
        raise DomainError(f"{what} not found: {p}", path=str(p))
    return p


def _emit(text: str, out: str | None) -> None:
    from .io import atomic_write
    if out:
        atomic_write(out, text)
        log.info("wrote %s", out)
    else:
        sys.stdout.write(text)


def _mask(args, n_cells: int):
    from .topology import load_design
    masks = str(_existing(args.masks, "mask file")) if args.masks else None
    return load_design(args.design, n_cells, masks)


def _space(args, n_cells: int, v_range=None):
    from .space import build_space
    msm = None if args.all_series_modules else args.max_series_modules
    mask = _mask(args, n_cells) if args.design != "a" or args.masks else None
    return build_space(n_cells, v_range, mask=mask, design=args.design, max_series_modules=msm)


def _add_space_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--design", default="a", help="design name from the mask file (default: a)")
    p.add_argument("--masks", help="alternative design mask JSON file")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--max-series-modules", type=_positive_int, default=2,
                   help="cap on parallel strings in series-then-parallel configurations (default 2)")
    g.add_argument("--all-series-modules", action="store_true",
                   help="admit any number of parallel strings")


def _describe(space, ssv) -> str:
    desc = space.origins.get(tuple(ssv)) if space is not None else None
    return str(desc) if desc is not None else "".join(map(str, ssv))


# -- subcommands ------------------------------------------------------------

def cmd_enumerate(args) -> int:
    from .io import dump_json
    n = args.cells
    hi = args.v_max or n
    space = _space(args, n, (args.v_min, hi))
    _emit(dump_json(space.to_json()), args.out)
    return 0


def cmd_count(args) -> int:
    from .space import count
    rows = []
    for n in args.cells:
        msm = None if args.all_series_modules else args.max_series_modules
        kw = {"max_series_modules": msm, "design": args.design}
        if args.design != "a" or args.masks:
            kw["mask"] = _mask(args, n)
        rows.append((n, count(n, args.v, **kw)))
    vs = sorted({v for _, r in rows for v in r["counts"]})
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n_cells", *[f"v{v}" for v in vs], "total", "ratio"])
        for n, r in rows:
            w.writerow([n, *[r["counts"].get(v, "") for v in vs], r["total"], f"{r['ratio']:.3e}"])
        text = buf.getvalue()
    else:
        head = ["N_B"] + [f"v={v}" for v in vs] + ["total", "ratio"]
        body = [[str(n)] + [str(r["counts"].get(v, "-")) for v in vs]
                + [str(r["total"]), f"{r['ratio']:.3e}"] for n, r in rows]
        widths = [max(len(row[i]) for row in [head, *body]) for i in range(len(head))]
        text = "".join("  ".join(c.rjust(w) for c, w in zip(row, widths)) + "\n"
                       for row in [head, *body])
    _emit(text, args.out)
    return 0


def _write_trace(trace, out: str | None, summary: str | None, extra: dict) -> int:
    from .io import dump_json
    _emit(trace.to_csv(), out)
    info = {"schema": 1, "samples": len(trace), "ok": trace.ok, "error": trace.error,
            "final_soc": None if trace.final_soc is None else [float(z) for z in trace.final_soc],
            **extra}
    if summary:
        _emit(dump_json(info), summary)
    if not trace.ok:
        detail = dict(trace.error)
        raise DomainError(f"simulation aborted: {detail.pop('message')}", **detail)
    return 0


def cmd_simulate(args) -> int:
    from .io import load_scenario
    from .simulator import run
    path = _existing(args.config, "scenario file")
    sc = load_scenario(path)
    if args.method:
        sc.method = args.method
    return _write_trace(run(sc, refine=args.refine), args.out, args.summary, {"config": str(path)})


def cmd_replay(args) -> int:
    from .io import replay_scenario
    from .simulator import run
    cell = str(_existing(args.cell, "cell file").resolve()) if args.cell else None
    sc = replay_scenario(cell, args.dt)
    trace = run(sc, refine=args.refine)
    return _write_trace(trace, args.out, args.summary, {"cell": cell or "fixture:icr18650"})


def cmd_validate(args) -> int:
    from .space import enumerate_cps, enumerate_csp, naive_cps
    from .topology import ssv_from_config
    n = args.cells
    vs = [args.v] if args.v else range(1, n + 1)
    msm = None if args.all_series_modules else args.max_series_modules
    space = _space(args, n)
    mismatches = []
    dp = enumerate_cps(n, vs)
    for v in vs:
        oracle = {ssv_from_config(d, n) for d in naive_cps(n, v)}
        oracle |= {ssv_from_config(d, n) for d in enumerate_csp(n, v, msm)}
        got = set(space.buckets.get(v, ()))
        dp_desc = {(tuple(d.flags), d.mid_starts) for d in dp[v]}
        naive_desc = {(tuple(d.flags), d.mid_starts) for d in naive_cps(n, v)}
        ok = got == oracle and dp_desc == naive_desc
        print(f"v={v}: dp={len(got)} oracle={len(oracle)} {'ok' if ok else 'MISMATCH'}")
        if not ok:
            mismatches.append(v)
    if mismatches:
        raise DomainError("DP and naive enumeration disagree", n_cells=n, voltages=mismatches)
    return 0


def cmd_optimize(args) -> int:
    import numpy as np
    from dataclasses import replace
    from .io import atomic_write, dump_json, load_problem
    from .optimizer import Evaluator, ga_run, soc_imbalance
    from .simulator import LoadProfile, LoadSegment, ReconfigSchedule, Scenario, run
    path = _existing(args.problem, "problem file")
    problem, params, space = load_problem(path, complete=args.complete_space)
    over = {k: v for k, v in (("pop_size", args.pop), ("generations", args.gens),
                              ("seed", args.seed)) if v is not None}
    params = replace(params, **over)
    t0 = time.perf_counter()
    ev = Evaluator(problem)
    res = ga_run(problem, params, ev)
    elapsed = time.perf_counter() - t0
    seq = [problem.decode(g) for g in res.best]
    best = res.best_eval
    z0 = problem.initial_soc
    result = {
        "schema": 1,
        "problem": str(path),
        "search_space": "complete" if space is None else "feasible",
        "n_options": problem.n_options,
        "ga": {"pop_size": params.pop_size, "generations": params.generations,
               "p_crossover": params.p_crossover, "p_mutation": params.p_mutation,
               "seed": params.seed, "elitism": params.elitism},
        "best_chromosome": [int(g) for g in res.best],
        "best_ssv_sequence": [list(s) for s in seq],
        "per_step_configs": [
            {"step": k, "gene": int(g), "native": list(problem.mask.compress(s)),
             "v_norm": space.voltage_of(s) if space is not None else None,
             "config": _describe(space, s)}
            for k, (g, s) in enumerate(zip(res.best, seq))
        ],
        "fitness_history": [None if not np.isfinite(f) else f for f in res.history],
        "best_fitness": None if not np.isfinite(res.best_fitness) else res.best_fitness,
        "initial_imbalance": soc_imbalance(z0),
        "final_imbalance": None if best.aborted else best.imbalance,
        "violation": None if best.aborted else best.violation,
        "final_socs": None if best.final_soc is None else [float(z) for z in best.final_soc],
        "aborted": best.aborted,
        "evaluations": res.evaluations,
    }
    if args.timing:
        result["elapsed_s"] = round(elapsed, 3)
    _emit(dump_json(result), args.out)
    if args.trace_dir and best.final_soc is not None:
        # re-simulate the winner once and split the trace per decision step
        load = LoadProfile((LoadSegment(*problem.load),))
        sched = ReconfigSchedule(tuple((problem.step_duration, s) for s in seq))
        sc = Scenario(problem.models, sched, load, z0, problem.dt, problem.method,
                      problem.switches, problem.mask)
        lines = run(sc, refine=problem.refine).to_csv().splitlines(keepends=True)
        per = problem.samples_per_step
        for k in range(len(seq)):
            chunk = lines[1 + k * per: 1 + (k + 1) * per]
            if chunk:
                atomic_write(Path(args.trace_dir) / f"step_{k:02d}.csv", lines[0] + "".join(chunk))
    return 0


def cmd_dump_model(args) -> int:
    import numpy as np
    from .io import atomic_write, dump_json, load_cell_ref
    from .network import assemble
    from .topology import CELL_SSV_DESCRIPTIONS, CELL_SSV_TABLE, DIRECT_CELL_SSV, as_ssv
    if args.pattern_table:
        table = {"schema": 1,
                 "rows": [{"row": k, "bits": list(b), "meaning": CELL_SSV_DESCRIPTIONS[k]}
                          for k, b in CELL_SSV_TABLE.items()],
                 "direct_cell": list(DIRECT_CELL_SSV)}
        _emit(dump_json(table), args.out)
        return 0
    if not args.ssv:
        raise DomainError("dump-model needs --ssv (or --pattern-table)")
    if args.cell:
        _existing(args.cell, "cell file")
    model = load_cell_ref(args.cell or "fixture:icr18650")
    bits = [int(c) for c in args.ssv if c in "01"]
    if len(bits) != len(args.ssv.replace(",", "").replace(" ", "")):
        raise DomainError("SSV must be a string of 0/1 digits")
    n = (len(bits) + 3) // 5
    ssv = as_ssv(bits, n)
    socs = args.soc or [0.5] * n
    if len(socs) == 1:
        socs = socs * n
    if len(socs) != n:
        raise DomainError(f"need 1 or {n} SoC values, got {len(socs)}")
    ss = assemble([model.params_at(z) for z in socs], ssv, refine=args.refine)
    mats = {"A": ss.A, "B": ss.B, "C_IB": ss.C_IB, "D_IB": ss.D_IB, "C_VB": ss.C_VB,
            "D_VB": ss.D_VB, "C_vt": ss.C_vt, "D_vt": np.atleast_1d(ss.D_vt)}
    for m, c in ss.C_S.items():
        mats[f"C_S{m}"], mats[f"D_S{m}"] = c, ss.D_S[m]
    out = Path(args.out_dir)
    for name, arr in sorted(mats.items()):
        buf = io.StringIO()
        np.savetxt(buf, np.atleast_2d(arr), delimiter=",", fmt="%.17g")
        atomic_write(out / f"{name}.csv", buf.getvalue())
    atomic_write(out / "meta.json", dump_json({"schema": 1, "n_cells": n, "ssv": list(ssv),
                                               "soc": list(socs), "matrices": sorted(mats)}))
    print(f"wrote {len(mats)} matrices to {out}")
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rbs", description=__doc__.splitlines()[0])
    ap.add_argument("--threads", type=_positive_int, help="cap on worker/BLAS threads")
    sub = ap.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    p = sub.add_parser("enumerate", help="write the feasible configuration space as JSON")
    p.add_argument("--cells", type=_positive_int, required=True)
    p.add_argument("--v-min", type=_positive_int, default=1)
    p.add_argument("--v-max", type=_positive_int)
    p.add_argument("-o", "--out", help="output JSON (stdout if omitted)")
    _add_space_flags(p)
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("count", help="print feasible-space sizes per normalised voltage")
    p.add_argument("--cells", type=_positive_int, nargs="+", required=True)
    p.add_argument("--v", type=_positive_int, help="restrict to one normalised voltage")
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.add_argument("-o", "--out")
    _add_space_flags(p)
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("simulate", help="simulate a scenario file, write a CSV trace")
    p.add_argument("--config", required=True, help="scenario JSON")
    p.add_argument("--method", choices=("euler", "zoh"))
    p.add_argument("--refine", type=int, default=2, help="refinement sweeps per solve")
    p.add_argument("-o", "--out", help="trace CSV (stdout if omitted)")
    p.add_argument("--summary", help="summary JSON")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replay", help="replay the bundled twelve-configuration 3-cell scenario")
    p.add_argument("--cell", help="cell fixture JSON (default: bundled ICR18650)")
    p.add_argument("--dt", type=float, help="sampling interval override [s]")
    p.add_argument("--refine", type=int, default=2)
    p.add_argument("-o", "--out")
    p.add_argument("--summary")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("validate", help="check DP enumeration against the naive generator")
    p.add_argument("--cells", type=_positive_int, required=True)
    p.add_argument("--v", type=_positive_int)
    _add_space_flags(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("optimize", help="run the GA balancing study on a problem file")
    p.add_argument("--problem", required=True)
    p.add_argument("--complete-space", action="store_true",
                   help="sample genes from every switch pattern instead of the feasible space")
    p.add_argument("--pop", type=_positive_int)
    p.add_argument("--gens", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--timing", action="store_true", help="record wall time in the result")
    p.add_argument("-o", "--out")
    p.add_argument("--trace-dir", help="directory for per-step trace CSVs")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("dump-model", help="write realization matrices as CSV, or the cell table")
    p.add_argument("--ssv", help="switch state vector as 0/1 digits")
    p.add_argument("--soc", type=float, nargs="+")
    p.add_argument("--cell")
    p.add_argument("--refine", type=int, default=2)
    p.add_argument("--out-dir", default="model_dump")
    p.add_argument("--pattern-table", action="store_true",
                   help="print the per-cell switch pattern table")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_dump_model)
    return ap


def _error_line(exc: BaseException, extra: dict | None = None) -> str:
    body = {"schema": 1, "error": type(exc).__name__, "message": str(exc)}
    path = getattr(exc, "filename", None) or getattr(exc, "path", None)
    if path:
        body["path"] = str(path)
    body.update(extra or {})
    return json.dumps(body, default=str)


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.threads:
        for var in THREAD_VARS:
            os.environ[var] = str(args.threads)
    level = os.environ.get("RBS_LOG", "error").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.ERROR), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DomainError as e:
        print(_error_line(e, e.extra), file=sys.stderr)
    except FileNotFoundError as e:
        msg = str(e)
        path = e.filename or msg.split(": ", 1)[-1]
        print(json.dumps({"schema": 1, "error": "FileNotFoundError", "message": msg,
                          "path": str(path)}), file=sys.stderr)
    except (ValueError, KeyError, ArithmeticError, OSError) as e:
        print(_error_line(e), file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
