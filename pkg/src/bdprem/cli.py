"""Command-line interface.

Subcommands: fit, simulate, bd-pmf, summarize, mrse, predict.  Exit codes:
0 on success, 2 on validation errors (bad flags, malformed files), 1 on
runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import bd_process as bd
from .config import align_prior, build_scenario_design, load_fit_config, load_scenario
from .data import ValidationError, load_dataset
from .mcmc import SamplerConfig, Trace, run_chain
from .prem import ModelSpec
from .reports import mrse_decomposition, predict_group_trajectory, summarize_trace


def _cmd_bd_pmf(args):
    params = bd.BdParams(args.z, getattr(args, "lambda"))
    ys = np.arange(args.max_y + 1)
    probs = np.exp(bd.log_pmf_arrays(ys, params.z, params.lam))
    out = sys.stdout
    out.write("y,probability\n")
    for y, p in zip(ys, probs):
        out.write(f"{y},{float(p)!r}\n")
    return 0


def _cmd_fit(args):
    run = load_fit_config(args.config)
    data_path = args.data or run.data_path
    if data_path is None:
        raise ValidationError("no dataset: pass --data or set [data] path")
    dataset = load_dataset(data_path, run.schema)
    sampler = run.sampler
    if args.iterations is not None:
        sampler.iterations = args.iterations
    if args.burn_in is not None:
        sampler.burn_in = args.burn_in
    if args.thin is not None:
        sampler.thin = args.thin
    if args.seed is not None:
        sampler.seed = args.seed
    if args.z_rows:
        sampler.z_trace_rows = tuple(int(v) for v in args.z_rows.split(","))
    model = ModelSpec(
        p=dataset.p, r=1, q=dataset.q,
        fixed_idx=dataset.fixed_idx,
        use_rate_random_effect=run.rate_random_effect,
        family=args.family,
    )
    trace = run_chain(model, dataset, run.prior, sampler)
    trace.save(args.out)
    print(f"wrote trace ({trace.n_samples} samples) to {args.out}")
    return 0


def _cmd_simulate(args):
    truth, design_kwargs, design_seed, fits = load_scenario(args.scenario)
    if args.replicates is not None:
        truth.replicates = args.replicates
    for fc in fits:
        if args.iterations is not None:
            fc.iterations = args.iterations
        if args.burn_in is not None:
            fc.burn_in = args.burn_in
    design = build_scenario_design(truth, design_kwargs, design_seed)
    from .simulation import replicate_study

    for fc in fits:
        fc.prior = align_prior(fc.prior, design.schema.x_names, design.schema.w)
    report = replicate_study(
        truth, design, fits, seed=args.seed, out_dir=args.out,
        progress=lambda r: print(f"replicate {r} done", flush=True),
    )
    print(f"wrote {os.path.join(args.out, 'study_report.csv')} "
          f"({len(report.rows)} rows)")
    return 0


def _cmd_summarize(args):
    trace = Trace.load(args.trace_dir)
    header, rows = summarize_trace(trace, level=args.level)
    out = sys.stdout
    out.write(",".join(header) + "\n")
    for row in rows:
        out.write(",".join(row) + "\n")
    return 0


def _cmd_mrse(args):
    trace = Trace.load(args.trace_dir)
    run = load_fit_config(args.config) if args.config else None
    if run is not None:
        schema = run.schema
    else:
        raise ValidationError("mrse needs --config to interpret the dataset")
    dataset = load_dataset(args.data, schema)
    if dataset.N != trace.mu_bar.size:
        raise ValidationError("dataset does not match the trace dimensions")
    breaks = [float(b) for b in args.breaks.split(",")] if args.breaks else (0.05, 1.0)
    rows = mrse_decomposition(dataset.y, trace.z_bar, trace.mu_bar,
                              trace.lambda_bar, breaks=breaks)
    out = sys.stdout
    cols = ["bin", "m", "mrse", "measurement", "sampling", "cross",
            "measurement_share", "sampling_share", "cross_share"]
    out.write(",".join(cols) + "\n")
    for r in rows:
        cells = [str(r["bin"]), str(r["m"])]
        cells += ["" if r[c] is None else repr(float(r[c])) for c in cols[2:]]
        out.write(",".join(cells) + "\n")
    return 0


def _cmd_predict(args):
    trace = Trace.load(args.trace_dir)
    with open(args.profile, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if header[:2] != ["group", "time"]:
            raise ValidationError("profile must start with group,time columns")
        cov_names = header[2:]
        if sorted(cov_names) != sorted(trace.alpha_names):
            raise ValidationError(
                f"profile covariates {cov_names} do not match trace "
                f"coefficients {trace.alpha_names}"
            )
        pos = [cov_names.index(c) for c in trace.alpha_names]
        profile = []
        for row in reader:
            if not row:
                continue
            x = np.array([float(v) for v in row[2:]])[pos]
            profile.append((row[0], float(row[1]), x))
    rows = predict_group_trajectory(trace, profile, level=args.level)
    out = sys.stdout
    out.write("group,month,mean,lo,hi\n")
    for r in rows:
        out.write(f"{r['group']},{r['time']!r},{r['mean']!r},{r['lo']!r},{r['hi']!r}\n")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bdprem",
        description="Reporting-error count models: fitting, simulation, reports",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bd-pmf", help="reporting-distribution pmf as CSV")
    p.add_argument("--z", type=int, required=True)
    p.add_argument("--lambda", type=float, required=True)
    p.add_argument("--max-y", type=int, required=True)
    p.set_defaults(func=_cmd_bd_pmf)

    p = sub.add_parser("fit", help="fit a model to a dataset")
    p.add_argument("--data")
    p.add_argument("--config", required=True)
    p.add_argument("--iterations", type=int)
    p.add_argument("--burn-in", type=int, dest="burn_in")
    p.add_argument("--thin", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--family", choices=["bdprem", "prem"], default="bdprem")
    p.add_argument("--z-rows", dest="z_rows",
                   help="comma-separated observation rows to keep full latent traces for")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("simulate", help="run a simulation study")
    p.add_argument("--scenario", required=True)
    p.add_argument("--replicates", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--burn-in", type=int, dest="burn_in")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("summarize", help="posterior summary table")
    p.add_argument("--trace-dir", required=True, dest="trace_dir")
    p.add_argument("--level", type=float, default=0.95)
    p.set_defaults(func=_cmd_summarize)

    p = sub.add_parser("mrse", help="residual decomposition by rate bins")
    p.add_argument("--trace-dir", required=True, dest="trace_dir")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--breaks")
    p.set_defaults(func=_cmd_mrse)

    p = sub.add_parser("predict", help="group trajectory prediction bands")
    p.add_argument("--trace-dir", required=True, dest="trace_dir")
    p.add_argument("--profile", required=True)
    p.add_argument("--level", type=float, default=0.95)
    p.set_defaults(func=_cmd_predict)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
