"""Command-line entry points.

Subcommands:
  gen         build a seeded instance and write it to a text file
  solve       run one solver on an instance file, write the trace CSV
  certify     compute and write the local certificate at a reference point
  experiment  run a named experiment or a config file
  summarize   pair empirical factors with certified rates for saved traces

Exit status is nonzero only for configuration or I/O errors; numerical
outcomes (including failed sub-runs, which are recorded in the artifacts)
exit zero.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .experiments import EXPERIMENTS
from .harness import (certify_instance, parse_experiment_config,
                      reference_solution, resolve_gamma, summarize_rates,
                      write_summary_csv)
from .problems import (INSTANCE_KINDS, InstanceSpec, generate_instance,
                       load_instance, save_instance)
from .solvers import SolverConfig, run


def _add_gen(sub):
    p = sub.add_parser("gen", help="generate a seeded instance file")
    p.add_argument("--kind", required=True, choices=INSTANCE_KINDS)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mu", type=float, default=None)
    p.add_argument("--sparsity", type=int, default=8)
    p.add_argument("--saturated", type=int, default=0)
    p.add_argument("--block-size", type=int, default=4)
    p.add_argument("--active-blocks", type=int, default=8)
    p.add_argument("--rank", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--scale", default="mean", choices=("mean", "sum"))
    p.add_argument("--out", required=True)


def _cmd_gen(args):
    spec = InstanceSpec(kind=args.kind, m=args.m, n=args.n, seed=args.seed,
                        mu=args.mu, sparsity=args.sparsity,
                        saturated=args.saturated, block_size=args.block_size,
                        active_blocks=args.active_blocks, rank=args.rank,
                        noise=args.noise, scale=args.scale)
    problem, reg, x_true = generate_instance(spec)
    save_instance(args.out, problem, reg, x_true)
    print(f"wrote {args.out} (kind={args.kind}, m={problem.m}, n={problem.n}, "
          f"mu={reg.mu:g})")


def _add_solve(sub):
    p = sub.add_parser("solve", help="run one solver on an instance file")
    p.add_argument("instance")
    p.add_argument("--method", required=True,
                   choices=("fbs", "prox-sgd", "saga", "prox-svrg"))
    p.add_argument("--gamma", default="1/(3L)",
                   help="float or an expression like 1/(3L), 1/(4L(P+2))")
    p.add_argument("--iters", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--svrg-option", default="I", choices=("I", "II"))
    p.add_argument("--svrg-inner", type=int, default=None)
    p.add_argument("--sgd-decay", type=float, default=0.6)
    p.add_argument("--stop-tol", type=float, default=None)
    p.add_argument("--stride", type=int, default=None,
                   help="CSV subsample stride (default: m)")
    p.add_argument("--ref", default="none",
                   choices=("none", "auto", "closed-form"),
                   help="reference for the distance column")
    p.add_argument("--out", required=True)


def _cmd_solve(args):
    problem, reg, _ = load_instance(args.instance)
    _, L, _ = problem.lipschitz_constants()
    P = args.svrg_inner or problem.m
    gamma = resolve_gamma(args.gamma, L, P)
    cfg = SolverConfig(method=args.method, gamma=gamma, max_iters=args.iters,
                       seed=args.seed, svrg_option=args.svrg_option,
                       svrg_inner=args.svrg_inner, sgd_decay=args.sgd_decay,
                       stop_tol=args.stop_tol)
    x_ref = None
    if args.ref == "auto":
        x_ref = reference_solution(problem, reg)
    elif args.ref == "closed-form":
        x_ref = reference_solution(problem, reg, policy="closed-form")
    trace = run(problem, reg, cfg, np.zeros(problem.n), x_ref=x_ref)
    stride = args.stride or problem.m
    trace.to_csv(args.out, stride=stride,
                 meta={"method": args.method, "gamma": repr(gamma),
                       "seed": args.seed, "m": problem.m})
    print(f"wrote {args.out} ({trace.n_iters} iterations, "
          f"stop={trace.stop_reason}, support={trace.support_size[-1]})")


def _add_certify(sub):
    p = sub.add_parser("certify", help="write the local certificate")
    p.add_argument("instance")
    p.add_argument("--gamma", default="1/(3L)")
    p.add_argument("--svrg-P", type=int, default=None)
    p.add_argument("--ref", default="auto", choices=("auto", "closed-form"))
    p.add_argument("--ref-tol", type=float, default=1e-13)
    p.add_argument("--global-moduli", action="store_true",
                   help="use global strong-convexity moduli in the inner-loop "
                        "rate instead of the restricted curvature")
    p.add_argument("--out", required=True)


def _cmd_certify(args):
    problem, reg, _ = load_instance(args.instance)
    policy = "closed-form" if args.ref == "closed-form" else "high-accuracy-fbs"
    xref = reference_solution(problem, reg, policy=policy, tol=args.ref_tol)
    cert = certify_instance(problem, reg, xref, gamma_expr=args.gamma,
                            P=args.svrg_P,
                            local_regime=not args.global_moduli)
    cert.write_report(args.out)
    print(f"wrote {args.out} (nd_gap={cert.nd.gap:.3e}, "
          f"alpha={cert.alpha:.3e}, rho_mfb={cert.rho_mfb:.9f})")


def _add_experiment(sub):
    p = sub.add_parser("experiment", help="run a named experiment or config")
    p.add_argument("name", help=f"one of {', '.join(EXPERIMENTS)} "
                                "or a config file path")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--plots", action="store_true")


def _cmd_experiment(args):
    if args.name in EXPERIMENTS:
        out = args.out or os.path.join("out", args.name)
        kwargs = {}
        if args.seed is not None:
            kwargs["seed"] = args.seed
        if args.stride is not None:
            kwargs["stride"] = args.stride
        result = EXPERIMENTS[args.name](out, plots=args.plots, **kwargs)
    elif os.path.exists(args.name):
        result = _run_config_experiment(args)
    else:
        raise ValueError(f"unknown experiment {args.name!r}; "
                         f"choices: {', '.join(EXPERIMENTS)}")
    printable = {k: v for k, v in result.items()
                 if isinstance(v, (str, int, float, bool, list, dict))}
    print(json.dumps(printable, indent=2, default=str))


def _run_config_experiment(args):
    cfg = parse_experiment_config(args.name)
    out = args.out or cfg.out_dir
    os.makedirs(out, exist_ok=True)
    problem, reg, _ = cfg.load()
    _, L, _ = problem.lipschitz_constants()
    xref = reference_solution(problem, reg, policy=cfg.reference_policy,
                              tol=cfg.reference_tol)
    cert = certify_instance(problem, reg, xref, gamma_expr=cfg.analysis_gamma,
                            P=cfg.svrg_P, local_regime=cfg.local_regime)
    cert.write_report(os.path.join(out, "certificate.txt"))
    runs = []
    files = {}
    errors = {}
    for sec in cfg.solvers:
        P = sec.svrg_inner or problem.m
        gamma = resolve_gamma(sec.gamma_expr, L, P)
        for sd in sec.seeds:
            scfg = SolverConfig(method=sec.method, gamma=gamma,
                                max_iters=sec.max_iters, seed=sd,
                                svrg_option=sec.svrg_option,
                                svrg_inner=sec.svrg_inner,
                                sgd_decay=sec.sgd_decay,
                                stop_tol=sec.stop_tol)
            name = f"{sec.name}-seed{sd}"
            try:
                x0 = cfg.x0_scale * np.ones(problem.n)
                trace = run(problem, reg, scfg, x0, x_ref=xref)
                path = os.path.join(out, f"{name}.csv")
                trace.to_csv(path, stride=cfg.stride,
                             meta={"method": sec.method, "gamma": repr(gamma),
                                   "seed": sd, "m": problem.m})
                files[name] = path
                runs.append((name, trace))
            except Exception as exc:
                errors[name] = repr(exc)
    rows = summarize_rates(problem, cert, runs)
    write_summary_csv(os.path.join(out, "summary.csv"), rows)
    result = {"certificate": os.path.join(out, "certificate.txt"),
              "summary": os.path.join(out, "summary.csv"),
              "traces": files, "errors": errors}
    if cfg.plots or args.plots:
        from .plotting import plot_distance_csv, plot_support_csv
        result["support_png"] = plot_support_csv(
            list(files.values()), os.path.join(out, "support.png"))
        result["distance_png"] = plot_distance_csv(
            list(files.values()), os.path.join(out, "distance.png"),
            rates={"rho_mfb": cert.rho_mfb})
    return result


def _add_summarize(sub):
    p = sub.add_parser("summarize",
                       help="summary table for an experiment directory")
    p.add_argument("directory")
    p.add_argument("--out", default=None)


def _cmd_summarize(args):
    import csv as _csv

    from .plotting import read_trace_csv
    cert_path = os.path.join(args.directory, "certificate.txt")
    if not os.path.exists(cert_path):
        raise FileNotFoundError(f"no certificate.txt in {args.directory}")
    cert = {}
    with open(cert_path) as f:
        for line in f:
            if line.startswith("#"):
                continue
            key, _, val = line.strip().partition(" ")
            cert[key] = val
    alpha = float(cert.get("alpha", "nan"))
    rows = []
    for fname in sorted(os.listdir(args.directory)):
        if not fname.endswith(".csv") or fname in ("summary.csv",):
            continue
        data = read_trace_csv(os.path.join(args.directory, fname))
        if "dist_to_ref" not in data:
            continue
        dist = np.asarray(data["dist_to_ref"])
        ks = np.asarray(data["k"])
        sup = np.asarray(data["support_size"])
        changes = np.flatnonzero(np.diff(sup) != 0)
        k_id = ks[changes[-1] + 1] if changes.size else ks[0]
        window = (ks >= k_id + 0.5 * (ks[-1] - k_id)) & (dist > 1e-13)
        if window.sum() < 3:
            continue
        slope = np.polyfit(ks[window], np.log(dist[window]), 1)[0]
        gamma = float(data["meta"].get("gamma", "nan"))
        rho = 1.0 - gamma * alpha if np.isfinite(alpha) else float("nan")
        rows.append({"trace": fname, "identified_at": int(k_id),
                     "empirical_factor": float(np.exp(slope)),
                     "rho_mfb": rho})
    out = args.out or os.path.join(args.directory, "summary-files.csv")
    with open(out, "w", newline="") as f:
        w = _csv.DictWriter(f, fieldnames=["trace", "identified_at",
                                           "empirical_factor", "rho_mfb"])
        w.writeheader()
        w.writerows(rows)
    print(f"wrote {out} ({len(rows)} traces)")


def build_parser():
    ap = argparse.ArgumentParser(prog="proxvr",
                                 description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    _add_gen(sub)
    _add_solve(sub)
    _add_certify(sub)
    _add_experiment(sub)
    _add_summarize(sub)
    return ap


_COMMANDS = {
    "gen": _cmd_gen,
    "solve": _cmd_solve,
    "certify": _cmd_certify,
    "experiment": _cmd_experiment,
    "summarize": _cmd_summarize,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _COMMANDS[args.command](args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
