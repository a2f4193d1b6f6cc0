"""Command line entry point: ``htnet {analyze,simulate,bcp-eval,converge,examples}``."""
from __future__ import annotations

import argparse
import csv
import os
import sys
import warnings

import numpy as np

from . import __version__
from .bcp import InvalidJump, KernelNotStochastic, ZeroRule, evaluate_bcp_cost
from .examples import UnknownExample, example_names, load_example
from .harness import ConfigInvalid, ExperimentConfig, default_d1, run_convergence
from .model import NegativeRate, materialize
from .planning import WorkloadInconsistent, WorkloadUnavailable, analyze, check_assumptions, find_positive_direction
from .policy import ParamsInvalid, TrackingParams, make_policy
from .sim import cost, run, scale_views
from .specfile import PolicyConfig, SpecError, SpecFile, dump_spec, load_rule, load_spec, make_control

VALIDATION_ERRORS = (SpecError, ConfigInvalid, ParamsInvalid, UnknownExample, NegativeRate, InvalidJump,
                     KernelNotStochastic, WorkloadInconsistent, WorkloadUnavailable)


def _load(args) -> SpecFile:
    if args.spec:
        return load_spec(args.spec)
    if args.example:
        return SpecFile(load_example(args.example))
    raise ConfigInvalid("give --spec FILE or --example NAME")


def _matrix_lines(name, M) -> list:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return [f"{name} =", *("    " + " ".join(f"{v:.12g}" for v in row) for row in M)]


def plan_report(plan, assumptions) -> str:
    perm = [p + 1 for p in plan.perm]
    lines = [
        f"network: {plan.spec.name or '(unnamed)'}",
        f"buffers {plan.num_buffers}, activities {plan.num_activities}, servers {plan.spec.num_servers}",
        f"activity order (original labels, basic first): {perm}",
        f"rho* = {plan.rho_star:.12g}, unique = {plan.unique}, heavy traffic = {plan.heavy_traffic}",
        "",
        "assumptions:",
        *("  " + line for line in assumptions.lines()),
        "",
        "[matrices]",
    ]
    mats = [("x_star", plan.x_star), ("R", plan.R), ("K", plan.K_mat), ("D", plan.D), ("theta", plan.theta),
            ("Sigma", plan.Sigma), ("gamma_star", plan.gamma_star)]
    if plan.Lambda is not None:
        mats += [("Lambda", plan.Lambda), ("G", plan.G)]
    for name, M in mats:
        lines += _matrix_lines(name, M)
    return "\n".join(lines) + "\n"


def _write(out, name, text) -> None:
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, name), "w", encoding="utf-8") as fh:
            fh.write(text)


def cmd_analyze(args) -> int:
    sf = _load(args)
    plan = analyze(sf.model)
    text = plan_report(plan, check_assumptions(plan))
    sys.stdout.write(text)
    _write(args.out, "plan.txt", text)
    return 0


def _params(sf: SpecFile, plan, rule=None) -> TrackingParams:
    pol = sf.policy
    y_star, _ = find_positive_direction(plan)
    ctl = make_control(pol, y_star, rule)
    d1 = default_d1(plan) if pol.d1 is None else pol.d1
    return TrackingParams(kappa=pol.kappa, m=pol.m, d1=d1, rho=pol.rho, control=ctl)


def _rule(args, sf: SpecFile):
    path = getattr(args, "rule", None)
    if path:
        return load_rule(path)
    ref = sf.policy.rule
    if ref and ref != "zero" and args.spec:
        return load_rule(os.path.join(os.path.dirname(args.spec), ref))
    return "zero", ZeroRule()


def cmd_simulate(args) -> int:
    sf = _load(args)
    plan = analyze(sf.model)
    _, rule = _rule(args, sf)
    params = _params(sf, plan, rule)
    prim, qr = materialize(plan.scaling, args.r)
    pol = make_policy(plan, params, args.r, prim, q_hat=qr / args.r)
    tr = run(plan.spec, prim, qr, pol, args.horizon, args.seed, x_star=plan.x_star)
    grid = np.linspace(0.0, args.horizon, args.points + 1)
    views = scale_views(tr, grid, plan.Lambda, plan.K_mat)
    I, N = plan.num_buffers, plan.n_controls
    header = ["t"] + [f"Q{i + 1}" for i in range(I)] + [f"U{n + 1}" for n in range(N)]
    cols = [views["t"][:, None], views["Q_hat"], views["U_hat"]]
    if "W_hat" in views:
        header += [f"W{k + 1}" for k in range(views["W_hat"].shape[1])]
        cols.append(views["W_hat"])
    data = np.hstack(cols)
    h = np.ones(plan.num_buffers) if sf.cost.h is None else sf.cost.h
    c = cost(tr, sf.cost.gamma, h, sf.cost.p, plan.K_mat)
    path = os.path.join(args.out or ".", f"trace_r{args.r:g}_seed{args.seed}.csv")
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# htnet {__version__}\n# seed {args.seed}\n# r {args.r:g}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in data:
            w.writerow([repr(float(v)) for v in row])
    print(f"cost {c.value:.6f} (holding {c.holding:.6f}, control {c.control:.6f}, tail bound {c.tail_bound:.3g}); "
          f"events {sum(tr.events.values())}; trace {path}")
    return 0


def cmd_bcp_eval(args) -> int:
    sf = _load(args)
    plan = analyze(sf.model)
    name, rule = _rule(args, sf)
    params = _params(sf, plan, rule)
    p = np.zeros(plan.n_controls) if sf.cost.p is None else sf.cost.p
    h = np.ones(plan.num_buffers) if sf.cost.h is None else sf.cost.h
    gamma = args.gamma if args.gamma is not None else sf.cost.gamma
    q = plan.scaling.q
    est = evaluate_bcp_cost(plan, params.control, q, gamma, h, p, args.dt, args.horizon, args.reps, args.seed)
    path = os.path.join(args.out or ".", "bcp_eval.csv")
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# htnet {__version__}\n# seed {args.seed}\n# dt {args.dt!r} horizon {args.horizon!r}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rule", "q", "gamma", "mean", "se", "reps", "tail_bound"])
        w.writerow([name, " ".join(repr(float(v)) for v in q), repr(float(gamma)), repr(est.mean), repr(est.se),
                    est.reps, repr(est.tail_bound)])
    print(f"J = {est.mean:.6f} +- {est.se:.6f} ({est.reps} reps, tail bound {est.tail_bound:.3g}); {path}")
    return 0


def _floats(text) -> tuple:
    return tuple(float(t) for t in text.replace(",", " ").split())


def cmd_converge(args) -> int:
    pol = load_spec(args.spec).policy if args.spec else PolicyConfig()
    cfg = ExperimentConfig(
        spec_path=args.spec, example=args.example, r_list=_floats(args.r_list), reps=args.reps, seed=args.seed,
        seeds=args.seeds, gamma=args.gamma if args.gamma is not None else 1.0, horizon=args.horizon,
        kappa=pol.kappa, m=pol.m, d1=pol.d1, rho=pol.rho, T=pol.T, p0=pol.p0, j0=pol.j0, eta=pol.eta, M=pol.M,
        eps0=pol.eps0, rule=args.rule or pol.rule, bcp_reps=args.bcp_reps, bcp_dt=args.dt,
        control_variate=not args.no_cv, workers=args.workers, out_dir=args.out or ".",
    )
    path = os.path.join(cfg.out_dir, "convergence.csv")

    def show(row):
        print(f"r={row.r:g}: J^r={row.mean:.5f} +- {row.se:.5f}, median gap {row.median_gap:.5f}", flush=True)

    rep = run_convergence(cfg, path, progress=show)
    print(f"J~ = {rep.j_tilde:.5f} +- {rep.j_tilde_se:.5f}; {path}")
    return 0


def cmd_examples(args) -> int:
    for name in example_names():
        print(name)
        if args.write:
            _write(args.write, f"{name}.ini", dump_spec(SpecFile(load_example(name))))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="htnet", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        g = p.add_mutually_exclusive_group()
        g.add_argument("--spec", help="network spec file")
        g.add_argument("--example", choices=example_names(), help="built-in example network")
        p.add_argument("--out", help="output directory")
        if seed:
            p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("analyze", help="static plan, matrices and assumption checklist")
    common(p, seed=False)
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("simulate", help="simulate the r-th network under the tracking policy")
    common(p)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--horizon", type=float, default=5.0, help="scaled time horizon")
    p.add_argument("--points", type=int, default=500, help="grid points in the trace CSV")
    p.add_argument("--rule", help="jump rule file")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("bcp-eval", help="Monte Carlo cost of a jump-rule control in the Brownian problem")
    common(p)
    p.add_argument("--rule", help="jump rule file")
    p.add_argument("--reps", type=int, default=10_000)
    p.add_argument("--gamma", type=float)
    p.add_argument("--horizon", type=float, default=10.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.set_defaults(fn=cmd_bcp_eval)

    p = sub.add_parser("converge", help="sweep r and compare network cost with the Brownian cost")
    common(p)
    p.add_argument("--r-list", default="5,10,20,40")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--gamma", type=float)
    p.add_argument("--horizon", type=float, default=5.0)
    p.add_argument("--rule", help="jump rule file")
    p.add_argument("--bcp-reps", type=int, default=20_000)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-cv", action="store_true", help="disable the netput control variate")
    p.set_defaults(fn=cmd_converge)

    p = sub.add_parser("examples", help="list built-in examples")
    p.add_argument("--write", metavar="DIR", help="also write each example as a spec file")
    p.set_defaults(fn=cmd_examples)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.fn(args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
