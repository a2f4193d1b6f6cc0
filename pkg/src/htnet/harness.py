"""Experiment orchestration: network cost estimation, r-sweeps against the BCP cost, CSV output."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .bcp import JumpRuleControl, ZeroRule, evaluate_bcp_cost
from .model import NetworkModel, materialize
from .planning import analyze, check_assumptions, find_positive_direction
from .policy import TrackingParams, make_policy
from .sim import cost, discounted_netput, run


class ConfigInvalid(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """One convergence experiment. ``horizon`` is the scaled time horizon shared by network and BCP runs."""

    spec_path: Optional[str] = None
    example: Optional[str] = None
    r_list: tuple = (5, 10, 20, 40)
    reps: int = 100
    seed: int = 0
    seeds: int = 1  # independent seed batches seed, seed+1, ...
    gamma: float = 1.0
    h: Optional[tuple] = None
    p: Optional[tuple] = None
    kappa: float = 0.1
    m: float = 40.0
    d1: Optional[float] = None
    rho: float = 0.3
    T: float = 1.0
    p0: int = 1
    j0: int = 1
    eta: float = 0.01
    M: float = 0.1
    eps0: float = 0.01
    rule: str = "zero"
    horizon: float = 5.0
    bcp_reps: int = 20_000
    bcp_dt: float = 1e-3
    control_variate: bool = True
    workers: int = 1
    out_dir: str = "."

    def validate(self) -> None:
        r = list(self.r_list)
        if not r:
            raise ConfigInvalid("r_list is empty")
        if any(b <= a for a, b in zip(r, r[1:])) or r[0] <= 0:
            raise ConfigInvalid("r_list must be positive and strictly increasing")
        if self.reps < 1 or self.seeds < 1 or self.bcp_reps < 1:
            raise ConfigInvalid("replication counts must be at least 1")
        if (self.spec_path is None) == (self.example is None):
            raise ConfigInvalid("give exactly one of spec_path and example")
        if not (self.gamma > 0 and self.horizon > 0):
            raise ConfigInvalid("gamma and horizon must be positive")

    def digest(self) -> str:
        """Short hash of every field except the output directory."""
        d = asdict(self)
        d.pop("out_dir")
        d["r_list"] = [float(x) for x in self.r_list]
        return hashlib.sha256(json.dumps(d, sort_keys=True, default=str).encode()).hexdigest()[:16]


@dataclass
class NetworkCostEstimate:
    mean: float
    se: float
    reps: int
    raw_mean: float
    raw_se: float
    cv_coef: Optional[np.ndarray] = None
    tail_bound: float = 0.0


@dataclass
class ConvergenceRow:
    r: float
    mean: float
    se: float
    reps: int
    gap: float
    median_gap: float
    seed_means: list = field(default_factory=list)


@dataclass
class ConvergenceReport:
    j_tilde: float
    j_tilde_se: float
    rows: list

    def medians(self) -> list:
        return [row.median_gap for row in self.rows]

    def complete(self, r_list) -> bool:
        return [row.r for row in self.rows] == [float(r) for r in r_list]


# ---- model assembly ---------------------------------------------------------------------------


def load_model(config: ExperimentConfig) -> tuple:
    """``(model, rule)`` for the configured spec file or example."""
    from .examples import load_example
    from .specfile import load_rule, load_spec

    rule = ZeroRule()
    if config.example is not None:
        model = load_example(config.example)
    else:
        model = load_spec(config.spec_path).model
    if config.rule not in ("zero", "", None):
        base = os.path.dirname(config.spec_path) if config.spec_path else "."
        path = config.rule if os.path.isabs(config.rule) else os.path.join(base, config.rule)
        rule = load_rule(path)[1]
    return model, rule


def default_d1(plan) -> float:
    return float(np.max(plan.scaling.beta)) + 1.05


def tracking_params(config: ExperimentConfig, plan, rule=None) -> TrackingParams:
    y_star, _ = find_positive_direction(plan)
    ctl = JumpRuleControl(T=config.T, p0=config.p0, j0=config.j0, eta=config.eta, M=config.M,
                          eps0=config.eps0, y_star=y_star, rule=ZeroRule() if rule is None else rule)
    d1 = default_d1(plan) if config.d1 is None else config.d1
    return TrackingParams(kappa=config.kappa, m=config.m, d1=d1, rho=config.rho, control=ctl)


def all_exponential(plan) -> bool:
    sc = plan.scaling
    fams = [f for f, a in zip(sc.arrival_family, sc.alpha) if a > 0] + list(sc.service_family)
    return all(f == "exponential" for f in fams)


# ---- network cost -----------------------------------------------------------------------------


def _rep_values(args) -> list:
    plan, params, r, seed, reps, horizon, gamma, h, p = args
    prim, qr = materialize(plan.scaling, r)
    pol = make_policy(plan, params, r, prim, q_hat=qr / r)
    out = []
    for k in reps:
        tr = run(plan.spec, prim, qr, pol, horizon, seed, rep=k, x_star=plan.x_star)
        c = cost(tr, gamma, h, p, plan.K_mat)
        out.append((c.value, c.tail_bound, discounted_netput(tr, gamma)))
    return out


def _run_reps(plan, params, r, seed, reps, horizon, gamma, h, p, workers) -> list:
    ids = list(range(reps))
    if workers <= 1:
        return _rep_values((plan, params, r, seed, ids, horizon, gamma, h, p))
    chunks = [ids[w::workers] for w in range(workers)]
    with ProcessPoolExecutor(workers) as ex:
        parts = list(ex.map(_rep_values, [(plan, params, r, seed, c, horizon, gamma, h, p) for c in chunks]))
    # merge back into replication order so the reduction does not depend on scheduling
    merged = [None] * reps
    for c, vals in zip(chunks, parts):
        for k, v in zip(c, vals):
            merged[k] = v
    return merged


def estimate_network_cost(plan, params: TrackingParams, r: float, reps: int, seed: int, gamma: float, h, p=None,
                          horizon: float = 5.0, control_variate: bool = True, workers: int = 1) -> NetworkCostEstimate:
    """Mean discounted cost ``J^r`` of the tracking policy over ``reps`` replications.

    With ``control_variate`` (used only when every primitive is exponential)
    the estimate subtracts ``b . Z`` where ``Z`` is the discounted netput
    integral, whose mean is exactly 0, and ``b`` is the least-squares slope.
    """
    h = np.asarray(h, dtype=float)
    vals = _run_reps(plan, params, r, seed, reps, horizon, gamma, h, p, workers)
    c = np.array([v[0] for v in vals])
    tail = float(np.mean([v[1] for v in vals]))
    Z = np.array([v[2] for v in vals])
    raw_mean = float(c.mean())
    raw_se = float(c.std(ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0
    if not (control_variate and all_exponential(plan)) or reps <= Z.shape[1] + 1:
        return NetworkCostEstimate(raw_mean, raw_se, reps, raw_mean, raw_se, None, tail)
    Zc = Z - Z.mean(axis=0)
    b, *_ = np.linalg.lstsq(Zc, c - raw_mean, rcond=None)
    adj = c - Z @ b
    se = float(np.sqrt(((c - raw_mean - Zc @ b) ** 2).sum() / (reps - Z.shape[1] - 1) / reps))
    return NetworkCostEstimate(float(adj.mean()), se, reps, raw_mean, raw_se, b, tail)


# ---- convergence sweep ------------------------------------------------------------------------

CSV_COLUMNS = ["r", "mean", "se", "reps", "gap", "median_gap", "j_tilde", "j_tilde_se"]


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def run_convergence(config: ExperimentConfig, csv_path: Optional[str] = None, progress=None) -> ConvergenceReport:
    """Estimate ``J^r`` for every ``r`` and the BCP cost of the same control; write a CSV as rows complete."""
    config.validate()
    model, rule = load_model(config)
    plan = analyze(model)
    rep = check_assumptions(plan)
    if not rep.ok:
        raise ConfigInvalid("plan assumptions fail: " + "; ".join(line for line in rep.lines() if "[FAIL]" in line))
    params = tracking_params(config, plan, rule)
    I = plan.num_buffers
    h = np.ones(I) if config.h is None else np.asarray(config.h, dtype=float)
    p = None if config.p is None else np.asarray(config.p, dtype=float)
    p_bcp = np.zeros(plan.n_controls) if p is None else p
    q = plan.scaling.q
    bcp = evaluate_bcp_cost(plan, params.control, q, config.gamma, h, p_bcp, config.bcp_dt, config.horizon,
                            config.bcp_reps, config.seed)
    if csv_path is None:
        csv_path = os.path.join(config.out_dir, f"convergence_{config.digest()}.csv")
    os.makedirs(os.path.dirname(os.path.abspath(csv_path)), exist_ok=True)
    rows = []
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# htnet {__version__}\n# config_hash {config.digest()}\n# seed {config.seed}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        fh.flush()
        for r in config.r_list:
            ests = [
                estimate_network_cost(plan, params, r, config.reps, config.seed + s, config.gamma, h, p,
                                      config.horizon, config.control_variate, config.workers)
                for s in range(config.seeds)
            ]
            means = np.array([e.mean for e in ests])
            ses = np.array([e.se for e in ests])
            mean = float(means.mean())
            se = float(np.sqrt((ses**2).sum()) / len(ests))
            row = ConvergenceRow(
                r=float(r), mean=mean, se=se, reps=config.reps * config.seeds, gap=abs(mean - bcp.mean),
                median_gap=float(np.median(np.abs(means - bcp.mean))), seed_means=means.tolist(),
            )
            rows.append(row)
            w.writerow([_fmt(row.r), _fmt(row.mean), _fmt(row.se), row.reps, _fmt(row.gap), _fmt(row.median_gap),
                        _fmt(bcp.mean), _fmt(bcp.se)])
            fh.flush()
            if progress is not None:
                progress(row)
    return ConvergenceReport(j_tilde=bcp.mean, j_tilde_se=bcp.se, rows=rows)


# ---- fluid limit ------------------------------------------------------------------------------


def fluid_error(trace, x_star) -> float:
    """``sup |T-bar(t) - x* t|`` over the simulated scaled horizon (max over activities)."""
    r2 = trace.r**2
    t = np.append(trace.times, trace.horizon)
    T = np.vstack([trace.T, trace.final_T])
    # T - x* t is piecewise linear, so the sup is attained at event times
    return float(np.abs(T - np.outer(t, x_star)).max() / r2)


def fluid_errors(plan, params: TrackingParams, r_list, seeds: int, t_max: float = 1.0, seed: int = 0) -> np.ndarray:
    """``(len(r_list), seeds)`` fluid errors of the tracking policy."""
    out = np.empty((len(r_list), seeds))
    for a, r in enumerate(r_list):
        prim, qr = materialize(plan.scaling, r)
        pol = make_policy(plan, params, r, prim, q_hat=qr / r)
        for s in range(seeds):
            tr = run(plan.spec, prim, qr, pol, t_max, seed + s, x_star=plan.x_star)
            out[a, s] = fluid_error(tr, plan.x_star)
    return out
