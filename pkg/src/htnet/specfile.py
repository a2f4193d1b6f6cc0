"""Read and write network spec files and jump-rule files (INI syntax, see docs/specfile.md)."""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bcp import JumpRuleControl, KernelRule, ThresholdRule, ZeroRule
from .model import NetworkModel, NetworkSpec, ScalingScheme, validate_spec


class SpecError(ValueError):
    pass


@dataclass
class PolicyConfig:
    """Tracking-policy and control settings from a ``[policy]`` section."""

    kappa: float = 0.1
    m: float = 40.0
    d1: Optional[float] = None  # default: max beta + 1.05
    rho: float = 0.3
    eps0: float = 0.01
    T: float = 1.0
    p0: int = 1
    j0: int = 1
    eta: float = 0.01
    M: float = 0.1
    rule: str = "zero"


@dataclass
class CostConfig:
    gamma: float = 1.0
    h: Optional[np.ndarray] = None  # default: all ones
    p: Optional[np.ndarray] = None  # default: zeros


@dataclass
class SpecFile:
    model: NetworkModel
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    cost: CostConfig = field(default_factory=CostConfig)


def _vec(text: str, kind=float) -> np.ndarray:
    toks = text.replace(",", " ").split()
    try:
        return np.array([kind(t) for t in toks])
    except ValueError as exc:
        raise SpecError(f"bad number in {text!r}") from exc


def _mat(text: str, kind=float) -> np.ndarray:
    rows = [_vec(line, kind) for line in text.strip().splitlines() if line.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise SpecError("matrix rows must be nonempty and of equal length")
    return np.vstack(rows)


def _families(text: Optional[str], n: int, default: str = "exponential") -> tuple:
    toks = (text or default).split()
    if len(toks) == 1:
        toks = toks * n
    if len(toks) != n:
        raise SpecError(f"expected 1 or {n} family names, got {len(toks)}")
    return tuple(toks)


def _need(cp, section, key):
    if not cp.has_option(section, key):
        raise SpecError(f"missing [{section}] {key}")
    return cp.get(section, key)


def parse_spec(text: str) -> SpecFile:
    """Parse spec-file text. Activity, buffer and class indices in the file are 1-based."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise SpecError(str(exc)) from exc
    C = _mat(_need(cp, "topology", "C"), int)
    A = _mat(_need(cp, "topology", "A"), int)
    I, J = C.shape
    routing = _mat(_need(cp, "routing", "P"))
    alpha = _vec(_need(cp, "primitives", "alpha"))
    beta = _vec(_need(cp, "primitives", "beta"))
    if len(alpha) != I or len(beta) != J:
        raise SpecError(f"alpha needs {I} entries and beta needs {J}")
    arrivals = tuple(int(i) for i in np.flatnonzero(alpha > 0))
    spec = NetworkSpec(C=C, A=A, routing=routing, arrival_classes=arrivals, name=cp.get("topology", "name", fallback=""))
    problems = validate_spec(spec)
    if problems:
        raise SpecError("; ".join(problems))
    sec = "scaling"
    sig_u = cp.get("primitives", "sigma_u", fallback=None)
    sig_v = cp.get("primitives", "sigma_v", fallback=None)
    scaling = ScalingScheme(
        alpha=alpha,
        beta=beta,
        theta1=_vec(cp.get(sec, "theta1", fallback=" ".join(["0"] * I))),
        theta2=_vec(cp.get(sec, "theta2", fallback=" ".join(["0"] * J))),
        q=_vec(cp.get(sec, "q", fallback=" ".join(["0"] * I))),
        arrival_family=_families(cp.get("primitives", "arrival_family", fallback=None), I),
        service_family=_families(cp.get("primitives", "service_family", fallback=None), J),
        sigma_u=None if sig_u is None else _vec(sig_u),
        sigma_v=None if sig_v is None else _vec(sig_v),
        r_list=tuple(_vec(cp.get(sec, "r_list", fallback=""))),
    )
    problems = scaling.problems()
    if problems:
        raise SpecError("; ".join(problems))
    workload = None
    if cp.has_section("workload"):
        workload = (_mat(_need(cp, "workload", "Lambda")), _mat(_need(cp, "workload", "G")))
    pol = PolicyConfig()
    if cp.has_section("policy"):
        s = cp["policy"]
        for name, kind in (("kappa", float), ("m", float), ("d1", float), ("rho", float), ("eps0", float),
                           ("T", float), ("p0", int), ("j0", int), ("eta", float), ("M", float), ("rule", str)):
            if name in s:
                setattr(pol, name, kind(s[name]))
        if "kappa_exp" in s:
            pol.kappa = float(s["kappa_exp"])
    cost = CostConfig(h=np.ones(I), p=None)
    if cp.has_section("cost"):
        s = cp["cost"]
        cost.gamma = float(s.get("gamma", cost.gamma))
        if "h" in s:
            cost.h = _vec(s["h"])
        if "p" in s:
            cost.p = _vec(s["p"])
    return SpecFile(NetworkModel(spec, scaling, workload), pol, cost)


def load_spec(path) -> SpecFile:
    with open(path, encoding="utf-8") as fh:
        return parse_spec(fh.read())


def _fmt_vec(v) -> str:
    return " ".join(repr(float(x)) if not float(x).is_integer() else str(int(x)) for x in np.ravel(v))


def _fmt_mat(M) -> str:
    return "\n" + "\n".join(_fmt_vec(row) for row in np.atleast_2d(M))


def dump_spec(sf: SpecFile) -> str:
    """Inverse of :func:`parse_spec` (comments are not preserved)."""
    m, sc = sf.model, sf.model.scaling
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["topology"] = {"name": m.spec.name, "C": _fmt_mat(m.spec.C), "A": _fmt_mat(m.spec.A)}
    cp["routing"] = {"P": _fmt_mat(m.spec.routing)}
    cp["primitives"] = {
        "alpha": _fmt_vec(sc.alpha),
        "beta": _fmt_vec(sc.beta),
        "arrival_family": " ".join(sc.arrival_family),
        "service_family": " ".join(sc.service_family),
        "sigma_u": _fmt_vec(sc.sigma_u),
        "sigma_v": _fmt_vec(sc.sigma_v),
    }
    cp["scaling"] = {"theta1": _fmt_vec(sc.theta1), "theta2": _fmt_vec(sc.theta2), "q": _fmt_vec(sc.q)}
    if sc.r_list:
        cp["scaling"]["r_list"] = _fmt_vec(sc.r_list)
    if m.workload is not None:
        cp["workload"] = {"Lambda": _fmt_mat(m.workload[0]), "G": _fmt_mat(m.workload[1])}
    pol = {k: str(v) for k, v in vars(sf.policy).items() if v is not None}
    cp["policy"] = pol
    cost = {"gamma": repr(float(sf.cost.gamma))}
    if sf.cost.h is not None:
        cost["h"] = _fmt_vec(sf.cost.h)
    if sf.cost.p is not None:
        cost["p"] = _fmt_vec(sf.cost.p)
    cp["cost"] = cost
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


# ---- rule files -------------------------------------------------------------------------------


def parse_rule(text: str):
    """Parse a ``[rule]`` section: ``type = zero | threshold | kernel``."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise SpecError(str(exc)) from exc
    if not cp.has_section("rule"):
        raise SpecError("missing [rule] section")
    s = cp["rule"]
    kind = s.get("type", "zero").strip()
    name = s.get("name", kind)
    if kind == "zero":
        return name, ZeroRule()
    weights = _vec(_need(cp, "rule", "weights"))
    thresholds = _vec(_need(cp, "rule", "thresholds"))
    outcomes = _mat(_need(cp, "rule", "outcomes"))
    if kind == "threshold":
        return name, ThresholdRule(weights, thresholds, outcomes)
    if kind == "kernel":
        probs = _mat(_need(cp, "rule", "probs"))
        interp = s.get("interpolate", "true").strip().lower() in ("1", "true", "yes")
        return name, KernelRule(weights, thresholds, outcomes, probs=probs, interpolate=interp)
    raise SpecError(f"unknown rule type {kind!r}")


def load_rule(path):
    with open(path, encoding="utf-8") as fh:
        return parse_rule(fh.read())


def make_control(pol: PolicyConfig, y_star, rule=None) -> JumpRuleControl:
    return JumpRuleControl(T=pol.T, p0=pol.p0, j0=pol.j0, eta=pol.eta, M=pol.M, eps0=pol.eps0,
                           y_star=y_star, rule=ZeroRule() if rule is None else rule)
