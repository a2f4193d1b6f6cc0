"""Brownian control problem: driving paths, jump-rule controls, cost evaluation and control discretization."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import lapack

from . import lp
from .skorohod import PiecewisePath, lipschitz_constants, regulate


class NotPSD(ValueError):
    pass


class KernelNotStochastic(ValueError):
    pass


class InvalidJump(ValueError):
    pass


class InfeasibleWorkload(ValueError):
    pass


class StateConstraintViolated(ValueError):
    pass


PATH_STREAM, JUMP_STREAM = 0, 1
VARTHETA_GRID = 64


def rep_rng(seed: int, rep: int, stream: int = PATH_STREAM) -> np.random.Generator:
    """Generator for replication ``rep``; independent of batching and ordering."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(rep), int(stream)]))


def covariance_factor(Sigma) -> np.ndarray:
    """``L`` with ``L L' = Sigma``: Cholesky, falling back to diagonally pivoted Cholesky for singular PSD input."""
    S = np.atleast_2d(np.asarray(Sigma, dtype=float))
    if S.size == 0:
        return S
    if np.abs(S - S.T).max() > 1e-12 * max(1.0, np.abs(S).max()):
        raise NotPSD("Sigma is not symmetric")
    lam = np.linalg.eigvalsh(S).min()
    if lam < -1e-10:
        raise NotPSD(f"Sigma has eigenvalue {lam:.3g}")
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pass
    U, piv, rank, info = lapack.dpstrf(S, lower=1, tol=1e-12)
    L = np.tril(U)
    L[:, rank:] = 0.0
    P = np.zeros_like(S)
    P[piv - 1, np.arange(len(piv))] = 1.0
    return P @ L


def bridge_minimum(a, b, var_dt, u):
    """Minimum of a Brownian bridge from ``a`` to ``b`` with variance ``var_dt`` over the step, by inversion of ``u``."""
    return 0.5 * (a + b - np.sqrt((b - a) ** 2 - 2.0 * var_dt * np.log(u)))


@dataclass
class BrownianBatch:
    """Paths of ``zeta(t) = q + X(t) + theta t`` on the grid ``k dt``; ``low`` holds per-step bridge minima."""

    dt: float
    horizon: float
    t: np.ndarray
    paths: np.ndarray  # (reps, n+1, I)
    low: Optional[np.ndarray]
    q: np.ndarray
    theta: np.ndarray
    seed: int
    rep_ids: np.ndarray

    @property
    def reps(self) -> int:
        return self.paths.shape[0]

    @property
    def X(self) -> np.ndarray:
        """Zero-drift part ``zeta - q - theta t``."""
        return self.paths - self.q - self.t[:, None] * self.theta


def grid_steps(span: float, dt: float, what: str = "span") -> int:
    k = span / dt
    n = int(round(k))
    if n <= 0 or abs(k - n) > 1e-9 * max(1.0, k):
        raise ValueError(f"{what} {span} is not a multiple of dt={dt}")
    return n


def simulate_zeta(plan, q, dt: float, horizon: float, reps: int, seed: int, rep_offset: int = 0, bridge: Optional[bool] = None) -> BrownianBatch:
    """Simulate ``reps`` paths of ``zeta``; bridge minima are drawn when ``D`` is diagonal (or when asked)."""
    theta, Sigma = np.asarray(plan.theta, dtype=float), np.asarray(plan.Sigma, dtype=float)
    L = covariance_factor(Sigma)
    I = len(theta)
    n = grid_steps(horizon, dt, "horizon")
    q = np.asarray(q, dtype=float)
    if bridge is None:
        D = np.asarray(plan.D)
        bridge = bool(np.allclose(D, np.diag(np.diag(D))))
    t = np.arange(n + 1) * dt
    paths = np.empty((reps, n + 1, I))
    low = np.empty((reps, n + 1, I)) if bridge else None
    sq = math.sqrt(dt)
    var_dt = np.diag(Sigma) * dt
    drift = theta * dt
    for r in range(reps):
        rng = rep_rng(seed, rep_offset + r)
        z = rng.standard_normal((n, I))
        p = paths[r]
        p[0] = q
        np.cumsum(z @ L.T * sq + drift, axis=0, out=p[1:])
        p[1:] += q
        if bridge:
            u = 1.0 - rng.random((n, I))  # in (0, 1]
            low[r, 0] = q
            low[r, 1:] = bridge_minimum(p[:-1], p[1:], var_dt, u)
    return BrownianBatch(dt=dt, horizon=horizon, t=t, paths=paths, low=low, q=q, theta=theta, seed=seed, rep_ids=np.arange(rep_offset, rep_offset + reps))


# ---- jump rules -------------------------------------------------------------------------------


@dataclass(frozen=True)
class RuleContext:
    """What a rule may use besides the sampled history: the initial state, drift and sample spacing."""

    q: np.ndarray
    theta: np.ndarray
    sample_step: float


def lex_order(outcomes) -> np.ndarray:
    outcomes = np.atleast_2d(outcomes)
    return np.lexsort(outcomes.T[::-1])


def sample_jump(probs, u, outcomes=None):
    """Pick an outcome by inversion: ``[0, 1)`` is cut into consecutive intervals of lengths ``probs``.

    ``probs`` is one row or a batch of rows over outcomes already in
    lexicographic order. Returns indices, or outcomes when given.
    """
    P = np.atleast_2d(np.asarray(probs, dtype=float))
    if (P < 0).any() or np.abs(P.sum(axis=1) - 1.0).max() > 1e-12:
        raise KernelNotStochastic("probabilities must be nonnegative and sum to 1")
    u = np.broadcast_to(np.asarray(u, dtype=float), (P.shape[0],))
    cum = np.cumsum(P, axis=1)
    idx = np.minimum((cum <= u[:, None]).sum(axis=1), P.shape[1] - 1)
    # skip trailing zero-probability outcomes that rounding could land on
    while True:
        bad = P[np.arange(len(idx)), idx] == 0
        if not bad.any():
            break
        idx[bad] -= 1
    if np.ndim(probs) == 1:
        idx = idx[0]
    if outcomes is None:
        return idx
    return np.asarray(outcomes)[idx]


class ZeroRule:
    """Never jumps: the control reduces to reflection plus the epsilon shifts."""

    outcomes = None
    zero = True

    def jump(self, n, history, u, ctx):
        return None


@dataclass
class ThresholdRule:
    """Deterministic feedback: ``feature = weights . zeta(epoch)`` picks ``outcomes[searchsorted(thresholds, feature)]``."""

    weights: np.ndarray
    thresholds: np.ndarray
    outcomes: np.ndarray
    zero = False

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.thresholds = np.asarray(self.thresholds, dtype=float).ravel()
        self.outcomes = np.atleast_2d(np.asarray(self.outcomes, dtype=float))
        if len(self.outcomes) != len(self.thresholds) + 1:
            raise ValueError("need one more outcome than thresholds")
        if (np.diff(self.thresholds) <= 0).any():
            raise ValueError("thresholds must increase")

    def feature(self, n, history, ctx):
        last = history[:, -1, :] if history.shape[1] else np.zeros((history.shape[0], len(ctx.q)))
        t = history.shape[1] * ctx.sample_step
        return (ctx.q + ctx.theta * t + last) @ self.weights

    def jump(self, n, history, u, ctx):
        f = self.feature(n, history, ctx)
        return self.outcomes[np.searchsorted(self.thresholds, f, side="right")]


@dataclass
class KernelRule(ThresholdRule):
    """Randomized rule: outcome probabilities are a function of the same scalar feature.

    ``probs[k]`` is the distribution at ``thresholds[k]`` (the breakpoints);
    with ``interpolate`` the rows are blended linearly between breakpoints and
    clamped outside, otherwise row ``k`` applies on ``[b_k, b_{k+1})``.
    """

    probs: np.ndarray = None
    interpolate: bool = True

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.thresholds = np.asarray(self.thresholds, dtype=float).ravel()
        self.outcomes = np.atleast_2d(np.asarray(self.outcomes, dtype=float))
        P = np.atleast_2d(np.asarray(self.probs, dtype=float))
        if P.shape != (len(self.thresholds), len(self.outcomes)):
            raise ValueError("probs must be breakpoints x outcomes")
        if (P < 0).any() or np.abs(P.sum(axis=1) - 1.0).max() > 1e-12:
            raise KernelNotStochastic("kernel rows must be nonnegative and sum to 1")
        if len(self.thresholds) > 1 and (np.diff(self.thresholds) <= 0).any():
            raise ValueError("breakpoints must increase")
        order = lex_order(self.outcomes)
        self.outcomes = self.outcomes[order]
        self.probs = P[:, order]

    def row(self, f):
        b = self.thresholds
        if not self.interpolate or len(b) == 1:
            k = np.clip(np.searchsorted(b, f, side="right") - 1, 0, len(b) - 1)
            return self.probs[k]
        k = np.clip(np.searchsorted(b, f, side="right") - 1, 0, len(b) - 2)
        w = np.clip((f - b[k]) / (b[k + 1] - b[k]), 0.0, 1.0)[:, None]
        P = (1 - w) * self.probs[k] + w * self.probs[k + 1]
        return P / P.sum(axis=1, keepdims=True)

    def jump(self, n, history, u, ctx):
        f = self.feature(n, history, ctx)
        return self.outcomes[sample_jump(self.row(f), u)]


@dataclass
class FeedbackRule:
    """Arbitrary user map ``fn(n, history, u, ctx) -> (reps, J)``; outputs are checked against the lattice at run time."""

    fn: Callable
    outcomes = None
    zero = False

    def jump(self, n, history, u, ctx):
        return np.asarray(self.fn(n, history, u, ctx), dtype=float)


def lattice_violations(v, eta: float, M: float, K_mat, tol: float = 1e-9) -> np.ndarray:
    """Boolean mask of rows of ``v`` outside ``{b eta : b integer, |b| eta <= M, K b >= 0}``."""
    v = np.atleast_2d(v)
    b = v / eta
    off = np.abs(b - np.round(b)).max(axis=1) > tol * np.maximum(1.0, np.abs(b).max(axis=1))
    big = np.linalg.norm(v, axis=1) > M * (1 + tol)
    cone = (np.round(b) @ np.asarray(K_mat).T < -tol).any(axis=1)
    return off | big | cone


@dataclass
class JumpRuleControl:
    """Review-epoch control: epochs ``n theta_g`` for ``n = 0..p0``, ``j0`` samples per epoch, jumps in ``S_M^eta``."""

    T: float
    p0: int
    j0: int
    eta: float
    M: float
    eps0: float
    y_star: np.ndarray
    rule: object = field(default_factory=ZeroRule)

    def __post_init__(self):
        self.y_star = np.asarray(self.y_star, dtype=float)
        if not (self.T > 0 and self.p0 >= 1 and self.j0 >= 1 and self.eta > 0 and self.M > 0 and self.eps0 >= 0):
            raise ValueError("need T > 0, p0 >= 1, j0 >= 1, eta > 0, M > 0, eps0 >= 0")

    @property
    def theta_g(self) -> float:
        return self.T / self.p0

    @property
    def sample_step(self) -> float:
        return self.theta_g / self.j0

    @property
    def is_zero(self) -> bool:
        return getattr(self.rule, "zero", False)

    def validate(self, plan) -> None:
        """Check static outcome tables against the lattice and the cone ``K b >= 0``."""
        outs = getattr(self.rule, "outcomes", None)
        if outs is None:
            return
        outs = np.atleast_2d(outs)
        if outs.shape[1] != plan.num_activities:
            raise InvalidJump(f"outcomes have {outs.shape[1]} entries, expected {plan.num_activities}")
        bad = lattice_violations(outs, self.eta, self.M, plan.K_mat)
        if bad.any():
            raise InvalidJump(f"outcomes {np.flatnonzero(bad).tolist()} are not in S_M^eta")

    def jumps(self, n: int, history: np.ndarray, u: np.ndarray, ctx: RuleContext, plan) -> Optional[np.ndarray]:
        if self.is_zero:
            return None
        v = self.rule.jump(n, history, u, ctx)
        if v is None:
            return None
        v = np.atleast_2d(v)
        bad = lattice_violations(v, self.eta, self.M, plan.K_mat)
        if bad.any():
            raise InvalidJump(f"rule produced {v[bad][0]} outside S_M^eta at epoch {n}")
        return v


# ---- the vartheta map -------------------------------------------------------------------------


def vartheta(plan, q0, y, n_grid: int = VARTHETA_GRID) -> np.ndarray:
    """``y + Gamma-bar(q0 + R y t)(1)`` row-wise for batches ``q0`` (m, I) and ``y`` (m, J)."""
    q0 = np.atleast_2d(np.asarray(q0, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    m = max(len(q0), len(y))
    q0 = np.broadcast_to(q0, (m, q0.shape[1]))
    y = np.broadcast_to(y, (m, y.shape[1]))
    out = y.copy()
    act = np.abs(y).max(axis=1) > 0
    if not act.any():
        return out
    s = np.linspace(0.0, 1.0, n_grid + 1)
    x = q0[act, None, :] + s[None, :, None] * (y[act] @ plan.R.T)[:, None, :]
    reg, _, _ = regulate(x, plan.D)
    out[act] += reg[:, -1, :] @ plan.gamma_bar_matrix.T
    return out


def vartheta_eps(plan, q0, y, eps0: float, y_star) -> np.ndarray:
    return vartheta(plan, q0, y) + eps0 * np.asarray(y_star)


def estimate_vartheta_lip(plan, n_probes: int = 2000, seed: int = 0, scale: float = 1.0) -> float:
    """Largest observed ``|vartheta(q0, y)| / |y|`` over random probes (a lower estimate of the constant)."""
    rng = np.random.default_rng(seed)
    I, J = plan.num_buffers, plan.num_activities
    q0 = np.abs(rng.standard_normal((n_probes, I))) * scale * rng.random((n_probes, 1))
    q0[: n_probes // 4] = 0.0
    y = rng.standard_normal((n_probes, J))
    out = vartheta(plan, q0, y)
    return float((np.linalg.norm(out, axis=1) / np.linalg.norm(y, axis=1)).max())


# ---- control construction ---------------------------------------------------------------------


@dataclass
class ControlPaths:
    """Output of ``build_control``: cadlag grid values (post-jump at epochs) and epoch bookkeeping."""

    t: np.ndarray
    Q: np.ndarray  # (reps, n+1, I)
    Y: np.ndarray  # (reps, n+1, J)
    U: np.ndarray  # (reps, n+1, N)
    epoch_index: np.ndarray  # grid index of each epoch, length p0+1
    Q_before: np.ndarray  # (reps, p0+1, I): Q(n theta-)
    jumps: np.ndarray  # (reps, p0+1, J): Delta Y at each epoch
    nu_bar: np.ndarray  # (reps, p0+1, J): rule outputs


def build_control(control: JumpRuleControl, batch: BrownianBatch, plan) -> ControlPaths:
    """Construct ``(Y, Q, U)`` from the review-epoch rule on every path of ``batch``.

    At each epoch the jump ``vartheta_eps(Q(n theta-), nu_bar)`` is applied;
    between epochs ``Q`` is the Skorohod reflection of ``Q(n theta)`` plus
    the increments of ``zeta`` and ``Y`` accrues ``Gamma-bar`` of that input.
    After the last epoch regulation continues to the batch horizon.
    """
    control.validate(plan)
    dt = batch.dt
    spe = grid_steps(control.theta_g, dt, "epoch length")
    sps = grid_steps(control.sample_step, dt, "sample step")
    n_steps = len(batch.t) - 1
    if control.p0 * spe > n_steps:
        raise ValueError("horizon shorter than the control's activity horizon T")
    reps, I, J = batch.reps, plan.num_buffers, plan.num_activities
    R, D, Gb = plan.R, plan.D, plan.gamma_bar_matrix
    zeta, low = batch.paths, batch.low
    X = None if control.is_zero else batch.X
    ctx = RuleContext(q=batch.q, theta=batch.theta, sample_step=control.sample_step)
    sample_idx = np.arange(1, control.p0 * control.j0 + 1) * sps
    if not control.is_zero:
        u_all = np.stack([rep_rng(batch.seed, r, JUMP_STREAM).random(control.p0) for r in batch.rep_ids])
    Q = np.empty((reps, n_steps + 1, I))
    Y = np.empty((reps, n_steps + 1, J))
    Q_before = np.empty((reps, control.p0 + 1, I))
    jumps = np.zeros((reps, control.p0 + 1, J))
    nu_bar = np.zeros((reps, control.p0 + 1, J))
    q_minus = np.broadcast_to(batch.q, (reps, I)).copy()
    y_cur = np.zeros((reps, J))
    eps_shift = control.eps0 * control.y_star
    epoch_index = np.arange(control.p0 + 1) * spe
    for n in range(control.p0 + 1):
        s = n * spe
        e = s + spe if n < control.p0 else n_steps
        Q_before[:, n] = q_minus
        nb = None
        if n >= 1 and not control.is_zero:
            hist = X[:, sample_idx[: n * control.j0], :]
            nb = control.jumps(n, hist, u_all[:, n - 1], ctx, plan)
        if nb is None:
            dY = np.broadcast_to(eps_shift, (reps, J)).copy()
        else:
            nu_bar[:, n] = nb
            dY = vartheta(plan, q_minus, nb) + eps_shift
        jumps[:, n] = dY
        y_cur = y_cur + dY
        q_start = q_minus + dY @ R.T
        x = q_start[:, None, :] + (zeta[:, s:e + 1] - zeta[:, s:s + 1])
        xl = None
        if low is not None:
            xl = q_start[:, None, :] + (low[:, s:e + 1] - zeta[:, s:s + 1])
            xl[:, 0] = x[:, 0]
        reg, _, _ = regulate(x, D, xl)
        Q[:, s:e + 1] = x + reg @ D.T
        Y[:, s:e + 1] = y_cur[:, None, :] + reg @ Gb.T
        q_minus = Q[:, e].copy()
        y_cur = Y[:, e].copy()
    U = Y @ plan.K_mat.T
    return ControlPaths(t=batch.t, Q=Q, Y=Y, U=U, epoch_index=epoch_index, Q_before=Q_before, jumps=jumps, nu_bar=nu_bar)


# ---- costs ------------------------------------------------------------------------------------


@dataclass(frozen=True)
class BCPCostEstimate:
    mean: float
    se: float
    reps: int
    tail_bound: float
    sd: float = 0.0
    samples: Optional[np.ndarray] = field(default=None, repr=False, compare=False)


def path_costs(paths: ControlPaths, gamma: float, h, p) -> np.ndarray:
    """Per-path ``int e^{-gamma t} h.Q dt + int e^{-gamma t} p.dU`` on the grid (trapezoid + Stieltjes sum)."""
    t = paths.t
    disc = np.exp(-gamma * t)
    hq = paths.Q @ np.asarray(h, dtype=float)  # (reps, n+1)
    dt = np.diff(t)
    f = hq * disc
    hold = 0.5 * (f[:, 1:] + f[:, :-1]) @ dt
    # at epochs the right end of the preceding step should use Q(n theta-)
    for n, k in enumerate(paths.epoch_index):
        if k == 0:
            continue
        pre = paths.Q_before[:, n] @ np.asarray(h, dtype=float)
        hold += 0.5 * dt[k - 1] * disc[k] * (pre - hq[:, k])
    p = np.asarray(p, dtype=float)
    if not np.any(p):
        return hold
    pu = paths.U @ p
    dU = np.diff(pu, axis=1, prepend=0.0)
    return hold + dU @ disc


def tail_bound(plan, gamma: float, h, p, horizon: float, mean_hQ_end: float) -> float:
    """Heuristic bound on the cost beyond ``horizon`` from linear growth of the reflected state.

    Uses ``Q(H + u) <= Q(H) + L_z (|theta| u + sup|X increment|)`` and
    ``E sup_{s<=u} |B_s| <= 2 sqrt(2u/pi)`` componentwise.
    """
    Lz, Ly = lipschitz_constants(plan.D)
    h = np.abs(np.asarray(h, dtype=float))
    p = np.abs(np.asarray(p, dtype=float))
    th = float(np.abs(plan.theta).max())
    sd = float(np.sqrt(np.clip(np.diag(plan.Sigma), 0, None)).sum())
    growth = th / gamma**2 + 2 * math.sqrt(2 / math.pi) * sd * math.gamma(1.5) / gamma**1.5
    bound = mean_hQ_end / gamma + h.sum() * Lz * growth
    if p.any():
        gain = float(np.abs(p @ plan.K_mat @ plan.gamma_bar_matrix).sum()) * Ly
        bound += gain * gamma * growth
    return float(math.exp(-gamma * horizon) * bound)


def evaluate_bcp_cost(plan, control: JumpRuleControl, q, gamma: float, h, p, dt: float, horizon: float, reps: int, seed: int, chunk: int = 500, keep_samples: bool = False) -> BCPCostEstimate:
    """Monte Carlo estimate of the discounted BCP cost of ``control`` started at ``q``."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    h = np.asarray(h, dtype=float)
    p = np.asarray(p, dtype=float)
    if not np.any(h) and not np.any(p):
        return BCPCostEstimate(0.0, 0.0, reps, 0.0, 0.0, np.zeros(reps) if keep_samples else None)
    vals, ends = [], []
    for start in range(0, reps, chunk):
        m = min(chunk, reps - start)
        batch = simulate_zeta(plan, q, dt, horizon, m, seed, rep_offset=start)
        paths = build_control(control, batch, plan)
        vals.append(path_costs(paths, gamma, h, p))
        ends.append(paths.Q[:, -1] @ h)
    v = np.concatenate(vals)
    sd = float(v.std(ddof=1)) if reps > 1 else 0.0
    tb = tail_bound(plan, gamma, h, p, horizon, float(np.concatenate(ends).mean()))
    return BCPCostEstimate(float(v.mean()), sd / math.sqrt(reps), reps, tb, sd, v if keep_samples else None)


def _lambda_of(plan_or_lambda):
    lam = getattr(plan_or_lambda, "Lambda", plan_or_lambda)
    if lam is None:
        raise ValueError("plan has no workload matrix")
    return np.atleast_2d(np.asarray(lam, dtype=float))


def effective_cost(plan, h, w):
    """``min h.q`` over ``q >= 0`` with ``Lambda q = w``; for ``|w| > 1`` returns ``|w| q(w/|w|)``."""
    Lam = _lambda_of(plan)
    h = np.asarray(h, dtype=float)
    w = np.atleast_1d(np.asarray(w, dtype=float))
    nw = float(np.linalg.norm(w))
    if nw == 0.0:
        return 0.0, np.zeros(Lam.shape[1])
    if nw > 1.0:
        c, q = effective_cost(Lam, h, w / nw)
        return nw * c, nw * q
    try:
        res = lp.simplex(h, Lam, w)
    except lp.Infeasible as exc:
        raise InfeasibleWorkload(f"no q >= 0 with Lambda q = {w}") from exc
    return float(h @ res.x), res.x


def effective_cost_values(plan, h, W) -> np.ndarray:
    """``h-hat`` at each row of ``W``; closed form when the workload is one-dimensional."""
    Lam = _lambda_of(plan)
    h = np.asarray(h, dtype=float)
    W = np.asarray(W, dtype=float).reshape(-1, Lam.shape[0])
    if Lam.shape[0] == 1:
        pos = Lam[0] > 0
        if not pos.any():
            raise InfeasibleWorkload("Lambda has no positive entry")
        if (W < -1e-12).any():
            raise InfeasibleWorkload("negative workload")
        return W[:, 0] * float((h[pos] / Lam[0, pos]).min())
    return np.array([effective_cost(Lam, h, w)[0] for w in W])


def evaluate_ewf_cost(plan, h, p, U, W, gamma: float, t, tol: float = 1e-9) -> float:
    """Discounted EWF cost of one path: trapezoid of ``e^{-gamma t} h-hat(W)`` plus ``sum e^{-gamma t} p.dU``."""
    t = np.asarray(t, dtype=float)
    U = np.asarray(U, dtype=float).reshape(len(t), -1)
    W = np.asarray(W, dtype=float).reshape(len(t), -1)
    dU = np.diff(U, axis=0, prepend=0.0)
    if (dU < -1e-12).any():
        raise ValueError("U must be nondecreasing with U(0) >= 0")
    try:
        hh = effective_cost_values(plan, h, np.where(np.abs(W) <= tol, 0.0, W))
    except InfeasibleWorkload as exc:
        raise StateConstraintViolated(str(exc)) from exc
    disc = np.exp(-gamma * t)
    f = hh * disc
    cost = float(0.5 * (f[1:] + f[:-1]) @ np.diff(t))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if p.any():
        cost += float((dU @ p) @ disc)
    return cost


# ---- discretization of continuous controls ----------------------------------------------------


def ceil_to_lattice(v, eta: float) -> np.ndarray:
    """``ceil(v / eta) eta`` with a relative guard so exact lattice points stay put."""
    b = np.asarray(v, dtype=float) / eta
    return np.ceil(b - 1e-9 * np.maximum(1.0, np.abs(b))) * eta


def discretize_control(Y: PiecewisePath, p0: int, eta: float, M: float, T: float = 1.0, n0: Optional[float] = None) -> np.ndarray:
    """Turn a continuous control into ``p0 + 1`` epoch increments in ``S_M^eta``.

    Steps: optional running-average smoothing with window ``1/n0``;
    sampling at ``n T / p0`` with ``Y(-theta) = 0``; ceiling of each
    increment to the ``eta`` lattice; zeroing increments with norm above ``M``.
    Entry 0 is ``Y(0)`` itself.
    """
    theta = T / p0
    times = np.arange(p0 + 1) * theta
    if n0:
        lo = np.maximum(times - 1.0 / n0, 0.0)
        vals = n0 * (Y.integral(times) - Y.integral(lo))
    else:
        vals = Y(times)
    inc = np.diff(vals, axis=0, prepend=np.zeros((1, vals.shape[1])))
    inc = ceil_to_lattice(inc, eta)
    inc[np.linalg.norm(inc, axis=1) > M * (1 + 1e-12)] = 0.0
    return inc
