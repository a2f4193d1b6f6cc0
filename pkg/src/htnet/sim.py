"""Event-driven simulation of the r-th network under a per-server single-activity policy.

Service is preemptive-resume: an activity keeps its job (and the residual
work) when the server switches away, and picks it up again later. Each
activity draws its service times, and each arrival class its interarrival
times, from its own random stream, so the primitives ``E_i`` and ``S_j`` are
fixed sequences independent of the policy.

Policy contract: ``next_boundary()`` returns the next time at which the
policy wants control (or ``inf``), ``on_boundary(t, sim)`` is called there,
and ``allocate(t, sim)`` is called after every event and returns, per server,
an activity index or ``-1`` (idle).
"""
from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import NetworkSpec, PrimitiveSpec

INF = math.inf
BLOCK = 512
ARRIVAL_STREAM, SERVICE_STREAM, ROUTING_STREAM, POLICY_STREAM = 1, 2, 3, 4


class PolicyInfeasible(RuntimeError):
    pass


class AuditFailure(AssertionError):
    pass


def stream_rng(seed: int, rep: int, kind: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(rep), 1000 + int(kind), int(index)]))


class Sampler:
    """Sequential draws from a distribution in fixed-size blocks; keeps every value drawn."""

    def __init__(self, dist, rng: np.random.Generator):
        self.dist = dist
        self.rng = rng
        self.values: list = []
        self.pos = 0

    def next(self) -> float:
        if self.pos == len(self.values):
            self.values.extend(self.dist.sample(self.rng, BLOCK).tolist())
        v = self.values[self.pos]
        self.pos += 1
        return v

    def partial_sums(self, upto: float) -> np.ndarray:
        """Cumulative sums of the sequence, extended until they exceed ``upto``."""
        while not self.values or sum(self.values) <= upto:
            self.values.extend(self.dist.sample(self.rng, BLOCK).tolist())
        return np.cumsum(self.values)


class UniformStream:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.buf: list = []
        self.pos = 0

    def next(self) -> float:
        if self.pos == len(self.buf):
            self.buf = self.rng.random(BLOCK).tolist()
            self.pos = 0
        u = self.buf[self.pos]
        self.pos += 1
        return u


@dataclass
class SimTrace:
    """Event record of one run: ``Q`` and the active-activity flags hold on ``[times[k], times[k+1])``."""

    r: float
    horizon: float  # unscaled
    times: np.ndarray
    Q: np.ndarray  # (n_ev, I) int
    active: np.ndarray  # (n_ev, J) bool
    q0: np.ndarray
    x_star: np.ndarray
    spec: NetworkSpec
    prim: PrimitiveSpec
    arrival_sums: list  # per class: cumulative interarrival times (or None)
    service_sums: list  # per activity: cumulative service times
    final_E: np.ndarray
    final_S: np.ndarray
    final_Phi: np.ndarray
    final_T: np.ndarray
    events: dict = field(default_factory=dict)
    T_events: Optional[np.ndarray] = None  # simulator's own T at each event (audit mode)
    identity_residual: int = 0
    clamps: int = 0

    @property
    def T(self) -> np.ndarray:
        """Cumulative allocation at each event time, integrated from the active flags."""
        dts = np.diff(self.times, prepend=self.times[0])
        inc = np.zeros_like(self.active, dtype=float)
        inc[1:] = self.active[:-1] * dts[1:, None]
        return np.cumsum(inc, axis=0)


class Simulator:
    """State machine for one replication; see module docstring for the policy contract."""

    def __init__(self, spec: NetworkSpec, prim: PrimitiveSpec, q0, policy, seed: int, rep: int = 0, audit: bool = False, x_star=None):
        self.spec, self.prim, self.policy = spec, prim, policy
        self.I, self.J, self.K = spec.num_buffers, spec.num_activities, spec.num_servers
        self.buf = spec.buffer_of.tolist()
        self.srv = spec.server_of.tolist()
        self.acts_of_server = [spec.activities_of_server(k) for k in range(self.K)]
        self.q0 = [int(v) for v in q0]
        if any(v < 0 for v in self.q0):
            raise ValueError("initial queue must be nonnegative")
        self.Q = list(self.q0)
        self.E = [0] * self.I
        self.S = [0] * self.J
        self.Phi = [[0] * (self.I + 1) for _ in range(self.J)]
        self.Tb = [0.0] * self.J  # allocation accrued before the current service spell
        self.start = [0.0] * self.J
        self.holding = [False] * self.J
        self.resid = [0.0] * self.J
        self.claimed = [0] * self.I
        self.cur = [-1] * self.K
        self.next_comp = [INF] * self.J
        self.t = 0.0
        self.audit = audit
        self.x_star = np.zeros(self.J) if x_star is None else np.asarray(x_star, dtype=float)
        self.arrivals = [
            Sampler(d, stream_rng(seed, rep, ARRIVAL_STREAM, i)) if d is not None else None for i, d in enumerate(prim.arrivals)
        ]
        self.services = [Sampler(d, stream_rng(seed, rep, SERVICE_STREAM, j)) for j, d in enumerate(prim.services)]
        self.routing = [UniformStream(stream_rng(seed, rep, ROUTING_STREAM, j)) for j in range(self.J)]
        self.route_cum = [np.cumsum(spec.routing[j]).tolist() for j in range(self.J)]
        for c in self.route_cum:
            c[-1] = 1.0 + 1e-15
        self.next_arr = [s.next() if s is not None else INF for s in self.arrivals]
        self.n_events = {"arrival": 0, "completion": 0, "boundary": 0}

    # -- bookkeeping -------------------------------------------------------------------------

    def T_now(self, j: int) -> float:
        if self.cur[self.srv[j]] == j and self.holding[j]:
            return self.Tb[j] + (self.t - self.start[j])
        return self.Tb[j]

    def T_vector(self) -> list:
        return [self.T_now(j) for j in range(self.J)]

    def available(self, j: int) -> bool:
        """Activity ``j`` could work now: it holds a job or its buffer has an unclaimed one."""
        i = self.buf[j]
        return self.holding[j] or self.Q[i] > self.claimed[i]

    def identity_residual(self) -> int:
        worst = 0
        for i in range(self.I):
            rhs = self.q0[i] + self.E[i]
            for j in range(self.J):
                if self.buf[j] == i:
                    rhs -= self.S[j]
                rhs += self.Phi[j][i + 1]
            worst = max(worst, abs(rhs - self.Q[i]))
        return worst

    def _stop(self, j: int) -> None:
        t = self.t
        self.Tb[j] += t - self.start[j]
        self.resid[j] = self.next_comp[j] - t
        self.next_comp[j] = INF

    def _start(self, j: int) -> bool:
        if not self.holding[j]:
            i = self.buf[j]
            if self.Q[i] <= self.claimed[i]:
                return False
            self.claimed[i] += 1
            self.holding[j] = True
            self.resid[j] = self.services[j].next()
        self.start[j] = self.t
        self.next_comp[j] = self.t + self.resid[j]
        return True

    def _complete(self, j: int) -> None:
        t = self.t
        self.Tb[j] += t - self.start[j]
        self.next_comp[j] = INF
        self.holding[j] = False
        self.cur[self.srv[j]] = -1
        i = self.buf[j]
        self.S[j] += 1
        self.Q[i] -= 1
        self.claimed[i] -= 1
        dest = bisect_right(self.route_cum[j], self.routing[j].next())
        self.Phi[j][dest] += 1
        if dest > 0:
            self.Q[dest - 1] += 1

    def _apply(self, alloc) -> None:
        for k in range(self.K):
            want = alloc[k]
            have = self.cur[k]
            if want == have:
                continue
            if want >= 0:
                if self.srv[want] != k:
                    raise PolicyInfeasible(f"activity {want + 1} does not belong to server {k + 1}")
                if self.Q[self.buf[want]] <= 0:
                    raise PolicyInfeasible(f"activity {want + 1} requested on empty buffer {self.buf[want] + 1} at t={self.t}")
            if have >= 0:
                self._stop(have)
                self.cur[k] = -1
            if want >= 0 and self._start(want):
                self.cur[k] = want

    # -- main loop ---------------------------------------------------------------------------

    def run(self, horizon: float) -> SimTrace:
        policy = self.policy
        times = [0.0]
        self._apply(policy.allocate(0.0, self))
        cur = self.cur
        rec_Q = [tuple(self.Q)]
        rec_A = [tuple(cur)]
        rec_T = [self.T_vector()] if self.audit else None
        worst = self.identity_residual() if self.audit else 0
        next_arr, next_comp = self.next_arr, self.next_comp
        counts = self.n_events
        while True:
            ta = min(next_arr)
            tc = min(next_comp)
            tb = policy.next_boundary()
            tn = min(ta, tc, tb)
            if tn > horizon:
                break
            if tn < self.t:
                raise RuntimeError("event calendar went backwards")
            self.t = tn
            if tc == tn:
                self._complete(next_comp.index(tc))
                counts["completion"] += 1
            elif ta == tn:
                i = next_arr.index(ta)
                self.Q[i] += 1
                self.E[i] += 1
                next_arr[i] = tn + self.arrivals[i].next()
                counts["arrival"] += 1
            else:
                policy.on_boundary(tn, self)
                counts["boundary"] += 1
            self._apply(policy.allocate(tn, self))
            times.append(tn)
            rec_Q.append(tuple(self.Q))
            rec_A.append(tuple(cur))
            if self.audit:
                rec_T.append(self.T_vector())
                worst = max(worst, self.identity_residual())
        self.t = horizon
        J = self.J
        A = np.array(rec_A, dtype=int)
        active = np.zeros((len(A), J), dtype=bool)
        for k in range(self.K):
            col = A[:, k]
            on = col >= 0
            active[np.flatnonzero(on), col[on]] = True
        pure_work = max(self.T_vector()) if J else 0.0
        arr_sums = [s.partial_sums(horizon) if s is not None else None for s in self.arrivals]
        svc_sums = [s.partial_sums(max(horizon, pure_work)) for s in self.services]
        return SimTrace(
            r=self.prim.r,
            horizon=horizon,
            times=np.array(times),
            Q=np.array(rec_Q, dtype=np.int64),
            active=active,
            q0=np.array(self.q0),
            x_star=self.x_star,
            spec=self.spec,
            prim=self.prim,
            arrival_sums=arr_sums,
            service_sums=svc_sums,
            final_E=np.array(self.E),
            final_S=np.array(self.S),
            final_Phi=np.array(self.Phi),
            final_T=np.array(self.T_vector()),
            events=dict(counts),
            T_events=np.array(rec_T) if self.audit else None,
            identity_residual=worst,
            clamps=getattr(policy, "clamps", 0),
        )


def run(spec: NetworkSpec, prim: PrimitiveSpec, q0, policy, t_max: float, seed: int, rep: int = 0, audit: bool = False, x_star=None) -> SimTrace:
    """Simulate on ``[0, r^2 t_max]`` (unscaled time)."""
    if hasattr(policy, "reset"):
        policy.reset(seed=seed, rep=rep)
    sim = Simulator(spec, prim, q0, policy, seed, rep, audit, x_star)
    return sim.run(prim.r**2 * t_max)


# ---- audits, costs and scaled views -----------------------------------------------------------


@dataclass(frozen=True)
class AuditReport:
    identity_residual: int
    idleness_decrease: float
    lipschitz_excess: float
    allocation_decrease: float

    def ok(self, tol: float = 1e-9) -> bool:
        return self.identity_residual == 0 and max(self.idleness_decrease, self.lipschitz_excess, self.allocation_decrease) <= tol


def audit(trace: SimTrace) -> AuditReport:
    """Check the pathwise identity, monotone idleness and ``0 <= dT <= dt`` on the simulator's own T."""
    T = trace.T_events if trace.T_events is not None else trace.T
    t = trace.times
    dT = np.diff(T, axis=0)
    dt = np.diff(t)[:, None]
    scale = np.maximum(1.0, t[1:, None])
    A = trace.spec.A
    idle = t[:, None] - T @ A.T
    dI = np.diff(idle, axis=0)
    return AuditReport(
        identity_residual=int(trace.identity_residual),
        idleness_decrease=float(np.maximum(-dI / scale, 0).max()) if len(dI) else 0.0,
        lipschitz_excess=float(np.maximum((dT - dt) / scale, 0).max()) if len(dT) else 0.0,
        allocation_decrease=float(np.maximum(-dT / scale, 0).max()) if len(dT) else 0.0,
    )


@dataclass(frozen=True)
class CostResult:
    value: float
    holding: float
    control: float
    tail_bound: float


def cost(trace: SimTrace, gamma: float, h, p=None, K_mat=None) -> CostResult:
    """Exact discounted cost of a trace in diffusion scaling.

    ``Q-hat = Q / r`` is piecewise constant and ``U-hat = K (x* r^2 t - T(r^2 t)) / r``
    is piecewise linear between events, so both integrals are sums of
    closed-form exponential segments. The tail beyond the horizon is bounded
    by the final ``Q-hat`` plus expected exogenous arrivals after the horizon.
    """
    r = trace.r
    h = np.asarray(h, dtype=float)
    t = np.append(trace.times, trace.horizon) / r**2
    e = np.exp(-gamma * t)
    seg = (e[:-1] - e[1:]) / gamma
    hq = trace.Q @ h / r
    holding = float(hq @ seg)
    control = 0.0
    if p is not None and np.any(p):
        K_mat = np.asarray(K_mat, dtype=float)
        rate = r * (trace.x_star[None, :] - trace.active)  # dY-hat/dt per segment
        control = float(((rate @ K_mat.T) @ np.asarray(p, dtype=float)) @ seg)
    t_end = t[-1]
    # jobs in the system grow only through exogenous arrivals
    arrival_rate = float(np.sum(trace.prim.alpha))
    tail = math.exp(-gamma * t_end) * (float(hq[-1]) / gamma + float(np.abs(h).max()) * r * arrival_rate / gamma**2)
    return CostResult(holding + control, holding, control, tail)


def discounted_netput(trace: SimTrace, gamma: float) -> np.ndarray:
    """``int_0^H e^{-gamma t} X-hat(t) dt`` per buffer, exact over the event segments.

    Uses ``r X-hat = Q - q0 - alpha^r s + R^r T(s)`` with ``R^r = (C - P') diag(beta^r)``.
    With exponential primitives ``X-hat`` is a martingale started at 0, so the
    result has mean zero and serves as a control variate for the trace cost.
    """
    r, prim = trace.r, trace.prim
    R_r = (trace.spec.C - trace.spec.P_prime) * prim.beta[None, :]
    t = np.append(trace.times, trace.horizon) / r**2
    a, b = t[:-1], t[1:]
    e0, e1 = np.exp(-gamma * a), np.exp(-gamma * b)
    I0 = (e0 - e1) / gamma
    I1 = (a * e0 - b * e1) / gamma + (e0 - e1) / gamma**2
    # on a segment X-hat is affine in scaled time: const + slope * t
    slope = trace.active @ R_r.T * r - prim.alpha[None, :] * r
    const = (trace.Q - trace.q0[None, :]) / r + (trace.T @ R_r.T) / r - trace.active @ R_r.T * r * a[:, None]
    return const.T @ I0 + slope.T @ I1


def _counts(sums, x):
    return np.searchsorted(sums, x, side="right")


def scale_views(trace: SimTrace, grid, Lambda=None, K_mat=None) -> dict:
    """Fluid and diffusion scaled processes on the scaled-time ``grid``."""
    r = trace.r
    grid = np.asarray(grid, dtype=float)
    s = grid * r**2
    idx = np.searchsorted(trace.times, s, side="right") - 1
    T_ev = trace.T
    since = (s - trace.times[idx])[:, None]
    T = T_ev[idx] + trace.active[idx] * since
    Q = trace.Q[idx].astype(float)
    alpha, beta = trace.prim.alpha, trace.prim.beta
    E = np.zeros((len(grid), trace.spec.num_buffers))
    for i, sums in enumerate(trace.arrival_sums):
        if sums is not None:
            E[:, i] = _counts(sums, s)
    S = np.column_stack([_counts(sums, s) for sums in trace.service_sums])
    Y_hat = (trace.x_star[None, :] * s[:, None] - T) / r
    out = {
        "t": grid,
        "T_bar": T / r**2,
        "Q_bar": Q / r**2,
        "E_hat": (E - alpha[None, :] * s[:, None]) / r,
        "S_hat": (S - beta[None, :] * s[:, None]) / r,
        "Q_hat": Q / r,
        "Y_hat": Y_hat,
    }
    if K_mat is not None:
        out["U_hat"] = Y_hat @ np.asarray(K_mat).T
    if Lambda is not None:
        out["W_hat"] = out["Q_hat"] @ np.asarray(Lambda).T
    return out


# ---- baseline policies ------------------------------------------------------------------------


class StaticPriorityPolicy:
    """Preemptive static priority: each server runs the first activity in ``order`` that can work."""

    def __init__(self, spec: NetworkSpec, order=None):
        self.order = [spec.activities_of_server(k) for k in range(spec.num_servers)]
        if order is not None:
            rank = {j: n for n, j in enumerate(order)}
            self.order = [sorted(a, key=lambda j: rank.get(j, len(rank) + j)) for a in self.order]

    def next_boundary(self) -> float:
        return INF

    def on_boundary(self, t, sim) -> None:
        pass

    def allocate(self, t, sim):
        return [next((j for j in acts if sim.available(j)), -1) for acts in self.order]


class AlwaysServePolicy(StaticPriorityPolicy):
    """Serve whenever a buffer of the server holds work, lowest activity index first."""
