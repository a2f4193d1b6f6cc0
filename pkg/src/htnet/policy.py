"""Tracking policy for the r-th network built from a review-epoch jump rule.

Unscaled time is split into epochs of length ``r^2 theta_g`` starting at
``a(n)``. Each epoch opens with a jump-stretch interval ``I1 = [a(n), b(n))``
of length ``r rho`` and continues with ``I2 = [b(n), a(n+1))``. Both are cut
into subintervals of length ``Delta = r^kappa``; within a subinterval every
server runs its activities one after another in ascending activity order.
On ``I1`` activity ``j`` gets ``(x*_j - nu_j / rho) Delta`` so the deviation
from nominal allocation builds up by ``nu`` over the interval; on ``I2`` it
gets ``x*_j Delta``. On ``I2`` an activity only serves if its buffer held more
than the safety stock ``d1 r^kappa`` at the start of the subinterval.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bcp import JumpRuleControl, RuleContext, vartheta
from .sim import INF, POLICY_STREAM, stream_rng


class ParamsInvalid(ValueError):
    pass


class ParamsWarning(UserWarning):
    pass


@dataclass
class TrackingParams:
    kappa: float
    m: float
    d1: float
    rho: float
    control: JumpRuleControl

    def delta(self, r: float) -> float:
        return r**self.kappa

    def safety_stock(self, r: float) -> float:
        return self.d1 * r**self.kappa


@dataclass
class ParamsReport:
    items: list = field(default_factory=list)  # (name, passed, margin, hard)

    def add(self, name, passed, margin, hard=True):
        self.items.append((name, bool(passed), float(margin), hard))

    @property
    def ok(self) -> bool:
        return all(p for _, p, _, hard in self.items if hard)

    @property
    def warnings(self) -> list:
        return [n for n, p, _, hard in self.items if not p and not hard]

    def margin(self, name_prefix: str) -> float:
        return next(m for n, _, m, _ in self.items if n.startswith(name_prefix))

    def lines(self) -> list:
        out = []
        for n, p, m, hard in self.items:
            tag = "PASS" if p else ("FAIL" if hard else "WARN")
            out.append(f"[{tag}] {n} (margin {m:.6g})")
        return out


def validate_params(params: TrackingParams, r: float, plan, vartheta_lip: Optional[float] = None) -> ParamsReport:
    """Check the policy parameter inequalities; the rho condition is advisory only."""
    rep = ParamsReport()
    k, m = params.kappa, params.m
    rep.add("0 < kappa < 1", 0 < k < 1, min(k, 1 - k))
    rep.add("m > 2", m > 2, m - 2)
    ups = k * (1 + m) - 2
    rep.add("upsilon = kappa(1+m) - 2 > 1", ups > 1, ups - 1)
    bmax = float(np.max(plan.scaling.beta))
    rep.add("d1 > max beta + 1", params.d1 > bmax + 1, params.d1 - bmax - 1)
    ctl = params.control
    rep.add("r theta_g > rho", r * ctl.theta_g > params.rho, r * ctl.theta_g - params.rho)
    if vartheta_lip is not None:
        xs = plan.x_star[plan.x_star > 0]
        need = ctl.M * (vartheta_lip + 1) / float(xs.min())
        rep.add("rho min x* > M (lip + 1)", params.rho > need, params.rho - need, hard=False)
    return rep


def server_orders(plan) -> list:
    """Activities of each server in ascending original index (canonical indices returned)."""
    spec = plan.spec
    perm = plan.perm or tuple(range(spec.num_activities))
    return [sorted(spec.activities_of_server(k), key=lambda a: perm[a]) for k in range(spec.num_servers)]


def slot_lengths(x_star, nu, rho: float, delta: float):
    """``(I1 lengths, I2 lengths, clamped count)`` per activity for one Delta-subinterval."""
    x_star = np.asarray(x_star, dtype=float)
    raw = (x_star - np.asarray(nu, dtype=float) / rho) * delta
    clamped = int((raw < 0).sum())
    return np.maximum(raw, 0.0), x_star * delta, clamped


@dataclass
class SlotSchedule:
    """Slot layout of epoch ``n``: boundaries, subinterval counts and per-server ordered slots."""

    n: int
    nu: np.ndarray
    a: float
    b: float
    a_next: float  # inf for the final epoch
    delta: float
    m1: int
    m2: Optional[int]  # None when open-ended
    orders: list
    lengths1: np.ndarray
    lengths2: np.ndarray

    def server_slots(self, k: int, phase: int):
        lens = self.lengths1 if phase == 1 else self.lengths2
        acts = self.orders[k]
        return acts, [float(lens[j]) for j in acts]


def gate(q_now: int, q_at_start: int, threshold: float) -> bool:
    """Serve only if the buffer is nonempty now and exceeded ``threshold`` at the subinterval start."""
    return q_now > 0 and q_at_start > threshold


class TrackingPolicy:
    """Policy object for :func:`htnet.sim.run`; see the module docstring."""

    def __init__(self, plan, params: TrackingParams, r: float, prim, q_hat=None):
        self.plan, self.params, self.r, self.prim = plan, params, float(r), prim
        ctl = params.control
        self.control = ctl
        self.delta = params.delta(r)
        self.threshold = params.safety_stock(r)
        self.epoch_len = r * r * ctl.theta_g
        self.stretch = r * params.rho
        self.sample_len = r * r * ctl.sample_step
        self.m1 = int(math.floor(self.stretch / self.delta))
        self.m2 = int(math.floor((self.epoch_len - self.stretch) / self.delta))
        self.orders = server_orders(plan)
        self.buf = plan.spec.buffer_of.tolist()
        self.q_hat = np.zeros(plan.num_buffers) if q_hat is None else np.asarray(q_hat, dtype=float)
        self.ctx = RuleContext(q=self.q_hat, theta=plan.theta, sample_step=ctl.sample_step)
        CP = plan.spec.C - plan.spec.P_prime
        self._CP = CP
        self._Pp = plan.spec.P_prime
        self.reset()

    # -- lifecycle ---------------------------------------------------------------------------

    def reset(self, seed: int = 0, rep: int = 0) -> None:
        ctl = self.control
        self.uniforms = stream_rng(seed, rep, POLICY_STREAM).random(ctl.p0)
        self.samples = []
        self.n_samples_total = ctl.p0 * ctl.j0
        self.schedules = []
        self.clamps = 0
        self.epoch_queue = []
        self._begin_epoch(0, None)

    def sample_time(self, ell: int) -> float:
        ctl = self.control
        n, k = divmod(ell, ctl.j0)
        return n * self.epoch_len + k * self.sample_len

    @property
    def next_sample(self) -> float:
        ell = len(self.samples) + 1
        return self.sample_time(ell) if ell <= self.n_samples_total else INF

    # -- netput reconstruction ---------------------------------------------------------------

    def netput_hat(self, sim) -> np.ndarray:
        """Centered netput ``X-hat`` at the current time from the simulator counters."""
        s = sim.t
        prim = self.prim
        E = np.asarray(sim.E, dtype=float)
        S = np.asarray(sim.S, dtype=float)
        T = np.asarray(sim.T_vector())
        Phi = np.asarray(sim.Phi, dtype=float)[:, 1:].T  # (I, J)
        X = (E - prim.alpha * s) - self._CP @ (S - prim.beta * T) + (Phi - self._Pp * S[None, :]).sum(axis=1)
        return X / self.r

    # -- schedule construction ---------------------------------------------------------------

    def _begin_epoch(self, n: int, sim) -> None:
        ctl, plan = self.control, self.plan
        nu = ctl.eps0 * ctl.y_star
        if n >= 1:
            q_minus = np.asarray(sim.Q, dtype=float) / self.r
            nb = None
            if not ctl.is_zero:
                hist = np.asarray(self.samples[: n * ctl.j0])[None, :, :]
                nb = ctl.jumps(n, hist, self.uniforms[n - 1 : n], self.ctx, plan)
            if nb is not None:
                nu = vartheta(plan, q_minus[None, :], nb)[0] + ctl.eps0 * ctl.y_star
        l1, l2, clamped = slot_lengths(plan.x_star, nu, self.params.rho, self.delta)
        self.clamps += clamped
        a = n * self.epoch_len
        last = n == ctl.p0
        sched = SlotSchedule(
            n=n,
            nu=nu,
            a=a,
            b=a + self.stretch,
            a_next=INF if last else (n + 1) * self.epoch_len,
            delta=self.delta,
            m1=self.m1,
            m2=None if last else self.m2,
            orders=self.orders,
            lengths1=l1,
            lengths2=l2,
        )
        self.schedules.append(sched)
        self.sched = sched
        self.phase = 1
        self.sub = 0
        self._open_region(sim)

    def _open_region(self, sim) -> None:
        """Set up the subinterval (or idle remainder) that starts now."""
        sc = self.sched
        if self.phase == 1:
            start = sc.a + self.sub * sc.delta
            idle = self.sub >= sc.m1
            end = sc.b if idle else start + sc.delta
        else:
            start = sc.b + self.sub * sc.delta
            idle = sc.m2 is not None and self.sub >= sc.m2
            end = sc.a_next if idle else start + sc.delta
        end = min(end, sc.b if self.phase == 1 else sc.a_next)
        self.region_start, self.region_end, self.idle = start, end, idle
        self.slot_ends, self.slot_acts, self.ptr = [], [], []
        pending = {end}
        for k in range(len(self.orders)):
            acts, lens = sc.server_slots(k, self.phase)
            ends, acc = [], 0.0
            for ln in lens:
                acc += ln
                ends.append(start + acc)
            self.slot_acts.append(acts)
            self.slot_ends.append(ends)
            p = 0
            while p < len(ends) and ends[p] <= start:
                p += 1
            self.ptr.append(p)
            if not idle:
                pending.update(e for e in ends if start < e < end)
        self.pending = sorted(pending)
        self.snapshot = list(sim.Q) if sim is not None else None

    def _advance_region(self, sim) -> None:
        sc = self.sched
        if self.phase == 1:
            if self.region_end >= sc.b:
                self.phase, self.sub = 2, 0
            else:
                self.sub += 1
        else:
            if self.region_end >= sc.a_next:
                self._begin_epoch(sc.n + 1, sim)
                return
            self.sub += 1
        self._open_region(sim)

    # -- policy contract ---------------------------------------------------------------------

    def next_boundary(self) -> float:
        return min(self.pending[0], self.next_sample)

    def on_boundary(self, t: float, sim) -> None:
        if t == self.next_sample:
            self.samples.append(self.netput_hat(sim))
        while self.pending and self.pending[0] <= t:
            self.pending.pop(0)
        if t >= self.region_end:
            self._advance_region(sim)
            return
        for k, ends in enumerate(self.slot_ends):
            p = self.ptr[k]
            while p < len(ends) and ends[p] <= t:
                p += 1
            self.ptr[k] = p

    def allocate(self, t: float, sim) -> list:
        if self.snapshot is None:
            self.snapshot = list(sim.Q)
        out = []
        if self.idle:
            return [-1] * len(self.orders)
        thr = self.threshold if self.phase == 2 else 0.0
        Q, snap = sim.Q, self.snapshot
        for k, acts in enumerate(self.slot_acts):
            p = self.ptr[k]
            if p >= len(acts):
                out.append(-1)
                continue
            j = acts[p]
            i = self.buf[j]
            snap_q = snap[i] if self.phase == 2 else Q[i]
            out.append(j if gate(Q[i], snap_q, thr) else -1)
        return out

    # -- introspection -----------------------------------------------------------------------

    def in_I2(self, t: float) -> bool:
        return self.phase == 2


def make_policy(plan, params: TrackingParams, r: float, prim, q_hat=None, vartheta_lip: Optional[float] = None) -> TrackingPolicy:
    """Validate parameters for this ``r`` and return a fresh tracking policy."""
    rep = validate_params(params, r, plan, vartheta_lip)
    if not rep.ok:
        failed = [line for line in rep.lines() if line.startswith("[FAIL]")]
        raise ParamsInvalid("; ".join(failed))
    for name in rep.warnings:
        warnings.warn(f"policy parameter condition not met: {name}", ParamsWarning, stacklevel=2)
    params.control.validate(plan)
    return TrackingPolicy(plan, params, r, prim, q_hat)
