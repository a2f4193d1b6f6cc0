import math
import warnings

import numpy as np
import pytest

from htnet.bcp import JumpRuleControl, ZeroRule
from htnet.model import materialize
from htnet.planning import find_positive_direction
from htnet.policy import (
    ParamsInvalid,
    ParamsWarning,
    TrackingParams,
    gate,
    make_policy,
    server_orders,
    slot_lengths,
    validate_params,
)
from htnet.sim import audit, run


def params_for(plan, kappa=0.1, m=40.0, rho=0.3, T=1.0, p0=1, j0=1, M=0.1, eps0=0.01, d1=None):
    y_star, _ = find_positive_direction(plan)
    ctl = JumpRuleControl(T=T, p0=p0, j0=j0, eta=0.01, M=M, eps0=eps0, y_star=y_star, rule=ZeroRule())
    d1 = float(np.max(plan.scaling.beta)) + 1.05 if d1 is None else d1
    return TrackingParams(kappa=kappa, m=m, d1=d1, rho=rho, control=ctl)


def T_at(trace, t):
    k = np.searchsorted(trace.times, t, side="right") - 1
    return trace.T[k] + trace.active[k] * (t - trace.times[k])


def test_slot_lengths_example():
    l1, l2, clamped = slot_lengths([1, 1], [0.5, 0.5], 5.0, 10.0)
    assert l1.tolist() == [9.0, 9.0] and l2.tolist() == [10.0, 10.0] and clamped == 0


def test_slot_lengths_nonbasic_and_clamp():
    l1, l2, clamped = slot_lengths([1, 0], [0.0, 0.0], 1.0, 4.0)
    assert l1.tolist() == [4.0, 0.0] and l2.tolist() == [4.0, 0.0] and clamped == 0
    l1, _, clamped = slot_lengths([0.1, 1], [1.0, 0.0], 1.0, 1.0)
    assert l1[0] == 0.0 and clamped == 1


def test_gate():
    assert gate(3, 5, 2.0)
    assert not gate(0, 5, 2.0)  # empty now
    assert not gate(3, 2, 2.0)  # not above the safety stock at the start
    assert gate(1, 1, 0.0)


def test_validate_params_upsilon(tandem_plan):
    ok = validate_params(params_for(tandem_plan, kappa=0.1, m=41), 10, tandem_plan)
    assert ok.ok and ok.margin("upsilon") == pytest.approx(1.2)
    bad = validate_params(params_for(tandem_plan, kappa=0.1, m=27), 10, tandem_plan)
    assert not bad.ok and bad.margin("upsilon") == pytest.approx(-0.2)


def test_validate_params_rho_is_advisory(tandem_plan):
    rep = validate_params(params_for(tandem_plan, rho=10.0, M=1.0), 20, tandem_plan, vartheta_lip=15.0)
    assert rep.ok
    assert rep.margin("rho min x*") == pytest.approx(-6.0)
    assert len(rep.warnings) == 1
    prim, q = materialize(tandem_plan.scaling, 20)
    with pytest.warns(ParamsWarning):
        make_policy(tandem_plan, params_for(tandem_plan, rho=10.0, M=1.0), 20, prim, vartheta_lip=15.0)


@pytest.mark.parametrize("kw", [dict(m=2.0), dict(kappa=1.0), dict(d1=1.5), dict(rho=20.0)])
def test_make_policy_rejects(tandem_plan, kw):
    prim, _ = materialize(tandem_plan.scaling, 10)
    with pytest.raises(ParamsInvalid):
        make_policy(tandem_plan, params_for(tandem_plan, **kw), 10, prim)


def test_epoch_layout(tandem_plan):
    prim, q = materialize(tandem_plan.scaling, 10)
    pol = make_policy(tandem_plan, params_for(tandem_plan, rho=2.0, p0=2, T=2.0), 10, prim)
    tr = run(tandem_plan.spec, prim, q, pol, 2.5, 0)
    s0, s1, s2 = pol.schedules
    assert (s0.a, s0.b) == (0.0, 20.0)
    assert (s1.a, s1.b, s1.a_next) == (100.0, 120.0, 200.0)
    assert s1.m2 == math.floor(80 / 10**0.1)
    # epoch p0 is the last and open-ended
    assert s2.m2 is None and math.isinf(s2.a_next)
    assert pol.m1 == math.floor(10 * 2.0 / 10**0.1)
    assert len(pol.samples) == 2 and tr.horizon == 250.0


def test_m1_formula(tandem_plan):
    prim, _ = materialize(tandem_plan.scaling, 10)
    pol = make_policy(tandem_plan, params_for(tandem_plan), 10, prim)
    assert pol.m1 == 2 == math.floor(10 * 0.3 / 10**0.1)


def test_server_orders(jobshop_plan):
    orders = server_orders(jobshop_plan)
    perm = jobshop_plan.perm
    for acts in orders:
        assert [perm[a] for a in acts] == sorted(perm[a] for a in acts)
    assert sorted(a for acts in orders for a in acts) == list(range(6))


def test_allocation_over_full_subintervals(tandem_plan):
    r = 10
    prim, _ = materialize(tandem_plan.scaling, r)
    pol = make_policy(tandem_plan, params_for(tandem_plan), r, prim)
    tr = run(tandem_plan.spec, prim, [400, 400], pol, 0.6, 1)
    sc = pol.schedules[0]
    nu = sc.nu
    x = tandem_plan.x_star
    d = sc.delta
    for k in range(sc.m1):
        dT = T_at(tr, sc.a + (k + 1) * d) - T_at(tr, sc.a + k * d)
        assert np.allclose(dT, (x - nu / 0.3) * d, atol=1e-9)
    for k in range(20):
        dT = T_at(tr, sc.b + (k + 1) * d) - T_at(tr, sc.b + k * d)
        assert np.allclose(dT, x * d, atol=1e-9)
    # stretch interval leftover after m1 full subintervals is idle
    assert np.allclose(T_at(tr, sc.b) - T_at(tr, sc.a + sc.m1 * d), 0.0)


def test_safety_stock_blocks_service(tandem_plan):
    r = 10
    prim, _ = materialize(tandem_plan.scaling, r)
    pol = make_policy(tandem_plan, params_for(tandem_plan), r, prim)
    tr = run(tandem_plan.spec, prim, [0, 0], pol, 0.1, 2)
    thr = pol.threshold
    # whenever activity 2 runs on I2, buffer 2 exceeded the safety stock at the start of that subinterval
    sc = pol.schedules[0]
    for k in range(len(tr.times) - 1):
        t = tr.times[k]
        if t >= sc.b and tr.active[k, 1] > 0:
            start = sc.b + math.floor((t - sc.b) / sc.delta) * sc.delta
            j = np.searchsorted(tr.times, start, side="right") - 1
            assert tr.Q[j, 1] > thr


@pytest.mark.parametrize("name", ["tandem", "n_network", "jobshop_fig3"])
def test_tracking_trace_audits_clean(request, name):
    plan = request.getfixturevalue({"tandem": "tandem_plan", "n_network": "n_plan", "jobshop_fig3": "jobshop_plan"}[name])
    prim, q = materialize(plan.scaling, 10)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ParamsWarning)
        pol = make_policy(plan, params_for(plan), 10, prim)
    tr = run(plan.spec, prim, q, pol, 1.0, 3, audit=True)
    assert audit(tr).ok()


def test_policy_uniforms_reproducible(tandem_plan):
    prim, q = materialize(tandem_plan.scaling, 5)
    pol = make_policy(tandem_plan, params_for(tandem_plan, p0=3, T=1.5), 5, prim)
    run(tandem_plan.spec, prim, q, pol, 0.5, 7, rep=2)
    u1 = pol.uniforms.copy()
    run(tandem_plan.spec, prim, q, pol, 0.5, 7, rep=2)
    assert np.array_equal(u1, pol.uniforms)
    run(tandem_plan.spec, prim, q, pol, 0.5, 7, rep=3)
    assert not np.array_equal(u1, pol.uniforms)
