import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from htnet.model import NetworkModel, NetworkSpec, ScalingScheme
from htnet.planning import (
    DirectionNotFound,
    NotHeavyTraffic,
    WorkloadInconsistent,
    WorkloadUnavailable,
    analyze,
    build_plan,
    build_workload,
    check_assumptions,
    find_positive_direction,
    solve_static_lp,
    with_workload,
)

EXP = "exponential"


def vertex_oracle(spec, alpha, beta):
    """Brute force over all bases of {R x = alpha, A x + s = rho 1}."""
    R = (spec.C - spec.P_prime) * np.asarray(beta)[None, :]
    I, J = R.shape
    K = spec.num_servers
    # variables (x, rho, s); rows R x = alpha, A x - rho 1 + s = 0
    A_eq = np.block([[R, np.zeros((I, 1)), np.zeros((I, K))], [spec.A, -np.ones((K, 1)), np.eye(K)]])
    b = np.concatenate([alpha, np.zeros(K)])
    n = A_eq.shape[1]
    best, sols = np.inf, []
    for cols in itertools.combinations(range(n), A_eq.shape[0]):
        B = A_eq[:, cols]
        if abs(np.linalg.det(B)) < 1e-10:
            continue
        xb = np.linalg.solve(B, b)
        if xb.min() < -1e-10:
            continue
        v = np.zeros(n)
        v[list(cols)] = xb
        rho = v[J]
        if rho < best - 1e-9:
            best, sols = rho, [v[:J]]
        elif abs(rho - best) <= 1e-9:
            sols.append(v[:J])
    return best, np.unique(np.round(sols, 9), axis=0)


def test_tandem_lp(tandem_plan):
    assert tandem_plan.x_star.tolist() == pytest.approx([1, 1], abs=1e-10)
    assert tandem_plan.rho_star == pytest.approx(1, abs=1e-10)
    assert tandem_plan.unique and tandem_plan.heavy_traffic


def test_single_lp(single_plan):
    assert single_plan.x_star.tolist() == pytest.approx([1.0], abs=1e-12)


def test_n_network_lp_against_vertex_oracle(n_plan):
    spec = n_plan.spec
    rho, sols = vertex_oracle(spec, n_plan.scaling.alpha, n_plan.scaling.beta)
    assert rho == pytest.approx(1.0, abs=1e-10)
    assert len(sols) == 1
    assert np.abs(n_plan.x_star - sols[0]).max() < 1e-10
    assert np.abs(n_plan.x_star - [1, 0.5, 0.5]).max() < 1e-10


def test_jobshop_lp_against_vertex_oracle(jobshop_plan):
    rho, sols = vertex_oracle(jobshop_plan.spec, jobshop_plan.scaling.alpha, jobshop_plan.scaling.beta)
    assert rho == pytest.approx(1.0, abs=1e-10) and len(sols) == 1
    assert np.abs(jobshop_plan.x_star - sols[0]).max() < 1e-10
    assert jobshop_plan.unique


def test_not_heavy_traffic_warns():
    spec = NetworkSpec(C=[[1]], A=[[1]], routing=[[1, 0]], arrival_classes=(0,))
    with pytest.warns(NotHeavyTraffic):
        sol = solve_static_lp(spec, [0.9], [1.0])
    assert sol.rho == pytest.approx(0.9)
    sc = ScalingScheme(alpha=[0.9], beta=[1], theta1=[0], theta2=[0], q=[0], arrival_family=(EXP,), service_family=(EXP,))
    plan = analyze(NetworkModel(spec, sc))
    assert check_assumptions(plan).get("heavy traffic (rho*=1, Ax*=1)") is False


def test_non_unique_flagged():
    # one server with two equally fast activities on one buffer: every split is optimal
    spec = NetworkSpec(C=[[1, 1]], A=[[1, 1]], routing=[[1, 0]] * 2, arrival_classes=(0,))
    sol = solve_static_lp(spec, [1.0], [1.0, 1.0])
    assert not sol.unique


def test_tandem_matrices(tandem_plan):
    p = tandem_plan
    assert np.array_equal(p.D, [[1, 0], [-1, 1]])
    assert np.array_equal(p.K_mat, np.eye(2))
    assert np.array_equal(p.R, [[1, 0], [-1, 1]])
    assert np.array_equal(p.Lambda, [[1, 0], [1, 1]])
    assert np.array_equal(p.G, np.eye(2))
    assert p.workload_exact
    assert p.theta.tolist() == [-1, 0]


def test_theta_second_term_vanishes():
    spec = NetworkSpec(C=np.eye(2), A=np.eye(2), routing=[[0, 0, 1], [1, 0, 0]], arrival_classes=(0,))
    sc = ScalingScheme(alpha=[1, 0], beta=[1, 1], theta1=[-0.5, 0], theta2=[0, 0], q=[0, 0],
                       arrival_family=(EXP, EXP), service_family=(EXP, EXP))
    assert analyze(NetworkModel(spec, sc)).theta.tolist() == [-0.5, 0]


def test_single_class_sigma(single_plan):
    assert single_plan.Sigma.tolist() == [[2.0]]


def test_single_class_sigma_by_sample_variance(rng):
    # E-hat(1) at r = 50 for rate-1 Poisson arrivals has variance alpha^3 sigma^2 = 1
    r = 50
    counts = rng.poisson(r * r, size=50_000)
    e_hat = (counts - r * r) / r
    assert e_hat.var() == pytest.approx(1.0, abs=3 * np.sqrt(2 / 50_000))


def test_plan_invariants(tandem_plan, n_plan, jobshop_plan, single_plan):
    for p in (tandem_plan, n_plan, jobshop_plan, single_plan):
        assert np.abs(p.R @ p.x_star - p.scaling.alpha).max() < 1e-10
        assert np.abs(p.spec.A @ p.x_star - 1).max() < 1e-10
        B = p.basic_count
        assert (p.x_star[:B] > 0).all() and (p.x_star[B:] == 0).all()
        assert np.array_equal(p.Sigma, p.Sigma.T)
        D = (p.spec.C - p.spec.P_prime) @ np.diag(p.scaling.beta) @ np.diag(p.x_star) @ p.spec.C.T
        assert np.abs(p.D - D).max() < 1e-12
        assert p.K_mat.shape == (p.spec.num_servers + p.num_activities - B, p.num_activities)


def test_parallel_server_D_is_diagonal():
    spec = NetworkSpec(C=[[1, 0, 1], [0, 1, 0]], A=[[1, 0, 0], [0, 1, 1]], routing=[[1, 0, 0]] * 3, arrival_classes=(0, 1))
    sc = ScalingScheme(alpha=[1.0, 0.5], beta=[1, 1, 1], theta1=[0, 0], theta2=[0, 0, 0], q=[0, 0],
                       arrival_family=(EXP, EXP), service_family=(EXP,) * 3)
    plan = analyze(NetworkModel(spec, sc))
    assert np.array_equal(plan.D, np.diag(np.diag(plan.D)))
    assert np.allclose(np.diag(plan.D), plan.gamma_star) and (plan.gamma_star > 0).all()


def test_jobshop_D_has_jobshop_form(jobshop_plan):
    p = jobshop_plan
    Pt = np.array([[0, 1, 0], [0, 0, 1], [0.2, 0.1, 0]])
    assert np.abs(p.D - (np.eye(3) - Pt.T) @ np.diag(p.gamma_star)).max() < 1e-12


def test_workload_user_matrices(n_plan):
    assert n_plan.Lambda.tolist() == [[1, 1]]
    assert n_plan.workload_exact
    with pytest.raises(WorkloadInconsistent):
        with_workload(n_plan, [[-1, 1]], [[1, 1]])
    with pytest.raises(WorkloadInconsistent):
        with_workload(n_plan, [[1, 2]], [[1, 1]])


def test_workload_unavailable(jobshop_plan):
    with pytest.raises(WorkloadUnavailable):
        build_workload(jobshop_plan)


def test_assumptions_tandem_pass(tandem_plan):
    rep = check_assumptions(tandem_plan)
    assert rep.ok
    assert all(p for _, p, _ in rep.items)


def test_g_zero_column_fails(tandem_plan):
    from dataclasses import replace

    bad = replace(tandem_plan, G=np.array([[1.0, 0.0], [0.0, 0.0]]))
    assert check_assumptions(bad).get("G columns (|Gu| >= c|u|)") is False


def test_positive_direction_examples(single_plan, tandem_plan, n_plan, jobshop_plan):
    y, m = find_positive_direction(single_plan)
    assert y.tolist() == pytest.approx([1.0])
    y, m = find_positive_direction(tandem_plan)
    assert y == pytest.approx(np.array([1, 2]) / np.sqrt(5))
    assert m == pytest.approx(1 / np.sqrt(5))
    for p in (n_plan, jobshop_plan):
        y, m = find_positive_direction(p)
        assert m > 0
        assert (p.R @ y).min() > 0 and (p.K_mat @ y).min() >= -1e-12
        assert np.linalg.norm(y) == pytest.approx(1.0)


def test_direction_not_found():
    # a server with no basic activity and no way to raise the queue: K y >= 0 forces y = 0
    spec = NetworkSpec(C=[[1]], A=[[1]], routing=[[1, 0]], arrival_classes=(0,))
    sc = ScalingScheme(alpha=[1], beta=[1], theta1=[0], theta2=[0], q=[0], arrival_family=(EXP,), service_family=(EXP,))
    plan = analyze(NetworkModel(spec, sc))
    from dataclasses import replace

    with pytest.raises(DirectionNotFound):
        find_positive_direction(replace(plan, K_mat=np.array([[-1.0]])))


@given(st.floats(0.2, 5.0), st.floats(0.2, 5.0))
def test_tandem_plan_for_any_rates(b1, b2):
    spec = NetworkSpec(C=np.eye(2), A=np.eye(2), routing=[[0, 0, 1], [1, 0, 0]], arrival_classes=(0,))
    a = min(b1, b2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NotHeavyTraffic)
        sol = solve_static_lp(spec, [a, 0], [b1, b2])
    assert sol.x == pytest.approx([a / b1, a / b2], abs=1e-9)
    assert sol.rho == pytest.approx(1.0, abs=1e-9)
