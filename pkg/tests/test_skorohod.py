import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from htnet.skorohod import (
    NotContractive,
    PiecewisePath,
    SPSolution,
    dump_csv,
    gamma_bar,
    lipschitz_constants,
    reflect_1d,
    regulate,
    solve_sp,
    verify_sp,
)

TANDEM_D = np.array([[1.0, 0.0], [-1.0, 1.0]])


def random_pl_path(rng, dim, n_knots=8, n=400, start_pos=True):
    knots = np.sort(np.concatenate([[0.0, 1.0], rng.random(n_knots - 2)]))
    vals = rng.normal(0, 1, size=(n_knots, dim)).cumsum(axis=0)
    if start_pos:
        vals -= vals[0] - np.abs(rng.normal(0, 0.5, size=dim))
    grid = np.linspace(0, 1, n + 1)
    return grid, np.stack([np.interp(grid, knots, vals[:, i]) for i in range(dim)], axis=1)


def test_one_dim_example():
    t = np.linspace(0, 1, 101)
    sol = solve_sp(PiecewisePath(t, 1 - 2 * t), [[1.0]])
    assert np.allclose(sol.y[:, 0], np.maximum(2 * t - 1, 0), atol=1e-12)
    assert np.allclose(sol.z[:, 0], np.maximum(1 - 2 * t, 0), atol=1e-12)


def test_nonnegative_input_needs_no_regulation(rng):
    t = np.linspace(0, 1, 51)
    x = np.abs(rng.normal(size=(51, 2)))
    sol = solve_sp(x, TANDEM_D)
    assert not sol.y.any()
    assert np.array_equal(sol.z, x)


def test_tandem_hand_example():
    t = np.linspace(0, 1, 201)
    x = np.stack([1 - 2 * t, np.ones_like(t)], axis=1)
    sol = solve_sp(x, TANDEM_D)
    y1 = np.maximum(2 * t - 1, 0)
    assert np.abs(sol.y[:, 0] - y1).max() <= 1e-12
    assert np.abs(sol.y[:, 1]).max() == 0
    assert np.abs(sol.z[:, 1] - (1 - y1)).max() <= 1e-12
    assert verify_sp(x, sol, TANDEM_D).ok(1e-9)


@given(st.integers(0, 100_000))
def test_closed_form_matches_iteration(seed):
    rng = np.random.default_rng(seed)
    _, x = random_pl_path(rng, 1)
    d = rng.uniform(0.5, 2.0)
    closed = reflect_1d(x[:, 0], d)
    # coupling only into the second component keeps the first one 1-d but runs the general iteration
    D = np.array([[d, 0.0], [-0.5, 1.0]])
    y, sweeps, _ = regulate(np.hstack([x, x]), D)
    assert np.abs(y[:, 0] - closed).max() <= 1e-12


@given(st.integers(0, 100_000))
def test_solver_output_satisfies_sp(seed):
    rng = np.random.default_rng(seed)
    _, x = random_pl_path(rng, 2)
    sol = solve_sp(x, TANDEM_D)
    rep = verify_sp(x, sol, TANDEM_D)
    assert rep.ok(1e-9)


def test_verify_detects_bad_solutions():
    t = np.linspace(0, 1, 101)
    x = (1 - 2 * t)[:, None]
    sol = solve_sp(x, [[1.0]])
    y = sol.y.copy()
    y[60] -= 0.05
    bad = SPSolution(z=x + y, y=y, sweeps=1, residual=0.0)
    assert verify_sp(x, bad, [[1.0]]).monotonicity > 0
    shifted = SPSolution(z=sol.z - 2e-10, y=sol.y, sweeps=1, residual=0.0)
    assert verify_sp(x, shifted, [[1.0]]).negativity > 0


def test_not_contractive():
    with pytest.raises(NotContractive):
        solve_sp(np.zeros((3, 2)), [[1.0, -1.0], [-1.0, 1.0]])


def test_gamma_bar_scalar_identity(single_plan):
    t = np.linspace(0, 1, 101)
    x = (1 - 2 * t)[:, None]
    assert np.array_equal(gamma_bar(x, single_plan), solve_sp(x, single_plan.D).y)


def test_gamma_bar_nonbasic_rows_vanish(jobshop_plan, rng):
    _, x = random_pl_path(rng, 3)
    gb = gamma_bar(x, jobshop_plan)
    B = jobshop_plan.basic_count
    assert not gb[:, B:].any()


@given(st.integers(0, 100_000))
def test_gamma_bar_keeps_K_y_monotone(seed):
    plan = _tandem_plan()
    rng = np.random.default_rng(seed)
    _, x = random_pl_path(rng, 2)
    U = gamma_bar(x, plan) @ plan.K_mat.T
    assert U.min() >= 0
    assert np.diff(U, axis=0).min() >= -1e-12


_cache = {}


def _tandem_plan():
    if "t" not in _cache:
        from htnet.examples import load_example
        from htnet.planning import analyze

        _cache["t"] = analyze(load_example("tandem"))
    return _cache["t"]


def test_lipschitz_bound_holds_empirically(rng):
    Lz, Ly = lipschitz_constants(TANDEM_D)
    worst = 0.0
    for _ in range(100):
        _, x1 = random_pl_path(rng, 2)
        x2 = x1 + rng.normal(0, 0.3, size=x1.shape).cumsum(axis=0) / 20
        x2[0] = np.abs(x2[0])
        d = np.abs(x1 - x2).max()
        gap = np.abs(solve_sp(x1, TANDEM_D).z - solve_sp(x2, TANDEM_D).z).max()
        worst = max(worst, gap / d)
    assert worst <= Lz


def test_grid_refinement_is_stable(rng):
    knots = np.array([0, 0.3, 0.6, 1.0])
    vals = np.array([[0.5, 0.2], [-1.0, 0.4], [0.3, -0.8], [-0.5, 0.1]])

    def path(n):
        g = np.linspace(0, 1, n + 1)
        return g, np.stack([np.interp(g, knots, vals[:, i]) for i in range(2)], axis=1)

    g1, x1 = path(300)
    g2, x2 = path(600)
    z1 = solve_sp(x1, TANDEM_D).z
    z2 = solve_sp(x2, TANDEM_D).z[::2]
    # modulus of continuity over one coarse step times the Lipschitz constant
    Lz, _ = lipschitz_constants(TANDEM_D)
    w = np.abs(np.diff(x1, axis=0)).max()
    assert np.abs(z1 - z2).max() <= Lz * w + 1e-12


def test_bridge_envelope_regulates_dips():
    x = np.array([[1.0], [1.0]])
    low = np.array([[1.0], [-0.5]])
    sol = solve_sp(x, [[1.0]], x_low=low)
    assert sol.y[-1, 0] == pytest.approx(0.5)
    assert verify_sp(x, sol, [[1.0]], x_low=low).ok()


def test_piecewise_path_eval_and_integral():
    p = PiecewisePath([0, 1, 2], [0, 2, 2])
    assert p(0.5)[0, 0] == 1.0
    assert p.integral(2.0)[0, 0] == pytest.approx(3.0)
    c = PiecewisePath([0, 1, 2], [1, 3, 5], interp="constant")
    assert c(1.5)[0, 0] == 3.0
    assert c.integral(1.5)[0, 0] == pytest.approx(2.5)
    with pytest.raises(ValueError):
        PiecewisePath([0, 0.5, 0.5], [1, 2, 3])
    with pytest.raises(ValueError):
        PiecewisePath([0, 1], [1, np.nan])


def test_dump_csv(tmp_path):
    t = np.linspace(0, 1, 5)
    x = (1 - 2 * t)[:, None]
    sol = solve_sp(x, [[1.0]])
    f = tmp_path / "sp.csv"
    dump_csv(f, t, x, sol)
    lines = f.read_text().splitlines()
    assert lines[0] == "t,x1,z1,y1" and len(lines) == 6
