"""Heavy-traffic static data: planning LP, basic/nonbasic partition, K, Lambda, G, D, drift and covariance."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional

import numpy as np

from . import lp
from .model import NetworkModel, NetworkSpec, ScalingScheme, routing_covariance


class NotHeavyTraffic(UserWarning):
    pass


class WorkloadUnavailable(ValueError):
    pass


class WorkloadInconsistent(ValueError):
    pass


class DirectionNotFound(RuntimeError):
    pass


Infeasible = lp.Infeasible

BASIC_TOL = 1e-9


@dataclass(frozen=True)
class LPSolution:
    x: np.ndarray
    rho: float
    unique: bool
    heavy_traffic: bool
    vertices: int


@dataclass(frozen=True)
class StaticPlan:
    """All derived heavy-traffic data, in canonical activity order (basic first)."""

    spec: NetworkSpec
    scaling: ScalingScheme
    perm: tuple
    x_star: np.ndarray
    rho_star: float
    unique: bool
    heavy_traffic: bool
    basic_count: int
    B_mat: np.ndarray
    N_mat: np.ndarray
    H: np.ndarray
    M_mat: np.ndarray
    R: np.ndarray
    K_mat: np.ndarray
    D: np.ndarray
    theta: np.ndarray
    Sigma: np.ndarray
    gamma_star: np.ndarray
    Lambda: Optional[np.ndarray] = None
    G: Optional[np.ndarray] = None
    workload_exact: bool = False

    @property
    def num_buffers(self) -> int:
        return self.spec.num_buffers

    @property
    def num_activities(self) -> int:
        return self.spec.num_activities

    @property
    def n_controls(self) -> int:
        """N = K + J - B, the dimension of U = K Y."""
        return self.K_mat.shape[0]

    @property
    def workload_dim(self) -> int:
        """L = I + K - B."""
        return self.spec.num_buffers + self.spec.num_servers - self.basic_count

    @property
    def gamma_bar_matrix(self) -> np.ndarray:
        """diag(x*) C', mapping a buffer regulator to activity deviations."""
        return np.diag(self.x_star) @ self.spec.C.T


def input_output_matrix(spec: NetworkSpec, beta) -> np.ndarray:
    """R = (C - P') diag(beta)."""
    return (spec.C - spec.P_prime) * np.asarray(beta, dtype=float)[None, :]


def _static_lp_data(spec: NetworkSpec, alpha, beta):
    I, J, K = spec.num_buffers, spec.num_activities, spec.num_servers
    R = input_output_matrix(spec, beta)
    # variables: x (J), rho, slacks (K)
    A_eq = np.zeros((I + K, J + 1 + K))
    A_eq[:I, :J] = R
    A_eq[I:, :J] = spec.A
    A_eq[I:, J] = -1.0
    A_eq[I:, J + 1:] = np.eye(K)
    b_eq = np.concatenate([np.asarray(alpha, dtype=float), np.zeros(K)])
    c = np.zeros(J + 1 + K)
    c[J] = 1.0
    return c, A_eq, b_eq


def solve_static_lp(spec: NetworkSpec, alpha, beta, tol: float = 1e-9) -> LPSolution:
    """Solve ``min rho s.t. R x = alpha, A x <= rho 1, x >= 0`` and certify uniqueness."""
    c, A_eq, b_eq = _static_lp_data(spec, alpha, beta)
    J = spec.num_activities
    res = lp.simplex(c, A_eq, b_eq)
    verts = lp.optimal_face_vertices(c, A_eq, b_eq, res.objective)
    if verts is None:
        unique = lp.face_is_singleton(c, A_eq, b_eq, res.objective)
        n_vert = 1 if unique else 2
    else:
        n_vert = len(verts)
        unique = n_vert == 1
    x = res.x[:J].copy()
    rho = float(res.x[J])
    heavy = abs(rho - 1.0) <= tol and np.allclose(spec.A @ x, 1.0, atol=tol) and unique
    if abs(rho - 1.0) > tol or not np.allclose(spec.A @ x, 1.0, atol=tol):
        warnings.warn(f"not in heavy traffic: rho*={rho:.6g}, Ax*={spec.A @ x}", NotHeavyTraffic, stacklevel=2)
    return LPSolution(x=x, rho=rho, unique=unique, heavy_traffic=bool(heavy), vertices=n_vert)


def canonical_permutation(x_star, tol: float = BASIC_TOL) -> tuple:
    """Basic activities first, each group in original order."""
    x_star = np.asarray(x_star)
    basic = [j for j in range(len(x_star)) if x_star[j] > tol]
    return tuple(basic + [j for j in range(len(x_star)) if x_star[j] <= tol])


def renewal_covariance(spec: NetworkSpec, scaling: ScalingScheme, x_star) -> np.ndarray:
    """Covariance of the limiting netput Brownian motion.

    Interarrival and service variance constants follow the renewal FCLT:
    ``alpha^3 sigma_u^2`` and ``beta^3 sigma_v^2``.
    """
    x_star = np.asarray(x_star, dtype=float)
    a, b = scaling.alpha, scaling.beta
    Sigma = np.diag(a**3 * scaling.sigma_u**2)
    CP = spec.C - spec.P_prime
    Sigma = Sigma + CP @ np.diag(b**3 * scaling.sigma_v**2 * x_star) @ CP.T
    for j in range(spec.num_activities):
        Sigma = Sigma + b[j] * x_star[j] * routing_covariance(spec, j)
    return 0.5 * (Sigma + Sigma.T)


def build_plan(spec: NetworkSpec, scaling: ScalingScheme, lp_result: LPSolution) -> StaticPlan:
    """Assemble the partition, K, D, drift, covariance and aggregate rates.

    The returned plan (and its ``spec``/``scaling``) uses the canonical
    activity order; ``plan.perm[a]`` is the original index of activity ``a``.
    """
    perm = canonical_permutation(lp_result.x)
    spec = spec.permuted(perm)
    scaling = scaling.permuted(perm)
    x = lp_result.x[list(perm)]
    x[x <= BASIC_TOL] = 0.0
    I, J, K = spec.num_buffers, spec.num_activities, spec.num_servers
    Bc = int((x > 0).sum())
    R = input_output_matrix(spec, scaling.beta)
    A = spec.A.astype(float)
    B_mat, N_mat = A[:, :Bc], A[:, Bc:]
    H, M_mat = R[:, :Bc], R[:, Bc:]
    K_mat = np.zeros((K + J - Bc, J))
    K_mat[:K] = A
    K_mat[K:, Bc:] = -np.eye(J - Bc)
    CP = spec.C - spec.P_prime
    theta = scaling.theta1 - CP @ (scaling.theta2 * x)
    D = R @ np.diag(x) @ spec.C.T
    gamma_star = spec.C @ (scaling.beta * x)
    return StaticPlan(
        spec=spec,
        scaling=scaling,
        perm=tuple(perm),
        x_star=x,
        rho_star=lp_result.rho,
        unique=lp_result.unique,
        heavy_traffic=lp_result.heavy_traffic,
        basic_count=Bc,
        B_mat=B_mat,
        N_mat=N_mat,
        H=H,
        M_mat=M_mat,
        R=R,
        K_mat=K_mat,
        D=D,
        theta=theta,
        Sigma=renewal_covariance(spec, scaling, x),
        gamma_star=gamma_star,
    )


def _frac(a) -> list:
    return [[Fraction(str(float(v))) for v in row] for row in np.atleast_2d(a)]


def _fmatmul(X, Y):
    return [[sum((X[i][k] * Y[k][j] for k in range(len(Y))), Fraction(0)) for j in range(len(Y[0]))] for i in range(len(X))]


def _finv(M):
    """Gauss-Jordan inverse over the rationals."""
    n = len(M)
    aug = [list(row) + [Fraction(int(i == j)) for j in range(n)] for i, row in enumerate(M)]
    for col in range(n):
        piv = next((r for r in range(col, n) if aug[r][col] != 0), None)
        if piv is None:
            raise np.linalg.LinAlgError("singular matrix")
        aug[col], aug[piv] = aug[piv], aug[col]
        p = aug[col][col]
        aug[col] = [v / p for v in aug[col]]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [a - f * b for a, b in zip(aug[r], aug[col])]
    return [row[n:] for row in aug]


def is_open_multiclass(spec: NetworkSpec) -> bool:
    return spec.num_activities == spec.num_buffers and (spec.C.sum(axis=1) == 1).all()


def workload_residual(Lambda, G, R, K_mat):
    """(exact_zero, max_abs_float_residual) of Lambda R - G K."""
    exact = _fmatmul(_frac(Lambda), _frac(R))
    rhs = _fmatmul(_frac(G), _frac(K_mat))
    exact_zero = all(a == b for ra, rb in zip(exact, rhs) for a, b in zip(ra, rb))
    flt = np.abs(np.asarray(Lambda) @ np.asarray(R) - np.asarray(G) @ np.asarray(K_mat)).max()
    return exact_zero, float(flt)


def build_workload(plan: StaticPlan, Lambda=None, G=None):
    """Workload matrix and G with ``Lambda R = G K``.

    Open multiclass networks get ``Lambda = K R^{-1}``, ``G = Id`` computed in
    rational arithmetic. Any other network must supply both matrices, which
    are then verified. Returns ``(Lambda, G, exact)``.
    """
    L, N = plan.workload_dim, plan.n_controls
    if Lambda is None or G is None:
        if not is_open_multiclass(plan.spec):
            raise WorkloadUnavailable("workload matrices are only derived for open multiclass networks; supply Lambda and G")
        Rinv = _finv(_frac(plan.R))
        Lam_f = _fmatmul(_frac(plan.K_mat), Rinv)
        Lambda = np.array([[float(v) for v in row] for row in Lam_f])
        G = np.eye(L, N)
    Lambda = np.atleast_2d(np.asarray(Lambda, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    problems = []
    if Lambda.shape != (L, plan.num_buffers):
        problems.append(f"Lambda has shape {Lambda.shape}, expected {(L, plan.num_buffers)}")
    if G.shape != (L, N):
        problems.append(f"G has shape {G.shape}, expected {(L, N)}")
    if problems:
        raise WorkloadInconsistent("; ".join(problems))
    if (Lambda < 0).any():
        problems.append("Lambda has a negative entry")
    if (G < 0).any():
        problems.append("G has a negative entry")
    if np.linalg.matrix_rank(Lambda) != L:
        problems.append("Lambda does not have full row rank")
    exact, resid = workload_residual(Lambda, G, plan.R, plan.K_mat)
    if not exact and resid > 1e-12:
        problems.append(f"Lambda R - G K has max entry {resid:.3g}")
    if problems:
        raise WorkloadInconsistent("; ".join(problems))
    return Lambda, G, exact


def with_workload(plan: StaticPlan, Lambda=None, G=None) -> StaticPlan:
    Lam, Gm, exact = build_workload(plan, Lambda, G)
    return replace(plan, Lambda=Lam, G=Gm, workload_exact=exact)


@dataclass
class AssumptionReport:
    items: list = field(default_factory=list)  # (name, passed or None, detail)

    def add(self, name, passed, detail=""):
        self.items.append((name, passed, detail))

    @property
    def ok(self) -> bool:
        return all(p is not False for _, p, _ in self.items)

    def get(self, name):
        return next(p for n, p, _ in self.items if n == name)

    def lines(self) -> list:
        tag = {True: "PASS", False: "FAIL", None: "SKIP"}
        return [f"[{tag[p]}] {n}: {d}" for n, p, d in self.items]


def job_shop_routing(spec: NetworkSpec):
    """P-tilde (I x I) if all activities of each buffer share one routing vector, else None."""
    I = spec.num_buffers
    Pt = np.zeros((I, I))
    for i in range(I):
        acts = spec.activities_of_buffer(i)
        rows = spec.routing[acts, 1:]
        if not np.allclose(rows, rows[0]):
            return None
        Pt[i] = rows[0]
    return Pt


def g_column_constant(G, n_random: int = 10_000, seed: int = 0) -> float:
    """Estimate min |G u| over nonnegative unit vectors u."""
    G = np.atleast_2d(G)
    N = G.shape[1]
    rng = np.random.default_rng(seed)
    U = np.abs(rng.standard_normal((n_random, N)))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    U = np.vstack([np.eye(N), U])
    return float(np.linalg.norm(U @ G.T, axis=1).min())


def check_assumptions(plan: StaticPlan, m: Optional[float] = None) -> AssumptionReport:
    """Pass/fail checklist of the structural and heavy-traffic assumptions."""
    rep = AssumptionReport()
    spec, x = plan.spec, plan.x_star
    Ax = spec.A @ x
    ht = abs(plan.rho_star - 1) <= 1e-9 and np.allclose(Ax, 1, atol=1e-9)
    rep.add("heavy traffic (rho*=1, Ax*=1)", bool(ht), f"rho*={plan.rho_star:.6g}, Ax*={np.round(Ax, 9).tolist()}")
    rep.add("unique LP optimum", bool(plan.unique), "optimal face is a single vertex" if plan.unique else "optimal face has several vertices")
    missing = [i + 1 for i in range(spec.num_buffers) if not any(plan.R[i, j] > 0 and x[j] > 0 for j in range(spec.num_activities))]
    rep.add("every buffer has a basic serving activity", not missing, f"buffers without one: {missing}" if missing else "ok")
    if plan.G is None:
        rep.add("G columns (|Gu| >= c|u|)", None, "no workload data")
    else:
        c = g_column_constant(plan.G)
        rep.add("G columns (|Gu| >= c|u|)", c > 1e-9, f"c estimate {c:.4g}")
    D = plan.D
    off = D - np.diag(np.diag(D))
    if np.allclose(off, 0) and (np.diag(D) > 0).all():
        rep.add("Skorohod map regular", True, "D diagonal positive (parallel-server family)")
    else:
        Pt = job_shop_routing(spec)
        if Pt is None:
            rep.add("Skorohod map regular", False, "D is neither diagonal nor of shared-routing form")
        else:
            target = (np.eye(spec.num_buffers) - Pt.T) @ np.diag(plan.gamma_star)
            sr = float(max(abs(np.linalg.eigvals(Pt)))) if Pt.size else 0.0
            ok = np.allclose(D, target, atol=1e-10) and sr < 1 and (plan.gamma_star > 0).all()
            rep.add("Skorohod map regular", bool(ok), f"D=(I-P~')diag(gamma*), spectral radius(P~)={sr:.4g}")
    eig = float(np.linalg.eigvalsh(plan.Sigma).min())
    rep.add("Sigma positive definite", eig > 0, f"smallest eigenvalue {eig:.4g}")
    if m is not None:
        fams = set(plan.scaling.arrival_family) | set(plan.scaling.service_family)
        ok = m > 2 and fams <= {"exponential", "deterministic", "gamma", "lognormal"}
        rep.add("moment condition", ok, f"m={m}; families {sorted(fams)} have all moments")
    return rep


def find_positive_direction(plan: StaticPlan):
    """Unit ``y`` with ``K y >= 0`` and ``R y > 0``; returns ``(y, margin)``.

    Solves ``max t`` over ``K y >= 0, R y >= t 1, |y|_inf <= 1`` and
    normalizes; ``margin = min(R y)`` for the normalized vector.
    """
    K, R = plan.K_mat, plan.R
    Nk, J = K.shape
    I = R.shape[0]
    # variables: v = y + 1 in [0, 2]^J, t, s1 (Nk), s2 (I), s3 (J)
    nv = J + 1 + Nk + I + J
    rows, rhs = [], []
    for a in range(Nk):
        row = np.zeros(nv)
        row[:J] = K[a]
        row[J + 1 + a] = -1.0
        rows.append(row)
        rhs.append(K[a].sum())
    for i in range(I):
        row = np.zeros(nv)
        row[:J] = R[i]
        row[J] = -1.0
        row[J + 1 + Nk + i] = -1.0
        rows.append(row)
        rhs.append(R[i].sum())
    for j in range(J):
        row = np.zeros(nv)
        row[j] = 1.0
        row[J + 1 + Nk + I + j] = 1.0
        rows.append(row)
        rhs.append(2.0)
    c = np.zeros(nv)
    c[J] = -1.0
    res = lp.simplex(c, np.array(rows), np.array(rhs))
    t = res.x[J]
    if t <= 1e-12:
        raise DirectionNotFound("no y with K y >= 0 and R y > 0")
    y = res.x[:J] - 1.0
    y = y / np.linalg.norm(y)
    return y, float((R @ y).min())


def analyze(model: NetworkModel) -> StaticPlan:
    """Solve the LP, build the plan and attach workload data when available."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NotHeavyTraffic)
        sol = solve_static_lp(model.spec, model.scaling.alpha, model.scaling.beta)
    plan = build_plan(model.spec, model.scaling, sol)
    if model.workload is not None:
        Lam, G = model.workload
        # user matrices are written against the canonical activity order
        return with_workload(plan, Lam, G)
    if is_open_multiclass(plan.spec):
        return with_workload(plan)
    return plan
