"""Unitary network topology, stochastic primitives and the r-indexed scaling scheme."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

FAMILIES = ("exponential", "deterministic", "gamma", "lognormal")


class NegativeRate(ValueError):
    """A materialized arrival or service rate is not strictly positive."""


@dataclass(frozen=True)
class NetworkSpec:
    """Topology (C, A), routing law and exogenous arrival classes.

    Indices are 0-based internally. ``routing[j]`` is the vector
    ``(p0, p1, ..., pI)`` for activity ``j`` with index 0 meaning exit.
    """

    C: np.ndarray
    A: np.ndarray
    routing: np.ndarray
    arrival_classes: tuple
    name: str = ""

    def __post_init__(self):
        for attr in ("C", "A"):
            arr = np.array(getattr(self, attr), dtype=int)
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)
        rt = np.array(self.routing, dtype=float)
        rt.setflags(write=False)
        object.__setattr__(self, "routing", rt)
        object.__setattr__(self, "arrival_classes", tuple(sorted(int(i) for i in self.arrival_classes)))

    @property
    def num_buffers(self) -> int:
        return self.C.shape[0]

    @property
    def num_activities(self) -> int:
        return self.C.shape[1]

    @property
    def num_servers(self) -> int:
        return self.A.shape[0]

    @property
    def P_prime(self) -> np.ndarray:
        """I x J matrix with entry (i, j) = p^j_i."""
        return self.routing[:, 1:].T.copy()

    @property
    def buffer_of(self) -> np.ndarray:
        """sigma_1: buffer processed by each activity."""
        return np.argmax(self.C, axis=0)

    @property
    def server_of(self) -> np.ndarray:
        """sigma_2: server performing each activity."""
        return np.argmax(self.A, axis=0)

    def activities_of_server(self, k: int) -> list:
        return [j for j in range(self.num_activities) if self.A[k, j] == 1]

    def activities_of_buffer(self, i: int) -> list:
        return [j for j in range(self.num_activities) if self.C[i, j] == 1]

    def permuted(self, perm: Sequence[int]) -> "NetworkSpec":
        """Return the spec with activities relabelled so new activity ``a`` is old ``perm[a]``."""
        perm = list(perm)
        return replace(self, C=self.C[:, perm], A=self.A[:, perm], routing=self.routing[perm])


def validate_spec(spec: NetworkSpec, tol: float = 1e-12) -> list:
    """List every violated structural invariant (1-based indices in messages)."""
    problems = []
    C, A = spec.C, spec.A
    if C.ndim != 2 or A.ndim != 2 or C.shape[1] != A.shape[1]:
        return [f"C is {C.shape} and A is {A.shape}; need I x J and K x J"]
    I, J = C.shape
    for name, M in (("C", C), ("A", A)):
        if not np.isin(M, (0, 1)).all():
            problems.append(f"{name} has entries outside {{0, 1}}")
        for j in range(J):
            if not (M[:, j].sum() == 1 and np.isin(M[:, j], (0, 1)).all()):
                problems.append(f"column {j + 1} of {name} is not a unit column")
        for row in range(M.shape[0]):
            if M[row].sum() < 1:
                problems.append(f"row {row + 1} of {name} has no 1")
    rt = spec.routing
    if rt.shape != (J, I + 1):
        problems.append(f"routing has shape {rt.shape}, expected {(J, I + 1)}")
    else:
        for j in range(J):
            if (rt[j] < 0).any() or abs(rt[j].sum() - 1.0) > tol:
                problems.append(f"routing of activity {j + 1} not stochastic")
    for i in spec.arrival_classes:
        if not 0 <= i < I:
            problems.append(f"arrival class {i + 1} is not a buffer")
    return problems


def routing_covariance(spec: NetworkSpec, j: int) -> np.ndarray:
    """Covariance of one multinomial routing draw of activity ``j`` restricted to buffers."""
    p = spec.routing[j, 1:]
    return np.diag(p) - np.outer(p, p)


@dataclass(frozen=True)
class StreamDist:
    """Strictly positive i.i.d. time distribution with given mean and standard deviation."""

    family: str
    mean: float
    sd: float

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown distribution family {self.family!r}")
        if not self.mean > 0:
            raise ValueError("mean must be positive")
        if self.family in ("gamma", "lognormal") and not self.sd > 0:
            raise ValueError(f"{self.family} needs a positive sd")

    @property
    def degenerate(self) -> bool:
        return self.family == "deterministic"

    def params(self) -> tuple:
        m, s = self.mean, self.sd
        if self.family == "gamma":
            shape = (m / s) ** 2
            return shape, s * s / m
        if self.family == "lognormal":
            s2 = math.log1p((s / m) ** 2)
            return math.log(m) - 0.5 * s2, math.sqrt(s2)
        return (m,)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        fam = self.family
        if fam == "exponential":
            return rng.exponential(self.mean, n)
        if fam == "deterministic":
            return np.full(n, self.mean)
        if fam == "gamma":
            k, theta = self.params()
            return rng.gamma(k, theta, n)
        mu, sig = self.params()
        return rng.lognormal(mu, sig, n)


def make_dist(family: str, mean: float, sd: Optional[float] = None) -> StreamDist:
    """Build a distribution; exponential and deterministic ignore ``sd``."""
    if family == "exponential":
        return StreamDist(family, mean, mean)
    if family == "deterministic":
        return StreamDist(family, mean, 0.0)
    return StreamDist(family, mean, float(sd))


@dataclass(frozen=True)
class PrimitiveSpec:
    """Materialized primitives of the r-th network."""

    r: float
    alpha: np.ndarray
    beta: np.ndarray
    arrivals: tuple  # per buffer: StreamDist or None
    services: tuple  # per activity: StreamDist

    @property
    def degenerate_streams(self) -> list:
        """Streams with sd 0 (deterministic); flagged because the FCLT variance vanishes."""
        out = [f"arrival {i + 1}" for i, d in enumerate(self.arrivals) if d is not None and d.degenerate]
        out += [f"service {j + 1}" for j, d in enumerate(self.services) if d.degenerate]
        return out


@dataclass(frozen=True)
class ScalingScheme:
    """Limit rates, first-order perturbations and distribution families.

    ``sigma_u``/``sigma_v`` are the limit standard deviations of interarrival
    and service times. For exponential streams they are implied by the rate
    and for deterministic ones they are zero; only gamma/lognormal streams
    read them.
    """

    alpha: np.ndarray
    beta: np.ndarray
    theta1: np.ndarray
    theta2: np.ndarray
    q: np.ndarray
    arrival_family: tuple
    service_family: tuple
    sigma_u: Optional[np.ndarray] = None
    sigma_v: Optional[np.ndarray] = None
    r_list: tuple = ()

    def __post_init__(self):
        for attr in ("alpha", "beta", "theta1", "theta2", "q"):
            object.__setattr__(self, attr, np.asarray(getattr(self, attr), dtype=float))
        I, J = len(self.alpha), len(self.beta)
        su = np.zeros(I) if self.sigma_u is None else np.asarray(self.sigma_u, dtype=float)
        sv = np.zeros(J) if self.sigma_v is None else np.asarray(self.sigma_v, dtype=float)
        su = su.copy()
        sv = sv.copy()
        for i, fam in enumerate(self.arrival_family):
            if self.alpha[i] > 0:
                if fam == "exponential":
                    su[i] = 1.0 / self.alpha[i]
                elif fam == "deterministic":
                    su[i] = 0.0
            else:
                su[i] = 0.0
        for j, fam in enumerate(self.service_family):
            if fam == "exponential":
                sv[j] = 1.0 / self.beta[j] if self.beta[j] > 0 else 0.0
            elif fam == "deterministic":
                sv[j] = 0.0
        object.__setattr__(self, "sigma_u", su)
        object.__setattr__(self, "sigma_v", sv)
        object.__setattr__(self, "arrival_family", tuple(self.arrival_family))
        object.__setattr__(self, "service_family", tuple(self.service_family))
        object.__setattr__(self, "r_list", tuple(float(r) for r in self.r_list))

    @property
    def arrival_classes(self) -> tuple:
        return tuple(int(i) for i in np.flatnonzero(self.alpha > 0))

    def permuted(self, perm: Sequence[int]) -> "ScalingScheme":
        perm = list(perm)
        return replace(
            self,
            beta=self.beta[perm],
            theta2=self.theta2[perm],
            sigma_v=self.sigma_v[perm],
            service_family=tuple(self.service_family[p] for p in perm),
        )

    def problems(self) -> list:
        out = []
        if (self.beta <= 0).any():
            out.append("beta must be positive")
        if (self.q < 0).any():
            out.append("q must be nonnegative")
        if (self.alpha < 0).any():
            out.append("alpha must be nonnegative")
        for fam in self.arrival_family + self.service_family:
            if fam not in FAMILIES:
                out.append(f"unknown family {fam!r}")
        if any(b <= a for a, b in zip(self.r_list, self.r_list[1:])):
            out.append("r_list must be strictly increasing")
        return out


def round_half_up(x) -> np.ndarray:
    return np.floor(np.asarray(x, dtype=float) + 0.5).astype(int)


def materialize(scaling: ScalingScheme, r: float):
    """Rates, distributions and integer initial queue for the r-th network.

    Returns ``(PrimitiveSpec, q_r)`` with ``alpha^r = alpha + theta1/r``,
    ``beta^r = beta + theta2/r`` and ``q_r = round_half_up(r q)``.
    """
    if not r > 0:
        raise ValueError("r must be positive")
    alpha_r = scaling.alpha + scaling.theta1 / r
    beta_r = scaling.beta + scaling.theta2 / r
    active = scaling.alpha > 0
    alpha_r = np.where(active, alpha_r, 0.0)
    bad = [f"alpha_{i + 1}" for i in np.flatnonzero(active & (alpha_r <= 0))]
    bad += [f"beta_{j + 1}" for j in np.flatnonzero(beta_r <= 0)]
    if bad:
        raise NegativeRate(f"non-positive rate at r={r}: {', '.join(bad)}")
    arrivals = tuple(
        make_dist(fam, 1.0 / alpha_r[i], scaling.sigma_u[i]) if active[i] else None
        for i, fam in enumerate(scaling.arrival_family)
    )
    services = tuple(make_dist(fam, 1.0 / beta_r[j], scaling.sigma_v[j]) for j, fam in enumerate(scaling.service_family))
    prim = PrimitiveSpec(r=float(r), alpha=alpha_r, beta=beta_r, arrivals=arrivals, services=services)
    return prim, round_half_up(r * scaling.q)


@dataclass
class NetworkModel:
    """A spec together with its scaling scheme (and anything the spec file carried)."""

    spec: NetworkSpec
    scaling: ScalingScheme
    workload: Optional[tuple] = None  # user (Lambda, G)
    policy: dict = field(default_factory=dict)
    perm: tuple = ()
