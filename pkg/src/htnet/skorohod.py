"""Skorohod problem ``z = x + D y`` on discretized paths, and the maps Gamma, Gamma-hat, Gamma-bar.

Arrays carry time on axis ``-2`` and the buffer index on axis ``-1``; any
leading axes are treated as independent replications. An optional lower
envelope ``x_low`` (the infimum of the continuous input over each grid
interval) lets the regulator act on intra-step excursions, which removes the
O(sqrt(dt)) bias of plain grid reflection for Brownian inputs.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

DEFAULT_TOL = 1e-10
MAX_SWEEPS = 10_000


class NotContractive(ValueError):
    pass


class NoConvergence(RuntimeError):
    pass


@dataclass(frozen=True)
class PiecewisePath:
    """Values on a strictly increasing grid starting at 0; ``interp`` is ``"constant"`` (cadlag) or ``"linear"``."""

    grid: np.ndarray
    values: np.ndarray
    interp: str = "linear"

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if g.ndim != 1 or len(g) == 0 or g[0] != 0.0 or (len(g) > 1 and (np.diff(g) <= 0).any()):
            raise ValueError("grid must start at 0 and be strictly increasing")
        if v.shape[0] != len(g):
            raise ValueError("values must have one row per grid point")
        if not np.isfinite(v).all():
            raise ValueError("values must be finite")
        if self.interp not in ("constant", "linear"):
            raise ValueError(f"unknown interpolation {self.interp!r}")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __call__(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        g, v = self.grid, self.values
        if self.interp == "linear":
            return np.stack([np.interp(t, g, v[:, i]) for i in range(self.dim)], axis=-1)
        idx = np.clip(np.searchsorted(g, t, side="right") - 1, 0, len(g) - 1)
        return v[idx]

    def integral(self, t) -> np.ndarray:
        """``int_0^t`` of the path, exact for the interpolation type; held flat past the last grid point."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        g, v = self.grid, self.values
        h = np.diff(g)
        if self.interp == "linear":
            cell = 0.5 * h[:, None] * (v[1:] + v[:-1])
        else:
            cell = h[:, None] * v[:-1]
        cum = np.vstack([np.zeros((1, self.dim)), np.cumsum(cell, axis=0)])
        k = np.clip(np.searchsorted(g, t, side="right") - 1, 0, len(g) - 1)
        tau = (t - g[k])[:, None]
        out = cum[k] + v[k] * tau
        if self.interp == "linear":
            inner = k < len(g) - 1
            slope = np.zeros_like(v[k])
            slope[inner] = (v[k[inner] + 1] - v[k[inner]]) / h[k[inner]][:, None]
            out = out + 0.5 * slope * tau**2
        return out


@dataclass(frozen=True)
class SPSolution:
    z: np.ndarray
    y: np.ndarray
    sweeps: int
    residual: float


@dataclass(frozen=True)
class SPReport:
    identity: float
    negativity: float
    monotonicity: float
    initial: float
    complementarity: float

    @property
    def worst(self) -> float:
        return max(self.identity, self.negativity, self.monotonicity, self.initial, self.complementarity)

    def ok(self, tol: float = 1e-9) -> bool:
        return self.worst <= tol


def reflection_parts(D):
    """``(diag(D), W)`` with ``W = diag(D)^{-1} (diag(D) - D)``; raises NotContractive."""
    D = np.atleast_2d(np.asarray(D, dtype=float))
    d = np.diag(D).copy()
    if (d <= 0).any():
        raise NotContractive("D must have a positive diagonal")
    W = (np.diag(d) - D) / d[:, None]
    sr = float(max(abs(np.linalg.eigvals(np.abs(W))))) if W.size else 0.0
    if sr >= 1 - 1e-9:
        raise NotContractive(f"spectral radius of |W| is {sr:.6g}")
    return d, W


def lipschitz_constants(D) -> tuple:
    """Sup-norm Lipschitz bounds ``(L_z, L_y)`` of ``x -> z`` and ``x -> y``."""
    d, W = reflection_parts(D)
    n = len(d)
    Ly = float(np.abs(np.linalg.inv(np.eye(n) - np.abs(W)) @ np.diag(1.0 / d)).sum(axis=1).max())
    Lz = 1.0 + float(np.abs(np.atleast_2d(D)).sum(axis=1).max()) * Ly
    return Lz, Ly


def regulate(x, D, x_low=None, tol: float = DEFAULT_TOL, max_sweeps: int = MAX_SWEEPS):
    """Minimal regulator ``y`` for grid input ``x`` (shape ``(..., n, I)``); returns ``(y, sweeps, last_change)``."""
    x = np.asarray(x, dtype=float)
    src = x if x_low is None else np.minimum(np.asarray(x_low, dtype=float), x)
    d, W = reflection_parts(D)
    if not np.any(W):
        y = np.maximum(np.maximum.accumulate(-src, axis=-2), 0.0) / d
        return y, 1, 0.0
    coupling = (np.diag(d) - np.atleast_2d(D)).T  # y @ coupling = ((diag(D) - D) y)'
    y = np.zeros_like(src)
    for sweep in range(1, max_sweeps + 1):
        y_new = np.maximum(np.maximum.accumulate(-src + y @ coupling, axis=-2), 0.0) / d
        change = float(np.abs(y_new - y).max()) if y.size else 0.0
        y = y_new
        if change <= tol:
            return y, sweep, change
    raise NoConvergence(f"no convergence after {max_sweeps} sweeps (last change {change:.3g})")


def solve_sp(x, D, tol: float = DEFAULT_TOL, x_low=None, max_sweeps: int = MAX_SWEEPS) -> SPSolution:
    """Solve the Skorohod problem on a grid path.

    ``x`` is a PiecewisePath or an array with time on axis -2. Returns
    arrays ``z = x + D y`` and ``y`` of the same shape.
    """
    vals = x.values if isinstance(x, PiecewisePath) else np.asarray(x, dtype=float)
    D = np.atleast_2d(np.asarray(D, dtype=float))
    y, sweeps, change = regulate(vals, D, x_low, tol, max_sweeps)
    z = vals + y @ D.T
    return SPSolution(z=z, y=y, sweeps=sweeps, residual=change)


def reflect_1d(x, d: float = 1.0, x_low=None):
    """Closed form ``y(t) = sup_{s<=t} (-x(s))^+ / d`` along axis -1 of a scalar path."""
    src = np.asarray(x, dtype=float) if x_low is None else np.minimum(x_low, x)
    return np.maximum(np.maximum.accumulate(-src, axis=-1), 0.0) / d


def verify_sp(x, sol: SPSolution, D, eps: float = 1e-9, x_low=None) -> SPReport:
    """Residuals of the SP conditions for ``sol`` on input ``x``.

    Complementarity sums regulator increments at grid points where the
    constrained path (or its lower envelope when ``x_low`` is given) exceeds
    ``eps`` after the increment.
    """
    vals = x.values if isinstance(x, PiecewisePath) else np.asarray(x, dtype=float)
    D = np.atleast_2d(np.asarray(D, dtype=float))
    z, y = sol.z, sol.y
    ident = float(np.abs(z - vals - y @ D.T).max())
    neg = float(np.maximum(-z, 0.0).max())
    dy = np.diff(y, axis=-2)
    mono = float(np.maximum(-dy, 0.0).max()) if dy.size else 0.0
    init = float(np.maximum(-y[..., 0, :], 0.0).max())
    z_chk = z if x_low is None else np.minimum(x_low, vals) + y @ D.T
    incr = np.concatenate([y[..., :1, :], dy], axis=-2)
    comp = float((np.maximum(incr, 0.0) * (z_chk > eps)).sum(axis=-2).max())
    return SPReport(identity=ident, negativity=neg, monotonicity=mono, initial=init, complementarity=comp)


def gamma(x, D, **kw) -> np.ndarray:
    """Gamma(x) = z."""
    return solve_sp(x, D, **kw).z


def gamma_hat(x, D, **kw) -> np.ndarray:
    """Gamma-hat(x) = y."""
    return solve_sp(x, D, **kw).y


def gamma_bar(x, plan, **kw) -> np.ndarray:
    """Gamma-bar(x) = diag(x*) C' Gamma-hat(x), activity-indexed."""
    return gamma_hat(x, plan.D, **kw) @ plan.gamma_bar_matrix.T


def dump_csv(path, grid, x, sol: SPSolution) -> None:
    """Write ``t, x_i, z_i, y_i`` columns for a single path."""
    x = np.asarray(x.values if isinstance(x, PiecewisePath) else x)
    d = x.shape[-1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i + 1}" for i in range(d)] + [f"z{i + 1}" for i in range(d)] + [f"y{i + 1}" for i in range(d)])
        for k, t in enumerate(grid):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in np.concatenate([x[k], sol.z[k], sol.y[k]])])
