"""Fine-grid Monte Carlo oracle for the discounted cost of 1-d reflected Brownian motion.

Written independently of the ``htnet`` package: its own RNG, its own path
recursion and its own quadrature.  Reflection between grid points is handled
exactly by sampling the minimum of the Brownian bridge on each step, so the
only discretisation error left is the trapezoid rule.

The result is written to ``tests/fixtures/rbm_oracle.json`` together with the
closed-form resolvent value for the same parameters.

Usage::

    python scripts/make_rbm_fixture.py --reps 1000000 --dt 1e-4
"""
import argparse
import json
import math
import time
from pathlib import Path

import numpy as np
from numba import njit


@njit(cache=True)
def _batch_costs(seed, n_paths, drift, sigma, q0, gamma, h, dt, n_steps, out):
    np.random.seed(seed)
    sdt = sigma * math.sqrt(dt)
    two_var = 2.0 * sigma * sigma * dt
    decay = math.exp(-gamma * dt)
    for p in range(n_paths):
        x = q0
        reg = 0.0
        disc = 1.0
        prev = h * q0
        acc = 0.0
        for _ in range(n_steps):
            x_new = x + drift * dt + sdt * np.random.standard_normal()
            a = x + reg
            b = x_new + reg
            # bridge can only cross the barrier -reg with probability exp(-2ab/two_var)
            if b <= 0.0 or a * b < 25.0 * two_var:
                u = 1.0 - np.random.random()
                d = x_new - x
                low = 0.5 * (x + x_new - math.sqrt(d * d - two_var * math.log(u)))
                if -low > reg:
                    reg = -low
            x = x_new
            disc *= decay
            cur = disc * h * (x + reg)
            acc += 0.5 * dt * (prev + cur)
            prev = cur
        out[p] = acc


def resolvent_value(drift, var, gamma, h, q0):
    """Closed-form E int e^{-gamma t} h Q dt for RBM started at q0 (no regulator cost)."""
    lam = (-drift - math.sqrt(drift * drift + 2.0 * var * gamma)) / var
    c = -1.0 / (gamma * lam)
    return h * (q0 / gamma + drift / gamma**2 + c * math.exp(lam * q0))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--reps", type=int, default=1_000_000)
    ap.add_argument("--dt", type=float, default=1e-4)
    ap.add_argument("--horizon", type=float, default=10.0)
    ap.add_argument("--chunk", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=20240917)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "rbm_oracle.json"))
    args = ap.parse_args()

    drift, var, gamma, h, q0 = -1.0, 2.0, 1.0, 1.0, 0.0
    n_steps = int(round(args.horizon / args.dt))
    n_sum = 0
    s1 = 0.0
    s2 = 0.0
    buf = np.empty(args.chunk)
    t0 = time.time()
    chunk_id = 0
    while n_sum < args.reps:
        n = min(args.chunk, args.reps - n_sum)
        _batch_costs(args.seed + chunk_id, n, drift, math.sqrt(var), q0, gamma, h, args.dt, n_steps, buf)
        s1 += float(buf[:n].sum())
        s2 += float((buf[:n] ** 2).sum())
        n_sum += n
        chunk_id += 1
        if chunk_id % 25 == 0:
            print(f"{n_sum} paths, {time.time() - t0:.0f}s, running mean {s1 / n_sum:.6f}", flush=True)
    mean = s1 / n_sum
    sd = math.sqrt(max(s2 / n_sum - mean * mean, 0.0) * n_sum / (n_sum - 1))
    se = sd / math.sqrt(n_sum)
    tail = math.exp(-gamma * args.horizon) * (1.0 / gamma + 1.0)
    record = {
        "problem": {"theta": drift, "sigma2": var, "q": q0, "gamma": gamma, "h": h, "p": 0.0},
        "method": "brownian-bridge reflected Euler, trapezoid quadrature",
        "dt": args.dt,
        "horizon": args.horizon,
        "reps": n_sum,
        "seed": args.seed,
        "mean": mean,
        "sd": sd,
        "se": se,
        "ci95": [mean - 1.96 * se, mean + 1.96 * se],
        "truncation_tail_estimate": tail,
        "resolvent_closed_form": resolvent_value(drift, var, gamma, h, q0),
        "wall_seconds": round(time.time() - t0, 1),
    }
    Path(args.out).write_text(json.dumps(record, indent=2) + "\n")
    print(json.dumps(record, indent=2))


if __name__ == "__main__":
    main()
