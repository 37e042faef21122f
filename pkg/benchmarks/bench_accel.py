#!/usr/bin/env python3
"""Benchmark the compiled kernels against their pure-numpy bodies.

Every hot kernel is written once and compiled with numba unless
``QUADRETARGET_DISABLE_NUMBA=1`` is set; the original Python function
stays available on ``.py_func``.  This script times both paths on
realistic workloads so the speedup (and the fallback cost) is visible.

Run:  python benchmarks/bench_accel.py
"""

import time

import numpy as np

from quadretarget._accel import NUMBA_ENABLED
from quadretarget import metrics, motion, qp, srb


def timeit(fn, *args, repeat=5, inner=1):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / inner)
    return best


def bench(name, kernel, *args, inner=1):
    compiled = timeit(kernel, *args, inner=inner)
    plain = timeit(kernel.py_func, *args, inner=inner)
    speedup = plain / compiled if compiled > 0 else float("nan")
    print(f"{name:34s} compiled {compiled * 1e3:9.3f} ms   "
          f"python {plain * 1e3:9.3f} ms   speedup {speedup:7.1f}x")


def main():
    print(f"numba path enabled: {NUMBA_ENABLED} "
          f"(QUADRETARGET_DISABLE_NUMBA toggles the pure-numpy path)\n")
    rng = np.random.default_rng(0)

    # Rigid-body rollout and finite-difference derivatives (the DDP hot
    # loop).  Stance forces roughly support the weight so the interpreted
    # rollout stays numerically tame over the horizon.
    h = 120
    mass = 12.0
    x0 = np.zeros(25)
    x0[3] = 1.0
    x0[2] = 0.3
    x0[13:25] = (rng.normal(0.0, 0.15, (4, 3)) + [0.0, 0.0, -0.3]).reshape(-1)
    contacts = rng.random((h, 4)) < 0.7
    us = rng.normal(0.0, 1.0, (h, 24))
    for k in range(h):
        n_st = max(int(contacts[k].sum()), 1)
        for j in range(4):
            if contacts[k, j]:
                us[k, 3 * j + 2] += mass * 9.81 / n_st
    inertia = np.diag([0.1, 0.25, 0.3])
    inv_inertia = np.linalg.inv(inertia)
    args = (contacts, 0.02, mass, inertia, inv_inertia, srb.GRAVITY)
    xs = srb._srb_rollout(x0, us, *args)
    bench("srb rollout (120 steps)", srb._srb_rollout, x0, us, *args, inner=10)
    bench("srb fd derivatives (120 steps)", srb._srb_fd_derivs, xs, us, *args, 1e-6)

    # ADMM QP of the spatial stage's shape (18 vars, 12 constraint rows).
    n, m = 18, 12
    mat = rng.normal(size=(n, n))
    p_mat = mat @ mat.T / n + np.eye(n)
    q_vec = rng.normal(size=n)
    a_mat = rng.normal(size=(m, n))
    x_feas = rng.normal(size=n)
    lower = a_mat @ x_feas - 0.1
    upper = a_mat @ x_feas + 0.1
    bench("admm qp solve (18x12)", qp._admm_core, p_mat, q_vec, a_mat, lower,
          upper, 0.1, 1e-6, 1.6, 1e-6, 1e-6, 4000, 25, inner=10)

    # DTW accumulation over a 300x300 cost matrix.
    cost = np.abs(rng.normal(size=(300, 300)))
    bench("dtw accumulate (300x300)", metrics._dtw_accumulate, cost, inner=5)

    # Zero-phase filtering of foot trajectories.
    sig = rng.normal(size=(4000, 12))
    bench("zero-phase lowpass (4000x12)", motion._filtfilt_single_pole, sig, 0.2,
          inner=10)


if __name__ == "__main__":
    main()
