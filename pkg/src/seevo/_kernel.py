"""Compiled dispatch loop for rules whose scores are fixed per operation.

Mirrors the event semantics of :func:`seevo.simulator.simulate` exactly;
the pure-Python loop there remains the reference and is used whenever numba
is unavailable or the rule reads the clock or RNG.
"""

from __future__ import annotations

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _dispatch_static(mach, pt, nops, arrival, score, n_machines):
    n_jobs = nops.shape[0]
    total = 0
    for j in range(n_jobs):
        total += nops[j]
    out_job = np.empty(total, np.int64)
    out_op = np.empty(total, np.int64)
    out_machine = np.empty(total, np.int64)
    out_start = np.empty(total, np.int64)

    free_at = np.zeros(n_machines, np.int64)
    next_op = np.zeros(n_jobs, np.int64)
    ready = arrival.copy()
    best_job = np.empty(n_machines, np.int64)
    best_score = np.empty(n_machines, np.float64)

    now = ready.min()
    done = 0
    while done < total:
        while True:
            for m in range(n_machines):
                best_job[m] = -1
            for j in range(n_jobs):
                k = next_op[j]
                if k >= nops[j] or ready[j] > now:
                    continue
                m = mach[j, k]
                if free_at[m] > now:
                    continue
                s = score[j, k]
                if best_job[m] < 0 or s > best_score[m]:
                    best_job[m] = j
                    best_score[m] = s
            zero_length = False
            for m in range(n_machines):
                j = best_job[m]
                if j < 0:
                    continue
                k = next_op[j]
                end = now + pt[j, k]
                out_job[done] = j
                out_op[done] = k
                out_machine[done] = m
                out_start[done] = now
                done += 1
                free_at[m] = end
                ready[j] = end
                next_op[j] = k + 1
                if end == now:
                    zero_length = True
            if not zero_length:
                break
        if done == total:
            break
        nxt = np.iinfo(np.int64).max
        for m in range(n_machines):
            if now < free_at[m] < nxt:
                nxt = free_at[m]
        for j in range(n_jobs):
            if next_op[j] < nops[j] and now < ready[j] < nxt:
                nxt = ready[j]
        now = nxt
    return out_job, out_op, out_machine, out_start


if numba is not None:
    dispatch_static = numba.njit(cache=True, nogil=True)(_dispatch_static)
else:  # pragma: no cover
    dispatch_static = None
