"""Non-delay dispatching simulation of a (dynamic) job shop.

Whenever a machine is free and at least one operation routed to it is
ready, the operation with the highest rule score starts immediately. Ties go
to the lowest job id. Time jumps between events (machine releases and job
arrivals); at each event the free machines are served in index order.
"""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._kernel import dispatch_static
from .core import Instance, Operation, Schedule, ScheduledOp
from .rulelang import FEATURES, RuleEvalError, RuleProgram, eval_columns, vectorizable


class FeatureVector(NamedTuple):
    PT: float
    TWK: float
    TWKR: float
    SRM: float
    NOPS_REMAINING: float
    SSO: float
    LSO: float
    ARRIVAL: float
    WAIT: float
    NOW: float
    RAND: float


assert FeatureVector._fields == FEATURES


@dataclass
class SimState:
    now: int
    machine_free_at: list[int]
    job_next_op: list[int]
    job_ready_at: list[int]
    committed: list[ScheduledOp] = field(default_factory=list)
    rng: random.Random = field(default_factory=lambda: random.Random(0))

    @classmethod
    def initial(cls, inst: Instance, seed: int = 0) -> SimState:
        return cls(
            now=0,
            machine_free_at=[0] * inst.machine_count,
            job_next_op=[0] * inst.job_count,
            job_ready_at=list(inst.arrival_times),
            rng=random.Random(seed),
        )


def _cached(inst: Instance, key: str, factory):
    # Instance is frozen; stash derived tables next to cached_property values
    try:
        return inst.__dict__[key]
    except KeyError:
        value = inst.__dict__[key] = factory(inst)
        return value


def _static_features(inst: Instance) -> list[list[tuple[float, ...]]]:
    return _cached(inst, "_sim_static_features", _build_static_features)


# per-operation features that do not depend on the clock:
# (PT, TWK, TWKR, SRM, NOPS_REMAINING, SSO, LSO, ARRIVAL)
def _build_static_features(inst: Instance) -> list[list[tuple[float, ...]]]:
    table = []
    for j, route in enumerate(inst.jobs):
        pts = [float(op.processing_time) for op in route]
        twk = sum(pts)
        arrival = float(inst.arrival_times[j])
        q = len(pts)
        # longest op strictly after position k
        tail_max = [0.0] * (q + 1)
        for k in range(q - 1, -1, -1):
            tail_max[k] = max(pts[k], tail_max[k + 1])
        rows = []
        remaining = twk
        for k, pt in enumerate(pts):
            rows.append(
                (
                    pt,
                    twk,
                    remaining,
                    remaining - pt,
                    float(q - k),
                    pts[k + 1] if k + 1 < q else 0.0,
                    tail_max[k + 1],
                    arrival,
                )
            )
            remaining -= pt
        table.append(rows)
    return table


def _route_arrays(inst: Instance) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    def build(inst: Instance):
        width = max(len(route) for route in inst.jobs)
        mach = np.zeros((inst.job_count, width), np.int64)
        pt = np.zeros((inst.job_count, width), np.int64)
        for j, route in enumerate(inst.jobs):
            for op in route:
                mach[j, op.op_index] = op.machine_id
                pt[j, op.op_index] = op.processing_time
        nops = np.array([len(route) for route in inst.jobs], np.int64)
        return mach, pt, nops, np.array(inst.arrival_times, np.int64)

    return _cached(inst, "_sim_route_arrays", build)


def compute_features(state: SimState, inst: Instance, candidate: Operation) -> FeatureVector:
    """Features of a ready candidate at ``state.now``; draws one RAND value."""
    route = inst.jobs[candidate.job_id]
    k = candidate.op_index
    pts = [op.processing_time for op in route]
    rest = pts[k + 1 :]
    twkr = sum(pts[k:])
    ready = max(inst.arrival_times[candidate.job_id], state.job_ready_at[candidate.job_id])
    return FeatureVector(
        PT=float(pts[k]),
        TWK=float(sum(pts)),
        TWKR=float(twkr),
        SRM=float(twkr - pts[k]),
        NOPS_REMAINING=float(len(pts) - k),
        SSO=float(rest[0]) if rest else 0.0,
        LSO=float(max(rest)) if rest else 0.0,
        ARRIVAL=float(inst.arrival_times[candidate.job_id]),
        WAIT=float(max(0, state.now - ready)),
        NOW=float(state.now),
        RAND=state.rng.random(),
    )


def _check(score: float, rule: RuleProgram, fv) -> float:
    if not math.isfinite(score):
        raise RuleEvalError(f"rule {rule.canonical!r} produced {score}", fv._asdict())
    return score


# column order of the static feature rows built above
STATIC_FEATURES = FEATURES[:8]


def _static_scores(inst: Instance, rule: RuleProgram) -> np.ndarray:
    """Scores of every operation, flattened job by job."""
    flat = _cached(inst, "_sim_flat_features", lambda i: [r for rows in _static_features(i) for r in rows])
    if vectorizable(rule.ast):
        columns = _cached(inst, "_sim_feature_columns", lambda i: dict(
            zip(STATIC_FEATURES, np.array(flat, dtype=np.float64).reshape(-1, len(STATIC_FEATURES)).T)))
        scores = eval_columns(rule.ast, columns)
    else:
        fn = rule.scorer()
        scores = np.array([fn(*row, 0.0, 0.0, 0.0) for row in flat], dtype=np.float64)
    if not np.isfinite(scores).all():
        for row, s in zip(flat, scores.tolist()):
            _check(s, rule, FeatureVector(*row, 0.0, 0.0, 0.0))
    return scores


def simulate(inst: Instance, rule: RuleProgram, seed: int = 0) -> Schedule:
    """Dispatch every operation of ``inst`` by ``rule``; deterministic per seed.

    Raises :class:`RuleEvalError` if the rule scores any candidate with a
    non-finite value.
    """
    if rule.is_static and dispatch_static is not None:
        return _simulate_compiled(inst, rule)
    return _simulate_events(inst, rule, seed)


def _simulate_compiled(inst: Instance, rule: RuleProgram) -> Schedule:
    mach, pt, nops, arrival = _route_arrays(inst)
    score = np.zeros(mach.shape, np.float64)
    score[nops[:, None] > np.arange(mach.shape[1])] = _static_scores(inst, rule)
    jobs, ops, machines, starts = dispatch_static(
        mach, pt, nops, arrival, score, inst.machine_count
    )
    ends = starts + pt[jobs, ops]
    return Schedule.from_table(np.column_stack((jobs, ops, machines, starts, ends)))


def _simulate_events(inst: Instance, rule: RuleProgram, seed: int = 0) -> Schedule:
    """Reference event loop; handles every rule, including clock- and RNG-dependent ones."""
    if rule.is_static:
        flat = iter(_static_scores(inst, rule).tolist())
        scores = [[next(flat) for _ in route] for route in inst.jobs]
        fn = None
    else:
        scores = None
        fn = rule.scorer()
        feats = _static_features(inst)

    jobs = inst.jobs
    n_machines = inst.machine_count
    state = SimState.initial(inst, seed)
    free_at = state.machine_free_at
    next_op = state.job_next_op
    ready_at = state.job_ready_at
    committed = state.committed

    # jobs whose next op becomes ready at a future time: (ready_time, job)
    pending = [(a, j) for j, a in enumerate(inst.arrival_times)]
    heapq.heapify(pending)
    releases: list[tuple[int, int]] = []  # (time, machine) of busy machines
    waiting: list[list] = [[] for _ in range(n_machines)]  # static: heaps; dynamic: job lists
    remaining = inst.op_count
    touched: set[int] = set()

    while remaining:
        now = pending[0][0] if pending else releases[0][0]
        if releases and releases[0][0] < now:
            now = releases[0][0]
        state.now = now
        while releases and releases[0][0] <= now:
            touched.add(heapq.heappop(releases)[1])
        while True:
            while pending and pending[0][0] <= now:
                _, j = heapq.heappop(pending)
                k = next_op[j]
                m = jobs[j][k].machine_id
                if scores is not None:
                    heapq.heappush(waiting[m], (-scores[j][k], j))
                else:
                    waiting[m].append(j)
                touched.add(m)
            zero_length = False
            for m in sorted(touched):
                queue = waiting[m]
                if free_at[m] > now or not queue:
                    continue
                if scores is not None:
                    _, j = heapq.heappop(queue)
                else:
                    queue.sort()
                    best_i = 0
                    best = -math.inf
                    for i, cj in enumerate(queue):
                        row = feats[cj][next_op[cj]]
                        wait = float(max(0, now - ready_at[cj]))
                        r = state.rng.random()
                        s = fn(*row, wait, float(now), r)
                        if not math.isfinite(s):
                            _check(s, rule, FeatureVector(*row, wait, float(now), r))
                        if i == 0 or s > best:
                            best, best_i = s, i
                    j = queue.pop(best_i)
                k = next_op[j]
                end = now + jobs[j][k].processing_time
                committed.append(ScheduledOp(j, k, m, now, end))
                remaining -= 1
                free_at[m] = end
                ready_at[j] = end
                next_op[j] = k + 1
                if k + 1 < len(jobs[j]):
                    heapq.heappush(pending, (end, j))
                if end > now:
                    heapq.heappush(releases, (end, m))
                else:
                    zero_length = True
            touched.clear()
            if not zero_length:
                break
            # a zero-length op frees its machine and job at the same instant
            touched.update(m for m in range(n_machines) if free_at[m] <= now and waiting[m])
    return Schedule(tuple(committed))


class BudgetExceeded(ValueError):
    """The instance is too large for exhaustive search."""


def brute_force_optimal(inst: Instance, op_budget: int = 9) -> int:
    """Minimum makespan over all active schedules of a tiny instance.

    Branches Giffler-Thompson style: take the operation with the earliest
    possible completion, then try every operation on that machine that could
    start before it completes. Subtrees are memoized on the full state, whose
    best completion does not depend on how the state was reached.
    """
    if inst.op_count > op_budget:
        raise BudgetExceeded(f"{inst.op_count} operations exceed budget {op_budget}")
    jobs = inst.jobs
    n_jobs = inst.job_count
    memo: dict[tuple, int] = {}

    def best(next_op: tuple, free: tuple, ready: tuple) -> int:
        key = (next_op, free, ready)
        if key in memo:
            return memo[key]
        open_jobs = [j for j in range(n_jobs) if next_op[j] < len(jobs[j])]
        if not open_jobs:
            result = max(max(free), max(ready))
        else:
            est = {}
            for j in open_jobs:
                op = jobs[j][next_op[j]]
                est[j] = max(ready[j], free[op.machine_id])
            pivot = min(open_jobs, key=lambda j: (est[j] + jobs[j][next_op[j]].processing_time, j))
            m = jobs[pivot][next_op[pivot]].machine_id
            horizon = est[pivot] + jobs[pivot][next_op[pivot]].processing_time
            result = math.inf
            for j in open_jobs:
                op = jobs[j][next_op[j]]
                if op.machine_id != m or (j != pivot and est[j] >= horizon):
                    continue
                end = est[j] + op.processing_time
                result = min(
                    result,
                    best(
                        next_op[:j] + (next_op[j] + 1,) + next_op[j + 1 :],
                        free[:m] + (end,) + free[m + 1 :],
                        ready[:j] + (end,) + ready[j + 1 :],
                    ),
                )
        memo[key] = result
        return result

    return int(best((0,) * n_jobs, (0,) * inst.machine_count, tuple(inst.arrival_times)))
