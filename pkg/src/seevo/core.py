"""Job-shop problem and solution data model.

Instances use integer time units throughout. Each operation is bound to a
single machine (classic job shop, not flexible), and every job carries an
arrival time; static instances have all arrivals at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import chain
from typing import NamedTuple, Sequence

import numpy as np


class InstanceFormatError(ValueError):
    """Raised when an instance file cannot be parsed."""

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class Operation(NamedTuple):
    job_id: int
    op_index: int
    machine_id: int
    processing_time: int


class ScheduledOp(NamedTuple):
    job_id: int
    op_index: int
    machine_id: int
    start: int
    end: int


@dataclass(frozen=True)
class Instance:
    machine_count: int
    jobs: tuple[tuple[Operation, ...], ...]
    arrival_times: tuple[int, ...]
    name: str = ""

    def __post_init__(self) -> None:
        if self.machine_count < 1:
            raise ValueError("machine_count must be positive")
        if len(self.arrival_times) != len(self.jobs):
            raise ValueError(
                f"{len(self.arrival_times)} arrival times for {len(self.jobs)} jobs"
            )
        for j, route in enumerate(self.jobs):
            if not route:
                raise ValueError(f"job {j} has an empty route")
            for k, op in enumerate(route):
                if op.job_id != j or op.op_index != k:
                    raise ValueError(f"operation {op} misplaced at job {j} position {k}")
                if not 0 <= op.machine_id < self.machine_count:
                    raise ValueError(f"machine index {op.machine_id} out of range in job {j}")
                if op.processing_time < 0:
                    raise ValueError(f"negative duration in job {j}")
            if self.arrival_times[j] < 0:
                raise ValueError(f"negative arrival time for job {j}")

    @classmethod
    def from_routes(
        cls,
        routes: Sequence[Sequence[tuple[int, int]]],
        machine_count: int | None = None,
        arrival_times: Sequence[int] | None = None,
        name: str = "",
    ) -> Instance:
        """Build an instance from ``[(machine, duration), ...]`` per job."""
        jobs = tuple(
            tuple(Operation(j, k, int(m), int(p)) for k, (m, p) in enumerate(route))
            for j, route in enumerate(routes)
        )
        if machine_count is None:
            machine_count = 1 + max(op.machine_id for route in jobs for op in route)
        if arrival_times is None:
            arrival_times = [0] * len(jobs)
        return cls(machine_count, jobs, tuple(int(a) for a in arrival_times), name)

    @property
    def job_count(self) -> int:
        return len(self.jobs)

    @property
    def op_count(self) -> int:
        return sum(len(route) for route in self.jobs)

    @property
    def is_static(self) -> bool:
        return all(a == 0 for a in self.arrival_times)

    def operations(self):
        for route in self.jobs:
            yield from route

    def with_arrivals(self, arrival_times: Sequence[int], name: str | None = None) -> Instance:
        return Instance(
            self.machine_count,
            self.jobs,
            tuple(int(a) for a in arrival_times),
            self.name if name is None else name,
        )

    @cached_property
    def job_work(self) -> tuple[int, ...]:
        return tuple(sum(op.processing_time for op in route) for route in self.jobs)

    @cached_property
    def machine_load(self) -> tuple[int, ...]:
        load = [0] * self.machine_count
        for op in self.operations():
            load[op.machine_id] += op.processing_time
        return tuple(load)

    @cached_property
    def flat_routes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(job offsets, machine per op, duration per op), ops flattened job by job."""
        lengths = [len(route) for route in self.jobs]
        offsets = np.concatenate(([0], np.cumsum(lengths))).astype(np.int64)
        machine = np.fromiter((op.machine_id for op in self.operations()), np.int64)
        pt = np.fromiter((op.processing_time for op in self.operations()), np.int64)
        return offsets, machine, pt

    def lower_bound(self) -> int:
        """Max of the machine-load and job-length bounds on any makespan."""
        job_bound = max(a + w for a, w in zip(self.arrival_times, self.job_work))
        return max(max(self.machine_load), job_bound)


class Schedule:
    """Scheduled operations plus the makespan.

    Backed either by a tuple of :class:`ScheduledOp` or by an ``(n, 5)`` integer
    array with the same columns; each view is built from the other on first use.
    """

    def __init__(self, entries: Sequence[ScheduledOp] = (), makespan: int = -1) -> None:
        self._entries: tuple[ScheduledOp, ...] | None = tuple(entries)
        self._table: np.ndarray | None = None
        self.makespan = makespan
        if makespan == -1 and self._entries:
            self.makespan = _makespan_of(self._entries)

    @classmethod
    def from_table(cls, table: np.ndarray, makespan: int | None = None) -> Schedule:
        sched = cls.__new__(cls)
        sched._entries = None
        sched._table = np.asarray(table, dtype=np.int64).reshape(-1, 5)
        if makespan is None:
            makespan = int(sched._table[:, 4].max()) if len(sched._table) else -1
        sched.makespan = makespan
        return sched

    @property
    def entries(self) -> tuple[ScheduledOp, ...]:
        if self._entries is None:
            self._entries = tuple(map(ScheduledOp._make, self._table.tolist()))
        return self._entries

    @property
    def table(self) -> np.ndarray:
        """(job, op, machine, start, end) rows as an int64 array, in entry order."""
        if self._table is None:
            flat = chain.from_iterable(self._entries)
            self._table = np.fromiter(flat, np.int64, 5 * len(self._entries)).reshape(-1, 5)
        return self._table

    def __len__(self) -> int:
        return len(self._table) if self._entries is None else len(self._entries)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Schedule):
            return NotImplemented
        return self.makespan == other.makespan and np.array_equal(self.table, other.table)

    __hash__ = None  # mutable caches; compare by value only

    def __repr__(self) -> str:
        return f"Schedule({len(self)} operations, makespan={self.makespan})"

    def gantt_rows(self) -> list[tuple[int, int, int, int, int]]:
        """(job, op, machine, start, end) rows ordered by start, then machine."""
        return sorted(
            (tuple(e) for e in self.entries), key=lambda r: (r[3], r[2], r[0], r[1])
        )


def _makespan_of(entries: Sequence[ScheduledOp]) -> int:
    return max(e.end for e in entries)


def makespan(sched: Schedule) -> int:
    if not len(sched):
        raise ValueError("makespan of an empty schedule is undefined")
    return int(sched.table[:, 4].max())


# --------------------------------------------------------------------- file I/O


def load_instance(text: str, name: str = "") -> Instance:
    """Parse the standard JSSP text format.

    Line 1 holds ``<n_jobs> <n_machines>``; each of the next ``n_jobs``
    non-blank lines holds ``n_machines`` pairs of ``<machine> <duration>``
    with 0-based machine indices.
    """
    lines = [(i + 1, ln.split()) for i, ln in enumerate(text.splitlines())]
    lines = [(no, toks) for no, toks in lines if toks and not toks[0].startswith("#")]
    if not lines:
        raise InstanceFormatError("empty instance file", 1)

    header_no, header = lines[0]
    if len(header) != 2:
        raise InstanceFormatError(
            f"malformed header: expected '<n_jobs> <n_machines>', got {len(header)} tokens",
            header_no,
        )
    try:
        n_jobs, n_machines = (int(t) for t in header)
    except ValueError:
        raise InstanceFormatError("malformed header: non-integer token", header_no) from None
    if n_jobs < 1 or n_machines < 1:
        raise InstanceFormatError("malformed header: counts must be positive", header_no)

    body = lines[1:]
    if len(body) != n_jobs:
        raise InstanceFormatError(
            f"expected {n_jobs} job lines, found {len(body)}",
            body[-1][0] if body else header_no,
        )

    routes = []
    for no, toks in body:
        if len(toks) != 2 * n_machines:
            raise InstanceFormatError(
                f"expected {2 * n_machines} tokens, found {len(toks)}", no
            )
        try:
            values = [int(t) for t in toks]
        except ValueError:
            raise InstanceFormatError("non-integer token", no) from None
        route = []
        for m, p in zip(values[::2], values[1::2]):
            if not 0 <= m < n_machines:
                raise InstanceFormatError(f"machine index {m} out of range", no)
            if p < 0:
                raise InstanceFormatError(f"negative duration {p}", no)
            route.append((m, p))
        routes.append(route)
    return Instance.from_routes(routes, machine_count=n_machines, name=name)


def dump_instance(inst: Instance) -> str:
    """Serialize to the standard JSSP text format (arrival times are dropped).

    Only rectangular instances (every job visits ``machine_count`` operations)
    are representable in this format.
    """
    widths = {len(route) for route in inst.jobs}
    if widths != {inst.machine_count}:
        raise ValueError("standard format requires one operation per machine per job")
    lines = [f"{inst.job_count} {inst.machine_count}"]
    for route in inst.jobs:
        lines.append(" ".join(f"{op.machine_id} {op.processing_time}" for op in route))
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ validation


class Violation(NamedTuple):
    kind: str
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}

    def add(self, kind: str, message: str) -> None:
        self.violations.append(Violation(kind, message))


def validate_schedule(inst: Instance, sched: Schedule) -> ValidationReport:
    """Check a schedule against every job-shop constraint.

    Infeasibility is reported, never raised. Coverage is checked first; the
    remaining checks run on the entries that match an instance operation.
    """
    report = ValidationReport()
    offsets, op_machine, op_pt = inst.flat_routes
    n_ops = len(op_machine)
    if not len(sched):
        report.add("coverage", f"empty schedule for {n_ops} operations")
        return report

    job, k, machine, start, end = sched.table.T
    actual = int(end.max())
    route_len = np.diff(offsets)
    known = (job >= 0) & (job < inst.job_count)
    known[known] &= (k[known] >= 0) & (k[known] < route_len[job[known]])
    for i in np.flatnonzero(~known):
        report.add("coverage", f"operation {(int(job[i]), int(k[i]))} not in instance")
    idx = np.flatnonzero(known)
    flat = offsets[job[idx]] + k[idx]
    counts = np.bincount(flat, minlength=n_ops)
    for f in np.flatnonzero(counts > 1):
        report.add("coverage", f"operation {_op_key(offsets, f)} scheduled more than once")
    for f in np.flatnonzero(counts == 0):
        report.add("coverage", f"operation {_op_key(offsets, f)} missing")
    # first occurrence of each operation
    flat, first = np.unique(flat, return_index=True)
    idx = idx[first]
    job, k, machine, start, end = job[idx], k[idx], machine[idx], start[idx], end[idx]

    for i in np.flatnonzero(machine != op_machine[flat]):
        report.add(
            "machine mismatch",
            f"operation {(int(job[i]), int(k[i]))} on machine {machine[i]}, "
            f"route says {op_machine[flat[i]]}",
        )
    for i in np.flatnonzero(end - start != op_pt[flat]):
        report.add(
            "duration mismatch",
            f"operation {(int(job[i]), int(k[i]))} spans {end[i] - start[i]}, "
            f"expected {op_pt[flat[i]]}",
        )

    arrivals = np.asarray(inst.arrival_times, dtype=np.int64)
    for i in np.flatnonzero((k == 0) & (start < arrivals[job])):
        report.add(
            "arrival", f"job {job[i]} starts at {start[i]} before arrival {arrivals[job[i]]}"
        )

    # entries are sorted by flat index, so consecutive rows of one job are route neighbours
    same_job = (job[1:] == job[:-1]) & (k[1:] == k[:-1] + 1)
    for i in np.flatnonzero(same_job & (start[1:] < end[:-1])):
        report.add(
            "precedence",
            f"job {job[i + 1]} op {k[i + 1]} starts at {start[i + 1]} "
            f"before op {k[i]} ends at {end[i]}",
        )

    order = np.lexsort((end, start, machine))
    m_s, s_s, e_s = machine[order], start[order], end[order]
    # latest end among all earlier ops on the same machine: a running max over
    # rows sorted by machine, with each machine lifted above every earlier one
    lift = (m_s - m_s.min()) * (int(end.max()) - int(min(start.min(), end.min(), 0)) + 1)
    prev_end = np.maximum.accumulate(e_s + lift)[:-1] - lift[1:]
    clash = (m_s[1:] == m_s[:-1]) & (s_s[1:] < prev_end)
    for r in np.flatnonzero(clash):
        b = order[r + 1]
        report.add(
            "machine overlap",
            f"machine {m_s[r + 1]}: job {job[b]} op {k[b]} [{start[b]},{end[b]}) "
            f"starts before {prev_end[r]}, when an earlier operation ends",
        )

    if sched.makespan != actual:
        report.add("makespan", f"recorded makespan {sched.makespan}, latest end {actual}")
    return report


def _op_key(offsets: np.ndarray, flat: int) -> tuple[int, int]:
    j = int(np.searchsorted(offsets, flat, side="right")) - 1
    return j, int(flat - offsets[j])
