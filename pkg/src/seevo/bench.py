"""Benchmark files, random case generators, baseline sweeps and gap reports."""

from __future__ import annotations

import csv
import io
import json
import math
import random
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

from .core import Instance, InstanceFormatError, load_instance
from .rulelang import RuleEvalError, RuleProgram, builtin
from .simulator import simulate

# best-known makespans of the published benchmark cases used for sanity checks
UPPER_BOUNDS: dict[str, int] = {
    "dmu03": 2731, "dmu04": 2669, "dmu08": 3188, "dmu09": 3092,
    "dmu13": 3681, "dmu14": 3394, "dmu18": 3844, "dmu19": 3768,
    "dmu23": 4668, "dmu24": 4648, "dmu28": 4692, "dmu29": 4691,
    "dmu33": 5728, "dmu34": 5385, "dmu38": 5713, "dmu39": 5747,
    "ta01": 1231, "ta02": 1244, "ta11": 1357, "ta12": 1367,
    "ta21": 1642, "ta22": 1600, "ta31": 1764, "ta32": 1784,
    "ta41": 2005, "ta42": 1937, "ta51": 2760, "ta52": 2756,
    "ta61": 2868, "ta62": 2869, "ta71": 5464, "ta72": 5181,
}  # fmt: skip

DMU_CASES = tuple(name for name in UPPER_BOUNDS if name.startswith("dmu"))
TA_CASES = tuple(name for name in UPPER_BOUNDS if name.startswith("ta"))

# published SPT makespans on the DMU cases, for reproduction checks
DMU_SPT_REFERENCE: dict[str, int] = {
    "dmu03": 3630, "dmu04": 3541, "dmu08": 4714, "dmu09": 4283,
    "dmu13": 4813, "dmu14": 4583, "dmu18": 6231, "dmu19": 5126,
    "dmu23": 6250, "dmu24": 5503, "dmu28": 6558, "dmu29": 6565,
    "dmu33": 7361, "dmu34": 7026, "dmu38": 7954, "dmu39": 7592,
}  # fmt: skip
DMU_SPT_MEAN = 5733.13

# the nine rules compared on dynamic cases, plus SPT/TWKR as a composite reference
DYNAMIC_HDRS = ("SPT", "TWKR_MOST", "SRM", "SSO", "LPT", "LPT_TWK", "SPT_TWK", "SPT_PLUS_SSO", "SPT_LSO")

FIRST_BATCH_POLICY = "batch 1 arrives at time 0; later batches draw from the arrival windows in order"


# ----------------------------------------------------------------- generators


@dataclass(frozen=True)
class StaticGenParams:
    job_count_range: tuple[int, int] = (20, 100)
    machine_count_range: tuple[int, int] = (10, 20)
    processing_time_range: tuple[int, int] = (50, 100)
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("job_count_range", "machine_count_range", "processing_time_range"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise ValueError(f"{name} must be a non-empty range of positive integers")


@dataclass(frozen=True)
class DynamicGenParams:
    machine_count: int = 10
    batch_count_range: tuple[int, int] = (2, 3)
    batch_size_range: tuple[int, int] = (20, 50)
    arrival_window_1: tuple[int, int] = (1, 500)
    arrival_window_2: tuple[int, int] = (501, 1000)
    processing_time_range: tuple[int, int] = (50, 100)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.machine_count < 1:
            raise ValueError("machine_count must be positive")
        lo, hi = self.batch_count_range
        if not 1 <= lo <= hi <= 3:
            raise ValueError("batch counts must lie in 1..3 (one fixed batch plus two windows)")
        for name in ("batch_size_range", "processing_time_range", "arrival_window_1", "arrival_window_2"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise ValueError(f"{name} must be a non-empty range")
        if self.arrival_window_1[1] >= self.arrival_window_2[0]:
            raise ValueError("arrival windows must be disjoint and ordered")


def generate_static_case(params: StaticGenParams, name: str | None = None) -> Instance:
    rng = random.Random(params.seed)
    n = rng.randint(*params.job_count_range)
    m = rng.randint(*params.machine_count_range)
    routes = [
        [(machine, rng.randint(*params.processing_time_range)) for machine in rng.sample(range(m), m)]
        for _ in range(n)
    ]
    return Instance.from_routes(routes, m, name=name or f"static-{params.seed}")


def generate_dynamic_sidecar(params: DynamicGenParams) -> dict[str, Any]:
    """The dynamic case as a self-describing document (see :func:`instance_from_sidecar`)."""
    rng = random.Random(params.seed)
    m = params.machine_count
    n_batches = rng.randint(*params.batch_count_range)
    windows = [params.arrival_window_1, params.arrival_window_2]
    batches = []
    for b in range(n_batches):
        arrival = 0 if b == 0 else rng.randint(*windows[b - 1])
        size = rng.randint(*params.batch_size_range)
        jobs = [
            [[machine, rng.randint(*params.processing_time_range)] for machine in rng.sample(range(m), m)]
            for _ in range(size)
        ]
        batches.append({"arrival": arrival, "jobs": jobs})
    return {
        "machine_count": m,
        "batches": batches,
        "seed": params.seed,
        "params": asdict(params),
        "first_batch_policy": FIRST_BATCH_POLICY,
    }


def instance_from_sidecar(doc: Mapping[str, Any], name: str = "") -> Instance:
    routes, arrivals = [], []
    for batch in doc["batches"]:
        for job in batch["jobs"]:
            routes.append([(int(mach), int(dur)) for mach, dur in job])
            arrivals.append(int(batch["arrival"]))
    return Instance.from_routes(routes, int(doc["machine_count"]), arrivals, name)


def generate_dynamic_case(params: DynamicGenParams, name: str | None = None) -> Instance:
    return instance_from_sidecar(generate_dynamic_sidecar(params), name or f"dynamic-{params.seed}")


def case_stream(seed: int, dynamic: bool = True, prefix: str = "train") -> Iterator[Instance]:
    """Endless seeded stream of generated cases; case ``k`` uses seed ``seed * 100003 + k``."""
    k = 0
    while True:
        sub = seed * 100003 + k
        name = f"{prefix}-{k:04d}"
        if dynamic:
            yield generate_dynamic_case(DynamicGenParams(seed=sub), name)
        else:
            yield generate_static_case(StaticGenParams(seed=sub), name)
        k += 1


# -------------------------------------------------------------------- reports


@dataclass
class BenchReport:
    cases: list[str]
    methods: list[str]
    makespans: dict[tuple[str, str], int | None] = field(default_factory=dict)
    errors: dict[tuple[str, str], str] = field(default_factory=dict)

    def best(self, case: str) -> int | None:
        values = [v for m in self.methods if (v := self.makespans.get((case, m))) is not None]
        return min(values) if values else None

    def gap(self, case: str, method: str) -> float | None:
        value, best = self.makespans.get((case, method)), self.best(case)
        if value is None or best is None:
            return None
        return (value - best) / best

    def mean_makespan(self, method: str) -> float | None:
        values = [v for c in self.cases if (v := self.makespans.get((c, method))) is not None]
        return math.fsum(values) / len(values) if values else None

    def mean_gap(self, method: str) -> float | None:
        values = [g for c in self.cases if (g := self.gap(c, method)) is not None]
        return math.fsum(values) / len(values) if values else None

    @property
    def failed(self) -> bool:
        return bool(self.errors)

    def to_csv(self) -> str:
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["case", "method", "makespan", "best", "gap"])
        for c in self.cases:
            best = self.best(c)
            for m in self.methods:
                value, gap = self.makespans.get((c, m)), self.gap(c, m)
                out.writerow([c, m, "" if value is None else value, "" if best is None else best,
                              "" if gap is None else repr(gap)])
        return buf.getvalue()

    def table(self) -> str:
        """Cases as rows, methods as columns, with a mean row."""
        width = max([len(m) for m in self.methods] + [8])
        first = max([len(c) for c in self.cases] + [4])
        lines = ["case".ljust(first) + "".join(m.rjust(width + 2) for m in self.methods)]
        for c in self.cases:
            cells = [self.makespans.get((c, m)) for m in self.methods]
            lines.append(c.ljust(first) + "".join(
                ("-" if v is None else str(v)).rjust(width + 2) for v in cells))
        means = [self.mean_makespan(m) for m in self.methods]
        lines.append("mean".ljust(first) + "".join(
            ("-" if v is None else f"{v:.2f}").rjust(width + 2) for v in means))
        return "\n".join(lines) + "\n"

    def plot_data(self) -> dict[str, Any]:
        return {
            "cases": self.cases,
            "methods": self.methods,
            "gaps": {m: [self.gap(c, m) for c in self.cases] for m in self.methods},
            "mean_gap": {m: self.mean_gap(m) for m in self.methods},
        }

    def export(self, directory: str | Path, stem: str = "bench") -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = [directory / f"{stem}.csv", directory / f"{stem}_gaps.json"]
        paths[0].write_text(self.to_csv())
        paths[1].write_text(json.dumps(self.plot_data(), indent=2) + "\n")
        return paths


def run_baselines(
    instances: Sequence[Instance],
    rules: Mapping[str, RuleProgram] | Sequence[str],
    seed: int = 0,
    workers: int = 1,
) -> BenchReport:
    """Simulate every (instance, rule) cell; failed cells are recorded and left out of the best."""
    if not instances or not rules:
        raise ValueError("need at least one instance and one rule")
    if not isinstance(rules, Mapping):
        rules = {name: builtin(name) for name in rules}
    names = [inst.name or f"case-{i}" for i, inst in enumerate(instances)]
    report = BenchReport(names, list(rules))
    cells = [(name, inst, method, rule) for name, inst in zip(names, instances) for method, rule in rules.items()]

    def run(cell):
        name, inst, method, rule = cell
        try:
            return simulate(inst, rule, seed=seed).makespan, None
        except (RuleEvalError, ArithmeticError) as exc:
            return None, str(exc)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, cells))
    else:
        results = [run(c) for c in cells]
    for (name, _, method, _), (value, error) in zip(cells, results):
        report.makespans[(name, method)] = value
        if error is not None:
            report.errors[(name, method)] = error
    return report


# -------------------------------------------------------------- benchmark files


class BenchmarkLoadError(ValueError):
    def __init__(self, failures: Mapping[str, str]) -> None:
        self.failures = dict(failures)
        detail = "; ".join(f"{name}: {msg}" for name, msg in sorted(self.failures.items()))
        super().__init__(f"{len(self.failures)} benchmark file(s) failed to load: {detail}")


def load_benchmark_set(directory: str | Path, name_filter: str | None = None) -> list[Instance]:
    """Every ``*.txt`` (or extension-less) instance file in ``directory``, sorted by name.

    ``name_filter`` keeps files whose stem starts with it, case-insensitively.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"benchmark directory {directory} does not exist")
    files = sorted(
        p for p in directory.iterdir()
        if p.is_file() and p.suffix in ("", ".txt", ".jsp")
        and (name_filter is None or p.stem.lower().startswith(name_filter.lower()))
    )
    if not files:
        warnings.warn(f"no benchmark files found in {directory}", stacklevel=2)
        return []
    instances, failures = [], {}
    for path in files:
        try:
            instances.append(load_instance(path.read_text(), name=path.stem.lower()))
        except InstanceFormatError as exc:
            failures[path.name] = str(exc)
    if failures:
        raise BenchmarkLoadError(failures)
    return sorted(instances, key=lambda inst: inst.name)
