"""Reflection-guided evolution of dispatching rules.

One iteration runs three generate/evaluate/update rounds:

1. pairwise reflection on randomly paired parents, then crossover;
2. per-offspring reflection on how it fared against its parent, then a
   refinement of each offspring (skipped in ablation mode);
3. a synthesis of the iteration's notes into long-lived memory, then
   mutation of the elite.

The best individual so far is carried through every update, so the best
fitness never increases. After each iteration the oldest training case is
swapped for a fresh one.
"""

from __future__ import annotations

import itertools
import json
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterator, Sequence

from .core import Instance
from .llm import (
    ChatExchange,
    LLMClient,
    PromptBundle,
    extract_rule,
    load_bundle,
    render_prompt,
)
from .rulelang import ParseError, RuleEvalError, RuleProgram, builtin, format_rule_file, parse_rule
from .simulator import simulate

DEFAULT_SEEDS = ("SPT", "SPT_TWKR")
MEMORY_CAP = 10


class ConfigError(ValueError):
    pass


class EvolutionError(RuntimeError):
    """Run-level failure; partial artifacts have been written when a run directory is set."""


class AllIndividualsInvalid(EvolutionError):
    pass


class SelectionFailed(EvolutionError):
    pass


@dataclass(frozen=True)
class EvolutionConfig:
    population_size: int = 20
    max_function_evaluations: int = 20
    mutation_probability: float = 0.5
    crossover_probability: float = 1.0
    training_case_count: int = 20
    elite_count: int = 1
    self_evolution_enabled: bool = True
    seed: int = 0
    temperature: float = 1.0

    def __post_init__(self) -> None:
        for name in ("mutation_probability", "crossover_probability"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        for name in ("population_size", "max_function_evaluations", "training_case_count", "elite_count"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.elite_count != 1:
            raise ConfigError("only a single elite is supported")
        if self.temperature < 0:
            raise ConfigError("temperature must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class Individual:
    id: int
    source: str
    rule: RuleProgram | None = None
    error: str | None = None
    fitness: float = math.inf
    birth: int = 0
    operator: str = "init"
    parents: tuple[int, ...] = ()

    @property
    def valid(self) -> bool:
        return self.rule is not None and math.isfinite(self.fitness)

    def snapshot(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "source": self.rule.canonical if self.rule is not None else self.source,
            "fitness": self.fitness if math.isfinite(self.fitness) else None,
            "valid": self.valid,
            "error": self.error,
            "birth": self.birth,
            "operator": self.operator,
            "parents": list(self.parents),
        }


@dataclass
class ReflectionRecord:
    kind: str
    subjects: tuple[int, ...]
    prompt: str
    response: str
    iteration: int

    @property
    def ok(self) -> bool:
        return bool(self.response.strip())


@dataclass
class IterationLog:
    iteration: int
    populations: dict[str, list[dict[str, Any]]] = field(default_factory=dict)
    requests: dict[str, int] = field(default_factory=dict)
    best_fitness: float = math.inf
    best_id: int = -1
    best_source: str = ""
    case_rotation: dict[str, str] = field(default_factory=dict)

    @property
    def generations(self) -> int:
        """Rule-producing provider requests issued this iteration."""
        return sum(n for stage, n in self.requests.items() if stage in _GENERATING_STAGES)

    def to_json(self) -> str:
        doc = {
            "iteration": self.iteration,
            "populations": self.populations,
            "requests": self.requests,
            "generations": self.generations,
            "best_fitness": self.best_fitness,
            "best_id": self.best_id,
            "best_source": self.best_source,
            "case_rotation": self.case_rotation,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


_GENERATING_STAGES = ("init", "crossover", "self-crossover", "mutate")


@dataclass
class RunResult:
    best: Individual
    logs: list[IterationLog]
    memory: list[str]
    population: list[Individual]
    initial: list[Individual]
    best_rule_path: Path | None = None

    @property
    def trace(self) -> list[float]:
        return [log.best_fitness for log in self.logs]


# ----------------------------------------------------------------- evaluation


class Evaluator:
    """Mean makespan over the current training cases, memoized per rule and case set."""

    def __init__(self, cases: Sequence[Instance], seed: int = 0, workers: int = 1) -> None:
        if not cases:
            raise ConfigError("at least one training case is required")
        self.cases = list(cases)
        self.seed = seed
        self.workers = max(1, workers)
        self._cache: dict[tuple[str, tuple[int, ...]], tuple[float, str | None]] = {}
        self._case_ids = list(range(len(self.cases)))
        self._next_case_id = len(self.cases)

    def replace_oldest(self, case: Instance) -> tuple[Instance, Instance]:
        old = self.cases.pop(0)
        self._case_ids.pop(0)
        self.cases.append(case)
        self._case_ids.append(self._next_case_id)
        self._next_case_id += 1
        self._cache.clear()
        return old, case

    def _score(self, rule: RuleProgram) -> tuple[float, str | None]:
        key = (rule.canonical, tuple(self._case_ids))
        if key not in self._cache:
            try:
                spans = [simulate(case, rule, seed=self.seed).makespan for case in self.cases]
                self._cache[key] = (math.fsum(spans) / len(spans), None)
            except (RuleEvalError, ArithmeticError, ValueError) as exc:
                self._cache[key] = (math.inf, f"simulation failed: {exc}")
        return self._cache[key]

    def evaluate(self, pop: Sequence[Individual]) -> list[Individual]:
        todo = [ind for ind in pop if ind.rule is not None]
        if self.workers > 1 and len(todo) > 1:
            # the compiled dispatch kernel releases the GIL; results map back by position
            with ThreadPoolExecutor(max_workers=self.workers) as ex:
                scores = list(ex.map(lambda ind: self._score(ind.rule), todo))
        else:
            scores = [self._score(ind.rule) for ind in todo]
        for ind, (fitness, error) in zip(todo, scores):
            ind.fitness = fitness
            if error is not None:
                ind.error = error
        for ind in pop:
            if ind.rule is None:
                ind.fitness = math.inf
        return list(pop)


def evaluate_population(pop: Sequence[Individual], cases: Sequence[Instance], seed: int = 0) -> list[Individual]:
    return Evaluator(cases, seed).evaluate(pop)


def best_of(pop: Sequence[Individual]) -> Individual:
    return min(pop, key=lambda ind: (ind.fitness, ind.id))


# ------------------------------------------------------------------- stages


class Stages:
    """Stage operations sharing one client, prompt bundle and id sequence."""

    def __init__(self, client: LLMClient, bundle: PromptBundle | None = None) -> None:
        self.client = client
        self.bundle = bundle or load_bundle()
        self.iteration = 0
        self._ids = itertools.count()

    def new_individual(self, source: str, operator: str, parents: tuple[int, ...] = ()) -> Individual:
        ind = Individual(next(self._ids), source, birth=self.iteration, operator=operator, parents=parents)
        try:
            ind.rule = parse_rule(source)
        except ParseError as exc:
            ind.error = f"parse error: {exc}"
        return ind

    def _from_exchange(self, ex: ChatExchange, operator: str, parents: tuple[int, ...]) -> Individual:
        ind = self.new_individual(extract_rule(ex.response), operator, parents)
        if ex.error is not None:
            ind.error = f"provider failure: {ex.error}"
        return ind

    def _ask(self, kind: str, items: Sequence[dict[str, Any]]) -> list[ChatExchange]:
        requests = [(kind, render_prompt(kind, self.bundle, data), data) for data in items]
        return self.client.complete_many(requests) if requests else []

    def init_population(self, cfg: EvolutionConfig, seeds: Sequence[RuleProgram]) -> list[Individual]:
        if not seeds:
            raise ConfigError("at least one seed rule is required")
        if len(seeds) > cfg.population_size:
            raise ConfigError("more seed rules than population slots")
        pop = [self.new_individual(rule.canonical, "init") for rule in seeds]
        data = {"seeds": [rule.canonical for rule in seeds]}
        exchanges = self._ask("init", [data] * (cfg.population_size - len(seeds)))
        pop.extend(self._from_exchange(ex, "init", ()) for ex in exchanges)
        return pop

    def coevolution_reflect(self, pairs: Sequence[tuple[Individual, Individual]]) -> list[ReflectionRecord]:
        items = [
            {
                "better_source": better.rule.canonical,
                "better_fitness": better.fitness,
                "worse_source": worse.rule.canonical,
                "worse_fitness": worse.fitness,
            }
            for better, worse in pairs
        ]
        exchanges = self._ask("co-reflect", items)
        return [
            ReflectionRecord("co-evolution", (b.id, w.id), ex.messages[-1].content, ex.response, self.iteration)
            for (b, w), ex in zip(pairs, exchanges)
        ]

    def crossover(
        self, pairs: Sequence[tuple[Individual, Individual]], reflections: Sequence[ReflectionRecord]
    ) -> list[Individual]:
        items = [
            {
                "better_source": better.rule.canonical,
                "better_fitness": better.fitness,
                "worse_source": worse.rule.canonical,
                "worse_fitness": worse.fitness,
                "reflection": rec.response,
            }
            for (better, worse), rec in zip(pairs, reflections)
        ]
        exchanges = self._ask("crossover", items)
        return [
            self._from_exchange(ex, "crossover", (b.id, w.id)) for (b, w), ex in zip(pairs, exchanges)
        ]

    def self_evolution_reflect(
        self, couples: Sequence[tuple[Individual, Individual]]
    ) -> list[ReflectionRecord]:
        """One record per (parent, offspring); worse-or-equal offspring get the avoidance branch."""
        items = [
            {
                "before_source": before.rule.canonical,
                "before_fitness": before.fitness,
                "after_source": after.rule.canonical if after.rule is not None else after.source,
                "after_fitness": after.fitness,
                "improved": after.fitness < before.fitness,
            }
            for before, after in couples
        ]
        exchanges = self._ask("self-reflect", items)
        return [
            ReflectionRecord("self-evolution", (b.id, a.id), ex.messages[-1].content, ex.response, self.iteration)
            for (b, a), ex in zip(couples, exchanges)
        ]

    def self_crossover(
        self, couples: Sequence[tuple[Individual, Individual]], reflections: Sequence[ReflectionRecord]
    ) -> list[Individual]:
        # refine the offspring when it is usable, otherwise its parent
        targets = [after if after.valid else before for before, after in couples]
        items = [
            {"source": t.rule.canonical, "fitness": t.fitness, "reflection": rec.response}
            for t, rec in zip(targets, reflections)
        ]
        exchanges = self._ask("self-crossover", items)
        return [self._from_exchange(ex, "self-crossover", (t.id,)) for t, ex in zip(targets, exchanges)]

    def collective_reflect(self, history: Sequence[ReflectionRecord], memory: list[str]) -> list[str]:
        """New memory list (newest first); unchanged when the provider fails."""
        notes = [rec.response.strip() for rec in history if rec.ok]
        if not notes:
            return memory if memory else [self.bundle.default_memory]
        data = {"memory": memory_text(memory, self.bundle), "reflections": notes}
        (ex,) = self._ask("collective", [data])
        if not ex.ok or not ex.response.strip():
            return memory
        return ([ex.response.strip()] + memory)[:MEMORY_CAP]

    def mutate(self, elite: Individual, memory: list[str], cfg: EvolutionConfig, rng: random.Random) -> list[Individual]:
        if not elite.valid:
            raise AllIndividualsInvalid("no valid elite to mutate")
        slots = sum(1 for _ in range(cfg.population_size) if rng.random() < cfg.mutation_probability)
        data = {
            "elite_source": elite.rule.canonical,
            "elite_fitness": elite.fitness,
            "memory": memory_text(memory, self.bundle),
        }
        exchanges = self._ask("mutate", [data] * slots)
        return [self._from_exchange(ex, "mutation", (elite.id,)) for ex in exchanges]


def memory_text(memory: Sequence[str], bundle: PromptBundle) -> str:
    return "\n\n".join(memory) if memory else bundle.default_memory


def select_pairs(pop: Sequence[Individual], rng: random.Random, count: int) -> list[tuple[Individual, Individual]]:
    """``count`` random pairs of distinct valid individuals, each ordered (better, worse)."""
    valid = sorted((ind for ind in pop if ind.valid), key=lambda ind: ind.id)
    if len(valid) < 2:
        raise SelectionFailed(f"{len(valid)} valid individual(s); at least 2 are needed")
    pairs = []
    for _ in range(count):
        a, b = rng.sample(valid, 2)
        pairs.append((a, b) if (a.fitness, a.id) < (b.fitness, b.id) else (b, a))
    return pairs


# --------------------------------------------------------------------- loop


class _Run:
    def __init__(
        self,
        cfg: EvolutionConfig,
        client: LLMClient,
        cases: Sequence[Instance],
        bundle: PromptBundle | None,
        run_dir: str | Path | None,
        workers: int,
    ) -> None:
        self.cfg = cfg
        self.stages = Stages(client, bundle)
        self.rng = random.Random(cfg.seed)
        self.evaluator = Evaluator(cases, cfg.seed, workers)
        self.run_dir = Path(run_dir) if run_dir is not None else None
        self.logs: list[IterationLog] = []
        self.memory: list[str] = []
        self.pop: list[Individual] = []
        self.elite: Individual | None = None
        if self.run_dir is not None:
            for sub in ("iterations", "populations"):
                (self.run_dir / sub).mkdir(parents=True, exist_ok=True)
            (self.run_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")

    def update(self, candidates: Sequence[Individual]) -> None:
        self.evaluator.evaluate(candidates)
        best = best_of(candidates) if candidates else None
        if best is not None and best.valid and (self.elite is None or best.fitness < self.elite.fitness):
            self.elite = best

    def with_elite(self, pop: Sequence[Individual]) -> list[Individual]:
        return list(pop) + ([] if any(ind is self.elite for ind in pop) else [self.elite])

    def start(self, pop: list[Individual]) -> None:
        self.update(pop)
        self.pop = pop
        if self.elite is None:
            self.fail(AllIndividualsInvalid("all individuals are invalid"))

    def iterate(self, case_source: Iterator[Instance] | None) -> IterationLog:
        st, cfg = self.stages, self.cfg
        log = IterationLog(st.iteration)
        before = len(st.client.transcript)

        def count(stage: str) -> None:
            nonlocal before
            log.requests[stage] = log.requests.get(stage, 0) + len(st.client.transcript) - before
            before = len(st.client.transcript)

        try:
            pairs = select_pairs(self.pop, self.rng, max(1, cfg.population_size // 2))
        except SelectionFailed as exc:
            self.fail(exc)
        pairs = [p for p in pairs if self.rng.random() < cfg.crossover_probability]
        co_records = st.coevolution_reflect(pairs)
        count("co-reflect")
        offspring = st.crossover(pairs, co_records)
        count("crossover")
        self.update(offspring)
        self.pop = self.with_elite(offspring)
        log.populations["crossover"] = [ind.snapshot() for ind in self.pop]

        history = list(co_records)
        if cfg.self_evolution_enabled:
            couples = [(better, child) for (better, _), child in zip(pairs, offspring)]
            self_records = st.self_evolution_reflect(couples)
            count("self-reflect")
            refined = st.self_crossover(couples, self_records)
            count("self-crossover")
            self.update(refined)
            self.pop = self.with_elite(refined)
            log.populations["self-crossover"] = [ind.snapshot() for ind in self.pop]
            history.extend(self_records)

        self.memory = st.collective_reflect(history, self.memory)
        count("collective")
        mutants = st.mutate(self.elite, self.memory, cfg, self.rng)
        count("mutate")
        self.update(mutants)
        merged = self.with_elite(self.pop + mutants)
        self.pop = sorted(merged, key=lambda ind: (ind.fitness, ind.id))[: cfg.population_size]
        log.populations["mutation"] = [ind.snapshot() for ind in self.pop]

        if case_source is not None:
            old, new = self.evaluator.replace_oldest(next(case_source))
            log.case_rotation = {"removed": old.name, "added": new.name}
        log.best_fitness = self.elite.fitness
        log.best_id = self.elite.id
        log.best_source = self.elite.rule.canonical
        self.logs.append(log)
        self.persist(log)
        st.iteration += 1
        return log

    def persist(self, log: IterationLog | None = None) -> None:
        if self.run_dir is None:
            return
        if log is not None:
            name = f"iter_{log.iteration:03d}.json"
            (self.run_dir / "iterations" / name).write_text(log.to_json())
            pop_doc = [ind.snapshot() for ind in self.pop]
            (self.run_dir / "populations" / name).write_text(json.dumps(pop_doc, indent=2, sort_keys=True) + "\n")
        (self.run_dir / "memory.json").write_text(json.dumps(self.memory, indent=2) + "\n")
        if self.elite is not None:
            (self.run_dir / "best_rule.txt").write_text(
                format_rule_file(
                    self.elite.rule,
                    [
                        f"mean makespan {self.elite.fitness:.3f} on the training cases",
                        f"individual {self.elite.id}, {self.elite.operator}, iteration {self.elite.birth}",
                    ],
                )
            )

    def fail(self, exc: EvolutionError):
        if self.run_dir is not None:
            self.persist()
            doc = {"error": type(exc).__name__, "message": str(exc), "iteration": self.stages.iteration}
            (self.run_dir / "error.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        raise exc

    def result(self, initial: list[Individual]) -> RunResult:
        path = self.run_dir / "best_rule.txt" if self.run_dir is not None else None
        return RunResult(self.elite, self.logs, self.memory, self.pop, initial, path)


def run_seevo(
    cfg: EvolutionConfig,
    client: LLMClient,
    case_source: Iterator[Instance],
    seeds: Sequence[RuleProgram] | None = None,
    bundle: PromptBundle | None = None,
    run_dir: str | Path | None = None,
    workers: int = 1,
) -> RunResult:
    """Evolve rules for ``cfg.max_function_evaluations`` iterations.

    ``case_source`` supplies the initial ``training_case_count`` cases and one
    replacement per iteration.
    """
    if seeds is None:
        seeds = [builtin(name) for name in DEFAULT_SEEDS]
    cases = [next(case_source) for _ in range(cfg.training_case_count)]
    run = _Run(cfg, client, cases, bundle, run_dir, workers)
    initial = run.stages.init_population(cfg, seeds)
    run.start(initial)
    initial = [Individual(**vars(ind)) for ind in initial]
    for _ in range(cfg.max_function_evaluations):
        run.iterate(case_source)
    run.persist()
    return run.result(initial)


@dataclass
class TrainedArtifacts:
    best_source: str
    memory: list[str]
    population: list[str]

    @classmethod
    def load(cls, run_dir: str | Path) -> TrainedArtifacts:
        run_dir = Path(run_dir)
        best_path = run_dir / "best_rule.txt"
        if not best_path.exists():
            raise ConfigError(f"{run_dir} has no best_rule.txt")
        body = [ln for ln in best_path.read_text().splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        memory_path = run_dir / "memory.json"
        memory = json.loads(memory_path.read_text()) if memory_path.exists() else []
        snapshots = sorted((run_dir / "populations").glob("iter_*.json"))
        population = []
        if snapshots:
            population = [d["source"] for d in json.loads(snapshots[-1].read_text()) if d["valid"]]
        return cls(" ".join(body), memory, population)


def apply_online(
    trained: TrainedArtifacts,
    cases: Sequence[Instance],
    client: LLMClient,
    cfg: EvolutionConfig | None = None,
    bundle: PromptBundle | None = None,
    run_dir: str | Path | None = None,
) -> Individual:
    """One iteration from a trained population and memory on new cases; returns the best."""
    if not trained.best_source.strip():
        raise ConfigError("trained artifacts hold no best rule")
    cfg = cfg or EvolutionConfig()
    run = _Run(cfg, client, cases, bundle, run_dir, workers=1)
    sources = [trained.best_source] + [s for s in trained.population if s != trained.best_source]
    pop = [run.stages.new_individual(src, "init") for src in sources[: cfg.population_size]]
    run.memory = list(trained.memory)[:MEMORY_CAP]
    run.start(pop)
    run.iterate(None)
    run.persist()
    return run.elite
