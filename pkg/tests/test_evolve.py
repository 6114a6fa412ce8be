from __future__ import annotations

import json
import math
import random

import pytest

from seevo.core import Instance
from seevo.evolve import (
    AllIndividualsInvalid,
    ConfigError,
    EvolutionConfig,
    Individual,
    SelectionFailed,
    Stages,
    TrainedArtifacts,
    apply_online,
    evaluate_population,
    run_seevo,
    select_pairs,
)
from seevo.llm import LLMClient, OfflineMutatorProvider, ProviderError, ReplayProvider
from seevo.rulelang import builtin, parse_rule


def tiny_cases(seed: int = 0, jobs: int = 6, machines: int = 3):
    rng = random.Random(seed)
    k = 0
    while True:
        routes = [[(m, rng.randint(1, 9)) for m in rng.sample(range(machines), machines)] for _ in range(jobs)]
        arrivals = [0] * (jobs // 2) + [rng.randint(1, 10)] * (jobs - jobs // 2)
        yield Instance.from_routes(routes, machines, arrivals, name=f"tiny-{k}")
        k += 1


class ScriptedProvider:
    name = "scripted"

    def __init__(self, reply):
        self.reply = reply
        self.kinds = []

    def generate(self, request):
        self.kinds.append(request.kind)
        return self.reply(request) if callable(self.reply) else self.reply


class FailingProvider:
    name = "failing"

    def generate(self, request):
        raise ProviderError("timeout")


def individual(id_, source, fitness):
    return Individual(id_, source, parse_rule(source), fitness=fitness)


SMALL = dict(population_size=6, max_function_evaluations=3, training_case_count=3, seed=1)


def test_config_validation():
    assert EvolutionConfig().population_size == 20
    assert EvolutionConfig().mutation_probability == 0.5
    with pytest.raises(ConfigError):
        EvolutionConfig(mutation_probability=1.5)
    with pytest.raises(ConfigError):
        EvolutionConfig(population_size=0)


def test_init_from_scripted_replay():
    scripted = [{"kind": "init", "response": f"```\n-PT * {i + 1}\n```"} for i in range(18)]
    stages = Stages(LLMClient(ReplayProvider(scripted)))
    pop = stages.init_population(EvolutionConfig(), [builtin("SPT"), builtin("SPT_TWKR")])
    assert len(pop) == 20 and all(ind.rule is not None for ind in pop)
    assert pop[0].source == "-PT" and pop[1].source == "-(PT / TWKR)"


def test_init_with_garbage_responses():
    stages = Stages(LLMClient(ScriptedProvider("I cannot help with that ((")))
    pop = stages.init_population(EvolutionConfig(), [builtin("SPT"), builtin("SPT_TWKR")])
    assert sum(ind.rule is not None for ind in pop) == 2
    assert all("parse error" in ind.error for ind in pop[2:])


def test_init_requires_seeds():
    with pytest.raises(ConfigError):
        Stages(LLMClient(OfflineMutatorProvider())).init_population(EvolutionConfig(), [])


def test_evaluate_population(two_by_two):
    spt = Individual(0, "-PT", builtin("SPT"))
    bad = Individual(1, "PT +", None, error="parse error")
    evaluate_population([spt, bad], [two_by_two])
    assert spt.fitness == 6 and bad.fitness == math.inf and not bad.valid
    slow = Instance.from_routes([[(0, 10)]])
    assert evaluate_population([Individual(2, "-PT", builtin("SPT"))], [two_by_two, slow])[0].fitness == 8


def test_evaluate_marks_overflowing_rule_invalid(two_by_two):
    ind = Individual(0, "x", parse_rule("exp(exp(exp(PT)))"))
    evaluate_population([ind], [two_by_two])
    assert not ind.valid and "simulation failed" in ind.error


def test_select_pairs():
    a, b = individual(0, "-PT", 6.0), individual(1, "PT", 9.0)
    pairs = select_pairs([b, a], random.Random(0), 3)
    assert pairs == [(a, b)] * 3
    with pytest.raises(SelectionFailed):
        select_pairs([a, Individual(2, "?", None)], random.Random(0), 1)
    pop = [individual(i, "-PT", float(i % 5)) for i in range(20)]
    assert select_pairs(pop, random.Random(4), 10) == select_pairs(pop, random.Random(4), 10)
    for better, worse in select_pairs(pop, random.Random(4), 10):
        assert better is not worse and (better.fitness, better.id) < (worse.fitness, worse.id)


def test_equal_fitness_lower_id_is_better():
    a, b = individual(3, "-PT", 6.0), individual(8, "-SSO", 6.0)
    for better, worse in select_pairs([b, a], random.Random(1), 5):
        assert better is a


def test_coevolution_prompt_and_failure():
    pair = (individual(0, "-PT", 6.0), individual(1, "PT", 9.0))
    (rec,) = Stages(LLMClient(OfflineMutatorProvider())).coevolution_reflect([pair])
    assert "-PT" in rec.prompt and "PT" in rec.prompt and rec.prompt.index("Better") < rec.prompt.index("-PT")
    (failed,) = Stages(LLMClient(FailingProvider())).coevolution_reflect([pair])
    assert failed.response == "" and not failed.ok


def test_crossover_parses_offspring():
    pair = (individual(0, "-PT", 6.0), individual(1, "PT", 9.0))
    stages = Stages(LLMClient(ScriptedProvider("Sure.\n```\n-(PT/TWKR)\n```")))
    recs = stages.coevolution_reflect([pair])
    (child,) = stages.crossover([pair], recs)
    assert child.rule.ast == builtin("SPT_TWKR").ast and child.parents == (0, 1)
    (bad,) = Stages(LLMClient(ScriptedProvider("no idea"))).crossover([pair], recs)
    assert bad.rule is None


def test_self_reflection_branches():
    stages = Stages(LLMClient(OfflineMutatorProvider()))
    worse, better = stages.self_evolution_reflect(
        [(individual(0, "-PT", 6.0), individual(1, "PT", 9.0)), (individual(2, "PT", 9.0), individual(3, "-PT", 6.0))]
    )
    assert stages.bundle.reflection_sections["self-reflect-reverse"] in worse.prompt
    assert stages.bundle.reflection_sections["self-reflect-reinforce"] in better.prompt
    (stagnant,) = stages.self_evolution_reflect([(individual(0, "-PT", 6.0), individual(1, "-SSO", 6.0))])
    assert stages.bundle.reflection_sections["self-reflect-reverse"] in stagnant.prompt


def test_collective_memory():
    stages = Stages(LLMClient(ScriptedProvider("be greedy on PT")))
    assert stages.collective_reflect([], []) == [stages.bundle.default_memory]
    pair = (individual(0, "-PT", 6.0), individual(1, "PT", 9.0))
    records = stages.coevolution_reflect([pair] * 5)
    memory = stages.collective_reflect(records, ["older"])
    assert memory == ["be greedy on PT", "older"]
    memory = [f"m{i}" for i in range(10)]
    assert len(stages.collective_reflect(records, memory)) == 10
    failing = Stages(LLMClient(FailingProvider()))
    assert failing.collective_reflect(records, ["keep"]) == ["keep"]


def test_mutation_probability_extremes():
    elite = individual(0, "-PT", 6.0)
    stages = Stages(LLMClient(OfflineMutatorProvider()))
    assert stages.mutate(elite, [], EvolutionConfig(mutation_probability=0.0), random.Random(0)) == []
    assert len(stages.mutate(elite, [], EvolutionConfig(mutation_probability=1.0), random.Random(0))) == 20
    with pytest.raises(AllIndividualsInvalid):
        stages.mutate(Individual(1, "?", None), [], EvolutionConfig(), random.Random(0))


def test_run_offline_trace_is_monotone(tmp_path):
    client = LLMClient(OfflineMutatorProvider(42))
    result = run_seevo(EvolutionConfig(**{**SMALL, "max_function_evaluations": 5}), client, tiny_cases(), run_dir=tmp_path)
    assert len(result.trace) == 5
    assert all(a >= b for a, b in zip(result.trace, result.trace[1:]))
    seeds = [ind.fitness for ind in result.initial[:2]]
    assert result.best.fitness <= min(seeds)
    assert (tmp_path / "best_rule.txt").read_text().startswith("# ")
    assert sorted(p.name for p in (tmp_path / "iterations").iterdir()) == [f"iter_{i:03d}.json" for i in range(5)]
    log = json.loads((tmp_path / "iterations" / "iter_000.json").read_text())
    assert set(log["populations"]) == {"crossover", "self-crossover", "mutation"}
    assert log["case_rotation"]["removed"] == "tiny-0" and log["case_rotation"]["added"] == "tiny-3"


def test_generation_ceiling_and_population_size():
    cfg = EvolutionConfig(**{**SMALL, "mutation_probability": 1.0})
    result = run_seevo(cfg, LLMClient(OfflineMutatorProvider(1)), tiny_cases())
    for log in result.logs:
        assert log.generations <= 3 * cfg.population_size
        assert log.requests["mutate"] == cfg.population_size
        assert len(log.populations["mutation"]) == cfg.population_size


def test_ablation_only_drops_self_stage():
    on = run_seevo(EvolutionConfig(**SMALL), LLMClient(OfflineMutatorProvider(3)), tiny_cases())
    off = run_seevo(
        EvolutionConfig(**{**SMALL, "self_evolution_enabled": False}), LLMClient(OfflineMutatorProvider(3)), tiny_cases()
    )
    for a, b in zip(on.logs, off.logs):
        assert "self-crossover" in a.populations and "self-crossover" not in b.populations
        assert "self-reflect" not in b.requests and "self-crossover" not in b.requests
        assert b.generations < a.generations


def test_invalid_refinements_keep_elite():
    def reply(request):
        return "nonsense" if request.kind == "self-crossover" else OfflineMutatorProvider(0).generate(request)

    result = run_seevo(EvolutionConfig(**SMALL), LLMClient(ScriptedProvider(reply)), tiny_cases())
    for log in result.logs:
        refined = log.populations["self-crossover"]
        assert sum(ind["valid"] for ind in refined) == 1
        assert refined[-1]["fitness"] == min(ind["fitness"] for ind in log.populations["crossover"] if ind["valid"])


def test_all_invalid_population_aborts_with_artifacts(tmp_path):
    client = LLMClient(ScriptedProvider("??"))
    with pytest.raises(AllIndividualsInvalid):
        run_seevo(EvolutionConfig(**SMALL), client, tiny_cases(), seeds=[parse_rule("exp(exp(exp(PT)))")], run_dir=tmp_path)
    assert json.loads((tmp_path / "error.json").read_text())["error"] == "AllIndividualsInvalid"
    assert (tmp_path / "config.json").exists()


def test_selection_failure_aborts_with_artifacts(tmp_path):
    client = LLMClient(ScriptedProvider("??"))
    with pytest.raises(SelectionFailed):
        run_seevo(EvolutionConfig(**SMALL), client, tiny_cases(), seeds=[builtin("SPT")], run_dir=tmp_path)
    assert json.loads((tmp_path / "error.json").read_text())["error"] == "SelectionFailed"
    assert (tmp_path / "best_rule.txt").exists()


def test_provider_failures_degrade_not_abort():
    client = LLMClient(FailingProvider())
    cfg = EvolutionConfig(**{**SMALL, "max_function_evaluations": 1})
    result = run_seevo(cfg, client, tiny_cases(), seeds=[builtin("SPT"), builtin("SPT_TWKR")])
    assert result.best.valid and len(result.logs) == 1
    assert client.transcript and all(ex.response == "" and ex.attempt == 3 for ex in client.transcript)
    # with only the elite left valid, the next pairing step has nothing to pair
    with pytest.raises(SelectionFailed):
        run_seevo(EvolutionConfig(**SMALL), LLMClient(FailingProvider()), tiny_cases(),
                  seeds=[builtin("SPT"), builtin("SPT_TWKR")])


def test_replay_reproduces_logs(tmp_path):
    first = LLMClient(OfflineMutatorProvider(9), transcript_path=tmp_path / "t.jsonl")
    a = run_seevo(EvolutionConfig(**SMALL), first, tiny_cases(), run_dir=tmp_path / "a")
    replay = LLMClient(ReplayProvider.from_file(tmp_path / "t.jsonl"))
    b = run_seevo(EvolutionConfig(**SMALL), replay, tiny_cases(), run_dir=tmp_path / "b")
    assert [l.to_json() for l in a.logs] == [l.to_json() for l in b.logs]


def test_apply_online(tmp_path):
    trained_dir = tmp_path / "trained"
    run_seevo(EvolutionConfig(**SMALL), LLMClient(OfflineMutatorProvider(2)), tiny_cases(), run_dir=trained_dir)
    trained = TrainedArtifacts.load(trained_dir)
    trained.best_source = "-(PT / TWKR)"
    test_cases = [c for c, _ in zip(tiny_cases(77), range(4))]
    reference = evaluate_population([Individual(0, "", builtin("SPT_TWKR"))], test_cases)[0].fitness
    best = apply_online(trained, test_cases, LLMClient(OfflineMutatorProvider(2)), EvolutionConfig(**SMALL))
    assert best.fitness <= reference
    again = apply_online(trained, test_cases, LLMClient(OfflineMutatorProvider(2)), EvolutionConfig(**SMALL))
    assert (again.rule.canonical, again.fitness) == (best.rule.canonical, best.fitness)
    with pytest.raises(ConfigError):
        apply_online(TrainedArtifacts("", [], []), test_cases, LLMClient(OfflineMutatorProvider()))
    with pytest.raises(ConfigError):
        TrainedArtifacts.load(tmp_path / "nowhere")
