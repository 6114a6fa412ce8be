"""Command-line entry point: ``seevo <command> ...``.

Settings resolve as command-line flags, then environment variables, then the
``[seevo]`` section of an optional INI-style config file, then defaults.
Exit codes: 0 success, 1 run-level failure, 2 bad input or configuration.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Sequence

from . import bench
from .core import Instance, InstanceFormatError, Schedule, ScheduledOp, dump_instance, load_instance, validate_schedule
from .evolve import (
    ConfigError,
    EvolutionConfig,
    EvolutionError,
    TrainedArtifacts,
    apply_online,
    run_seevo,
)
from .llm import LiveProvider, LLMClient, OfflineMutatorProvider, ReplayProvider, TranscriptExhausted
from .llm.providers import ReplayMismatch
from .rulelang import BUILTIN_NAMES, ParseError, RuleProgram, builtin, load_rule_file
from .simulator import simulate

EXIT_OK, EXIT_RUN_FAILED, EXIT_BAD_INPUT = 0, 1, 2


class InputError(Exception):
    """Bad user input; reported on stderr with exit code 2."""


# --------------------------------------------------------------------- config


@dataclass
class RunConfig:
    population_size: int = 20
    max_fe: int = 20
    mutation_probability: float = 0.5
    crossover_probability: float = 1.0
    cases: int = 20
    self_evolution: bool = True
    seed: int = 0
    temperature: float = 1.0
    provider: str = "offline"
    transcript: str = ""
    base_url: str = ""
    model: str = ""
    api_key_env: str = "LLM_API_KEY"
    parallelism: int = 1
    jobs: int = 1
    static_cases: bool = False
    run_dir: str = ""

    def evolution(self) -> EvolutionConfig:
        return EvolutionConfig(
            population_size=self.population_size,
            max_function_evaluations=self.max_fe,
            mutation_probability=self.mutation_probability,
            crossover_probability=self.crossover_probability,
            training_case_count=self.cases,
            self_evolution_enabled=self.self_evolution,
            seed=self.seed,
            temperature=self.temperature,
        )

    def snapshot(self) -> dict[str, Any]:
        doc = asdict(self)
        doc.pop("api_key_env", None)
        return doc


# environment variables consulted when a flag is absent
_ENV = {
    "seed": "SEEVO_SEED",
    "provider": "SEEVO_PROVIDER",
    "base_url": "LLM_BASE_URL",
    "model": "LLM_MODEL",
}


def _coerce(name: str, raw: str) -> Any:
    kind = {f.name: f.type for f in fields(RunConfig)}[name]
    try:
        if kind in ("bool", bool):
            if raw.strip().lower() in ("1", "true", "yes", "on"):
                return True
            if raw.strip().lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
    except ValueError:
        raise InputError(f"invalid value {raw!r} for {name}") from None
    return raw


def resolve_config(args: argparse.Namespace, environ: dict[str, str] | None = None) -> RunConfig:
    environ = dict(os.environ if environ is None else environ)
    values: dict[str, Any] = {}
    config_path = getattr(args, "config", None)
    if config_path:
        parser = configparser.ConfigParser()
        try:
            with open(config_path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise InputError(f"cannot read config {config_path}: {exc}") from None
        if parser.has_section("seevo"):
            known = {f.name for f in fields(RunConfig)}
            for key, raw in parser.items("seevo"):
                key = key.replace("-", "_")
                if key not in known:
                    raise InputError(f"unknown config key {key!r} in {config_path}")
                values[key] = _coerce(key, raw)
    for name, var in _ENV.items():
        if environ.get(var):
            values[name] = _coerce(name, environ[var])
    for f in fields(RunConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    if getattr(args, "ablation", None) == "no-self-evolution":
        values["self_evolution"] = False
    return RunConfig(**values)


def make_client(cfg: RunConfig, transcript_out: Path | None, environ: dict[str, str] | None = None) -> LLMClient:
    environ = dict(os.environ if environ is None else environ)
    if cfg.provider == "offline":
        provider = OfflineMutatorProvider(cfg.seed)
    elif cfg.provider == "replay":
        if not cfg.transcript:
            raise InputError("--provider replay needs --transcript")
        try:
            provider = ReplayProvider.from_file(cfg.transcript)
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot read transcript: {exc}") from None
    elif cfg.provider == "live":
        key = environ.get(cfg.api_key_env)
        if not key:
            raise InputError(f"live provider needs a credential in ${cfg.api_key_env}")
        try:
            provider = LiveProvider(cfg.base_url, cfg.model, key)
        except ValueError as exc:
            raise InputError(str(exc)) from None
    else:
        raise InputError(f"unknown provider {cfg.provider!r}")
    return LLMClient(
        provider,
        model=cfg.model,
        temperature=cfg.temperature,
        retry_delay=1.0 if cfg.provider == "live" else 0.0,
        parallelism=cfg.parallelism,
        transcript_path=transcript_out,
    )


# -------------------------------------------------------------------- helpers


def read_instance(path: str | Path) -> Instance:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    try:
        if path.suffix == ".json":
            return bench.instance_from_sidecar(json.loads(text), path.stem)
        return load_instance(text, path.stem)
    except InstanceFormatError as exc:
        raise InputError(f"{path}: {exc}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"{path}: malformed instance document ({exc})") from None


def read_rule(spec: str) -> tuple[str, RuleProgram]:
    """A builtin name, or a path to a rule file."""
    if spec.upper() in BUILTIN_NAMES:
        return spec.upper(), builtin(spec)
    path = Path(spec)
    if not path.exists():
        raise InputError(f"{spec!r} is neither a builtin rule ({', '.join(BUILTIN_NAMES)}) nor a file")
    try:
        return path.stem, load_rule_file(path.read_text(encoding="utf-8"))
    except ParseError as exc:
        raise InputError(f"{path}: {exc.message} at position {exc.position}") from None


def parse_rule_list(spec: str) -> dict[str, RuleProgram]:
    if spec == "all-builtins":
        names: Sequence[str] = BUILTIN_NAMES
    elif spec == "dynamic-hdrs":
        names = bench.DYNAMIC_HDRS
    else:
        names = [s.strip() for s in spec.split(",") if s.strip()]
    rules = {}
    for name in names:
        label, rule = read_rule(name)
        rules[label] = rule
    if not rules:
        raise InputError("empty rule list")
    return rules


def write_gantt(sched: Schedule, out) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["job", "op", "machine", "start", "end"])
    writer.writerows(sched.gantt_rows())


def read_gantt(path: str | Path) -> Schedule:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        entries = tuple(
            ScheduledOp(int(r["job"]), int(r["op"]), int(r["machine"]), int(r["start"]), int(r["end"]))
            for r in rows
        )
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise InputError(f"cannot read schedule {path}: {exc}") from None
    if not entries:
        raise InputError(f"schedule {path} has no rows")
    return Schedule(entries)


# ------------------------------------------------------------------- commands


def cmd_generate(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k in range(args.count):
        seed = args.seed * 100003 + k
        if args.dynamic:
            doc = bench.generate_dynamic_sidecar(bench.DynamicGenParams(seed=seed))
            path = out / f"dynamic-{k:04d}.json"
            path.write_text(json.dumps(doc) + "\n")
        else:
            inst = bench.generate_static_case(bench.StaticGenParams(seed=seed))
            path = out / f"static-{k:04d}.txt"
            path.write_text(dump_instance(inst))
        print(path)
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    label, rule = read_rule(args.rule)
    instances = [read_instance(p) for p in args.instances]
    spans = []
    for inst in instances:
        sched = simulate(inst, rule, seed=args.seed)
        spans.append(sched.makespan)
        print(f"{inst.name}\t{label}\t{sched.makespan}")
        if args.gantt is not None:
            if args.gantt == "-":
                write_gantt(sched, sys.stdout)
            else:
                target = Path(args.gantt)
                target.mkdir(parents=True, exist_ok=True)
                with open(target / f"{inst.name}.csv", "w", encoding="utf-8") as fh:
                    write_gantt(sched, fh)
    print(f"mean\t{label}\t{sum(spans) / len(spans):.2f}")
    return EXIT_OK


def _run_dir(cfg: RunConfig, default: str) -> Path:
    path = Path(cfg.run_dir or default)
    path.mkdir(parents=True, exist_ok=True)
    (path / "run_config.json").write_text(json.dumps(cfg.snapshot(), indent=2, sort_keys=True) + "\n")
    return path


def cmd_evolve(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    try:
        evo = cfg.evolution()
    except ConfigError as exc:
        raise InputError(str(exc)) from None
    run_dir = _run_dir(cfg, f"runs/seevo-{cfg.seed}")
    client = make_client(cfg, run_dir / "transcript.jsonl")
    source = bench.case_stream(cfg.seed, dynamic=not cfg.static_cases)
    try:
        result = run_seevo(evo, client, source, run_dir=run_dir, workers=cfg.jobs)
    except EvolutionError as exc:
        print(f"run failed: {exc}; partial artifacts in {run_dir}", file=sys.stderr)
        return EXIT_RUN_FAILED
    except (TranscriptExhausted, ReplayMismatch) as exc:
        print(f"replay failed: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILED
    for log in result.logs:
        print(f"iteration {log.iteration:3d}  best {log.best_fitness:.3f}  {log.best_source}")
    print(f"best rule written to {result.best_rule_path}")
    return EXIT_OK


def cmd_apply(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    try:
        trained = TrainedArtifacts.load(args.trained)
        evo = cfg.evolution()
    except ConfigError as exc:
        raise InputError(str(exc)) from None
    if args.instances:
        cases = [read_instance(p) for p in args.instances]
    else:
        stream = bench.case_stream(cfg.seed, dynamic=not cfg.static_cases, prefix="test")
        cases = [next(stream) for _ in range(cfg.cases)]
    run_dir = _run_dir(cfg, f"runs/apply-{cfg.seed}")
    client = make_client(cfg, run_dir / "transcript.jsonl")
    try:
        best = apply_online(trained, cases, client, evo, run_dir=run_dir)
    except (EvolutionError, TranscriptExhausted, ReplayMismatch) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILED
    print(f"best {best.fitness:.3f}  {best.rule.canonical}")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    rules = parse_rule_list(args.rules)
    for extra in args.rule_file or []:
        label, rule = read_rule(extra)
        rules[label] = rule
    instances: list[Instance] = []
    for directory in args.dir or []:
        try:
            instances.extend(bench.load_benchmark_set(directory, args.filter))
        except (FileNotFoundError, bench.BenchmarkLoadError) as exc:
            raise InputError(str(exc)) from None
    if args.dynamic or args.static:
        stream = bench.case_stream(args.seed, dynamic=bool(args.dynamic), prefix="case")
        instances.extend(next(stream) for _ in range(args.cases))
    if not instances:
        raise InputError("no instances: give --dir and/or --dynamic/--static")
    report = bench.run_baselines(instances, rules, seed=args.seed, workers=args.jobs)
    sys.stdout.write(report.table())
    if args.out:
        for path in report.export(args.out):
            print(f"wrote {path}")
    for (case, method), msg in sorted(report.errors.items()):
        print(f"failed cell {case}/{method}: {msg}", file=sys.stderr)
    return EXIT_RUN_FAILED if report.failed else EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    path = Path(args.path)
    if path.is_dir():
        logs = sorted((path / "iterations").glob("iter_*.json"))
        if not logs:
            raise InputError(f"{path} holds no iteration logs")
        for p in logs:
            doc = json.loads(p.read_text())
            print(f"iteration {doc['iteration']:3d}  best {doc['best_fitness']:.3f}  "
                  f"generations {doc['generations']:3d}  {doc['best_source']}")
        if (path / "error.json").exists():
            print("run ended with: " + (path / "error.json").read_text().strip())
        return EXIT_OK
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    if not rows or "gap" not in rows[0]:
        raise InputError(f"{path} is not a bench export")
    methods: dict[str, list[float]] = {}
    for row in rows:
        if row["gap"]:
            methods.setdefault(row["method"], []).append(float(row["gap"]))
    print("method\tmean_gap\tmax_gap")
    for method, gaps in methods.items():
        print(f"{method}\t{sum(gaps) / len(gaps):.4f}\t{max(gaps):.4f}")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    inst = read_instance(args.instance)
    report = validate_schedule(inst, read_gantt(args.schedule))
    if report.ok:
        print("ok")
        return EXIT_OK
    for v in report.violations:
        print(f"{v.kind}: {v.message}")
    return EXIT_RUN_FAILED


# --------------------------------------------------------------------- parser


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    # defaults are None so that unset flags fall through to env/config/defaults
    p.add_argument("--config", help="INI file with a [seevo] section")
    p.add_argument("--provider", choices=["offline", "replay", "live"])
    p.add_argument("--transcript", help="transcript to replay")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-fe", dest="max_fe", type=int)
    p.add_argument("--population", dest="population_size", type=int)
    p.add_argument("--cases", type=int, help="training (or test) case count")
    p.add_argument("--mutation-probability", dest="mutation_probability", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--model")
    p.add_argument("--base-url", dest="base_url")
    p.add_argument("--parallelism", type=int, help="concurrent provider requests")
    p.add_argument("--jobs", type=int, help="evaluation worker threads")
    p.add_argument("--static-cases", dest="static_cases", action="store_const", const=True)
    p.add_argument("--run-dir", dest="run_dir")
    p.add_argument("--ablation", choices=["no-self-evolution"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seevo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write seeded random instances")
    kind = p.add_mutually_exclusive_group()
    kind.add_argument("--dynamic", action="store_true", help="batched arrivals (JSON sidecars)")
    kind.add_argument("--static", action="store_true", help="standard-format files (default)")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="instances")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="simulate one rule on instance files")
    p.add_argument("--rule", required=True, help="builtin name or rule file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gantt", nargs="?", const="-", help="emit schedule rows to stdout or a directory")
    p.add_argument("instances", nargs="+")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("evolve", help="evolve a rule on generated training cases")
    _add_run_flags(p)
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("apply", help="one iteration from a trained run on new cases")
    _add_run_flags(p)
    p.add_argument("--trained", required=True, help="run directory of a finished evolve")
    p.add_argument("instances", nargs="*")
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("bench", help="compare rules on benchmark or generated cases")
    p.add_argument("--dir", action="append", help="directory of instance files (repeatable)")
    p.add_argument("--dmu", dest="dir", action="append", help="alias of --dir")
    p.add_argument("--ta", dest="dir", action="append", help="alias of --dir")
    p.add_argument("--filter", help="file-name prefix")
    kind = p.add_mutually_exclusive_group()
    kind.add_argument("--dynamic", action="store_true")
    kind.add_argument("--static", action="store_true")
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rules", default="all-builtins",
                   help="all-builtins, dynamic-hdrs, or a comma list of names/rule files")
    p.add_argument("--rule-file", action="append", help="extra rule file (repeatable)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="directory for CSV and gap-plot JSON")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="summarize a run directory or a bench CSV")
    p.add_argument("path")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("validate", help="check a schedule CSV against an instance")
    p.add_argument("instance")
    p.add_argument("schedule")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
