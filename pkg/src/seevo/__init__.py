"""Job-shop dispatching rules: simulation, a rule language, and guided rule evolution."""

from .core import (
    Instance,
    InstanceFormatError,
    Operation,
    Schedule,
    ScheduledOp,
    ValidationReport,
    dump_instance,
    load_instance,
    makespan,
    validate_schedule,
)
from .rulelang import (
    ParseError,
    RuleEvalError,
    RuleProgram,
    all_builtins,
    builtin,
    eval_rule,
    parse_rule,
)
from .simulator import brute_force_optimal, compute_features, simulate

__version__ = "0.1.0"

__all__ = [
    "Instance",
    "InstanceFormatError",
    "Operation",
    "ParseError",
    "RuleEvalError",
    "RuleProgram",
    "Schedule",
    "ScheduledOp",
    "ValidationReport",
    "all_builtins",
    "brute_force_optimal",
    "builtin",
    "compute_features",
    "dump_instance",
    "eval_rule",
    "load_instance",
    "makespan",
    "parse_rule",
    "simulate",
    "validate_schedule",
]
