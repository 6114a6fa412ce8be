"""Priority-rule expression language.

A rule is a single arithmetic expression over the dispatch features of one
candidate operation. Higher scores win; minimizing rules are written with a
leading minus (``-PT`` is shortest processing time).

Grammar, loosest binding first::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | primary
    primary := NUMBER | FEATURE | FUNC "(" expr ("," expr)* ")" | "(" expr ")"

Evaluation is total where it reasonably can be: ``x / 0`` evaluates as
``x / 1``, ``log`` of a non-positive value is 0 and ``sqrt`` of a negative
value is 0. Only a non-finite final score raises :class:`RuleEvalError`.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Mapping, Sequence, Union

import numpy as np

FEATURES: tuple[str, ...] = (
    "PT",
    "TWK",
    "TWKR",
    "SRM",
    "NOPS_REMAINING",
    "SSO",
    "LSO",
    "ARRIVAL",
    "WAIT",
    "NOW",
    "RAND",
)

# features that depend on the simulation clock or RNG rather than on the op alone
DYNAMIC_FEATURES = frozenset({"WAIT", "NOW", "RAND"})

FUNCTIONS: dict[str, int] = {
    "min": 2,
    "max": 2,
    "abs": 1,
    "sqrt": 1,
    "log": 1,
    "exp": 1,
}


class ParseError(ValueError):
    def __init__(self, message: str, position: int) -> None:
        self.message = message
        self.position = position
        super().__init__(f"{message} (at position {position})")


class RuleEvalError(ArithmeticError):
    def __init__(self, message: str, features: Mapping[str, float] | None = None) -> None:
        self.features = dict(features) if features is not None else None
        detail = f"; features={self.features}" if self.features is not None else ""
        super().__init__(message + detail)


# ------------------------------------------------------------------------ AST


@dataclass(frozen=True)
class Num:
    value: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.value) or self.value < 0:
            raise ValueError(f"literal must be finite and non-negative, got {self.value}")


@dataclass(frozen=True)
class Feature:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: Node


@dataclass(frozen=True)
class BinOp:
    op: str
    left: Node
    right: Node


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple[Node, ...]


Node = Union[Num, Feature, Neg, BinOp, Call]


def iter_nodes(node: Node):
    """Pre-order traversal."""
    yield node
    if isinstance(node, Neg):
        yield from iter_nodes(node.operand)
    elif isinstance(node, BinOp):
        yield from iter_nodes(node.left)
        yield from iter_nodes(node.right)
    elif isinstance(node, Call):
        for arg in node.args:
            yield from iter_nodes(arg)


def node_count(node: Node) -> int:
    return sum(1 for _ in iter_nodes(node))


# ------------------------------------------------------------------- printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}
_NEG_PREC = 3
_ATOM_PREC = 4


def _prec(node: Node) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _NEG_PREC
    return _ATOM_PREC


def format_number(value: float) -> str:
    if value.is_integer() and value < 1e15:
        return str(int(value))
    return repr(value)


def to_source(node: Node) -> str:
    """Canonical text with the minimum parentheses needed to reparse."""
    if isinstance(node, Num):
        return format_number(node.value)
    if isinstance(node, Feature):
        return node.name
    if isinstance(node, Neg):
        inner = to_source(node.operand)
        return f"-({inner})" if _prec(node.operand) < _NEG_PREC else f"-{inner}"
    if isinstance(node, BinOp):
        p = _PREC[node.op]
        left = to_source(node.left)
        right = to_source(node.right)
        if _prec(node.left) < p:
            left = f"({left})"
        if _prec(node.right) <= p:
            right = f"({right})"
        return f"{left} {node.op} {right}"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(to_source(a) for a in node.args)})"
    raise TypeError(f"not a rule node: {node!r}")


# -------------------------------------------------------------------- parsing

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/(),])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # num | ident | op | end
    text: str
    pos: int


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ParseError(f"unexpected character {source[pos]!r}", pos)
        if m.lastgroup != "ws":
            tokens.append(_Token(m.lastgroup, m.group(), pos))
        pos = m.end()
    tokens.append(_Token("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str) -> None:
        self.tokens = _tokenize(source)
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> None:
        if self.tok.text != text or self.tok.kind != "op":
            raise ParseError(f"expected {text!r}, found {self._describe(self.tok)}", self.tok.pos)
        self.advance()

    @staticmethod
    def _describe(tok: _Token) -> str:
        return "end of input" if tok.kind == "end" else repr(tok.text)

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "end":
            raise ParseError(f"dangling token {self.tok.text!r}", self.tok.pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.tok.kind == "op" and self.tok.text == "-":
            self.advance()
            return Neg(self.unary())
        return self.primary()

    def primary(self) -> Node:
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            value = float(tok.text)
            if not math.isfinite(value):
                raise ParseError(f"numeric literal {tok.text} out of range", tok.pos)
            return Num(value)
        if tok.kind == "ident":
            self.advance()
            if tok.text in FUNCTIONS:
                return self.call(tok)
            if tok.text in FEATURES:
                return Feature(tok.text)
            raise ParseError(f"unknown identifier {tok.text!r}", tok.pos)
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        if tok.kind == "end":
            raise ParseError("expected operand at end of input", tok.pos)
        raise ParseError(f"expected operand, found {tok.text!r}", tok.pos)

    def call(self, name_tok: _Token) -> Node:
        self.expect("(")
        args = [self.expr()]
        while self.tok.kind == "op" and self.tok.text == ",":
            self.advance()
            args.append(self.expr())
        self.expect(")")
        arity = FUNCTIONS[name_tok.text]
        if len(args) != arity:
            raise ParseError(
                f"arity mismatch: {name_tok.text} takes {arity} argument(s), got {len(args)}",
                name_tok.pos,
            )
        return Call(name_tok.text, tuple(args))


@dataclass(frozen=True)
class RuleProgram:
    source: str
    ast: Node = field(repr=False)

    @classmethod
    def from_ast(cls, ast: Node) -> RuleProgram:
        return cls(to_source(ast), ast)

    @property
    def canonical(self) -> str:
        return to_source(self.ast)

    @property
    def features_used(self) -> frozenset[str]:
        return frozenset(n.name for n in iter_nodes(self.ast) if isinstance(n, Feature))

    @property
    def is_static(self) -> bool:
        """True when the score depends only on the operation, not on time or RNG."""
        return not (self.features_used & DYNAMIC_FEATURES)

    def scorer(self) -> Callable[..., float]:
        return compile_rule(self.ast)


def parse_rule(source: str) -> RuleProgram:
    return RuleProgram(source, _Parser(source).parse())


def load_rule_file(text: str) -> RuleProgram:
    """Parse a rule file: '#' starts a comment line; remaining lines form one expression."""
    body = "\n".join(
        line for line in text.splitlines() if not line.lstrip().startswith("#")
    ).strip()
    return parse_rule(body)


def format_rule_file(rule: RuleProgram, comments: Sequence[str] = ()) -> str:
    header = "".join(f"# {c}\n" for c in comments)
    return header + rule.canonical + "\n"


# ----------------------------------------------------------------- evaluation


def _guarded_div(a: float, b: float) -> float:
    return a / (b if b != 0 else 1.0)


def _guarded_log(a: float) -> float:
    return math.log(a) if a > 0 else 0.0


def _guarded_sqrt(a: float) -> float:
    return math.sqrt(a) if a >= 0 else 0.0


def _guarded_exp(a: float) -> float:
    try:
        return math.exp(a)
    except OverflowError:
        return math.inf


def _interpret(node: Node, env: Mapping[str, float]) -> float:
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Feature):
        return float(env[node.name])
    if isinstance(node, Neg):
        return -_interpret(node.operand, env)
    if isinstance(node, BinOp):
        a = _interpret(node.left, env)
        b = _interpret(node.right, env)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        return a / b if b != 0 else a
    if isinstance(node, Call):
        args = [_interpret(a, env) for a in node.args]
        if node.func == "min":
            return min(args[0], args[1])
        if node.func == "max":
            return max(args[0], args[1])
        if node.func == "abs":
            return abs(args[0])
        if node.func == "sqrt":
            return math.sqrt(args[0]) if args[0] >= 0 else 0.0
        if node.func == "log":
            return math.log(args[0]) if args[0] > 0 else 0.0
        try:
            return math.exp(args[0])
        except OverflowError:
            return math.inf
    raise TypeError(f"not a rule node: {node!r}")


def eval_rule(rule: RuleProgram, fv: Mapping[str, float] | object) -> float:
    """Score one feature vector by walking the AST.

    ``fv`` is a mapping or any object exposing the feature names as
    attributes (such as the simulator's ``FeatureVector``).
    """
    env = fv if isinstance(fv, Mapping) else {name: getattr(fv, name) for name in FEATURES}
    value = _interpret(rule.ast, env)
    if not math.isfinite(value):
        raise RuleEvalError(f"rule {rule.canonical!r} produced {value}", env)
    return value


def _emit(node: Node) -> str:
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Feature):
        return node.name
    if isinstance(node, Neg):
        return f"(-{_emit(node.operand)})"
    if isinstance(node, BinOp):
        if node.op == "/":
            return f"_div({_emit(node.left)}, {_emit(node.right)})"
        return f"({_emit(node.left)} {node.op} {_emit(node.right)})"
    if isinstance(node, Call):
        args = ", ".join(_emit(a) for a in node.args)
        return f"_{node.func}({args})"
    raise TypeError(f"not a rule node: {node!r}")


_COMPILE_GLOBALS = {
    "_div": _guarded_div,
    "_log": _guarded_log,
    "_sqrt": _guarded_sqrt,
    "_exp": _guarded_exp,
    "_min": min,
    "_max": max,
    "_abs": abs,
}


@lru_cache(maxsize=4096)
def compile_rule(ast: Node) -> Callable[..., float]:
    """Compile an AST into a plain function taking the features positionally.

    The result may be non-finite; callers check. The generated code only ever
    contains feature names, float literals and the guard helpers above.
    """
    code = f"lambda {', '.join(FEATURES)}: {_emit(ast)}"
    return eval(code, dict(_COMPILE_GLOBALS))  # noqa: S307 - source is generated from a validated AST


# operators whose elementwise numpy result is bit-identical to the scalar one;
# log, sqrt and exp are left to the scalar path because vectorized libm
# implementations may differ in the last ulp
_EXACT_FUNCS = frozenset({"min", "max", "abs"})


def vectorizable(ast: Node) -> bool:
    return all(not isinstance(n, Call) or n.func in _EXACT_FUNCS for n in iter_nodes(ast))


def eval_columns(ast: Node, columns: Mapping[str, np.ndarray]) -> np.ndarray:
    """Score many feature vectors at once; same values as the scalar evaluators.

    Only valid for ASTs accepted by :func:`vectorizable`. Results may be
    non-finite; callers check.
    """
    with np.errstate(all="ignore"):
        out = _eval_columns(ast, columns)
    size = len(next(iter(columns.values())))
    return np.broadcast_to(np.asarray(out, dtype=np.float64), (size,))


def _eval_columns(node: Node, cols: Mapping[str, np.ndarray]):
    if isinstance(node, Num):
        return np.float64(node.value)
    if isinstance(node, Feature):
        return cols[node.name]
    if isinstance(node, Neg):
        return -_eval_columns(node.operand, cols)
    if isinstance(node, BinOp):
        a = _eval_columns(node.left, cols)
        b = _eval_columns(node.right, cols)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        return a / np.where(b != 0, b, 1.0)
    if isinstance(node, Call) and node.func in _EXACT_FUNCS:
        args = [_eval_columns(a, cols) for a in node.args]
        # the builtins keep the first argument unless the second is strictly better
        if node.func == "min":
            return np.where(args[1] < args[0], args[1], args[0])
        if node.func == "max":
            return np.where(args[1] > args[0], args[1], args[0])
        return np.abs(args[0])
    raise TypeError(f"not a vectorizable rule node: {node!r}")


# ------------------------------------------------------------------- builtins

# Ambiguous literature names resolved as: TWKR = most work remaining,
# SRM = work remaining after the candidate, LSO = longest subsequent op.
BUILTIN_SOURCES: dict[str, str] = {
    "SPT": "-PT",
    "LPT": "PT",
    "STPT": "-TWK",
    "MPSR": "NOPS_REMAINING",
    "TWKR_MOST": "TWKR",
    "SRM": "-SRM",
    "SSO": "-SSO",
    "LSO": "LSO",
    "SPT_TWK": "-(PT * TWK)",
    "SPT_TWKR": "-(PT / TWKR)",
    "LPT_TWK": "PT / TWK",
    "SPT_PLUS_SSO": "-(PT + SSO)",
    "SPT_LSO": "-(PT / LSO)",
    "RANDOM": "RAND",
}

BUILTIN_NAMES: tuple[str, ...] = tuple(BUILTIN_SOURCES)


def builtin(name: str) -> RuleProgram:
    try:
        return parse_rule(BUILTIN_SOURCES[name.upper()])
    except KeyError:
        raise KeyError(
            f"unknown builtin rule {name!r}; choose from {', '.join(BUILTIN_NAMES)}"
        ) from None


def all_builtins() -> dict[str, RuleProgram]:
    return {name: builtin(name) for name in BUILTIN_NAMES}
