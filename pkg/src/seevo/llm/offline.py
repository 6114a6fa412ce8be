"""Hermetic stand-in for a language model.

Rule requests are answered by structured edits of the rules found in the
request context; reflection requests get a fixed note. Every emitted rule is
printed from an AST, so it always parses.
"""

from __future__ import annotations

import random
from typing import Any, Callable, Mapping

from ..rulelang import (
    BUILTIN_SOURCES,
    BinOp,
    Call,
    Feature,
    Neg,
    Node,
    Num,
    ParseError,
    iter_nodes,
    node_count,
    parse_rule,
    to_source,
)
from .prompts import GENERATION_KINDS

CANNED_REFLECTION = "prefer shorter processing first"

# clock- and RNG-driven features are left out so offline rules stay cheap to simulate
SUBSTITUTE_FEATURES = ("PT", "TWK", "TWKR", "SRM", "NOPS_REMAINING", "SSO", "LSO")
BINARY_OPS = ("+", "-", "*", "/")
MAX_NODES = 25


def _parse_or_none(source: str) -> Node | None:
    try:
        return parse_rule(source).ast
    except ParseError:
        return None


def _subtrees(node: Node) -> list[Node]:
    return list(iter_nodes(node))


def _replace(node: Node, target_index: int, replacement: Node) -> Node:
    """Copy of ``node`` with its ``target_index``-th pre-order subtree replaced."""
    counter = [0]

    def walk(n: Node) -> Node:
        i = counter[0]
        counter[0] += 1
        if i == target_index:
            counter[0] += node_count(n) - 1
            return replacement
        if isinstance(n, Neg):
            return Neg(walk(n.operand))
        if isinstance(n, BinOp):
            left = walk(n.left)
            return BinOp(n.op, left, walk(n.right))
        if isinstance(n, Call):
            return Call(n.func, tuple(walk(a) for a in n.args))
        return n

    return walk(node)


def _pick(rng: random.Random, node: Node, kind: type) -> int | None:
    hits = [i for i, n in enumerate(_subtrees(node)) if isinstance(n, kind)]
    return rng.choice(hits) if hits else None


def operand_swap(node: Node, rng: random.Random) -> Node | None:
    i = _pick(rng, node, BinOp)
    if i is None:
        return None
    b = _subtrees(node)[i]
    return _replace(node, i, BinOp(b.op, b.right, b.left))


def operator_swap(node: Node, rng: random.Random) -> Node | None:
    i = _pick(rng, node, BinOp)
    if i is None:
        return None
    b = _subtrees(node)[i]
    op = rng.choice([o for o in BINARY_OPS if o != b.op])
    return _replace(node, i, BinOp(op, b.left, b.right))


def constant_jitter(node: Node, rng: random.Random) -> Node | None:
    i = _pick(rng, node, Num)
    if i is not None:
        value = _subtrees(node)[i].value * rng.uniform(0.5, 1.5)
        return _replace(node, i, Num(round(value, 3)))
    # no literal to perturb: scale one feature by a fresh constant
    i = _pick(rng, node, Feature)
    if i is None:
        return None
    weight = Num(round(rng.uniform(0.5, 2.0), 3))
    return _replace(node, i, BinOp("*", weight, _subtrees(node)[i]))


def feature_substitution(node: Node, rng: random.Random) -> Node | None:
    i = _pick(rng, node, Feature)
    if i is None:
        return None
    current = _subtrees(node)[i].name
    name = rng.choice([f for f in SUBSTITUTE_FEATURES if f != current])
    if rng.random() < 0.5:
        return _replace(node, i, Feature(name))
    # extend rather than replace, e.g. PT -> PT / TWKR
    op = rng.choice(BINARY_OPS)
    return _replace(node, i, BinOp(op, Feature(current), Feature(name)))


def graft(receiver: Node, donor: Node, rng: random.Random) -> Node:
    """Replace a random subtree of ``receiver`` by a random subtree of ``donor``."""
    target = rng.randrange(node_count(receiver))
    piece = rng.choice(_subtrees(donor))
    return _replace(receiver, target, piece)


def combine(a: Node, b: Node, rng: random.Random) -> Node:
    """Join two rules with one operator; ``-x`` and ``-y`` become ``-(x op y)``."""
    op = rng.choice(("+", "*"))
    if isinstance(a, Neg) and isinstance(b, Neg):
        return Neg(BinOp(op, a.operand, b.operand))
    return BinOp(op, a, b)


MUTATIONS: tuple[Callable[[Node, random.Random], Node | None], ...] = (
    operand_swap,
    operator_swap,
    constant_jitter,
    feature_substitution,
)


def mutate_ast(node: Node, rng: random.Random) -> Node:
    edits = list(MUTATIONS)
    rng.shuffle(edits)
    for edit in edits:
        out = edit(node, rng)
        if out is not None and node_count(out) <= MAX_NODES:
            return out
    return node


def crossover_ast(a: Node, b: Node, rng: random.Random) -> Node:
    choice = rng.randrange(4)
    if choice == 0:
        out = combine(a, b, rng)
    elif choice == 1:
        out = graft(a, b, rng)
    elif choice == 2:
        out = graft(b, a, rng)
    else:
        out = rng.choice((a, b))
    if node_count(out) > MAX_NODES:
        out = min((a, b), key=node_count)
    if rng.random() < 0.5:
        out = mutate_ast(out, rng)
    return out


def _context_rules(context: Mapping[str, Any], *keys: str) -> list[Node]:
    found = []
    for key in keys:
        value = context.get(key)
        sources = value if isinstance(value, (list, tuple)) else [value]
        for source in sources:
            if isinstance(source, str):
                node = _parse_or_none(source)
                if node is not None:
                    found.append(node)
    return found


def offline_mutator(kind: str, context: Mapping[str, Any], rng: random.Random) -> str:
    """Answer one request of ``kind`` given its structured stage data."""
    if kind not in GENERATION_KINDS:
        return CANNED_REFLECTION

    if kind == "crossover":
        parents = _context_rules(context, "better_source", "worse_source")
    elif kind == "self-crossover":
        parents = _context_rules(context, "source")
    elif kind == "mutate":
        parents = _context_rules(context, "elite_source")
    else:
        parents = _context_rules(context, "seeds")
    if not parents:
        parents = [parse_rule(rng.choice(sorted(BUILTIN_SOURCES.values()))).ast]

    if kind == "crossover" and len(parents) >= 2:
        rule = crossover_ast(parents[0], parents[1], rng)
    else:
        rule = mutate_ast(rng.choice(parents), rng)
    return f"Here is a candidate rule:\n```\n{to_source(rule)}\n```\n"
