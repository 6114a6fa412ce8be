"""Prompt templates and response parsing.

Templates are plain-text resource files (``templates/<version>/``) filled
with :class:`string.Template` placeholders, so wording can change without
touching code. Every rendered request is a system message carrying the task
description followed by one user message built from the kind's template.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from importlib import resources
from string import Template
from typing import Any, Mapping, NamedTuple

TEMPLATE_VERSION = "v1"

PROMPT_KINDS = (
    "init",
    "co-reflect",
    "crossover",
    "self-reflect",
    "self-crossover",
    "collective",
    "mutate",
)

# kinds whose response is expected to contain a rule
GENERATION_KINDS = frozenset({"init", "crossover", "self-crossover", "mutate"})

_SECTION_NAMES = (
    "co-reflect",
    "self-reflect-reverse",
    "self-reflect-reinforce",
    "collective",
    "default-memory",
)


class PromptError(ValueError):
    """A template or its stage data is missing a required piece."""


class Message(NamedTuple):
    role: str
    content: str


@dataclass(frozen=True)
class PromptBundle:
    task_specification: str
    seed_section: str
    generation_instructions: str
    reflection_sections: Mapping[str, str] = field(default_factory=dict)
    templates: Mapping[str, str] = field(default_factory=dict, repr=False)
    version: str = TEMPLATE_VERSION

    @property
    def default_memory(self) -> str:
        return self.reflection_sections.get("default-memory", "")


def _read(version: str, name: str) -> str:
    path = resources.files("seevo.llm") / "templates" / version / name
    try:
        return path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise PromptError(f"template {version}/{name} not found") from None


def load_bundle(version: str = TEMPLATE_VERSION) -> PromptBundle:
    return PromptBundle(
        task_specification=_read(version, "task_specification.txt").strip(),
        seed_section=_read(version, "seed_section.txt").strip(),
        generation_instructions=_read(version, "generation_instructions.txt").strip(),
        reflection_sections={
            name: _read(version, f"section-{name}.txt").strip() for name in _SECTION_NAMES
        },
        templates={kind: _read(version, f"{kind}.txt") for kind in PROMPT_KINDS},
        version=version,
    )


def format_fitness(value: float) -> str:
    """Fixed-precision rendering so prompts are byte-stable across runs."""
    return "invalid" if not math.isfinite(value) else f"{value:.3f}"


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return format_fitness(value)
    if isinstance(value, (list, tuple)):
        return "\n".join(f"- {item}" for item in value) if value else "(none)"
    text = str(value).strip()
    return text if text else "(none)"


def render_prompt(kind: str, bundle: PromptBundle, data: Mapping[str, Any]) -> list[Message]:
    """Assemble the messages for one request; a pure function of its inputs."""
    if kind not in PROMPT_KINDS:
        raise PromptError(f"unknown prompt kind {kind!r}")
    if not bundle.task_specification:
        raise PromptError("bundle has no task specification")
    try:
        template = bundle.templates[kind]
    except KeyError:
        raise PromptError(f"bundle has no template for {kind!r}") from None

    values = {key: _format_value(v) for key, v in data.items()}
    values["generation_instructions"] = bundle.generation_instructions
    if kind == "init":
        try:
            values["seed_section"] = Template(bundle.seed_section).substitute(values)
        except KeyError as exc:
            raise PromptError(f"{kind}: missing stage data {exc.args[0]!r}") from None
    section = kind
    if kind == "self-reflect":
        section = "self-reflect-reinforce" if data.get("improved") else "self-reflect-reverse"
    if section in bundle.reflection_sections:
        values["reflection_guidance"] = bundle.reflection_sections[section]

    try:
        body = Template(template).substitute(values)
    except KeyError as exc:
        raise PromptError(f"{kind}: missing stage data {exc.args[0]!r}") from None
    return [Message("system", bundle.task_specification), Message("user", body.strip())]


_FENCE_RE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)
_INLINE_FENCE_RE = re.compile(r"```(.*?)```", re.DOTALL)


def extract_rule(response: str) -> str:
    """Pull the candidate rule source out of a free-form response.

    The first fenced block wins; without one, the last non-empty line is used.
    """
    match = _FENCE_RE.search(response) or _INLINE_FENCE_RE.search(response)
    if match:
        return match.group(1).strip()
    lines = [line.strip() for line in response.splitlines() if line.strip()]
    return lines[-1] if lines else ""
