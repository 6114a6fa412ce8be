"""Provider abstraction, prompt templates and response parsing."""

from .offline import CANNED_REFLECTION, offline_mutator
from .prompts import (
    GENERATION_KINDS,
    PROMPT_KINDS,
    Message,
    PromptBundle,
    PromptError,
    extract_rule,
    format_fitness,
    load_bundle,
    render_prompt,
)
from .providers import (
    ChatExchange,
    ChatRequest,
    LiveProvider,
    LLMClient,
    OfflineMutatorProvider,
    Provider,
    ProviderError,
    ReplayMismatch,
    ReplayProvider,
    TranscriptExhausted,
    read_transcript,
)

__all__ = [
    "CANNED_REFLECTION",
    "ChatExchange",
    "ChatRequest",
    "GENERATION_KINDS",
    "LLMClient",
    "LiveProvider",
    "Message",
    "OfflineMutatorProvider",
    "PROMPT_KINDS",
    "PromptBundle",
    "PromptError",
    "Provider",
    "ProviderError",
    "ReplayMismatch",
    "ReplayProvider",
    "TranscriptExhausted",
    "extract_rule",
    "format_fitness",
    "load_bundle",
    "offline_mutator",
    "read_transcript",
    "render_prompt",
]
