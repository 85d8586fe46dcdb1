"""Response selection and surface generation.

Three routes produce the system's words for a turn:

- reaction: the user's gist clause runs through the topic's reaction tree,
  yielding either words to say or a sub-schema to activate;
- paraphrase: a schema's quoted gist (typically a question) is rendered by
  the topic's paraphrase tree, cycling through variants via a per-topic
  counter so consecutive phrasings differ;
- fallback: when no gist was extracted, either a generic clarification
  request (rotated) or the active schema's default response. At most two
  clarifications are emitted in a row before the policy forces the default,
  which also nudges the dialogue forward.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .interpret import GistClause
from .pack import PersonaPack
from .schema import DialogueSchema
from .transduction import Transduction

CLARIFY = "clarify"
DEFAULT = "default"

MAX_CONSECUTIVE_CLARIFICATIONS = 2

GENERIC_CLARIFICATION = "i'm sorry , could you say that in a different way ?".split()
GENERIC_DEFAULT = "okay . i see .".split()


@dataclass
class ResponsePlanItem:
    kind: str  # "reaction" | "paraphrase" | "clarification" | "schema-default"
    words: list[str]
    provenance: str

    def __post_init__(self):
        if not self.words:
            raise ValueError("response item must carry words")


@dataclass
class GeneratorState:
    """Session-confined counters driving variant cycling and fallback policy."""

    paraphrase_counters: dict[str, int] = field(default_factory=dict)
    clarification_index: int = 0
    consecutive_clarifications: int = 0
    failure_streak: int = 0

    def note_gist_success(self):
        self.failure_streak = 0

    def note_gist_failure(self):
        self.failure_streak += 1

    def note_non_clarification(self):
        self.consecutive_clarifications = 0


def select_reaction(user_gist: GistClause, pack: PersonaPack) -> Optional[Transduction]:
    """Run the user's gist through the topic's reaction tree."""
    tree_name = pack.tree_for("react", user_gist.topic)
    if tree_name is None:
        return None
    result = pack.registry.transduce(tree_name, list(user_gist.words))
    if result is None or result.kind not in ("say", "subschema"):
        return None
    return result


def paraphrase(
    system_gist: GistClause,
    prev_user_gist: Optional[GistClause],
    pack: PersonaPack,
    state: GeneratorState,
) -> ResponsePlanItem:
    """Render the system's own gist in surface form. With no paraphrase tree
    (or no matching variant) the gist words are said verbatim."""
    tree_name = pack.tree_for("para", system_gist.topic)
    if tree_name is not None:
        context_words = list(prev_user_gist.words) if prev_user_gist else []
        result = pack.registry.transduce(tree_name, context_words)
        if result is not None and result.kind == "say" and result.alternatives:
            counter = state.paraphrase_counters.get(system_gist.topic, 0)
            state.paraphrase_counters[system_gist.topic] = counter + 1
            variants = result.alternatives
            words = variants[counter % len(variants)]
            return ResponsePlanItem(
                kind="paraphrase",
                words=list(words),
                provenance="/".join(result.path) + f"#v{counter % len(variants)}",
            )
    return ResponsePlanItem(
        kind="paraphrase",
        words=list(system_gist.words),
        provenance="paraphrase:verbatim",
    )


def fallback_response(
    mode: str,
    active_schema: Optional[DialogueSchema],
    pack: PersonaPack,
    state: GeneratorState,
) -> ResponsePlanItem:
    if mode == CLARIFY:
        phrases = pack.clarifications or [GENERIC_CLARIFICATION]
        words = phrases[state.clarification_index % len(phrases)]
        state.clarification_index += 1
        state.consecutive_clarifications += 1
        return ResponsePlanItem(
            kind="clarification",
            words=list(words),
            provenance=f"fallback:clarify#{state.clarification_index - 1}",
        )
    state.note_non_clarification()
    if active_schema is not None and active_schema.default_response is not None:
        return ResponsePlanItem(
            kind="schema-default",
            words=list(active_schema.default_response.words),
            provenance=f"fallback:default:{active_schema.name}",
        )
    return ResponsePlanItem(
        kind="schema-default",
        words=list(GENERIC_DEFAULT),
        provenance="fallback:default:generic",
    )


def choose_fallback_mode(state: GeneratorState, schema: Optional[DialogueSchema]) -> str:
    """Clarify on early failures, switch to the schema default once
    clarification has been tried twice in a row (or when the schema asks
    for default-first)."""
    if schema is not None and schema.fallback_policy == "default-first":
        return DEFAULT
    if state.consecutive_clarifications >= MAX_CONSECUTIVE_CLARIFICATIONS:
        return DEFAULT
    return CLARIFY
