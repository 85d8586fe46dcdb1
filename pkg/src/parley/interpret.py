"""Two-level interpretation of user utterances.

Level one extracts context-independent gist clauses: the utterance is split
at sentence punctuation and each segment runs through the interpretation
tree selected by the previous system gist's topic (falling back to the
general tree). Level two optionally parses a gist clause into an unscoped
logical form and resolves leftover pronoun placeholders against the most
recent type-compatible entity in context.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from .expr import Compound, Expr, Symbol
from .facts import CONTEXT, KB, FactStore
from .pack import PersonaPack

_TOKEN_RE = re.compile(r"[a-z0-9']+|[^\sa-z0-9']")
_SENTENCE_END = {".", "?", "!"}

# placeholders the gist stage leaves for reference resolution
_NEUTER_PRONOUNS = {"it.pro", "that.pro", "this.pro"}
_PERSON_PRONOUNS = {"he.pro", "she.pro", "they.pro", "him.pro", "her.pro", "them.pro"}


def tokenize(text: str) -> list[str]:
    """Lowercased words with punctuation split off as its own tokens."""
    return _TOKEN_RE.findall(text.lower())


def split_sentences(words: list[str]) -> list[list[str]]:
    segments: list[list[str]] = []
    current: list[str] = []
    for w in words:
        current.append(w)
        if w in _SENTENCE_END:
            segments.append(current)
            current = []
    if current:
        segments.append(current)
    return segments


@dataclass(frozen=True)
class GistClause:
    words: tuple[str, ...]
    topic: str
    source: tuple[str, ...] = ()

    @property
    def text(self) -> str:
        return " ".join(self.words)

    @property
    def is_question(self) -> bool:
        return bool(self.words) and self.words[-1] == "?"


def extract_gist(
    user_words: list[str],
    prev_system_gist: Optional[GistClause],
    pack: PersonaPack,
    active_topic: Optional[str] = None,
) -> list[GistClause]:
    """Zero or more gist clauses, one per matched sentence, in order.

    Trees are tried most-specific first: the previous system gist's topic,
    then the topic the plan is currently waiting on, then the general tree.
    """
    gists: list[GistClause] = []
    trees: list[str] = []
    for topic in (prev_system_gist.topic if prev_system_gist else None, active_topic):
        if topic is None:
            continue
        name = f"interp-{topic}"
        if pack.registry.get(name) is not None and name not in trees:
            trees.append(name)
    general = pack.tree_for("interp", None)
    if general is not None and general not in trees:
        trees.append(general)
    for segment in split_sentences(user_words):
        for tree_name in trees:
            result = pack.registry.transduce(tree_name, segment)
            if result is not None and result.kind == "gist":
                gists.append(
                    GistClause(words=tuple(result.words), topic=result.topic, source=tuple(segment))
                )
                break
            if result is not None and result.kind == "subschema":
                # topic-shift requests surface as pseudo-gists so the session
                # can splice the requested sub-dialogue
                gists.append(
                    GistClause(words=(), topic="#subschema:" + result.target, source=tuple(segment))
                )
                break
    return gists


def gist_to_ulf(gist: GistClause, pack: PersonaPack) -> Optional[Expr]:
    tree_name = pack.tree_for("ulf", gist.topic)
    if tree_name is None:
        return None
    result = pack.registry.transduce(tree_name, list(gist.words))
    if result is None or result.ulf is None:
        return None
    return result.ulf


def resolve_references(ulf: Expr, store: FactStore) -> Expr:
    """Swap pronoun placeholders for the most recent compatible entity in
    context; placeholders with no candidate stay put."""
    placeholders = [
        s for s in _symbols(ulf) if s.name in _NEUTER_PRONOUNS or s.name in _PERSON_PRONOUNS
    ]
    if not placeholders:
        return ulf
    entities = _entities_by_recency(store)
    mapping: dict[Symbol, Symbol] = {}
    for ph in placeholders:
        want_person = ph.name in _PERSON_PRONOUNS
        for entity in entities:
            if _is_person(entity, store) == want_person:
                mapping[ph] = entity
                break
    if not mapping:
        return ulf
    return _replace_symbols(ulf, mapping)


def _symbols(e: Expr):
    if isinstance(e, Symbol):
        yield e
    elif isinstance(e, Compound):
        for x in e:
            yield from _symbols(x)


def _replace_symbols(e: Expr, mapping: dict[Symbol, Symbol]) -> Expr:
    if isinstance(e, Symbol):
        return mapping.get(e, e)
    if isinstance(e, Compound):
        return Compound(_replace_symbols(x, mapping) for x in e)
    return e


def _entities_by_recency(store: FactStore) -> list[Symbol]:
    """Constant arguments of context facts, newest first."""
    facts = sorted(
        store.facts(CONTEXT), key=lambda f: store.when(CONTEXT, f) or 0.0, reverse=True
    )
    seen: list[Symbol] = []
    for fact in facts:
        if not isinstance(fact, Compound):
            continue
        for i, arg in enumerate(fact):
            if i == 1 and len(fact) >= 2:
                continue  # predicate position
            if isinstance(arg, Symbol) and arg not in seen:
                seen.append(arg)
    return seen


def _is_person(entity: Symbol, store: FactStore) -> bool:
    return store.holds((CONTEXT, KB), Compound([entity, Symbol("person.n")]))


def load_interp_corpus(text: str) -> list[tuple[Optional[list[str]], str, list[str], str]]:
    """Interpretation test corpus rows:
    ``prev_gist<TAB>input<TAB>expected_gist<TAB>expected_topic``
    (empty first field = no preceding system gist)."""
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        if not raw.strip() or raw.startswith("#"):
            continue
        parts = raw.split("\t")
        if len(parts) != 4:
            raise ValueError(f"corpus line {lineno}: expected 4 tab-separated fields")
        prev, user_input, expected_gist, expected_topic = parts
        rows.append(
            (prev.split() if prev.strip() else None, user_input, expected_gist.split(), expected_topic)
        )
    return rows
