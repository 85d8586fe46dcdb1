"""Dialogue schemas: declarative prototypes of expected (sub)dialogues.

A schema file holds one form::

    (schema discuss-test-results
      :header ((^me discuss.v ^you test-results) ** ?e)
      :topic test-results
      :default-response "okay . i see ."
      :episodes (
        ?e1 (^me paraphrase-to.v ^you "do you know the results of my test ?")
        ?e2 (^you reply-to.v ?e1)
        ?e3 (^me react-to.v ?e2))
      :certainties (?e2 0.8)
      :goals (?g1 (^me know.v (answer-to "do you know the results of my test ?" ?ans))))

Section keywords take the eleven section names. Sections hold alternating
label/value pairs: a `?`-label followed by a formula, or (for necessities and
certainties) a `?`-label followed by a number in [0, 1]. `:header`, `:topic`,
`:default-response`, and `:fallback` are schema-level annotations, not
sections.

Episodes are sequential in declaration order unless the episode-relations
section says otherwise (`consec`, `same-time`, `before`, `after`,
`sequential`); an explicit relation between two episodes replaces the default
edge between them.

A `(repeat-until <condition> <episode formula>)` episode repeats its body
until the condition holds in context.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Optional

from .expr import (
    Bindings,
    Compound,
    Expr,
    Number,
    Symbol,
    Variable,
    WordList,
    free_variables,
    parse_expr,
    print_expr,
    resolve_indexicals,
    substitute,
)


class SchemaError(Exception):
    pass


class UnknownSection(SchemaError):
    pass


class MissingEpisodes(SchemaError):
    pass


class ValueOutOfRange(SchemaError):
    pass


class ArityMismatch(SchemaError):
    pass


class CyclicOrder(SchemaError):
    pass


class SectionKind(Enum):
    EPISODES = "episodes"
    EPISODE_RELATIONS = "episode-relations"
    TYPES = "types"
    RIGID_CONDS = "rigid-conds"
    STATIC_CONDS = "static-conds"
    PRE_CONDS = "pre-conds"
    POST_CONDS = "post-conds"
    TRIGGER_CONDS = "trigger-conds"
    GOALS = "goals"
    NECESSITIES = "necessities"
    CERTAINTIES = "certainties"


SECTION_BY_KEYWORD = {":" + kind.value: kind for kind in SectionKind}
VALUE_SECTIONS = (SectionKind.NECESSITIES, SectionKind.CERTAINTIES)
CONDITION_SECTIONS = (
    SectionKind.TYPES,
    SectionKind.RIGID_CONDS,
    SectionKind.STATIC_CONDS,
    SectionKind.PRE_CONDS,
    SectionKind.POST_CONDS,
    SectionKind.TRIGGER_CONDS,
    SectionKind.GOALS,
)

ANNOTATIONS = (":header", ":topic", ":default-response", ":fallback")

RELATION_KINDS = ("sequential", "consec", "same-time", "before", "after")


@dataclass(frozen=True)
class SchemaEntry:
    label: Variable
    formula: Optional[Expr] = None
    value: Optional[float] = None


@dataclass(frozen=True)
class EpisodeRelation:
    kind: str  # one of RELATION_KINDS
    left: Variable
    right: Variable


@dataclass
class Diagnostic:
    severity: str  # "error" | "warning"
    message: str
    schema: str = ""
    section: str = ""
    label: str = ""

    def __str__(self):
        where = ":".join(x for x in (self.schema, self.section, self.label) if x)
        return f"{self.severity}: {where}: {self.message}" if where else f"{self.severity}: {self.message}"


@dataclass
class DialogueSchema:
    name: str
    header: Expr
    sections: dict[SectionKind, list[SchemaEntry]]
    topic: Optional[str] = None
    default_response: Optional[WordList] = None
    fallback_policy: str = "clarify-first"

    @property
    def head_var(self) -> Variable:
        return self.header[-1]

    @property
    def header_body(self) -> Expr:
        return self.header[0]

    def entries(self, kind: SectionKind) -> list[SchemaEntry]:
        return self.sections.get(kind, [])

    @property
    def episode_vars(self) -> list[Variable]:
        return [e.label for e in self.entries(SectionKind.EPISODES)]

    def header_params(self) -> list[Variable]:
        """Header variables other than the head episode, in first occurrence order."""
        seen: list[Variable] = []
        stack = [self.header_body]
        while stack:
            e = stack.pop(0)
            if isinstance(e, Variable) and e != self.head_var and e not in seen:
                seen.append(e)
            elif isinstance(e, Compound):
                stack = list(e.items) + stack
        return seen

    def relations(self) -> list[EpisodeRelation]:
        out = []
        for entry in self.entries(SectionKind.EPISODE_RELATIONS):
            f = entry.formula
            if (
                isinstance(f, Compound)
                and len(f) == 3
                and isinstance(f[0], Symbol)
                and f[0].name in RELATION_KINDS
                and isinstance(f[1], Variable)
                and isinstance(f[2], Variable)
            ):
                out.append(EpisodeRelation(f[0].name, f[1], f[2]))
        return out

    def certainty(self, episode: Variable, speaker_is_me: bool) -> float:
        """Declared certainty of an episode, or the documented default:
        1.0 for own actions, 0.75 for the other participant's episodes."""
        for entry in self.entries(SectionKind.CERTAINTIES):
            if entry.label == episode:
                return entry.value
        return 1.0 if speaker_is_me else 0.75

    def necessity(self, label: Variable) -> float:
        """Declared necessity of a condition; pre-conds default to 1.0,
        other conditions to 0.75."""
        for entry in self.entries(SectionKind.NECESSITIES):
            if entry.label == label:
                return entry.value
        for entry in self.entries(SectionKind.PRE_CONDS):
            if entry.label == label:
                return 1.0
        return 0.75


def parse_schema(text: str) -> DialogueSchema:
    form = parse_expr(text)
    if not (isinstance(form, Compound) and len(form) >= 2 and form[0] == Symbol("schema")):
        raise SchemaError("schema file must contain a single (schema <name> ...) form")
    if not isinstance(form[1], Symbol):
        raise SchemaError("schema name must be a symbol")
    name = form[1].name

    header: Optional[Expr] = None
    topic: Optional[str] = None
    default_response: Optional[WordList] = None
    fallback_policy = "clarify-first"
    sections: dict[SectionKind, list[SchemaEntry]] = {}

    items = list(form.items[2:])
    i = 0
    while i < len(items):
        key = items[i]
        if not (isinstance(key, Symbol) and key.name.startswith(":")):
            raise UnknownSection(f"{name}: expected a :keyword, got {print_expr(key)}")
        if i + 1 >= len(items):
            raise SchemaError(f"{name}: {key.name} missing its value")
        value = items[i + 1]
        i += 2
        if key.name == ":header":
            header = value
        elif key.name == ":topic":
            if not isinstance(value, Symbol):
                raise SchemaError(f"{name}: :topic must be a symbol")
            topic = value.name
        elif key.name == ":default-response":
            if not isinstance(value, WordList):
                raise SchemaError(f"{name}: :default-response must be a quoted word list")
            default_response = value
        elif key.name == ":fallback":
            if not (isinstance(value, Symbol) and value.name in ("clarify-first", "default-first")):
                raise SchemaError(f"{name}: :fallback must be clarify-first or default-first")
            fallback_policy = value.name
        elif key.name in SECTION_BY_KEYWORD:
            kind = SECTION_BY_KEYWORD[key.name]
            sections[kind] = _parse_section(name, kind, value)
        else:
            raise UnknownSection(f"{name}: unknown section keyword {key.name}")

    if header is None:
        raise SchemaError(f"{name}: missing :header")
    if not (
        isinstance(header, Compound)
        and len(header) == 3
        and header[1] == Symbol("**")
        and isinstance(header[2], Variable)
    ):
        raise SchemaError(f"{name}: :header must have the form (<formula> ** ?e)")
    if not sections.get(SectionKind.EPISODES):
        raise MissingEpisodes(f"{name}: schema must declare a nonempty :episodes section")

    return DialogueSchema(
        name=name,
        header=header,
        sections=sections,
        topic=topic,
        default_response=default_response,
        fallback_policy=fallback_policy,
    )


def _parse_section(name: str, kind: SectionKind, value: Expr) -> list[SchemaEntry]:
    if not isinstance(value, Compound):
        raise SchemaError(f"{name}: section :{kind.value} must be a parenthesized list")
    items = list(value.items)
    if len(items) % 2 != 0:
        raise SchemaError(f"{name}: :{kind.value} must hold label/value pairs")
    entries = []
    for label, payload in zip(items[::2], items[1::2]):
        if not isinstance(label, Variable):
            raise SchemaError(f"{name}: :{kind.value} labels must be ?-variables, got {print_expr(label)}")
        if kind in VALUE_SECTIONS:
            if not isinstance(payload, Number):
                raise SchemaError(f"{name}: :{kind.value} values must be numbers")
            v = float(payload.value)
            if not 0.0 <= v <= 1.0:
                raise ValueOutOfRange(f"{name}: :{kind.value} value {v} for {label!r} outside [0,1]")
            entries.append(SchemaEntry(label=label, value=v))
        else:
            entries.append(SchemaEntry(label=label, formula=payload))
    return entries


def validate_schema(s: DialogueSchema) -> list[Diagnostic]:
    """Reference and ordering checks beyond what the parser enforces."""
    diags: list[Diagnostic] = []
    episode_vars = set(s.episode_vars)

    def err(msg, section="", label=""):
        diags.append(Diagnostic("error", msg, schema=s.name, section=section, label=label))

    if s.head_var in episode_vars:
        err(f"head episode {s.head_var!r} may not also be declared in :episodes", "episodes")

    seen_labels = set()
    for kind in SectionKind:
        for entry in s.entries(kind):
            if kind not in VALUE_SECTIONS:
                if entry.label in seen_labels:
                    err(f"duplicate label {entry.label!r}", kind.value, repr(entry.label))
                seen_labels.add(entry.label)

    # relations must mention declared episodes, and be of a known kind
    for entry in s.entries(SectionKind.EPISODE_RELATIONS):
        f = entry.formula
        ok_shape = (
            isinstance(f, Compound)
            and len(f) == 3
            and isinstance(f[0], Symbol)
            and isinstance(f[1], Variable)
            and isinstance(f[2], Variable)
        )
        if not ok_shape:
            err("relation must be (<kind> ?left ?right)", "episode-relations", repr(entry.label))
            continue
        if f[0].name not in RELATION_KINDS:
            err(f"unknown relation kind {f[0].name}", "episode-relations", repr(entry.label))
            continue
        for v in (f[1], f[2]):
            if v not in episode_vars:
                err(f"relation references undeclared episode {v!r}", "episode-relations", repr(entry.label))

    # certainties attach to episodes, necessities to conditions
    for entry in s.entries(SectionKind.CERTAINTIES):
        if entry.label not in episode_vars:
            err(f"certainty attached to undeclared episode {entry.label!r}", "certainties", repr(entry.label))
    condition_labels = {e.label for kind in CONDITION_SECTIONS for e in s.entries(kind)}
    for entry in s.entries(SectionKind.NECESSITIES):
        if entry.label not in condition_labels:
            err(f"necessity attached to undeclared condition {entry.label!r}", "necessities", repr(entry.label))

    # episode-shaped variables in goals must be declared
    for entry in s.entries(SectionKind.GOALS):
        for v in free_variables(entry.formula):
            if _looks_like_episode_var(v) and v != s.head_var and v not in episode_vars:
                err(f"goal references undeclared episode {v!r}", "goals", repr(entry.label))

    try:
        episode_order(s)
    except CyclicOrder as exc:
        err(str(exc), "episode-relations")

    return diags


def _looks_like_episode_var(v: Variable) -> bool:
    return v.name.startswith("e") and v.name[1:].isdigit()


@dataclass
class EpisodeOrder:
    """Partial order over episode variables: same-time groups plus edges."""

    groups: list[tuple[Variable, ...]]
    edges: set[tuple[int, int]]  # group index -> group index
    adjacent: set[tuple[int, int]]  # consec pairs

    def chain(self) -> list[Variable]:
        """Deterministic linearization respecting the order (declaration
        order breaks ties, including inside same-time groups)."""
        return [v for g in self.groups for v in g]

    def group_of(self, v: Variable) -> int:
        for i, g in enumerate(self.groups):
            if v in g:
                return i
        raise KeyError(v)

    def precedes(self, a: Variable, b: Variable) -> bool:
        ga, gb = self.group_of(a), self.group_of(b)
        if ga == gb:
            return False
        seen = set()
        stack = [ga]
        while stack:
            g = stack.pop()
            for x, y in self.edges:
                if x == g and y not in seen:
                    if y == gb:
                        return True
                    seen.add(y)
                    stack.append(y)
        return False


def episode_order(s: DialogueSchema) -> EpisodeOrder:
    episodes = s.episode_vars
    decl_index = {v: i for i, v in enumerate(episodes)}
    relations = s.relations()

    # same-time merges episodes into groups (union-find)
    parent = {v: v for v in episodes}

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for r in relations:
        if r.kind == "same-time" and r.left in parent and r.right in parent:
            parent[find(r.left)] = find(r.right)

    members: dict[Variable, list[Variable]] = {}
    for v in episodes:
        members.setdefault(find(v), []).append(v)
    group_list = sorted(
        (tuple(sorted(g, key=decl_index.get)) for g in members.values()),
        key=lambda g: decl_index[g[0]],
    )
    gindex = {v: i for i, g in enumerate(group_list) for v in g}

    explicit_pairs = {frozenset((r.left, r.right)) for r in relations}
    edges: set[tuple[int, int]] = set()
    adjacent: set[tuple[int, int]] = set()
    for a, b in itertools.pairwise(episodes):
        # an explicit relation between two episodes replaces their default edge
        if frozenset((a, b)) in explicit_pairs:
            continue
        if gindex[a] != gindex[b]:
            edges.add((gindex[a], gindex[b]))
    for r in relations:
        if r.kind == "same-time" or r.left not in gindex or r.right not in gindex:
            continue
        if r.kind == "after":
            pair = (gindex[r.right], gindex[r.left])
        else:
            pair = (gindex[r.left], gindex[r.right])
        if pair[0] == pair[1]:
            continue
        edges.add(pair)
        if r.kind == "consec":
            adjacent.add(pair)

    order = _toposort(len(group_list), edges, s.name)
    groups = [group_list[i] for i in order]
    remap = {old: new for new, old in enumerate(order)}
    return EpisodeOrder(
        groups=groups,
        edges={(remap[a], remap[b]) for a, b in edges},
        adjacent={(remap[a], remap[b]) for a, b in adjacent},
    )


def _toposort(n: int, edges: set[tuple[int, int]], name: str) -> list[int]:
    indeg = [0] * n
    for _, b in edges:
        indeg[b] += 1
    ready = sorted(i for i in range(n) if indeg[i] == 0)
    out = []
    while ready:
        g = ready.pop(0)  # smallest declaration index first: deterministic
        out.append(g)
        for a, b in sorted(edges):
            if a == g:
                indeg[b] -= 1
                if indeg[b] == 0:
                    ready.append(b)
        ready.sort()
    if len(out) != n:
        raise CyclicOrder(f"{name}: episode relations contain a cycle")
    return out


@dataclass
class SchemaInstance:
    schema: DialogueSchema
    bindings: Bindings
    me: Symbol
    you: Symbol
    instance_id: str

    def ground(self, e: Expr) -> Expr:
        return resolve_indexicals(substitute(e, self.bindings), self.me, self.you)

    def episode_formulas(self) -> list[tuple[Variable, Expr]]:
        return [
            (entry.label, self.ground(entry.formula))
            for entry in self.schema.entries(SectionKind.EPISODES)
        ]

    def goal_patterns(self) -> list[Expr]:
        return [self.ground(e.formula) for e in self.schema.entries(SectionKind.GOALS)]

    def condition_patterns(self, kind: SectionKind) -> list[tuple[SchemaEntry, Expr]]:
        return [(e, self.ground(e.formula)) for e in self.schema.entries(kind)]


def instantiate(
    s: DialogueSchema,
    args: list[Expr],
    me: Symbol,
    you: Symbol,
    ids: Optional[Iterator[int]] = None,
) -> SchemaInstance:
    """Bind the header parameters and participants, yielding a fresh instance."""
    params = s.header_params()
    if len(args) != len(params):
        raise ArityMismatch(f"{s.name}: expected {len(params)} argument(s), got {len(args)}")
    bindings: Bindings = dict(zip(params, args))
    n = next(ids) if ids is not None else next(_GLOBAL_IDS)
    return SchemaInstance(
        schema=s,
        bindings=bindings,
        me=me,
        you=you,
        instance_id=f"{s.name}#{n}",
    )


_GLOBAL_IDS = itertools.count(1)
