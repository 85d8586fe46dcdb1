"""Hierarchical pattern transduction trees.

A tree holds an ordered list of pattern nodes. A node's pattern is a list of
tokens: literal words, `.feature` references into the feature lexicon, and
numeric wildcards (`0` matches any span, `n` > 0 matches at most n words).
When a node's pattern matches, its children each re-match against the node's
input (or against one of its captures when the node carries `:on k`);
terminal nodes carry exactly one directive. Matching is depth-first in
document order, first terminal wins.

Tree file form::

    (tree interp-test-results
      (node (0 spread 0)
        (gist "the cancer has spread ." test-results))
      (node (0 test results 0)
        (node (0 .negative 0) (gist "the test results are bad ." test-results))
        (node (0) (gist "what do my test results mean ?" test-results))))

Directive forms: ``(gist "template" topic)``, ``(say "template" ...)`` with
one word-list per alternative, ``(subtree name [capture-index])``,
``(subschema name)``, ``(ulf recipe)``, ``(fail)``. Inside templates a bare
number n splices the n-th capture of the terminal node's match. Inside ulf
recipes, ``(sub! tree n)`` splices the result of sending capture n through
another tree and ``(cap! n)`` splices the captured words.

Wildcard spans take the leftmost-shortest assignment: earlier wildcards
grab as few words as any complete match allows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from .expr import (
    Compound,
    Expr,
    Number,
    Symbol,
    WordList,
    parse_expr,
    print_expr,
)


class TreeError(Exception):
    pass


class DanglingSubtree(TreeError):
    pass


class UnknownFeature(TreeError):
    pass


class MissingDirective(TreeError):
    pass


class SlotOutOfRange(TreeError):
    pass


MAX_SUBTREE_DEPTH = 10


@dataclass(frozen=True)
class LiteralWord:
    word: str


@dataclass(frozen=True)
class FeatureRef:
    name: str


@dataclass(frozen=True)
class Wildcard:
    bound: int  # 0 = unbounded, n > 0 = at most n words


PatternToken = Union[LiteralWord, FeatureRef, Wildcard]


class FeatureLexicon:
    """Named word classes; lookups are case-insensitive."""

    def __init__(self, features: Optional[dict[str, set[str]]] = None):
        self._features: dict[str, set[str]] = {}
        self._pattern_cache: dict[tuple, tuple] = {}
        for name, words in (features or {}).items():
            self._features[name.lower()] = {w.lower() for w in words}

    def has_feature(self, name: str) -> bool:
        return name.lower() in self._features

    def words(self, name: str) -> set[str]:
        return self._features.get(name.lower(), set())

    def member(self, name: str, word: str) -> bool:
        return word.lower() in self._features.get(name.lower(), ())

    @classmethod
    def parse(cls, text: str) -> "FeatureLexicon":
        feats: dict[str, set[str]] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split(";")[0].strip()
            if not line:
                continue
            if ":" not in line:
                raise TreeError(f"lexicon line {lineno}: expected 'feature: w1 w2 ...'")
            name, _, rest = line.partition(":")
            name = name.strip().lower()
            if not name:
                raise TreeError(f"lexicon line {lineno}: empty feature name")
            feats.setdefault(name, set()).update(w.lower() for w in rest.split())
        return cls(feats)


@dataclass(frozen=True)
class Directive:
    kind: str  # gist | say | subtree | subschema | ulf | fail
    template: tuple[str, ...] = ()
    topic: Optional[str] = None
    alternatives: tuple[tuple[str, ...], ...] = ()
    target: Optional[str] = None  # subtree / subschema name
    capture_index: Optional[int] = None  # subtree input selector
    recipe: Optional[Expr] = None  # ulf build recipe


@dataclass
class PatternNode:
    pattern: list[PatternToken]
    children: list["PatternNode"] = field(default_factory=list)
    directive: Optional[Directive] = None
    on_capture: Optional[int] = None  # which capture the children re-match

    @property
    def terminal(self) -> bool:
        return self.directive is not None


@dataclass
class TransductionTree:
    name: str
    roots: list[PatternNode]

    def walk(self):
        stack = [(node, ()) for node in reversed(self.roots)]
        while stack:
            node, path = stack.pop()
            yield node, path
            for i, child in enumerate(reversed(node.children)):
                stack.append((child, path + (len(node.children) - 1 - i,)))


@dataclass
class MatchResult:
    captures: list[list[str]]  # one span per wildcard / feature token


_LIT, _FEAT, _WILD = 0, 1, 2
_NO_BOUND = 1 << 30


def _compile_pattern(pattern, lex: FeatureLexicon):
    """Token table plus suffix word-count bounds, cached per lexicon."""
    key = tuple(pattern)
    cached = lex._pattern_cache.get(key)
    if cached is not None:
        return cached
    k = len(pattern)
    toks: list[tuple] = []
    for tok in pattern:
        if isinstance(tok, LiteralWord):
            toks.append((_LIT, tok.word))
        elif isinstance(tok, FeatureRef):
            toks.append((_FEAT, lex.words(tok.name)))
        else:
            toks.append((_WILD, tok.bound))
    min_need = [0] * (k + 1)
    max_need = [0] * (k + 1)
    for i in range(k - 1, -1, -1):
        kind, payload = toks[i]
        lo, hi = (1, 1) if kind != _WILD else (0, _NO_BOUND if payload == 0 else payload)
        min_need[i] = min_need[i + 1] + lo
        max_need[i] = min(max_need[i + 1] + hi, _NO_BOUND)
    compiled = (toks, min_need, max_need)
    if len(lex._pattern_cache) < 100_000:
        lex._pattern_cache[key] = compiled
    return compiled


def match_pattern(
    pattern: list[PatternToken], words: list[str], lex: FeatureLexicon
) -> Optional[MatchResult]:
    """Leftmost-shortest match of the whole word sequence, or None."""
    n = len(words)
    k = len(pattern)
    toks, min_need, max_need = _compile_pattern(pattern, lex)

    captures: list[list[str]] = []

    def step(ti: int, wi: int) -> bool:
        remaining = n - wi
        if not min_need[ti] <= remaining <= max_need[ti]:
            return False
        if ti == k:
            return True
        kind, payload = toks[ti]
        if kind == _LIT:
            return remaining > 0 and words[wi] == payload and step(ti + 1, wi + 1)
        if kind == _FEAT:
            if remaining > 0 and words[wi].lower() in payload:
                captures.append([words[wi]])
                if step(ti + 1, wi + 1):
                    return True
                captures.pop()
            return False
        limit = min(remaining if payload == 0 else payload, remaining - min_need[ti + 1])
        lo = max(0, remaining - max_need[ti + 1])
        for span in range(lo, limit + 1):
            captures.append(words[wi : wi + span])
            if step(ti + 1, wi + span):
                return True
            captures.pop()
        return False

    if step(0, 0):
        return MatchResult(captures=captures)
    return None


def fill_template(template, captures: list[list[str]]) -> list[str]:
    """Replace numeric slots with the corresponding captured spans."""
    out: list[str] = []
    for word in template:
        if word.isdigit():
            slot = int(word)
            if not 1 <= slot <= len(captures):
                raise SlotOutOfRange(f"template slot {slot} with {len(captures)} capture(s)")
            out.extend(captures[slot - 1])
        else:
            out.append(word)
    return out


@dataclass
class Transduction:
    """Outcome of running words through a tree."""

    kind: str  # gist | say | subschema | ulf
    words: Optional[list[str]] = None  # gist / say output
    topic: Optional[str] = None
    target: Optional[str] = None  # subschema name
    ulf: Optional[Expr] = None
    alternatives: Optional[list[list[str]]] = None  # remaining say variants
    captures: list[list[str]] = field(default_factory=list)
    path: list[str] = field(default_factory=list)  # matched node ids


class TreeRegistry:
    """All trees of a pack, resolved against one feature lexicon."""

    def __init__(self, lexicon: Optional[FeatureLexicon] = None):
        self.lexicon = lexicon or FeatureLexicon()
        self.trees: dict[str, TransductionTree] = {}

    def add(self, tree: TransductionTree) -> None:
        self.trees[tree.name] = tree

    def get(self, name: str) -> Optional[TransductionTree]:
        return self.trees.get(name.lower())

    def resolve(self) -> None:
        """Check subtree references and feature names; raises on dangling ones."""
        for tree in self.trees.values():
            for node, _path in tree.walk():
                for tok in node.pattern:
                    if isinstance(tok, FeatureRef) and not self.lexicon.has_feature(tok.name):
                        raise UnknownFeature(f"{tree.name}: unknown feature .{tok.name}")
                d = node.directive
                if d is not None and d.kind == "subtree" and d.target not in self.trees:
                    raise DanglingSubtree(f"{tree.name}: subtree {d.target} not defined")

    def transduce(self, tree_name: str, words: list[str], _depth: int = 0) -> Optional[Transduction]:
        tree = self.get(tree_name)
        if tree is None:
            raise DanglingSubtree(f"no tree named {tree_name}")
        for i, node in enumerate(tree.roots):
            result = self._try_node(tree, node, f"{tree.name}/{i}", words, _depth)
            if result is not None:
                return result if result is not _EXPLICIT_FAIL else None
        return None

    def _try_node(
        self, tree: TransductionTree, node: PatternNode, node_id: str, words: list[str], depth: int
    ):
        m = match_pattern(node.pattern, words, self.lexicon)
        if m is None:
            return None
        if node.terminal:
            result = self._apply_directive(node.directive, m, words, depth)
            if result is None:
                return None
            if result is _EXPLICIT_FAIL:
                return result
            result.path.insert(0, node_id)
            return result
        child_words = words
        if node.on_capture is not None:
            if not 1 <= node.on_capture <= len(m.captures):
                raise SlotOutOfRange(f"{node_id}: :on {node.on_capture} out of range")
            child_words = m.captures[node.on_capture - 1]
        for j, child in enumerate(node.children):
            result = self._try_node(tree, child, f"{node_id}.{j}", words=child_words, depth=depth)
            if result is not None:
                if result is not _EXPLICIT_FAIL:
                    result.path.insert(0, node_id)
                return result
        return None

    def _apply_directive(self, d: Directive, m: MatchResult, words: list[str], depth: int):
        if d.kind == "fail":
            return _EXPLICIT_FAIL
        if d.kind == "gist":
            return Transduction(
                kind="gist",
                words=fill_template(d.template, m.captures),
                topic=d.topic,
                captures=list(m.captures),
            )
        if d.kind == "say":
            variants = [fill_template(t, m.captures) for t in (d.template,) + d.alternatives]
            return Transduction(
                kind="say",
                words=variants[0],
                alternatives=variants,
                captures=list(m.captures),
            )
        if d.kind == "subschema":
            return Transduction(kind="subschema", target=d.target, captures=list(m.captures))
        if d.kind == "subtree":
            if depth + 1 > MAX_SUBTREE_DEPTH:
                return None
            sub_words = words
            if d.capture_index is not None:
                if not 1 <= d.capture_index <= len(m.captures):
                    raise SlotOutOfRange(f"subtree capture {d.capture_index} out of range")
                sub_words = m.captures[d.capture_index - 1]
            sub = self.transduce(d.target, sub_words, _depth=depth + 1)
            if sub is not None:
                sub.path.insert(0, f"->{d.target}")
            return sub
        if d.kind == "ulf":
            built = self._build_ulf(d.recipe, m, depth)
            if built is None:
                return None
            return Transduction(kind="ulf", ulf=built, captures=list(m.captures))
        raise TreeError(f"unknown directive kind {d.kind}")

    def _build_ulf(self, recipe: Expr, m: MatchResult, depth: int) -> Optional[Expr]:
        if isinstance(recipe, Compound):
            head = recipe[0]
            if head == Symbol("sub!"):
                tree_name, slot = recipe[1], recipe[2]
                span = self._slot(m, slot)
                sub = self.transduce(tree_name.name, span, _depth=depth + 1)
                if sub is None or sub.ulf is None:
                    return None
                return sub.ulf
            if head == Symbol("cap!"):
                span = self._slot(m, recipe[1])
                if not span:
                    return None
                if len(span) == 1:
                    return Symbol(span[0])
                return Compound(Symbol(w) for w in span)
            parts = []
            for item in recipe:
                built = self._build_ulf(item, m, depth)
                if built is None:
                    return None
                parts.append(built)
            return Compound(parts)
        return recipe

    @staticmethod
    def _slot(m: MatchResult, slot: Expr) -> list[str]:
        if not isinstance(slot, Number) or not 1 <= int(slot.value) <= len(m.captures):
            raise SlotOutOfRange(f"recipe slot {print_expr(slot)} with {len(m.captures)} capture(s)")
        return m.captures[int(slot.value) - 1]


_EXPLICIT_FAIL = Transduction(kind="fail")


def parse_tree(text: str) -> TransductionTree:
    from .expr import EmptyInput

    try:
        form = parse_expr(text)
    except EmptyInput as exc:
        raise MissingDirective(f"tree file is empty: {exc}") from exc
    if not (isinstance(form, Compound) and len(form) >= 2 and form[0] == Symbol("tree")):
        raise TreeError("tree file must contain a single (tree <name> ...) form")
    if not isinstance(form[1], Symbol):
        raise TreeError("tree name must be a symbol")
    name = form[1].name
    roots = [_parse_node(name, item) for item in form.items[2:]]
    if not roots:
        raise MissingDirective(f"{name}: tree has no nodes")
    return TransductionTree(name=name, roots=roots)


def _parse_node(tree_name: str, form: Expr) -> PatternNode:
    if not (isinstance(form, Compound) and len(form) >= 2 and form[0] == Symbol("node")):
        raise TreeError(f"{tree_name}: expected (node <pattern> ...), got {print_expr(form)}")
    pattern = _parse_pattern(tree_name, form[1])
    rest = list(form.items[2:])
    on_capture = None
    if len(rest) >= 2 and rest[0] == Symbol(":on"):
        if not isinstance(rest[1], Number):
            raise TreeError(f"{tree_name}: :on must be a capture index")
        on_capture = int(rest[1].value)
        rest = rest[2:]
    if not rest:
        raise MissingDirective(f"{tree_name}: node has neither children nor a directive")
    if all(isinstance(x, Compound) and len(x) >= 1 and x[0] == Symbol("node") for x in rest):
        children = [_parse_node(tree_name, x) for x in rest]
        return PatternNode(pattern=pattern, children=children, on_capture=on_capture)
    if len(rest) == 1:
        return PatternNode(pattern=pattern, directive=_parse_directive(tree_name, rest[0]), on_capture=on_capture)
    raise TreeError(f"{tree_name}: a node holds either child nodes or exactly one directive")


def _parse_pattern(tree_name: str, form: Expr) -> list[PatternToken]:
    if not isinstance(form, Compound):
        raise TreeError(f"{tree_name}: pattern must be a parenthesized token list")
    tokens: list[PatternToken] = []
    for item in form:
        if isinstance(item, Number):
            bound = int(item.value)
            if bound < 0 or bound != item.value:
                raise TreeError(f"{tree_name}: wildcard bound must be a nonnegative integer")
            tokens.append(Wildcard(bound))
        elif isinstance(item, Symbol) and item.name.startswith(".") and len(item.name) > 1:
            tokens.append(FeatureRef(item.name[1:]))
        elif isinstance(item, Symbol):
            tokens.append(LiteralWord(item.name))
        else:
            raise TreeError(f"{tree_name}: bad pattern token {print_expr(item)}")
    return tokens


def _parse_directive(tree_name: str, form: Expr) -> Directive:
    if not (isinstance(form, Compound) and isinstance(form[0], Symbol)):
        raise MissingDirective(f"{tree_name}: expected a directive, got {print_expr(form)}")
    kind = form[0].name
    args = form.items[1:]
    if kind == "gist":
        if len(args) != 2 or not isinstance(args[0], WordList) or not isinstance(args[1], Symbol):
            raise TreeError(f"{tree_name}: (gist \"template\" topic)")
        return Directive(kind="gist", template=args[0].words, topic=args[1].name)
    if kind == "say":
        if not args or not all(isinstance(a, WordList) for a in args):
            raise TreeError(f"{tree_name}: (say \"template\" [\"alternative\" ...])")
        return Directive(kind="say", template=args[0].words, alternatives=tuple(a.words for a in args[1:]))
    if kind == "subtree":
        if not args or not isinstance(args[0], Symbol):
            raise TreeError(f"{tree_name}: (subtree name [capture])")
        cap = None
        if len(args) == 2:
            if not isinstance(args[1], Number):
                raise TreeError(f"{tree_name}: subtree capture index must be a number")
            cap = int(args[1].value)
        return Directive(kind="subtree", target=args[0].name, capture_index=cap)
    if kind == "subschema":
        if len(args) != 1 or not isinstance(args[0], Symbol):
            raise TreeError(f"{tree_name}: (subschema name)")
        return Directive(kind="subschema", target=args[0].name)
    if kind == "ulf":
        if len(args) != 1:
            raise TreeError(f"{tree_name}: (ulf recipe)")
        return Directive(kind="ulf", recipe=args[0])
    if kind == "fail":
        return Directive(kind="fail")
    raise MissingDirective(f"{tree_name}: unknown directive ({kind} ...)")
