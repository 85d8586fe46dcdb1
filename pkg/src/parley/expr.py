"""Parenthesized symbolic expressions: the shared representation for schema
formulas, stored facts, gist clauses, and logical forms.

Grammar: whitespace-separated tokens inside balanced parentheses. `;` starts
a comment running to end of line. A `"`-delimited segment is a word list (a
natural-language utterance held as an ordered word sequence). Tokens starting
with `?` are variables, `^me`/`^you` are participant indexicals, numeric
tokens are numbers, and everything else is a symbol.

Symbols, variables, and indexicals are case-insensitive and normalize to
lowercase. Word lists keep their original spelling for display but compare
case-insensitively. The printer emits single spaces and lowercase tokens, so
``parse_expr(print_expr(e)) == e`` for every well-formed expression.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Union


class ExprError(Exception):
    """Parse failure, carrying 1-based line and column of the offending spot."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} (line {line}, col {col})")
        self.message = message
        self.line = line
        self.col = col


class UnbalancedParens(ExprError):
    pass


class EmptyInput(ExprError):
    pass


class UnterminatedQuote(ExprError):
    pass


@dataclass(frozen=True, slots=True)
class Symbol:
    name: str

    def __post_init__(self):
        object.__setattr__(self, "name", self.name.lower())

    def __repr__(self):
        return self.name


@dataclass(frozen=True, slots=True)
class Variable:
    name: str

    def __post_init__(self):
        if not self.name:
            raise ValueError("variable name must be nonempty")
        object.__setattr__(self, "name", self.name.lower())

    def __repr__(self):
        return "?" + self.name


@dataclass(frozen=True, slots=True)
class Indexical:
    name: str  # "me" or "you"

    def __post_init__(self):
        low = self.name.lower()
        if low not in ("me", "you"):
            raise ValueError(f"indexical must be ^me or ^you, got ^{self.name}")
        object.__setattr__(self, "name", low)

    def __repr__(self):
        return "^" + self.name


@dataclass(frozen=True, slots=True)
class Number:
    value: Union[int, float]

    def __repr__(self):
        return repr(self.value)


class WordList:
    """A quoted utterance: ordered words, case preserved for display only."""

    __slots__ = ("words", "_key")

    def __init__(self, words):
        words = tuple(words)
        for w in words:
            if not w or any(c.isspace() for c in w) or '"' in w:
                raise ValueError(f"bad word in word list: {w!r}")
        self.words = words
        self._key = tuple(w.lower() for w in words)

    def __eq__(self, other):
        return isinstance(other, WordList) and self._key == other._key

    def __hash__(self):
        return hash(self._key)

    def __repr__(self):
        return '"' + " ".join(self.words) + '"'


class Compound:
    """An ordered, nonempty sequence of subexpressions."""

    __slots__ = ("items",)

    def __init__(self, items):
        items = tuple(items)
        if not items:
            raise ValueError("compound expression may not be empty")
        self.items = items

    def __eq__(self, other):
        return isinstance(other, Compound) and self.items == other.items

    def __hash__(self):
        return hash(self.items)

    def __len__(self):
        return len(self.items)

    def __getitem__(self, i):
        return self.items[i]

    def __iter__(self):
        return iter(self.items)

    def __repr__(self):
        return "(" + " ".join(repr(x) for x in self.items) + ")"


Expr = Union[Symbol, Variable, Indexical, Number, WordList, Compound]
Bindings = dict[Variable, Expr]

_DELIMS = set('()";')


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.line = 1
        self.col = 1

    def error(self, cls, message):
        return cls(message, self.line, self.col)

    def _advance(self, n=1):
        for _ in range(n):
            if self.pos < len(self.text):
                if self.text[self.pos] == "\n":
                    self.line += 1
                    self.col = 1
                else:
                    self.col += 1
                self.pos += 1

    def skip_space(self):
        while self.pos < len(self.text):
            c = self.text[self.pos]
            if c == ";":
                while self.pos < len(self.text) and self.text[self.pos] != "\n":
                    self._advance()
            elif c.isspace():
                self._advance()
            else:
                return

    def peek(self) -> Optional[str]:
        return self.text[self.pos] if self.pos < len(self.text) else None

    def take_quoted(self) -> WordList:
        start_line, start_col = self.line, self.col
        self._advance()  # opening quote
        begin = self.pos
        while True:
            c = self.peek()
            if c is None:
                raise UnterminatedQuote("unterminated quote", start_line, start_col)
            if c == '"':
                raw = self.text[begin : self.pos]
                self._advance()
                return WordList(raw.split())
            self._advance()

    def take_token(self) -> str:
        begin = self.pos
        while True:
            c = self.peek()
            if c is None or c.isspace() or c in _DELIMS:
                return self.text[begin : self.pos]
            self._advance()


def _classify(token: str) -> Expr:
    if token.startswith("?"):
        name = token[1:]
        if not name:
            return Symbol(token)
        return Variable(name)
    if token.lower() in ("^me", "^you"):
        return Indexical(token[1:])
    try:
        return Number(int(token))
    except ValueError:
        pass
    try:
        return Number(float(token))
    except ValueError:
        pass
    return Symbol(token)


def _parse_one(sc: _Scanner) -> Expr:
    sc.skip_space()
    c = sc.peek()
    if c is None:
        raise EmptyInput("empty input", sc.line, sc.col)
    if c == ")":
        raise UnbalancedParens("unmatched ')'", sc.line, sc.col)
    if c == "(":
        open_line, open_col = sc.line, sc.col
        sc._advance()
        items = []
        while True:
            sc.skip_space()
            c = sc.peek()
            if c is None:
                raise UnbalancedParens("unclosed '('", open_line, open_col)
            if c == ")":
                sc._advance()
                if not items:
                    raise EmptyInput("empty expression '()'", open_line, open_col)
                return Compound(items)
            items.append(_parse_one(sc))
    if c == '"':
        return sc.take_quoted()
    return _classify(sc.take_token())


def parse_expr(text: str) -> Expr:
    """Parse a single expression; trailing content is an error."""
    sc = _Scanner(text)
    e = _parse_one(sc)
    sc.skip_space()
    if sc.peek() is not None:
        raise ExprError(f"trailing content {sc.peek()!r}", sc.line, sc.col)
    return e


def parse_all(text: str) -> list[Expr]:
    """Parse every expression in the text (e.g. a fact file)."""
    sc = _Scanner(text)
    out = []
    while True:
        sc.skip_space()
        if sc.peek() is None:
            return out
        out.append(_parse_one(sc))


def print_expr(e: Expr) -> str:
    """Canonical text form: single spaces, lowercase tokens."""
    return repr(e)


def unify(pattern: Expr, fact: Expr, seed: Optional[Bindings] = None) -> Optional[Bindings]:
    """Match a pattern (which may contain variables) against a ground fact.

    Returns bindings extending ``seed`` on success, else None. One-directional:
    variables may appear only in the pattern.
    """
    b = dict(seed) if seed else {}
    if _unify_into(pattern, fact, b):
        return b
    return None


def _unify_into(pattern: Expr, fact: Expr, b: Bindings) -> bool:
    if isinstance(pattern, Variable):
        bound = b.get(pattern)
        if bound is None:
            b[pattern] = fact
            return True
        return bound == fact
    if isinstance(pattern, Compound):
        if not isinstance(fact, Compound) or len(pattern) != len(fact):
            return False
        return all(_unify_into(p, f, b) for p, f in zip(pattern, fact))
    return pattern == fact


def substitute(e: Expr, b: Bindings) -> Expr:
    """Replace every variable in the domain of ``b``; leave the rest alone."""
    if not b:
        return e
    if isinstance(e, Variable):
        return b.get(e, e)
    if isinstance(e, Compound):
        return Compound(substitute(x, b) for x in e)
    return e


def resolve_indexicals(e: Expr, me: Symbol, you: Symbol) -> Expr:
    """Replace ^me/^you with the named participants."""
    if isinstance(e, Indexical):
        return me if e.name == "me" else you
    if isinstance(e, Compound):
        return Compound(resolve_indexicals(x, me, you) for x in e)
    return e


def free_variables(e: Expr) -> set[Variable]:
    out: set[Variable] = set()
    _collect_vars(e, out)
    return out


def _collect_vars(e: Expr, out: set[Variable]) -> None:
    if isinstance(e, Variable):
        out.add(e)
    elif isinstance(e, Compound):
        for x in e:
            _collect_vars(x, out)


def is_ground(e: Expr) -> bool:
    if isinstance(e, Variable):
        return False
    if isinstance(e, Compound):
        return all(is_ground(x) for x in e)
    return True


def subexpressions(e: Expr) -> Iterator[Expr]:
    """Depth-first walk over e and all its subexpressions."""
    yield e
    if isinstance(e, Compound):
        for x in e:
            yield from subexpressions(x)
