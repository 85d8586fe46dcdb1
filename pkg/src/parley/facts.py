"""Central store of ground logical facts, split into three partitions:

- ``context``: facts in the common ground, taken to be true now;
- ``memory``: the episodic record (including facts retired from context);
- ``kb``: general background knowledge.

Facts are indexed on their predicate and on each constant argument so that
queries only unify against a narrow candidate set. For the subject-first
notation used by schemas, the predicate of a compound of two or more
elements is its second element; a one-element compound keys on that element.
"""

from __future__ import annotations

from typing import Iterable, Optional

from .expr import Bindings, Compound, Expr, Number, Symbol, is_ground, unify

CONTEXT = "context"
MEMORY = "memory"
KB = "kb"
PARTITIONS = (CONTEXT, MEMORY, KB)


class NonGroundFact(Exception):
    pass


def _index_keys(fact: Expr) -> list[str]:
    keys = []
    if isinstance(fact, Compound):
        if len(fact) >= 2 and isinstance(fact[1], Symbol):
            keys.append("p:" + fact[1].name)
        if len(fact) == 1 and isinstance(fact[0], Symbol):
            keys.append("p:" + fact[0].name)
        for i, arg in enumerate(fact):
            if i == 1 and len(fact) >= 2:
                continue
            if isinstance(arg, Symbol):
                keys.append("a:" + arg.name)
            elif isinstance(arg, Number):
                keys.append("a:" + repr(arg.value))
    elif isinstance(fact, Symbol):
        keys.append("p:" + fact.name)
    return keys


def _candidate_key(pattern: Expr) -> Optional[str]:
    """An index key every fact matching the pattern must carry, if one exists."""
    if isinstance(pattern, Compound):
        if len(pattern) >= 2 and isinstance(pattern[1], Symbol):
            return "p:" + pattern[1].name
        if len(pattern) == 1 and isinstance(pattern[0], Symbol):
            return "p:" + pattern[0].name
        for i, arg in enumerate(pattern):
            if i == 1 and len(pattern) >= 2:
                continue
            if isinstance(arg, Symbol):
                return "a:" + arg.name
            if isinstance(arg, Number):
                return "a:" + repr(arg.value)
        return None
    if isinstance(pattern, Symbol):
        return "p:" + pattern.name
    return None


class _Partition:
    def __init__(self):
        self.facts: dict[Expr, float] = {}  # fact -> assertion timestamp
        self.index: dict[str, set[Expr]] = {}

    def add(self, fact: Expr, now: float) -> None:
        if fact in self.facts:
            return
        self.facts[fact] = now
        for key in _index_keys(fact):
            self.index.setdefault(key, set()).add(fact)

    def remove(self, fact: Expr) -> bool:
        if fact not in self.facts:
            return False
        del self.facts[fact]
        for key in _index_keys(fact):
            bucket = self.index.get(key)
            if bucket is not None:
                bucket.discard(fact)
                if not bucket:
                    del self.index[key]
        return True

    def candidates(self, pattern: Expr) -> Iterable[Expr]:
        key = _candidate_key(pattern)
        if key is None:
            return list(self.facts)
        bucket = self.index.get(key, ())
        # preserve assertion order for deterministic query results
        return [f for f in self.facts if f in bucket] if bucket else []


class FactStore:
    def __init__(self):
        self._parts = {name: _Partition() for name in PARTITIONS}

    def assert_fact(self, partition: str, fact: Expr, now: float = 0.0) -> None:
        """Add a ground fact; duplicate asserts are idempotent."""
        if not is_ground(fact):
            raise NonGroundFact(f"fact contains variables: {fact!r}")
        self._part(partition).add(fact, now)

    def retract_fact(self, partition: str, fact: Expr) -> bool:
        """Remove an exact fact, returning whether it was present.

        A fact retracted from context is retired into episodic memory: it is
        no longer "true now" but stays on the record.
        """
        part = self._part(partition)
        stamp = part.facts.get(fact)
        was_present = part.remove(fact)
        if was_present and partition == CONTEXT:
            self._part(MEMORY).add(fact, stamp if stamp is not None else 0.0)
        return was_present

    def query(self, partitions, pattern: Expr, seed: Optional[Bindings] = None) -> list[tuple[Expr, Bindings]]:
        """All facts in the given partition(s) unifying with the pattern."""
        if isinstance(partitions, str):
            partitions = (partitions,)
        out = []
        for name in partitions:
            for fact in self._part(name).candidates(pattern):
                b = unify(pattern, fact, seed)
                if b is not None:
                    out.append((fact, b))
        return out

    def holds(self, partitions, pattern: Expr) -> bool:
        return bool(self.query(partitions, pattern))

    def when(self, partition: str, fact: Expr) -> Optional[float]:
        """Assertion timestamp of an exact fact, if present."""
        return self._part(partition).facts.get(fact)

    def facts(self, partition: str) -> list[Expr]:
        return list(self._part(partition).facts)

    def _part(self, name: str) -> _Partition:
        try:
            return self._parts[name]
        except KeyError:
            raise KeyError(f"unknown partition {name!r}; expected one of {PARTITIONS}")


def load_fact_lines(store: FactStore, partition: str, text: str) -> int:
    """Load a seed file: one fact per line (comments and blanks ignored)."""
    from .expr import parse_all

    n = 0
    for fact in parse_all(text):
        store.assert_fact(partition, fact)
        n += 1
    return n


def dump_fact_lines(store: FactStore, partition: str) -> str:
    """Partition contents in seed-file form (one fact per line), for
    inspection; round-trips through load_fact_lines."""
    return "".join(repr(fact) + "\n" for fact in store.facts(partition))
