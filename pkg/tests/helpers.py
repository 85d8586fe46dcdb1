"""Seeded random generators shared by the oracle-style tests."""

from __future__ import annotations

import random

from parley.expr import (
    Compound,
    Expr,
    Indexical,
    Number,
    Symbol,
    Variable,
    WordList,
)

WORD_POOL = [
    "cancer", "doctor", "test", "results", "spread", "family", "time",
    "Know", "reply", "okay", "bad", "good", "news", "?", ",", ".",
]

SYMBOL_POOL = [
    "say-to.v", "reply-to.v", "know.v", "cancer.n", "doctor", "e1", "e2",
    "answer-to", "person.n", "topic", "prognosis", "treatment", "spread.v",
]


def gen_expr(rng: random.Random, depth: int, allow_vars: bool = False) -> Expr:
    """Random expression of nesting depth <= depth."""
    kinds = ["symbol", "symbol", "number", "indexical", "wordlist"]
    if allow_vars:
        kinds.append("variable")
    if depth > 0:
        kinds += ["compound"] * 4
    kind = rng.choice(kinds)
    if kind == "symbol":
        return Symbol(rng.choice(SYMBOL_POOL))
    if kind == "number":
        if rng.random() < 0.5:
            return Number(rng.randint(-50, 50))
        return Number(round(rng.uniform(-5, 5), 3))
    if kind == "indexical":
        return Indexical(rng.choice(["me", "you"]))
    if kind == "wordlist":
        n = rng.randint(0, 4)
        return WordList(rng.choice(WORD_POOL) for _ in range(n))
    if kind == "variable":
        return Variable(rng.choice(["x", "y", "e1", "e2", "words"]))
    n = rng.randint(1, 4)
    return Compound(gen_expr(rng, depth - 1, allow_vars) for _ in range(n))


def gen_ground_expr(rng: random.Random, depth: int) -> Expr:
    return gen_expr(rng, depth, allow_vars=False)


def abstract_pattern(rng: random.Random, fact: Expr) -> Expr:
    """Turn a ground fact into a matching pattern by carving out fresh
    variables at random subexpression positions."""
    counter = [0]

    def walk(e: Expr) -> Expr:
        if rng.random() < 0.25:
            counter[0] += 1
            return Variable(f"v{counter[0]}")
        if isinstance(e, Compound):
            return Compound(walk(x) for x in e)
        return e

    return walk(fact)
