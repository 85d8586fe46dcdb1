"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with -s to see them). Tolerances are pinned in the
asserts; nothing is deferred to later calibration."""

import itertools
import json
import math
import random
from pathlib import Path

import pytest

from parley.cli import main as cli_main
from parley.expr import Symbol, substitute, unify
from parley.facts import CONTEXT, KB, FactStore
from parley.pack import builtin_pack_path, load_pack
from parley.plan import (
    EXPECTATION_TIMED_OUT,
    PLAN_EXHAUSTED,
    REPLAN_TRIGGERED,
    Plan,
    ReplanOutcome,
)
from parley.schema import instantiate, parse_schema
from parley.session import create_session
from parley.stats import (
    RatingItem,
    TurnAnnotation,
    averaged_annotation_metrics,
    cohens_kappa,
    mann_whitney_u,
    summarize_ratings,
)
from parley.transduction import (
    FeatureLexicon,
    FeatureRef,
    LiteralWord,
    Wildcard,
    match_pattern,
)
from helpers import abstract_pattern, gen_ground_expr

GOLDEN = Path(__file__).parent / "golden"


def report(name: str, ok: bool = True):
    print(f"\nACCEPTANCE {'PASS' if ok else 'FAIL'}: {name}")
    assert ok


# ----------------------------------------------------------------------
# 1. Oracle equivalence: matcher


def oracle_compositions(ranges, total):
    """All span-length vectors within per-token ranges summing to total,
    in lexicographic order."""
    k = len(ranges)
    min_rest = [0] * (k + 1)
    max_rest = [0] * (k + 1)
    for i in range(k - 1, -1, -1):
        min_rest[i] = min_rest[i + 1] + ranges[i][0]
        max_rest[i] = max_rest[i + 1] + ranges[i][1]

    def rec(i, remaining, acc):
        if i == k:
            if remaining == 0:
                yield tuple(acc)
            return
        lo, hi = ranges[i]
        lo = max(lo, remaining - max_rest[i + 1])
        hi = min(hi, remaining - min_rest[i + 1])
        for v in range(lo, hi + 1):
            acc.append(v)
            yield from rec(i + 1, remaining - v, acc)
            acc.pop()

    yield from rec(0, total, [])


def oracle_match(pattern, words, lex):
    """First satisfying span assignment in lexicographic order, or None."""
    n = len(words)
    ranges = []
    checks = []  # ("lit", word) | ("feat", wordset) | ("wild", None)
    for tok in pattern:
        if isinstance(tok, Wildcard):
            ranges.append((0, n if tok.bound == 0 else tok.bound))
            checks.append(("wild", None))
        elif isinstance(tok, FeatureRef):
            ranges.append((1, 1))
            checks.append(("feat", lex.words(tok.name)))
        else:
            ranges.append((1, 1))
            checks.append(("lit", tok.word))
    for lens in oracle_compositions(ranges, n):
        pos = 0
        captures = []
        ok = True
        for (kind, payload), ln in zip(checks, lens):
            if kind == "lit":
                if words[pos] != payload:
                    ok = False
                    break
                pos += 1
            elif kind == "feat":
                if words[pos] not in payload:
                    ok = False
                    break
                captures.append([words[pos]])
                pos += 1
            else:
                captures.append(words[pos : pos + ln])
                pos += ln
        if ok:
            return captures
    return None


def test_acceptance_matcher_oracle_equivalence():
    """All patterns <= 4 tokens over a 5-word vocab vs inputs <= 6 words.

    The literal cross product (about 30 million pairs) exceeds what one
    core finishes inside the stated minute, so the product is covered in
    complete strata plus deterministic strides over the heaviest cell:
    every pattern up to 4 tokens against every input up to 4 words; every
    pattern up to 3 tokens against every 5-word input; every pattern up to
    2 tokens against every 6-word input; and fixed-stride thirds/samples of
    the remaining (3-4 token x 5-6 word) cells. Agreement is exact on
    every pair tested."""
    lex = FeatureLexicon({"f": {"a", "d"}})
    vocab = ["a", "b", "c", "d", "e"]
    tokens = [
        LiteralWord("a"),
        LiteralWord("b"),
        LiteralWord("c"),
        Wildcard(0),
        Wildcard(2),
        FeatureRef("f"),
    ]

    def patterns_of(k):
        return [list(t) for t in itertools.product(tokens, repeat=k)]

    def inputs_of(n):
        return [list(t) for t in itertools.product(vocab, repeat=n)]

    checked = 0

    def agree_block(patterns, inputs):
        nonlocal checked
        for pattern in patterns:
            for words in inputs:
                got = match_pattern(pattern, words, lex)
                want = oracle_match(pattern, words, lex)
                if want is None:
                    assert got is None, (pattern, words)
                else:
                    assert got is not None and got.captures == want, (pattern, words)
                checked += 1

    up_to_4_words = [w for n in range(0, 5) for w in inputs_of(n)]
    five_words = inputs_of(5)
    six_words = inputs_of(6)
    pats = {k: patterns_of(k) for k in range(0, 5)}

    agree_block([p for k in range(0, 5) for p in pats[k]], up_to_4_words)
    agree_block([p for k in range(0, 4) for p in pats[k]], five_words)
    agree_block([p for k in range(0, 3) for p in pats[k]], six_words)
    agree_block(pats[3], six_words[::3])
    rng = random.Random(2024)
    long_inputs = five_words + six_words
    agree_block(
        [rng.choice(pats[4]) for _ in range(40)], [rng.choice(long_inputs) for _ in range(2500)]
    )
    assert checked > 3_500_000
    report(f"matcher agrees with exhaustive span enumeration on {checked} pairs")


# ----------------------------------------------------------------------
# 2. Oracle equivalence: fact store


def test_acceptance_fact_store_oracle():
    rng = random.Random(101)
    cases = 0
    for trial in range(10):
        store = FactStore()
        pool = [gen_ground_expr(rng, depth=3) for _ in range(120)]
        for f in pool:
            store.assert_fact(KB, f)
        stored = store.facts(KB)
        for _ in range(100):
            pattern = abstract_pattern(rng, rng.choice(pool))
            got = {repr(f) for f, _ in store.query(KB, pattern)}
            want = {repr(f) for f in stored if unify(pattern, f) is not None}
            assert got == want
            cases += 1
    assert cases == 1000
    report("fact store query equals unify-scan oracle on 1000 cases")


# ----------------------------------------------------------------------
# 3. Unification soundness


def test_acceptance_unification_soundness():
    rng = random.Random(103)
    for _ in range(1200):
        fact = gen_ground_expr(rng, depth=4)
        pattern = abstract_pattern(rng, fact)
        bindings = unify(pattern, fact)
        assert bindings is not None
        assert substitute(pattern, bindings) == fact
    report("substitute(pattern, unify(pattern, fact)) == fact on 1200 pairs")


# ----------------------------------------------------------------------
# 4. Planner certainty semantics


CERTAIN_SCHEMA = """
(schema waiting
  :header ((^me wait.v ^you) ** ?e0)
  :episodes (?e1 (^you reply-to.v x))
  :certainties (?e1 {c}))
"""


def certainty_plan(c, base):
    s = parse_schema(CERTAIN_SCHEMA.replace("{c}", str(c)))
    inst = instantiate(s, [], Symbol("ava"), Symbol("user"))
    return Plan(inst, {s.name: s}, base_timeout=base)


def test_acceptance_certainty_one_never_skips():
    plan = certainty_plan(1.0, base=10.0)
    store = FactStore()
    rng = random.Random(107)
    now = 0.0
    while now <= 10_000.0:
        assert plan.advance(store, now) is None
        now += rng.uniform(1.0, 97.0)
    assert plan.advance(store, 10_000.0) is None
    assert plan.pending_expectation() is not None
    report("certainty-1 expectation never skipped across 10^4 simulated seconds")


def test_acceptance_certainty_half_skips_exactly_at_base():
    base = 10.0
    plan = certainty_plan(0.5, base=base)
    store = FactStore()
    start = plan.last_modified
    # strictly before the window: hold; at exactly base: skip
    assert plan.advance(store, start + base - 1e-9) is None
    event = plan.advance(store, start + base)
    assert event is not None and event.kind == EXPECTATION_TIMED_OUT
    report("certainty-0.5 expectation skips at exactly base * 1.0 virtual time")


# ----------------------------------------------------------------------
# 5. Plan-graph integrity


def test_acceptance_plan_graph_integrity():
    from test_plan import TOP, WEATHER, REASK, link_walk_ok

    schemas = {}
    for text in (TOP, WEATHER, REASK):
        s = parse_schema(text)
        schemas[s.name] = s
    rng = random.Random(109)
    for trial in range(1000):
        inst = instantiate(schemas["chat-session"], [], Symbol("ava"), Symbol("user"))
        plan = Plan(inst, schemas, base_timeout=rng.choice([0.5, 5.0, 50.0]))
        store = FactStore()
        now = 0.0
        for _ in range(25):
            roll = rng.random()
            if roll < 0.5:
                ev = plan.advance(store, now)
                if ev is not None and ev.kind == REPLAN_TRIGGERED:
                    if rng.random() < 0.5:
                        plan.apply_replan(
                            ReplanOutcome(kind="activate-subschema", target="reask-weather"), now
                        )
                    else:
                        plan.apply_replan(ReplanOutcome(kind="move-on"), now)
                elif ev is not None and ev.kind == PLAN_EXHAUSTED:
                    break
            elif roll < 0.65:
                step = plan.pending_expectation()
                if step is not None:
                    store.assert_fact(CONTEXT, plan.resolve(step.formula), now)
            elif roll < 0.8 and plan.current is not None:
                plan.splice_subschema("reask-weather", now=now)
            else:
                now += rng.uniform(0.0, 60.0)
        assert link_walk_ok(plan)
    report("doubly-linked plan tree intact after 1000 random advance/expand runs")


# ----------------------------------------------------------------------
# 6. Golden dialogues


GOLDEN_NAMES = ("cherry_disclosure", "cherry_family", "lemon_clarify", "lemon_repeat")


def run_scripted(tmp_path, name):
    out = tmp_path / f"{name}.jsonl"
    code = cli_main(
        [
            "chat",
            "--script",
            str(GOLDEN / f"{name}.txt"),
            "--transcript",
            str(out),
        ]
    )
    assert code == 0
    return out.read_bytes()


def test_acceptance_golden_dialogues(tmp_path, capsys):
    for name in GOLDEN_NAMES:
        got = run_scripted(tmp_path, name)
        want = (GOLDEN / f"{name}.expected.jsonl").read_bytes()
        assert got == want, f"golden transcript {name} diverged"
    # the lemon scenarios demonstrate the documented fallbacks
    clarify = [
        json.loads(l) for l in (GOLDEN / "lemon_clarify.expected.jsonl").read_text().splitlines()
    ]
    kinds = [r["kind"] for r in clarify if r["speaker"] == "system"]
    assert kinds.count("clarification") == 1
    assert "reaction" in kinds  # the rephrased disclosure got a real reaction
    repeat = [
        json.loads(l) for l in (GOLDEN / "lemon_repeat.expected.jsonl").read_text().splitlines()
    ]
    rkinds = [r["kind"] for r in repeat if r["speaker"] == "system"]
    assert rkinds.count("clarification") == 2
    assert "schema-default" in rkinds
    streak = 0
    for k in rkinds:
        streak = streak + 1 if k == "clarification" else 0
        assert streak <= 2
    capsys.readouterr()
    report("golden transcripts byte-exact; fallback behaviors as documented")


# ----------------------------------------------------------------------
# 7. Statistics vs published arithmetic


def spread(total, mean):
    low = math.floor(mean)
    n_high = round((mean - low) * total)
    return [low + 1] * n_high + [low] * (total - n_high)


def test_acceptance_rating_diff_rows():
    first_means = (3.49, 3.03, 3.30, 3.06)
    second_means = (4.15, 3.29, 3.78, 3.60)
    items = []
    columns = {
        q: (spread(100, first_means[i]), spread(100, second_means[i]))
        for i, q in enumerate(("q1", "q2", "q3", "q4"))
    }
    for i in range(100):
        it = RatingItem(item_id=f"i{i}", system_a="baseline", system_b="engine")
        for q in ("q1", "q2", "q3", "q4"):
            it.add_rating("r", q, "a", columns[q][0][i])
            it.add_rating("r", q, "b", columns[q][1][i])
        items.append(it)
    s = summarize_ratings(items, baseline="baseline")
    for q, want in zip(("q1", "q2", "q3", "q4"), (0.66, 0.26, 0.48, 0.54)):
        assert s.diff_mean[q] == pytest.approx(want, abs=0.005)
    report("rating summary reproduces the published mean-difference rows")


# ----------------------------------------------------------------------
# 8. Statistics vs oracles


def oracle_exact_p(x, y):
    pooled = list(x) + list(y)
    n1 = len(x)
    svals = sorted(pooled)
    rank_of = {v: sum(i + 1 for i, s in enumerate(svals) if s == v) / svals.count(v) for v in set(svals)}
    base = n1 * (n1 + 1) / 2
    mu = n1 * len(y) / 2

    def u_of(indices):
        return sum(rank_of[pooled[i]] for i in indices) - base

    observed = abs(u_of(range(n1)) - mu)
    total = 0
    extreme = 0
    for combo in itertools.combinations(range(len(pooled)), n1):
        total += 1
        if abs(u_of(combo) - mu) >= observed - 1e-12:
            extreme += 1
    return extreme / total


def test_acceptance_kappa_fixtures():
    # hand-computed contingency fixtures, tolerance 1e-9
    fixtures = [
        (list("ggnn"), list("gnnn"), 0.5),  # p_o .75, p_e .5
        (list("gggg") + list("nn"), list("gggg") + list("nn"), 1.0),
        (["x", "x", "y", "y"], ["x", "y", "x", "y"], 0.0),  # p_o = p_e = .5
        (list("ab"), list("ba"), -1.0),  # systematic disagreement
        (list("aabbcc"), list("abcabc"), 1 - (4 / 6) / (1 - 1 / 3)),  # p_o 1/3, p_e 1/3
    ]
    for a, b, want in fixtures:
        assert cohens_kappa(a, b) == pytest.approx(want, abs=1e-9)
    report("Cohen's kappa matches hand-computed fixtures to 1e-9")


def test_acceptance_mann_whitney_exhaustive():
    """Exact p equals full enumeration for every sample with n1+n2 <= 10:
    all tie-free rank configurations, all two-valued samples, and all
    three-valued samples up to n1+n2 <= 7."""
    checked = 0
    # tie-free: the test depends only on which ranks belong to x
    for n in range(2, 11):
        for n1 in range(1, n):
            for combo in itertools.combinations(range(1, n + 1), n1):
                x = [float(r) for r in combo]
                y = [float(r) for r in range(1, n + 1) if r not in combo]
                got = mann_whitney_u(x, y, mode="exact")
                assert got.p == pytest.approx(oracle_exact_p(x, y), abs=1e-12)
                checked += 1
    # all two-valued tie patterns
    for n in range(2, 11):
        for n1 in range(1, n):
            for bits in itertools.product((0.0, 1.0), repeat=n):
                x, y = list(bits[:n1]), list(bits[n1:])
                got = mann_whitney_u(x, y, mode="exact")
                assert got.p == pytest.approx(oracle_exact_p(x, y), abs=1e-12)
                checked += 1
    # all three-valued tie patterns on smaller totals
    for n in range(2, 8):
        for n1 in range(1, n):
            for vals in itertools.product((0.0, 1.0, 2.0), repeat=n):
                x, y = list(vals[:n1]), list(vals[n1:])
                got = mann_whitney_u(x, y, mode="exact")
                assert got.p == pytest.approx(oracle_exact_p(x, y), abs=1e-12)
                checked += 1
    report(f"exact Mann-Whitney p matches enumeration on {checked} samples")


# ----------------------------------------------------------------------
# 9. Metric-table consistency under integer rounding


def make_annotations(gist_counts, response_counts):
    gists = [g for g, c in zip(("correct", "none", "incorrect"), gist_counts) for _ in range(c)]
    responses = [
        r
        for r, c in zip(("appropriate", "clarification", "inappropriate"), response_counts)
        for _ in range(c)
    ]
    return [TurnAnnotation(gist=g, response=r) for g, r in zip(gists, responses)]


def test_acceptance_metric_table_rounding():
    ann_a = make_annotations((39, 41, 20), (48, 28, 24))
    ann_b = make_annotations((39, 41, 20), (49, 27, 24))
    table = averaged_annotation_metrics([ann_a, ann_b])
    p = table.percents()
    assert (p["gist_correct"], p["gist_none"], p["gist_incorrect"]) == (39, 41, 20)
    assert (
        p["response_appropriate"],
        p["response_clarification"],
        p["response_inappropriate"],
    ) == (49, 28, 24)
    assert p["gist_correct"] + p["gist_none"] + p["gist_incorrect"] == 100
    assert (
        p["response_appropriate"] + p["response_clarification"] + p["response_inappropriate"]
        == 101
    )
    report("metric table reproduces 100%/101% row sums under round-half-up")


# ----------------------------------------------------------------------
# 10. Determinism


def test_acceptance_scripted_determinism():
    pack = load_pack(builtin_pack_path())
    script = [
        "how are you feeling?",
        "I'm afraid the cancer has spread.",
        "unintelligible jargon here",
        "you may have months left",
        "comfort care is an option",
        "be honest with your family",
    ]

    def run():
        sess, _ = create_session(pack, seed=11)
        for line in script:
            if sess.closed:
                break
            sess.run_turn(line)
        return "".join(r.to_json() + "\n" for r in sess.history).encode()

    assert run() == run()
    report("fixed seed and virtual clock reproduce byte-identical transcripts")
