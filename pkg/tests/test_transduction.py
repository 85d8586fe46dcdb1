import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parley.expr import parse_expr
from parley.transduction import (
    DanglingSubtree,
    FeatureLexicon,
    FeatureRef,
    LiteralWord,
    MissingDirective,
    SlotOutOfRange,
    TreeRegistry,
    UnknownFeature,
    Wildcard,
    fill_template,
    match_pattern,
    parse_tree,
)

LEX = FeatureLexicon({"negative": {"bad", "worse", "spread", "sorry"}})


def enumerate_matches(pattern, words, lex):
    """Independent oracle: try every span-length assignment in lexicographic
    order and return the first that satisfies the pattern, else None."""
    ranges = []
    for tok in pattern:
        if isinstance(tok, Wildcard):
            hi = len(words) if tok.bound == 0 else min(tok.bound, len(words))
            ranges.append(range(0, hi + 1))
        else:
            ranges.append(range(1, 2))
    for lens in itertools.product(*ranges):
        if sum(lens) != len(words):
            continue
        pos = 0
        captures = []
        ok = True
        for tok, n in zip(pattern, lens):
            span = words[pos : pos + n]
            pos += n
            if isinstance(tok, LiteralWord):
                if span != [tok.word]:
                    ok = False
                    break
            elif isinstance(tok, FeatureRef):
                if len(span) != 1 or not lex.member(tok.name, span[0]):
                    ok = False
                    break
                captures.append(span)
            else:
                captures.append(span)
        if ok:
            return captures
    return None


def test_match_basic_wildcards():
    pattern = [Wildcard(0), LiteralWord("test"), LiteralWord("results"), Wildcard(0)]
    words = "do you have my test results yet".split()
    m = match_pattern(pattern, words, LEX)
    assert m is not None
    assert m.captures == [["do", "you", "have", "my"], ["yet"]]


def test_match_empty_pattern_empty_input():
    m = match_pattern([], [], LEX)
    assert m is not None and m.captures == []


def test_match_bounded_wildcard_respects_bound():
    pattern = [Wildcard(2), LiteralWord("x")]
    assert match_pattern(pattern, ["a", "b", "c", "x"], LEX) is None
    m = match_pattern(pattern, ["a", "b", "x"], LEX)
    assert m is not None and m.captures == [["a", "b"]]


def test_match_feature_single_word():
    pattern = [Wildcard(0), FeatureRef("negative"), Wildcard(0)]
    m = match_pattern(pattern, "i have bad news".split(), LEX)
    assert m is not None
    assert m.captures == [["i", "have"], ["bad"], ["news"]]


def test_match_leftmost_shortest():
    # both wildcards could split "a a" several ways; earlier one stays short
    pattern = [Wildcard(0), LiteralWord("a"), Wildcard(0)]
    m = match_pattern(pattern, ["a", "a", "a"], LEX)
    assert m.captures == [[], ["a", "a"]]


def test_match_reconstruction_invariant():
    rng = random.Random(37)
    vocab = ["a", "b", "c", "bad", "news"]
    for _ in range(500):
        pattern = _random_pattern(rng)
        words = [rng.choice(vocab) for _ in range(rng.randint(0, 6))]
        m = match_pattern(pattern, words, LEX)
        if m is None:
            continue
        rebuilt = []
        caps = iter(m.captures)
        for tok in pattern:
            if isinstance(tok, LiteralWord):
                rebuilt.append(tok.word)
            else:
                rebuilt.extend(next(caps))
        assert rebuilt == words


def _random_pattern(rng):
    tokens = []
    for _ in range(rng.randint(0, 4)):
        roll = rng.random()
        if roll < 0.4:
            tokens.append(LiteralWord(rng.choice(["a", "b", "c"])))
        elif roll < 0.55:
            tokens.append(FeatureRef("negative"))
        elif roll < 0.8:
            tokens.append(Wildcard(0))
        else:
            tokens.append(Wildcard(rng.randint(1, 2)))
    return tokens


def test_match_agrees_with_enumeration_oracle_random():
    rng = random.Random(41)
    vocab = ["a", "b", "c", "bad", "news"]
    for _ in range(2000):
        pattern = _random_pattern(rng)
        words = [rng.choice(vocab) for _ in range(rng.randint(0, 6))]
        m = match_pattern(pattern, words, LEX)
        oracle = enumerate_matches(pattern, words, LEX)
        if oracle is None:
            assert m is None
        else:
            assert m is not None
            assert m.captures == oracle


@settings(max_examples=300, deadline=None)
@given(
    st.lists(
        st.one_of(
            st.sampled_from([LiteralWord("a"), LiteralWord("b"), FeatureRef("negative")]),
            st.integers(min_value=0, max_value=3).map(Wildcard),
        ),
        max_size=4,
    ),
    st.lists(st.sampled_from(["a", "b", "bad", "c"]), max_size=7),
)
def test_bounded_wildcards_never_exceed_bound(pattern, words):
    m = match_pattern(pattern, words, LEX)
    if m is None:
        return
    caps = iter(m.captures)
    for tok in pattern:
        if isinstance(tok, Wildcard):
            span = next(caps)
            if tok.bound > 0:
                assert len(span) <= tok.bound
        elif isinstance(tok, FeatureRef):
            next(caps)


def test_fill_template():
    out = fill_template(("you", "said", "1", ",", "correct", "?"), [["the", "cancer", "spread"]])
    assert out == "you said the cancer spread , correct ?".split()


def test_fill_template_no_slots():
    assert fill_template(("hello", "there"), []) == ["hello", "there"]


def test_fill_template_slot_out_of_range():
    with pytest.raises(SlotOutOfRange):
        fill_template(("a", "3"), [["x"]])


TREE_TEXT = """
(tree interp-test
  (node (0 test results 0)
    (node (0 spread 0) (gist "the cancer has spread ." test-results))
    (node (0) (gist "what do my test results mean ?" test-results)))
  (node (0 spread 0) (gist "the cancer has spread ." test-results)))
"""


def registry_with(*tree_texts, lexicon=LEX):
    reg = TreeRegistry(lexicon)
    for text in tree_texts:
        reg.add(parse_tree(text))
    reg.resolve()
    return reg


def test_parse_tree_counts_roots():
    tree = parse_tree(TREE_TEXT)
    assert tree.name == "interp-test"
    assert len(tree.roots) == 2


def test_transduce_first_match_wins():
    reg = registry_with(TREE_TEXT)
    r = reg.transduce("interp-test", "what do my test results mean".split())
    assert r is not None
    assert r.kind == "gist"
    assert r.words == "what do my test results mean ?".split()
    assert r.topic == "test-results"
    assert r.path[0] == "interp-test/0"


def test_transduce_descends_to_specific_child():
    reg = registry_with(TREE_TEXT)
    r = reg.transduce("interp-test", "my test results say it spread".split())
    assert r.words == "the cancer has spread .".split()


def test_transduce_no_match():
    reg = registry_with(TREE_TEXT)
    assert reg.transduce("interp-test", ["tangerine", "elbow"]) is None


def test_transduce_deterministic():
    reg = registry_with(TREE_TEXT)
    words = "the test results spread".split()
    first = reg.transduce("interp-test", words)
    for _ in range(100):
        again = reg.transduce("interp-test", words)
        assert again.words == first.words and again.path == first.path


def test_first_match_precedence_is_stable_under_appended_nodes():
    extended = TREE_TEXT.rstrip()[:-1] + '\n  (node (0) (gist "anything ." general)))'
    reg1 = registry_with(TREE_TEXT)
    reg2 = registry_with(extended)
    words = "my test results spread".split()
    assert reg1.transduce("interp-test", words).words == reg2.transduce("interp-test", words).words


def test_subtree_dispatch_and_capture():
    outer = """
    (tree outer
      (node (tell me about 0)
        (subtree inner 1)))
    """
    inner = """
    (tree inner
      (node (0 family 0) (gist "tell me about my family ." family)))
    """
    reg = registry_with(outer, inner)
    r = reg.transduce("outer", "tell me about your family".split())
    assert r.kind == "gist" and r.topic == "family"
    assert r.path[:2] == ["outer/0", "->inner"]


def test_subtree_cycle_bounded():
    a = "(tree a (node (0) (subtree b)))"
    b = "(tree b (node (0) (subtree a)))"
    reg = registry_with(a, b)
    assert reg.transduce("a", ["loop"]) is None


def test_dangling_subtree_rejected():
    with pytest.raises(DanglingSubtree):
        registry_with("(tree a (node (0) (subtree missing)))")


def test_unknown_feature_rejected():
    with pytest.raises(UnknownFeature):
        registry_with("(tree a (node (0 .nosuch 0) (gist \"x\" t)))")


def test_empty_tree_rejected():
    with pytest.raises(MissingDirective):
        parse_tree("; nothing here\n")
    with pytest.raises(MissingDirective):
        parse_tree("(tree empty)")


def test_node_without_directive_rejected():
    with pytest.raises(MissingDirective):
        parse_tree("(tree t (node (0)))")


def test_explicit_fail_aborts():
    tree = """
    (tree t
      (node (0 nevermind 0) (fail))
      (node (0) (gist "caught ." general)))
    """
    reg = registry_with(tree)
    assert reg.transduce("t", "oh nevermind then".split()) is None
    assert reg.transduce("t", ["hello"]).words == ["caught", "."]


def test_say_directive_with_alternatives():
    tree = """
    (tree para
      (node (0) (say "so , what do my test results mean ?" "did my results come back ?")))
    """
    reg = registry_with(tree)
    r = reg.transduce("para", [])
    assert r.kind == "say"
    assert len(r.alternatives) == 2


def test_ulf_recipe_literal_and_composed():
    ulf_np = """
    (tree ulf-np
      (node (the cancer) (ulf (the.d cancer.n))))
    """
    ulf_main = """
    (tree ulf-main
      (node (2 has spread 0)
        (ulf ((sub! ulf-np 1) ((pres perf) spread.v)))))
    """
    reg = registry_with(ulf_np, ulf_main)
    r = reg.transduce("ulf-main", "the cancer has spread .".split())
    assert r.kind == "ulf"
    assert r.ulf == parse_expr("((the.d cancer.n) ((pres perf) spread.v))")


def test_ulf_capture_splice():
    tree = """
    (tree u
      (node (i take 1) (ulf (i.pro ((pres take.v) (cap! 1))))))
    """
    reg = registry_with(tree)
    r = reg.transduce("u", "i take lortab".split())
    assert r.ulf == parse_expr("(i.pro ((pres take.v) lortab))")


def test_on_capture_restricts_children():
    tree = """
    (tree t
      (node (because 0) :on 1
        (node (0 pain 0) (gist "i am in pain ." pain))))
    """
    reg = registry_with(tree)
    r = reg.transduce("t", "because of the pain".split())
    assert r.words == "i am in pain .".split()
    assert reg.transduce("t", "pain because".split()) is None
