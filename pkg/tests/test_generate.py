import pytest

from parley.generate import (
    CLARIFY,
    DEFAULT,
    GeneratorState,
    ResponsePlanItem,
    choose_fallback_mode,
    fallback_response,
    paraphrase,
    select_reaction,
)
from parley.interpret import GistClause
from parley.pack import builtin_pack_path, load_pack


@pytest.fixture(scope="module")
def pack():
    return load_pack(builtin_pack_path())


def gist(words, topic):
    return GistClause(words=tuple(words.split()), topic=topic)


def test_reaction_for_known_gist(pack):
    r = select_reaction(gist("the cancer has spread .", "test-results"), pack)
    assert r is not None and r.kind == "say"
    assert r.words == "oh no . i was afraid of that .".split()


def test_reaction_subschema_selection(pack):
    r = select_reaction(gist("are you in pain ?", "pain-probe"), pack)
    # pain-probe has no dedicated tree; the general reaction tree activates
    # the pain sub-dialogue
    assert r is not None and r.kind == "subschema"
    assert r.target == "discuss-pain"


def test_reaction_unmatched_gist(pack):
    assert select_reaction(gist("entirely novel words .", "greeting"), pack) is None


def test_paraphrase_picks_variant_and_cycles(pack):
    state = GeneratorState()
    q = gist("do you know the results of my test ?", "test-results")
    first = paraphrase(q, None, pack, state)
    second = paraphrase(q, None, pack, state)
    assert first.kind == "paraphrase"
    assert first.words != second.words  # the pack has >= 2 variants
    third = paraphrase(q, None, pack, state)
    fourth = paraphrase(q, None, pack, state)
    assert fourth.words == first.words  # 3 variants wrap around


def test_paraphrase_verbatim_without_tree(pack):
    state = GeneratorState()
    g = gist("an unusual system gist .", "no-such-topic")
    item = paraphrase(g, None, pack, state)
    assert item.words == list(g.words)
    assert item.provenance == "paraphrase:verbatim"


def test_fallback_clarify_rotates(pack):
    state = GeneratorState()
    a = fallback_response(CLARIFY, None, pack, state)
    b = fallback_response(CLARIFY, None, pack, state)
    assert a.kind == "clarification" and b.kind == "clarification"
    assert a.words != b.words
    assert a.words == "i'm sorry , could you say that in a different way ?".split()


def test_fallback_default_uses_schema_annotation(pack):
    state = GeneratorState()
    schema = pack.schema("discuss-prognosis")
    item = fallback_response(DEFAULT, schema, pack, state)
    assert item.kind == "schema-default"
    assert item.words == list(schema.default_response.words)
    assert item.words == "alright . i suppose no one can say for certain .".split()


def test_fallback_default_generic_without_schema(pack):
    item = fallback_response(DEFAULT, None, pack, GeneratorState())
    assert item.kind == "schema-default" and item.words


def test_fallback_mode_policy(pack):
    state = GeneratorState()
    schema = pack.schema("discuss-test-results")
    assert choose_fallback_mode(state, schema) == CLARIFY
    fallback_response(CLARIFY, schema, pack, state)
    assert choose_fallback_mode(state, schema) == CLARIFY
    fallback_response(CLARIFY, schema, pack, state)
    # two consecutive clarifications force the default on the third failure
    assert choose_fallback_mode(state, schema) == DEFAULT
    fallback_response(DEFAULT, schema, pack, state)
    assert state.consecutive_clarifications == 0
    assert choose_fallback_mode(state, schema) == CLARIFY


def test_response_item_requires_words():
    with pytest.raises(ValueError):
        ResponsePlanItem(kind="reaction", words=[], provenance="x")
