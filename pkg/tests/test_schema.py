import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metadial.schema import (
    BUILTIN_DOMAINS, EOS_B, INF, REQ, BeliefState, Entity, KnowledgeBase, MatchIndicator, SchemaError,
    generate_kb, kb_query, load_domain, parse_belief, serialize_belief, update_belief,
)

RESTAURANT = load_domain("restaurant")


def _entity(name, loc, food):
    return Entity(name, {"loc": loc, "food_pref": food, "parking": "no", "price": "moderate", "opening": "open"})


def _kb(*entities):
    return KnowledgeBase("restaurant", tuple(entities), tuple(RESTAURANT.informable))


@pytest.mark.parametrize("name", BUILTIN_DOMAINS)
def test_builtin_domains_load_and_validate(name):
    spec = load_domain(name)
    assert spec.name == name
    assert not set(spec.informable) & set(spec.requestable)
    kb = generate_kb(spec, 100, 0)
    assert len(kb.entities) == 100
    assert all(set(e.values) == set(spec.informable) | set(spec.requestable) for e in kb.entities)


def test_target_values_disjoint_from_sources():
    movie = {v for vals in load_domain("movie").informable.values() for v in vals}
    for name in ("restaurant", "weather", "bus"):
        assert not movie & {v for vals in load_domain(name).informable.values() for v in vals}


def test_empty_kb_is_no_match():
    assert kb_query(_kb(), {"loc": "seattle"}) == (MatchIndicator.NO_MATCH, [])


def test_restaurant_65_exact_match():
    kb = _kb(_entity("restaurant 12", "seattle", "indian"),
             _entity("restaurant 65", "philadelphia", "indian"),
             _entity("restaurant 56", "philadelphia", "thai"))
    match, hits = kb_query(kb, {"loc": "philadelphia", "food_pref": "indian"})
    assert match is MatchIndicator.EXACT_MATCH
    assert [e.name for e in hits] == ["restaurant 65"]


def test_two_matches_is_multiple_in_kb_order():
    kb = _kb(_entity("restaurant 2", "boston", "thai"), _entity("restaurant 1", "boston", "thai"))
    match, hits = kb_query(kb, {"loc": "boston"})
    assert match is MatchIndicator.MULTIPLE_MATCH
    assert [e.name for e in hits] == ["restaurant 2", "restaurant 1"]


def test_unknown_slot_is_schema_error():
    with pytest.raises(SchemaError):
        kb_query(_kb(), {"cuisine": "thai"})


def test_kb_query_monotone_under_added_constraints():
    kb = generate_kb(RESTAURANT, 100, 0)
    for loc in RESTAURANT.informable["loc"]:
        _, loose = kb_query(kb, {"loc": loc})
        for food in RESTAURANT.informable["food_pref"]:
            match, tight = kb_query(kb, {"loc": loc, "food_pref": food})
            assert len(tight) <= len(loose)
            assert match is MatchIndicator.from_count(len(tight))


def test_kb_has_all_three_outcomes():
    kb = generate_kb(RESTAURANT, 100, 0)
    outcomes = {kb_query(kb, {"loc": l, "food_pref": f})[0]
                for l in RESTAURANT.informable["loc"] for f in RESTAURANT.informable["food_pref"]}
    assert outcomes == set(MatchIndicator)


def test_serialize_empty_state():
    assert serialize_belief(BeliefState(), RESTAURANT) == [INF, REQ, EOS_B]


def test_serialize_appendix_turn():
    b = BeliefState({"loc": "seattle", "food_pref": "indian"}, {"price"})
    assert serialize_belief(b, RESTAURANT) == [INF, "seattle", "indian", REQ, "price", EOS_B]


def test_serialize_uses_declaration_order_and_sorted_requests():
    b = BeliefState({"food_pref": "thai", "loc": "boston"}, {"price", "opening", "parking"})
    assert serialize_belief(b, RESTAURANT) == [INF, "boston", "thai", REQ, "opening", "parking", "price", EOS_B]


@st.composite
def belief_states(draw, spec=RESTAURANT):
    inform = {}
    for slot, vals in spec.informable.items():
        if draw(st.booleans()):
            inform[slot] = draw(st.sampled_from(vals))
    request = draw(st.frozensets(st.sampled_from(sorted(spec.requestable))))
    return BeliefState(inform, request)


@settings(max_examples=1200, deadline=None)
@given(st.sampled_from(BUILTIN_DOMAINS), st.data())
def test_serialize_parse_round_trip(name, data):
    spec = load_domain(name)
    b = data.draw(belief_states(spec))
    parsed, dropped = parse_belief(serialize_belief(b, spec), spec)
    assert parsed == b and dropped == 0


def test_parse_without_eos_reads_to_end():
    parsed, dropped = parse_belief([INF, "seattle", REQ, "price"], RESTAURANT)
    assert parsed == BeliefState({"loc": "seattle"}, {"price"}) and dropped == 0


def test_parse_drops_unknown_token():
    parsed, dropped = parse_belief([INF, "seattle", "banana", REQ, EOS_B], RESTAURANT)
    assert parsed == BeliefState({"loc": "seattle"})
    assert dropped == 1


def test_parse_stops_at_eos():
    parsed, _ = parse_belief([INF, "seattle", EOS_B, "indian"], RESTAURANT)
    assert parsed.inform == {"loc": "seattle"}


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from([INF, REQ, EOS_B, "seattle", "indian", "thai", "price", "banana", "<pad>"]),
                max_size=12))
def test_parse_never_raises(tokens):
    parsed, dropped = parse_belief(tokens, RESTAURANT)
    parsed.check(RESTAURANT)
    assert dropped >= 0


def test_update_belief_decoded_wins():
    prev = BeliefState({"loc": "philadelphia"})
    decoded = BeliefState({"loc": "seattle", "food_pref": "indian"})
    assert update_belief(prev, decoded) == decoded
    assert update_belief(prev, prev) == prev
    assert update_belief(prev, BeliefState()) == BeliefState()


def test_items_for_f1():
    b = BeliefState({"loc": "seattle"}, {"price"})
    assert b.items() == {("inform", "loc", "seattle"), ("request", "price")}


def test_invalid_domain_config_rejected(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text(
        "name: x\nentity_name_pattern: 'x {id}'\n"
        "informable: {a: {values: [p, q]}}\n"
        "requestable: {a: {values: [r], keywords: [a]}}\n"
        "user_templates: {}\nnlg_templates: {}\n")
    with pytest.raises(SchemaError, match="both informable and requestable"):
        load_domain(bad)


def test_template_with_undeclared_placeholder_rejected(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text(
        "name: x\nentity_name_pattern: 'x {id}'\n"
        "informable: {a: {values: [p, q]}}\n"
        "requestable: {b: {values: [r], keywords: [b]}}\n"
        "user_templates: {greet: ['hi']}\nnlg_templates: {answer: ['it is <colour> .']}\n")
    with pytest.raises(SchemaError, match="colour"):
        load_domain(bad)
