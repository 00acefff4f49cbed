import dataclasses

import pytest

from metadial.schema import BUILTIN_DOMAINS, BeliefState, MatchIndicator, generate_kb, load_domain
from metadial.simdial import (
    HESITATIONS, ComplexityConfig, Dialog, GenerationError, Turn, corpus_stats, generate_corpus,
    generate_dialog, load_corpus, oracle_check, save_corpus, track,
)
from metadial.text import tokenize

RESTAURANT = load_domain("restaurant")
KB = generate_kb(RESTAURANT, 100, 0)


def _turn(user, inform=None, request=()):
    return Turn(tuple(tokenize(user)), (), (), BeliefState(inform or {}, frozenset(request)), MatchIndicator.NO_MATCH)


# hand transcription of the published example restaurant dialog
APPENDIX = Dialog("restaurant", 0, (
    _turn("What's up? hmm I am looking for a restaurant."),
    _turn("I uhm yeah I don't care. Oh sorry, Philadelphia.", {"loc": "philadelphia"}),
    _turn("Indian food.", {"loc": "philadelphia", "food_pref": "indian"}),
    _turn("I have more requests. What kind of parking does it have?.",
          {"loc": "philadelphia", "food_pref": "indian"}, {"parking"}),
    _turn("I have more requests. Is hmm ... it closed?", {"loc": "philadelphia", "food_pref": "indian"}),
    _turn("New request. I'm interested in food uhm at Seattle.", {"loc": "seattle", "food_pref": "indian"}),
    _turn("Uh-huh.", {"loc": "seattle", "food_pref": "indian"}),
    _turn("Not done yet. What's the average price?", {"loc": "seattle", "food_pref": "indian"}, {"price"}),
    _turn("I have all I need. See you.", {"loc": "seattle", "food_pref": "indian"}),
))


def test_appendix_dialog_passes_oracle_check():
    assert oracle_check(APPENDIX, RESTAURANT)


def test_corrupted_annotation_fails_oracle_check():
    turns = list(APPENDIX.turns)
    turns[5] = dataclasses.replace(turns[5], belief=BeliefState({"loc": "philadelphia", "food_pref": "indian"}))
    assert not oracle_check(dataclasses.replace(APPENDIX, turns=tuple(turns)), RESTAURANT)


def test_track_last_mention_wins():
    b = track(RESTAURANT, BeliefState({"loc": "boston"}), tokenize("seattle , no wait , denver ."))
    assert b.inform == {"loc": "denver"}


def test_generation_is_deterministic():
    a = generate_dialog(RESTAURANT, KB, ComplexityConfig(), 7)
    b = generate_dialog(RESTAURANT, KB, ComplexityConfig(), 7)
    assert a == b
    assert generate_dialog(RESTAURANT, KB, ComplexityConfig(), 8) != a


@pytest.mark.parametrize("name", BUILTIN_DOMAINS)
def test_all_generated_dialogs_pass_oracle_check(name):
    spec = load_domain(name)
    corpus = generate_corpus(spec, generate_kb(spec, 100, 0), ComplexityConfig(), 100, 0)
    assert all(oracle_check(d, spec) for d in corpus)
    for d in corpus:
        last = d.turns[-1]
        assert last.sys_delex and d.turns
        for t in d.turns:
            t.belief.check(spec)
            _check_lexicalization(t)


def _check_lexicalization(t):
    # sys_lex equals sys_delex with each placeholder replaced by one token
    assert len(t.sys_lex) == len(t.sys_delex) + sum(
        len(tokenize(t.kb_entity)) - 1 for tok in t.sys_delex if tok == "<name>")
    for d in t.sys_delex:
        if not d.startswith("<"):
            assert d in t.sys_lex


@pytest.mark.parametrize("name", BUILTIN_DOMAINS)
def test_corpus_statistics_in_range(name):
    spec = load_domain(name)
    stats = corpus_stats(generate_corpus(spec, generate_kb(spec, 100, 0), ComplexityConfig(), 200, 0))
    assert 7 <= stats["mean_turns"] <= 11
    assert 9 <= stats["mean_utterance_tokens"] <= 17


def test_zero_probability_config_is_plain():
    cfg = ComplexityConfig(0.0, 0.0, 0.0, 0.0)
    for d in generate_corpus(RESTAURANT, KB, cfg, 50, 0):
        user_tokens = [tok for t in d.turns for tok in t.user]
        for t in d.turns:
            if any(RESTAURANT.slot_of_value(tok) for tok in t.user):
                assert not set(t.user) & set(HESITATIONS)
        values = [tok for tok in user_tokens if RESTAURANT.slot_of_value(tok)]
        # each value is mentioned once; a NoMatch offer adds exactly one relaxing inform
        recovered = any(t.match is MatchIndicator.NO_MATCH and len(t.belief.inform) == len(RESTAURANT.informable)
                        for t in d.turns)
        assert len(values) == len(set(values)) == len(RESTAURANT.informable) + recovered
        assert oracle_check(d, RESTAURANT)


def test_goal_change_keeps_latest_value():
    found = 0
    for d in generate_corpus(RESTAURANT, KB, ComplexityConfig(p_new_goal=1.0), 40, 0):
        history = {}
        for t in d.turns:
            for tok in t.user:
                slot = RESTAURANT.slot_of_value(tok)
                if slot:
                    history.setdefault(slot, []).append(tok)
            for slot, vals in history.items():
                assert t.belief.inform[slot] == vals[-1]
        found += any(len(set(v)) > 1 for v in history.values())
    assert found > 0


def test_bad_probability_rejected():
    with pytest.raises(ValueError):
        ComplexityConfig(p_hesitation=1.5)


def test_generate_corpus_requires_positive_n():
    with pytest.raises(ValueError):
        generate_corpus(RESTAURANT, KB, None, 0)


def test_empty_kb_is_generation_error():
    empty = dataclasses.replace(KB, entities=())
    with pytest.raises(GenerationError):
        generate_dialog(RESTAURANT, empty, None, 0)


def test_corpus_file_round_trip(tmp_path):
    corpus = generate_corpus(RESTAURANT, KB, None, 5, 3)
    path = save_corpus(tmp_path / "c.jsonl", corpus)
    assert load_corpus(path) == corpus
    assert len(path.read_text().splitlines()) == 5


def test_corpus_seeds_are_consecutive():
    assert [d.seed for d in generate_corpus(RESTAURANT, KB, None, 4, 10)] == [10, 11, 12, 13]
