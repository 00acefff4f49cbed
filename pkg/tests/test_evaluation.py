import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metadial.corpus_io import build_vocab, dialogs_to_examples, ontology_tokens
from metadial.evaluation import (
    EvalReport, F1Counts, aggregate, bleu, bleu_stats, domain_table, entity_f1, evaluate_model, f1_counts,
    format_table,
)
from metadial.model import ModelConfig, init_params
from metadial.schema import BeliefState
from metadial.simdial import generate_corpus

FIXTURE_HYP = [["the", "cat", "sat", "on", "the", "mat"], ["a", "dog", "barks"], ["hello", "there"]]
FIXTURE_REF = [["the", "cat", "is", "on", "the", "mat"], ["the", "dog", "barks", "loudly"], ["hello", "there"]]


def test_identity_is_one():
    assert bleu(FIXTURE_REF, FIXTURE_REF) == pytest.approx(1.0)


def test_disjoint_corpora_near_zero():
    assert bleu([["a", "b", "c"]] * 3, [["x", "y", "z"]] * 3) < 0.01


def test_three_sentence_fixture_against_hand_counts():
    # clipped matches / totals counted by hand:
    #   1-grams: 5/6 + 2/3 + 2/2 = 9/11
    #   2-grams: 3/5 + 1/2 + 1/1 = 5/8   -> add-one (5+1)/(8+1)
    #   3-grams: 1/4 + 0/1 + 0/0 = 1/5   -> (1+1)/(5+1)
    #   4-grams: 0/3             = 0/3   -> (0+1)/(3+1)
    # hypothesis length 11, reference length 12
    assert bleu_stats(FIXTURE_HYP, FIXTURE_REF) == ([9, 5, 1, 0], [11, 8, 5, 3], 11, 12)
    expected = math.exp(1 - 12 / 11) * math.exp((math.log(9 / 11) + math.log(6 / 9) + math.log(2 / 6)
                                                 + math.log(1 / 4)) / 4)
    assert bleu(FIXTURE_HYP, FIXTURE_REF) == pytest.approx(expected, abs=1e-12)


def test_bleu_errors():
    with pytest.raises(ValueError):
        bleu([], [])
    with pytest.raises(ValueError):
        bleu([["a"]], [["a"], ["b"]])


def test_empty_hypotheses_score_zero():
    assert bleu([[], []], [["a"], ["b"]]) == 0.0


def test_f1_hand_count_fixture():
    oracle = BeliefState({"loc": "seattle", "food_pref": "indian"}, {"price"})
    pred = BeliefState({"loc": "seattle"}, {"price"})
    c = f1_counts([pred], [oracle])
    assert (c.correct, c.predicted, c.oracle) == (2, 2, 3)
    assert entity_f1([pred], [oracle]) == pytest.approx(0.8)


def test_f1_edge_cases():
    b = BeliefState({"loc": "seattle"})
    assert entity_f1([b], [b]) == 1.0
    assert entity_f1([BeliefState()], [b]) == 0.0
    assert entity_f1([BeliefState()], [BeliefState()]) == 1.0
    with pytest.raises(ValueError):
        entity_f1([b], [])


def test_f1_lowercases_values():
    assert entity_f1([BeliefState({"loc": "Seattle"})], [BeliefState({"loc": "seattle"})]) == 1.0


slot_items = st.builds(
    BeliefState,
    st.dictionaries(st.sampled_from(["loc", "food_pref"]), st.sampled_from(["seattle", "boston", "thai"]), max_size=2),
    st.frozensets(st.sampled_from(["price", "parking", "opening"])),
)
tokens = st.lists(st.sampled_from(["a", "b", "c", "d", "<name>"]), max_size=8)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(slot_items, slot_items), min_size=1, max_size=6))
def test_f1_bounded_and_order_free(pairs):
    pred, orac = zip(*pairs)
    f = entity_f1(pred, orac)
    assert 0.0 <= f <= 1.0
    assert entity_f1(pred[::-1], orac[::-1]) == pytest.approx(f)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(tokens, tokens), min_size=1, max_size=6))
def test_bleu_bounded_and_order_free(pairs):
    hyp, ref = zip(*pairs)
    b = bleu(hyp, ref)
    assert 0.0 <= b <= 1.0
    assert bleu(hyp[::-1], ref[::-1]) == pytest.approx(b)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(slot_items, slot_items), min_size=1, max_size=5), slot_items)
def test_f1_monotone_in_correct_predictions(pairs, extra):
    pred, orac = map(list, zip(*pairs))
    before = f1_counts(pred, orac)
    after = f1_counts(pred + [extra], orac + [extra])
    assert after.f1 >= before.f1 - 1e-12
    wrong = BeliefState({"loc": "boston"}) if extra.inform.get("loc") != "boston" else BeliefState({"loc": "seattle"})
    worse = f1_counts(pred + [wrong], orac + [BeliefState()])
    assert worse.correct == before.correct and worse.oracle == before.oracle


def test_f1_counts_add():
    assert F1Counts(1, 2, 3) + F1Counts(1, 1, 1) == F1Counts(2, 3, 4)


def test_aggregate_single_and_pair():
    one = EvalReport(0.5, 0.6, 2.0)
    agg = aggregate([one])
    assert (agg.bleu, agg.entity_f1, agg.epochs, agg.n_seeds) == (0.5, 0.6, 2.0, 1)
    assert agg.std == {"bleu": 0.0, "entity_f1": 0.0, "epochs": 0.0}
    two = aggregate([EvalReport(0.4, 0.6), EvalReport(0.2, 0.8)])
    assert two.entity_f1 == pytest.approx(0.7)
    assert two.std["entity_f1"] == pytest.approx(0.1)
    assert two.epochs is None and two.n_seeds == 2
    with pytest.raises(ValueError):
        aggregate([])


def test_report_json_round_trip_and_table():
    r = EvalReport(0.25, 0.5, 3.0, {"movie": {"bleu": 0.25}}, 2, {"bleu": 0.1}, 10)
    assert EvalReport.from_json(r.to_json()) == r
    table = format_table({"daml/adapt_9": r})
    assert "daml/adapt_9" in table and "25.0 +/- 10.0" in table


@pytest.fixture(scope="module")
def untrained():
    doms = domain_table(["restaurant", "movie"])
    corpus = [d for name, (spec, kb) in doms.items() for d in generate_corpus(spec, kb, None, 2, 0)]
    vocab = build_vocab([corpus], [t for spec, _ in doms.values() for t in ontology_tokens(spec)])
    cfg = ModelConfig(emb_dim=6, hidden=6, dropout=0.0, max_belief_len=8, max_response_len=8)
    return init_params(len(vocab), cfg, np.random.default_rng(0)), corpus, vocab, cfg, doms


def test_evaluate_model_deterministic_and_consistent(untrained):
    params, corpus, vocab, cfg, doms = untrained
    a = evaluate_model(params, corpus, vocab, cfg, doms, batch_size=5)
    b = evaluate_model(params, corpus, vocab, cfg, doms, batch_size=64)
    assert a == b
    assert a.n_turns == len(dialogs_to_examples(corpus))
    assert sum(d["n_turns"] for d in a.per_domain.values()) == a.n_turns
    pooled = F1Counts()
    for d in a.per_domain.values():
        pooled = pooled + F1Counts(**d["f1_counts"])
    assert pooled.f1 == pytest.approx(a.entity_f1)
    assert 0 <= a.bleu <= 1 and 0 <= a.entity_f1 <= 1


def test_rollout_mode_scores_every_turn(untrained):
    params, corpus, vocab, cfg, doms = untrained
    r = evaluate_model(params, corpus, vocab, cfg, doms, rollout=True)
    assert r.n_turns == len(dialogs_to_examples(corpus))


def test_oracle_belief_mode_gives_perfect_f1(untrained):
    params, corpus, vocab, cfg, doms = untrained
    assert evaluate_model(params, corpus, vocab, cfg, doms, oracle_belief=True).entity_f1 == 1.0
