import numpy as np
import pytest

from metadial.corpus_io import (
    PAD, RESERVED, EmbeddingError, Vocab, build_vocab, collate, corpus_tokens, dialogs_to_examples,
    load_embeddings, make_batches, ontology_tokens,
)
from metadial.schema import BeliefState, MatchIndicator, generate_kb, load_domain, parse_belief
from metadial.simdial import Dialog, Turn, generate_corpus
from metadial.text import detokenize, tokenize

from test_simdial import APPENDIX

RESTAURANT = load_domain("restaurant")
CORPUS = generate_corpus(RESTAURANT, generate_kb(RESTAURANT, 100, 0), None, 10, 0)


def test_single_dialog_vocab():
    d = Dialog("restaurant", 0, (Turn(("hi",), (), (), BeliefState(), MatchIndicator.NO_MATCH),))
    v = build_vocab([[d]])
    assert v.tokens == (*RESERVED, "hi")
    assert v.id(PAD) == 0


def test_vocab_bijection_and_unk():
    v = build_vocab([CORPUS])
    assert all(v.id(v.token(i)) == i for i in range(len(v)))
    assert v.token(v.id("never-seen-word")) == "<unk>"


def test_vocab_extension_is_id_stable():
    v = build_vocab([CORPUS])
    movie = load_domain("movie")
    target = generate_corpus(movie, generate_kb(movie, 100, 0), None, 3, 0)
    ext = v.extend(corpus_tokens(target) + ontology_tokens(movie))
    assert len(ext) > len(v)
    assert ext.tokens[: len(v)] == v.tokens
    assert all(t in ext for t in ontology_tokens(movie))


def test_build_vocab_rejects_empty():
    with pytest.raises(ValueError):
        build_vocab([])


def test_vocab_save_load(tmp_path):
    v = build_vocab([CORPUS])
    v.save(tmp_path / "v.txt")
    assert Vocab.load(tmp_path / "v.txt").tokens == v.tokens


def test_empty_embedding_file(tmp_path):
    v = build_vocab([CORPUS])
    path = tmp_path / "e.txt"
    path.write_text("")
    mat, stats = load_embeddings(path, v, dim=50, rng=np.random.default_rng(0))
    assert mat.shape == (len(v), 50)
    assert stats.coverage == 0.0
    assert np.all(np.abs(mat) <= 0.08)


def test_embedding_row_copied_exactly(tmp_path):
    v = build_vocab([CORPUS])
    vec = np.random.default_rng(3).normal(size=4)
    path = tmp_path / "e.txt"
    path.write_text("seattle " + " ".join(repr(float(x)) for x in vec) + "\nbroken line here\nzzz 1 2 3 4\n")
    mat, stats = load_embeddings(path, v, dim=4)
    np.testing.assert_array_equal(mat[v.id("seattle")], vec)
    assert stats.found == 1 and stats.malformed == 1
    assert 0 < stats.coverage < 1


def test_embedding_dimension_mismatch(tmp_path):
    path = tmp_path / "e.txt"
    path.write_text("seattle 1 2 3\n")
    with pytest.raises(EmbeddingError):
        load_embeddings(path, build_vocab([CORPUS]), dim=50)


def test_one_example_per_turn_with_empty_first_context():
    for d in CORPUS:
        ex = dialogs_to_examples([d])
        assert len(ex) == len(d.turns)
        assert ex[0].prev_belief == () and ex[0].prev_response == ()
        assert ex[0].encoder_tokens() == ["<eos_b>", "<eos_r>", *d.turns[0].user, "<eos_u>"]
        for prev, cur in zip(ex, ex[1:]):
            assert cur.prev_belief == prev.target_belief[:-1]
            assert cur.prev_response == prev.target_response[:-1]


def test_appendix_turn_7_requests_price():
    ex = dialogs_to_examples([APPENDIX], RESTAURANT)
    assert len(ex) == 9
    assert ex[7].target_belief == ("<inf>", "seattle", "indian", "<req>", "price", "<eos_b>")


def test_target_belief_parses_back():
    for ex in dialogs_to_examples(CORPUS):
        assert parse_belief(ex.target_belief, RESTAURANT) == (ex.belief, 0)


def test_detokenize_round_trip_on_generated_text():
    for d in CORPUS:
        for t in d.turns:
            for toks in (t.user, t.sys_delex, t.sys_lex):
                text = detokenize(toks)
                assert detokenize(tokenize(text)) == text


def test_batches_33_to_32_and_1():
    ex = dialogs_to_examples(CORPUS)[:33]
    v = build_vocab([CORPUS])
    sizes = [len(b) for b in make_batches(ex, v, 32, seed=0)]
    assert sizes == [32, 1]


def test_same_seed_same_order():
    ex = dialogs_to_examples(CORPUS)
    v = build_vocab([CORPUS])
    a = [b.enc_ids.tolist() for b in make_batches(ex, v, 8, seed=5)]
    b = [b.enc_ids.tolist() for b in make_batches(ex, v, 8, seed=5)]
    c = [b.enc_ids.tolist() for b in make_batches(ex, v, 8, seed=6)]
    assert a == b and a != c
    assert sum(len(x) for x in a) == len(ex)


def test_collate_masks_and_shift():
    ex = dialogs_to_examples(CORPUS[:1])[:3]
    v = build_vocab([CORPUS])
    b = collate(ex, v)
    for i, e in enumerate(ex):
        n = len(e.encoder_tokens())
        assert b.enc_mask[i].sum() == n
        assert np.all(b.enc_ids[i, n:] == 0)
        lo, hi = e.user_span()
        assert v.decode(b.enc_ids[i, lo:hi]) == list(e.user)
        assert b.user_mask[i].sum() == len(e.user)
        nb = len(e.target_belief)
        assert v.token(b.bspan_in[i, 0]) == "<go>"
        np.testing.assert_array_equal(b.bspan_in[i, 1:nb], b.bspan_out[i, : nb - 1])
        nr = len(e.target_response)
        np.testing.assert_array_equal(b.resp_in[i, : nr - 1], b.resp_out[i, : nr - 1])
        assert b.match[i] == e.match.index
    assert b.n_target_tokens == sum(len(e.target_belief) + len(e.target_response) for e in ex)
