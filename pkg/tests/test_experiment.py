import json

import numpy as np
import pytest

from metadial.config import config_from_dict
from metadial.corpus_io import ontology_tokens
from metadial.experiment import (
    extend_for_target, generate_seed_data, initial_params, read_seed_data, run_experiment, run_seed,
    source_vocab, write_seed_data,
)
from metadial.schema import load_domain

from conftest import TINY

CFG = config_from_dict(TINY)


def test_seed_data_sizes_and_nesting(tmp_path):
    data = generate_seed_data(CFG, 0)
    assert set(data.source_train) == {"restaurant", "weather", "bus"}
    assert all(len(c) == 6 for c in data.source_train.values())
    assert data.adapt_set(1) == data.target_adapt[:1]
    with pytest.raises(ValueError):
        data.adapt_set(3)
    write_seed_data(data, tmp_path, CFG)
    back = read_seed_data(tmp_path, CFG)
    assert back.source_test == data.source_test and back.target_adapt == data.target_adapt
    # splits use disjoint dialog seeds
    seeds = [d.seed for c in (data.source_train["bus"], data.source_val["bus"], data.source_test["bus"]) for d in c]
    assert len(seeds) == len(set(seeds))


def test_vocab_extension_keeps_source_rows():
    data = generate_seed_data(CFG, 0)
    vocab = source_vocab(data)
    params = initial_params(CFG, vocab, 0)
    grown, ext = extend_for_target(params, vocab, CFG, data.adapt_set(2), 0)
    assert ext.tokens[: len(vocab)] == vocab.tokens
    assert all(t in ext for t in ontology_tokens(load_domain("movie")))
    np.testing.assert_array_equal(grown["emb"].data[: len(vocab)], params["emb"].data)
    assert grown["emb"].shape[0] == len(ext)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("exp")
    rep = run_experiment(CFG, [0], root / "reports", root / "ckpt")
    return root, rep


def test_single_seed_report_equals_run(tiny_run):
    root, rep = tiny_run
    assert not rep.failures and len(rep.per_seed) == 1
    single = rep.per_seed[0]
    expected = {"daml/in_domain", "daml/unadapted", "daml/adapt_1", "daml/adapt_2",
                "transfer/in_domain", "transfer/unadapted", "transfer/adapt_1"}
    assert set(rep.systems) == expected
    for name, r in rep.systems.items():
        assert r.entity_f1 == single.systems[name].entity_f1
        assert r.bleu == single.systems[name].bleu
        assert r.n_seeds == 1 and r.std["entity_f1"] == 0.0
    agg = json.loads((root / "reports" / "aggregate.json").read_text())
    assert agg["config_hash"] == CFG.hash() and agg["completed"] == 1


def test_identical_seed_gives_identical_report(tiny_run):
    _, rep = tiny_run
    again = run_seed(CFG, 0)
    for name, r in rep.per_seed[0].systems.items():
        assert again.systems[name].to_json() == r.to_json()


def test_resume_reuses_cached_seed(tiny_run):
    root, rep = tiny_run
    path = root / "reports" / "seed_0.json"
    stamp = path.stat().st_mtime_ns
    again = run_experiment(CFG, [0], root / "reports", root / "ckpt")
    assert path.stat().st_mtime_ns == stamp
    assert again.systems["daml/adapt_1"].entity_f1 == rep.systems["daml/adapt_1"].entity_f1
