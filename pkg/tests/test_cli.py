import json

import numpy as np
import pytest
import yaml

from metadial.checkpoint import load_params
from metadial.cli import EXIT_CONFIG, EXIT_DATA, EXIT_EXISTS, EXIT_OK, main

from conftest import TINY


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = dict(TINY, paths={"data_dir": str(root / "data"), "checkpoint_dir": str(root / "ckpt"),
                            "report_dir": str(root / "reports")})
    path = root / "tiny.yaml"
    path.write_text(yaml.safe_dump(cfg))
    assert main(["gen-data", "--config", str(path), "--log-level", "WARNING"]) == EXIT_OK
    return root, str(path)


def test_gen_data_writes_manifest_and_refuses_overwrite(workspace):
    root, cfg = workspace
    manifest = json.loads((root / "data" / "manifest.json").read_text())
    assert manifest["seed"] == 0 and len(manifest["config_hash"]) == 16
    before = (root / "data" / "bus" / "train.jsonl").read_bytes()
    assert main(["gen-data", "--config", cfg]) == EXIT_EXISTS
    assert main(["gen-data", "--config", cfg, "--force"]) == EXIT_OK
    assert (root / "data" / "bus" / "train.jsonl").read_bytes() == before


def test_gen_data_single_adaptation_corpus(workspace, tmp_path):
    _, cfg = workspace
    assert main(["gen-data", "--config", cfg, "--dialogs", "1", "--out", str(tmp_path)]) == EXIT_OK
    lines = (tmp_path / "movie" / "adapt_1.jsonl").read_text().splitlines()
    assert len(lines) == 1


def test_train_adapt_eval_decode(workspace, capsys):
    root, cfg = workspace
    ck = root / "ckpt" / "m.npz"
    assert main(["train", "--config", cfg, "--epochs", "1", "--out", str(ck)]) == EXIT_OK
    params, manifest = load_params(ck)
    assert manifest["mode"] == "maml" and manifest["train_log"]["records"][0]["epoch"] == 0

    ad = root / "ckpt" / "m_a.npz"
    assert main(["adapt", "--config", cfg, "--checkpoint", str(ck), "--size", "1", "--lr", "0",
                 "--out", str(ad)]) == EXIT_OK
    adapted, am = load_params(ad)
    n = params["emb"].shape[0]
    for k, p in params.items():
        if p.shape == adapted[k].shape:
            np.testing.assert_array_equal(adapted[k].data, p.data)
    np.testing.assert_array_equal(adapted["emb"].data[:n], params["emb"].data)
    report = json.loads(ad.with_suffix(".json").read_text())
    assert report["adapt_size"] == 1 and report["epochs_used"] == 0
    assert am["vocab"][:n] == manifest["vocab"]

    out = root / "reports" / "e.json"
    capsys.readouterr()
    assert main(["eval", "--config", cfg, "--checkpoint", str(ad), "--out", str(out)]) == EXIT_OK
    assert "Entity F1" in capsys.readouterr().out
    rep = json.loads(out.read_text())["report"]
    assert 0 <= rep["entity_f1"] <= 1 and 0 <= rep["bleu"] <= 1

    ctx = root / "ctx.json"
    ctx.write_text(json.dumps({"domain": "movie", "user": "i want a comedy movie"}))
    assert main(["decode", "--config", cfg, "--checkpoint", str(ad), "--context", str(ctx)]) == EXIT_OK
    assert "belief span:" in capsys.readouterr().out


def test_bad_config_exits_2(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("model:\n  hiden: 3\n")
    assert main(["gen-data", "--config", str(bad)]) == EXIT_CONFIG
    assert main(["gen-data", "--set", "model.dropout=2"]) == EXIT_CONFIG
    assert main(["gen-data", "--set", "nonsense"]) == EXIT_CONFIG


def test_missing_data_exits_3(tmp_path):
    assert main(["train", "--data-dir", str(tmp_path / "none"), "--out", str(tmp_path / "x.npz")]) == EXIT_DATA
    assert main(["eval", "--checkpoint", str(tmp_path / "none.npz")]) == EXIT_DATA


def test_adapt_size_beyond_pool_exits_3(workspace, tmp_path):
    root, cfg = workspace
    ck = tmp_path / "m.npz"
    assert main(["train", "--config", cfg, "--mode", "transfer", "--epochs", "0", "--out", str(ck)]) == EXIT_OK
    assert main(["adapt", "--config", cfg, "--checkpoint", str(ck), "--size", "50"]) == EXIT_DATA
