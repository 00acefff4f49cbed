import numpy as np
import pytest

from metadial import autodiff as ad
from metadial.checkpoint import load_params, save_params
from metadial.model import ModelConfig, init_params


def test_round_trip_is_bit_exact(tmp_path):
    params = init_params(30, ModelConfig(emb_dim=6, hidden=5), np.random.default_rng(0))
    manifest = {"vocab": ["a", "b"], "lr": 0.003}
    save_params(tmp_path / "m.npz", params, manifest)
    loaded, man = load_params(tmp_path / "m.npz")
    assert man == manifest
    assert set(loaded) == set(params)
    for k in params:
        assert loaded[k].data.dtype == np.float32
        assert loaded[k].data.tobytes() == params[k].data.astype("<f4").tobytes()


def test_reserved_name_rejected(tmp_path):
    with pytest.raises(ValueError):
        save_params(tmp_path / "m.npz", {"__manifest__": ad.param(np.zeros(1))})
