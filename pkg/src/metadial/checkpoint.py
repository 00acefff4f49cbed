"""Parameter checkpoints: an ``.npz`` of little-endian float32 arrays plus a JSON manifest."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autodiff import Tensor

MANIFEST_KEY = "__manifest__"


def save_params(path, params: dict[str, Tensor], manifest: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {k: np.ascontiguousarray(p.data, dtype="<f4") for k, p in params.items()}
    if MANIFEST_KEY in arrays:
        raise ValueError(f"parameter name {MANIFEST_KEY!r} is reserved")
    arrays[MANIFEST_KEY] = np.array(json.dumps(manifest or {}, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_params(path) -> tuple[dict[str, Tensor], dict]:
    with np.load(Path(path), allow_pickle=False) as z:
        manifest = json.loads(str(z[MANIFEST_KEY]))
        params = {k: Tensor(z[k].astype(np.float32), requires_grad=True, name=k) for k in z.files if k != MANIFEST_KEY}
    return params, manifest
