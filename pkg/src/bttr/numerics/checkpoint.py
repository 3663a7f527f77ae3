"""Checkpoint container.

A checkpoint is an uncompressed ``.npz`` archive:

* ``__format__``: uint8 bytes of the string ``bttr-ckpt/1``
* ``__config__``: uint8 bytes of the ModelConfig as JSON
* ``__meta__``: uint8 bytes of a JSON object (vocab tokens, epoch, loss, ...)
* ``p/<dotted.path>``: one array per parameter or buffer, little-endian float32

Array shapes are carried by the npy headers inside the archive.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "bttr-ckpt/1"


def _text(s: str) -> np.ndarray:
    return np.frombuffer(s.encode("utf-8"), dtype=np.uint8)


def save_checkpoint(path, state: dict[str, np.ndarray], config_json: str, meta: dict | None = None) -> None:
    arrays = {"__format__": _text(FORMAT), "__config__": _text(config_json),
              "__meta__": _text(json.dumps(meta or {}, sort_keys=True))}
    for name, arr in state.items():
        arrays["p/" + name] = np.asarray(arr, dtype="<f4")
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict, dict]:
    """Return (state, config dict, meta dict)."""
    with np.load(Path(path), allow_pickle=False) as z:
        fmt = bytes(z["__format__"]).decode() if "__format__" in z.files else None
        if fmt != FORMAT:
            raise ValueError(f"{path}: unsupported checkpoint format {fmt!r}")
        config = json.loads(bytes(z["__config__"]).decode())
        meta = json.loads(bytes(z["__meta__"]).decode())
        state = {k[2:]: z[k].astype(np.float32) for k in z.files if k.startswith("p/")}
    return state, config, meta
