"""Checkpoint container.

A checkpoint is an uncompressed ``.npz`` archive. Parameter arrays are stored
under ``param/<name>``, optimizer moments under ``optim/<key>``, and a JSON
document under ``__meta__`` carrying ``format_version``, the model config,
the tokenizer inventory and any training bookkeeping.
"""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: dict[str, np.ndarray], meta: dict, optim: dict[str, np.ndarray] | None = None) -> None:
    arrays = {f"param/{k}": np.asarray(v) for k, v in params.items()}
    for k, v in (optim or {}).items():
        arrays[f"optim/{k}"] = np.asarray(v)
    doc = dict(meta, format_version=FORMAT_VERSION)
    arrays["__meta__"] = np.frombuffer(json.dumps(doc, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        z = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"{path} is not a readable checkpoint ({exc})") from None
    if not hasattr(z, "files"):
        raise CheckpointError(f"{path} is not a checkpoint archive")
    with z:
        if "__meta__" not in z.files:
            raise CheckpointError(f"{path} is not a checkpoint (no metadata)")
        meta = json.loads(bytes(z["__meta__"]).decode())
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format_version {meta.get('format_version')!r}")
        params = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
        optim = {k[len("optim/"):]: z[k] for k in z.files if k.startswith("optim/")}
    return params, meta, optim
