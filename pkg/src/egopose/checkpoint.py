"""Versioned checkpoint container: JSON metadata plus named row-major arrays in one ``.npz``."""

from __future__ import annotations

import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np
import torch

CHECKPOINT_FORMAT = "egopose-checkpoint"
CHECKPOINT_VERSION = 1
_META_KEY = "__meta__"


class CheckpointError(ValueError):
    pass


def _to_array(t: torch.Tensor) -> np.ndarray:
    t = t.detach().cpu()
    if t.is_floating_point():
        return np.ascontiguousarray(t.numpy().astype(np.float32))
    return np.ascontiguousarray(t.numpy().astype(np.int64))


def _optimizer_arrays(opt_state: dict):
    arrays, meta = {}, {"param_groups": opt_state["param_groups"], "state": {}}
    for idx, st in opt_state["state"].items():
        entry = {}
        for k, v in st.items():
            if torch.is_tensor(v) and v.ndim > 0:
                arrays[f"optim/{idx}/{k}"] = _to_array(v)
            else:
                entry[k] = float(v)
        meta["state"][str(idx)] = entry
    return arrays, meta


def save_checkpoint(path, kind: str, config: dict, state_dict: dict, meta: dict = None,
                    optimizer_state: dict = None) -> Path:
    """Atomically write a checkpoint; float tensors are stored as float32."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"model/{k}": _to_array(v) for k, v in state_dict.items()}
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "config": config,
        "meta": meta or {},
    }
    if optimizer_state is not None:
        opt_arrays, header["optimizer"] = _optimizer_arrays(optimizer_state)
        arrays.update(opt_arrays)
    header["arrays"] = {k: {"shape": list(a.shape), "dtype": a.dtype.str} for k, a in arrays.items()}
    arrays[_META_KEY] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            np.savez(f, **arrays)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise
    return path


class Checkpoint:
    def __init__(self, header: dict, arrays: dict):
        self.header = header
        self.arrays = arrays

    @property
    def kind(self) -> str:
        return self.header["kind"]

    @property
    def config(self) -> dict:
        return self.header["config"]

    @property
    def meta(self) -> dict:
        return self.header["meta"]

    def state_dict(self, prefix: str = "") -> dict:
        full = "model/" + prefix
        return {k[len(full):]: torch.from_numpy(v.copy()) for k, v in self.arrays.items() if k.startswith(full)}

    def optimizer_state(self):
        opt = self.header.get("optimizer")
        if opt is None:
            return None
        state = {}
        for idx, scalars in opt["state"].items():
            st = {k: torch.tensor(v) for k, v in scalars.items()}
            pre = f"optim/{idx}/"
            for k, v in self.arrays.items():
                if k.startswith(pre):
                    st[k[len(pre):]] = torch.from_numpy(v.copy())
            state[int(idx)] = st
        return {"state": state, "param_groups": opt["param_groups"]}


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    with np.load(path, allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files}
    if _META_KEY not in arrays:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    header = json.loads(arrays.pop(_META_KEY).tobytes().decode())
    if header.get("format") != CHECKPOINT_FORMAT or header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format/version in {path}")
    for k, entry in header["arrays"].items():
        if list(arrays[k].shape) != entry["shape"]:
            raise CheckpointError(f"array {k} has shape {arrays[k].shape}, header says {entry['shape']}")
    return Checkpoint(header, arrays)


def parameter_digest(module: torch.nn.Module) -> str:
    """SHA-256 over every parameter and buffer; equal digests mean bit-identical weights."""
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        buf = io.BytesIO()
        np.save(buf, t.detach().cpu().numpy(), allow_pickle=False)
        h.update(buf.getvalue())
    return h.hexdigest()
