"""Model checkpoints as a single ``.npz`` archive.

The archive holds every parameter array under a stable name plus a JSON
``__meta__`` entry describing the architecture, so a checkpoint can be
loaded without any other context. Arrays are stored raw, so a save/load
round trip is bit-exact.
"""
from __future__ import annotations

import dataclasses
import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .layers import LayerInit
from .network import Architecture, build_model, named_parameters

FORMAT = "lbbnn-checkpoint/1"


def architecture_to_dict(arch: Architecture) -> dict:
    return dataclasses.asdict(arch)


def architecture_from_dict(d: dict) -> Architecture:
    d = dict(d)
    d["hidden"] = tuple(d["hidden"])
    d["flow_hidden"] = tuple(d["flow_hidden"])
    d["init"] = LayerInit(**d["init"])
    return Architecture(**d)


def save_checkpoint(model, path, seed: int = 0, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"format": FORMAT, "architecture": architecture_to_dict(model.arch),
            "seed": int(seed), "extra": extra or {}}
    arrays = {"__meta__": np.array(json.dumps(meta, sort_keys=True))}
    arrays.update({name: p.data for name, p in named_parameters(model).items()})
    # Fixed member timestamps keep the archive byte-identical across reruns.
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)),
                        buf.getvalue())
    return path


def load_checkpoint(path):
    """Returns ``(model, meta)``."""
    with np.load(Path(path), allow_pickle=False) as archive:
        meta = json.loads(str(archive["__meta__"]))
        if meta.get("format") != FORMAT:
            raise ValueError(f"{path}: not an lbbnn checkpoint")
        model = build_model(architecture_from_dict(meta["architecture"]), seed=meta["seed"])
        params = named_parameters(model)
        stored = set(archive.files) - {"__meta__"}
        if stored != set(params):
            raise ValueError(f"{path}: parameter set does not match the architecture")
        for name, p in params.items():
            arr = archive[name]
            if arr.shape != p.data.shape:
                raise ValueError(f"{path}: shape mismatch for {name}")
            p.data[...] = arr
    return model, meta
