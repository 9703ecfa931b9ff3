"""On-disk formats.

Tensors are stored as a file pair: ``<stem>.json`` holding
``{"dtype": "f32", "shape": [...], "byte_order": "little", ...extra}`` and
``<stem>.bin`` with the raw contiguous payload.

Checkpoints are a single zip container with ``manifest.json`` (config hash,
step count, tensor table) and one ``params/<name>.bin`` blob per tensor.
"""

from __future__ import annotations

import json
import logging
import zipfile
from pathlib import Path

import numpy as np
import torch

log = logging.getLogger(__name__)

_DTYPES = {"f32": "<f4", "f64": "<f8", "i64": "<i8", "u8": "|u1"}
_CODES = {np.dtype(v).str.replace("=", "<"): k for k, v in _DTYPES.items()}


def _stem(path) -> Path:
    path = Path(path)
    return path.with_suffix("") if path.suffix in (".json", ".bin") else path


def _code(arr: np.ndarray) -> str:
    if arr.dtype == np.bool_:
        return "u8"
    key = arr.dtype.newbyteorder("<").str
    if key not in _CODES:
        raise TypeError(f"unsupported dtype {arr.dtype}")
    return _CODES[key]


def save_tensor(path, array, dtype: str = "f32", **meta) -> Path:
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(np.asarray(array), dtype=_DTYPES[dtype])
    header = {"dtype": dtype, "shape": list(arr.shape), "byte_order": "little", **meta}
    stem.with_suffix(".bin").write_bytes(arr.tobytes())
    stem.with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True))
    return stem


def load_tensor(path, expect_hash: str | None = None) -> tuple[np.ndarray, dict]:
    stem = _stem(path)
    header = json.loads(stem.with_suffix(".json").read_text())
    if header.get("byte_order", "little") != "little":
        raise ValueError("only little-endian payloads are supported")
    arr = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype=_DTYPES[header["dtype"]])
    arr = arr.reshape(header["shape"]).copy()
    _check_hash(header, expect_hash, stem)
    return arr, header


def _check_hash(header: dict, expect_hash: str | None, where) -> None:
    if expect_hash is not None and header.get("config_hash") not in (None, expect_hash):
        log.warning(
            "config hash mismatch for %s: file %s, current %s",
            where,
            header.get("config_hash"),
            expect_hash,
        )


def save_checkpoint(path, state_dict: dict, config_hash: str, step: int, **extra) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table = {}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, tensor in state_dict.items():
            arr = tensor.detach().cpu().numpy() if torch.is_tensor(tensor) else np.asarray(tensor)
            code = _code(arr)
            arr = np.ascontiguousarray(arr, dtype=_DTYPES[code])
            table[name] = {"dtype": code, "shape": list(arr.shape)}
            zf.writestr(f"params/{name}.bin", arr.tobytes())
        manifest = {"config_hash": config_hash, "step": int(step), "tensors": table, **extra}
        zf.writestr("manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_checkpoint(path, expect_hash: str | None = None) -> tuple[dict, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    state = {}
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        for name, info in manifest["tensors"].items():
            arr = np.frombuffer(zf.read(f"params/{name}.bin"), dtype=_DTYPES[info["dtype"]])
            state[name] = torch.from_numpy(arr.reshape(info["shape"]).copy())
    _check_hash(manifest, expect_hash, path)
    return state, manifest


def write_jsonl(path, records) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    with Path(path).open() as fh:
        return [json.loads(line) for line in fh if line.strip()]
