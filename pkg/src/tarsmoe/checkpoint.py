"""Checkpoint container: a JSON index followed by one MFV1 block per parameter.

Layout of a ``.ckpt`` file:

    offset 0   magic ``MFC1`` (4 bytes)
    offset 4   u32 little-endian: byte length of the JSON index
    offset 8   the UTF-8 JSON index
    then       MFV1 blocks back to back, in index order

The index object holds ``seed``, the resolved ``config`` dict, a ``meta``
dict (expert names, attention heads, dropout, score range), and ``params``:
a list of ``{name, frozen, offset, length}`` sorted by name, with offsets
relative to the first byte after the index. Parameters are float32 in the
blocks (the MFV1 payload type) and widen to float64 on load.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .features_io import mfv_decode, mfv_encode
from .numerics import Array
from .training import ModelState

MAGIC = b"MFC1"


@dataclass
class Checkpoint:
    params: dict[str, Array]
    frozen: dict[str, bool]
    config: dict
    seed: int
    meta: dict


def save_checkpoint(path: str | Path, state: ModelState, config: dict, seed: int,
                    meta: dict) -> None:
    names = sorted(state.params)
    blocks = []
    entries = []
    offset = 0
    for name in names:
        tensor = state.params[name]
        # MFV1 holds rank >= 1; scalars are stored as length-1 vectors
        data = tensor.data if tensor.data.ndim >= 1 else tensor.data.reshape(1)
        block = mfv_encode(data)
        entries.append({
            "name": name,
            "frozen": bool(state.frozen.get(name, False)),
            "offset": offset,
            "length": len(block),
        })
        blocks.append(block)
        offset += len(block)
    index = {
        "format": "MFC1",
        "seed": int(seed),
        "config": config,
        "meta": meta,
        "params": entries,
    }
    index_bytes = json.dumps(index, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(index_bytes)))
        fh.write(index_bytes)
        for block in blocks:
            fh.write(block)


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}", 0) from exc
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise FormatError(
            f"{path}: not a checkpoint (bad magic at offset 0)", 0
        )
    (index_len,) = struct.unpack("<I", blob[4:8])
    if len(blob) < 8 + index_len:
        raise FormatError(f"{path}: truncated index at offset 8", 8)
    try:
        index = json.loads(blob[8:8 + index_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: invalid index JSON: {exc}", 8) from exc
    blocks_start = 8 + index_len
    params: dict[str, Array] = {}
    frozen: dict[str, bool] = {}
    for entry in index["params"]:
        name = entry["name"]
        start = blocks_start + entry["offset"]
        end = start + entry["length"]
        if end > len(blob):
            raise FormatError(
                f"{path}: parameter {name!r} block extends past end of file "
                f"(offset {start})", start
            )
        params[name] = mfv_decode(blob[start:end], base_offset=start,
                                  name=f"{path}:{name}")
        frozen[name] = bool(entry["frozen"])
    return Checkpoint(
        params=params,
        frozen=frozen,
        config=index.get("config", {}),
        seed=int(index.get("seed", 0)),
        meta=index.get("meta", {}),
    )


def read_param_block(path: str | Path, name: str) -> bytes:
    """Raw MFV1 bytes of one named parameter, for bit-level comparisons."""
    blob = Path(path).read_bytes()
    (index_len,) = struct.unpack("<I", blob[4:8])
    index = json.loads(blob[8:8 + index_len].decode("utf-8"))
    for entry in index["params"]:
        if entry["name"] == name:
            start = 8 + index_len + entry["offset"]
            return blob[start:start + entry["length"]]
    raise KeyError(f"{path}: no parameter {name!r} in checkpoint")
