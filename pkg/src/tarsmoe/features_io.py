"""Feature files, manifests, and per-pair feature resolution.

MFV1 is the on-disk tensor format used everywhere features or parameters
are serialized:

    offset 0   magic ``MFV1`` (4 bytes)
    offset 4   rank, u8, 1 <= rank <= 3
    offset 5   rank dims, u32 little-endian, each >= 1
    then       prod(dims) float32 little-endian values, row-major

The file length must equal 4 + 1 + 4*rank + 4*prod(dims) exactly. Values
are float32 on disk and widened to float64 in memory; nothing in this
module ever substitutes defaults for missing or malformed data.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimensionError,
    FeatureShapeError,
    FormatError,
    ManifestParseError,
    MissingFeatureError,
    NonFiniteFeatureError,
    ValidationError,
)

MAGIC = b"MFV1"
SPLITS = ("train", "dev", "test")

Array = np.ndarray


def mfv_encode(values: Array) -> bytes:
    """Serialize an array of rank 1..3 to MFV1 bytes (float32 payload)."""
    arr = np.asarray(values, dtype=np.float64)
    # asarray first: ascontiguousarray silently promotes rank 0 to rank 1
    if arr.ndim < 1 or arr.ndim > 3:
        raise DimensionError(f"MFV1 holds rank 1..3, got rank {arr.ndim} shape {arr.shape}")
    arr = np.ascontiguousarray(arr)
    if any(d < 1 for d in arr.shape):
        raise DimensionError(f"MFV1 dims must all be >= 1, got shape {arr.shape}")
    header = MAGIC + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.astype("<f4").tobytes(order="C")


def mfv_decode(blob: bytes, base_offset: int = 0, name: str = "buffer") -> Array:
    """Parse MFV1 bytes to a float64 array; errors name the byte offset.

    base_offset shifts reported offsets when the blob is embedded inside a
    larger container file.
    """

    def off(rel: int) -> int:
        return base_offset + rel

    if len(blob) < 5:
        raise FormatError(
            f"{name}: truncated header, {len(blob)} bytes at offset {off(0)}", off(0)
        )
    if blob[:4] != MAGIC:
        raise FormatError(
            f"{name}: bad magic {blob[:4]!r} at offset {off(0)}, expected {MAGIC!r}", off(0)
        )
    rank = blob[4]
    if not (1 <= rank <= 3):
        raise FormatError(f"{name}: rank {rank} at offset {off(4)} outside 1..3", off(4))
    dims_end = 5 + 4 * rank
    if len(blob) < dims_end:
        raise FormatError(
            f"{name}: truncated dim list at offset {off(5)}, "
            f"need {dims_end} bytes, have {len(blob)}",
            off(5),
        )
    dims = struct.unpack(f"<{rank}I", blob[5:dims_end])
    for i, d in enumerate(dims):
        if d < 1:
            raise FormatError(
                f"{name}: dim[{i}] = {d} at offset {off(5 + 4 * i)} must be >= 1",
                off(5 + 4 * i),
            )
    count = 1
    for d in dims:
        count *= d
    expected = dims_end + 4 * count
    if len(blob) != expected:
        raise FormatError(
            f"{name}: payload length mismatch at offset {off(dims_end)}: "
            f"dims {dims} need {expected} bytes total, file has {len(blob)}",
            off(dims_end),
        )
    payload = np.frombuffer(blob, dtype="<f4", count=count, offset=dims_end)
    return payload.astype(np.float64).reshape(dims)


def write_mfv(path: str | Path, values: Array) -> None:
    Path(path).write_bytes(mfv_encode(values))


def read_mfv(path: str | Path) -> Array:
    path = Path(path)
    return mfv_decode(path.read_bytes(), name=str(path))


@dataclass(frozen=True)
class ManifestEntry:
    pair_id: str
    split: str
    label: float | None = None


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    """Parse a JSONL manifest; train/dev entries must carry a label."""
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read manifest {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestParseError(f"{path}: line {lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise ManifestParseError(f"{path}: line {lineno}: expected a JSON object")
            pair_id = obj.get("pair_id")
            if not isinstance(pair_id, str) or not pair_id:
                raise ValidationError(f"{path}: line {lineno}: missing or empty pair_id")
            if pair_id in seen:
                raise ValidationError(f"{path}: line {lineno}: duplicate pair_id {pair_id!r}")
            seen.add(pair_id)
            split = obj.get("split")
            if split not in SPLITS:
                raise ValidationError(
                    f"{path}: line {lineno}: pair {pair_id!r} has split {split!r}, "
                    f"expected one of {SPLITS}"
                )
            label = obj.get("label")
            if label is not None and not isinstance(label, (int, float)):
                raise ValidationError(
                    f"{path}: line {lineno}: pair {pair_id!r} label must be a number"
                )
            if label is None and split in ("train", "dev"):
                raise ValidationError(
                    f"{path}: line {lineno}: pair {pair_id!r} in split {split!r} "
                    f"requires a label"
                )
            entries.append(
                ManifestEntry(pair_id, split, None if label is None else float(label))
            )
    return entries


@dataclass(frozen=True)
class FeatureLayout:
    """Which feature directories a dataset provides under its root."""

    sim_experts: tuple[str, ...] = ("expert1", "expert2", "expert3")
    include_seq: bool = True
    seq_dir: str = "seq"


@dataclass
class FeatureRecord:
    """All feature arrays for one pair, validated and widened to float64."""

    pair_id: str
    sim: dict[str, tuple[Array, Array]] = field(default_factory=dict)
    audio_layers: Array | None = None  # (L, T_a, d_a)
    text_seq: Array | None = None      # (T_t, d_t)


def _load_checked(path: Path, pair_id: str, rank: int, role: str) -> Array:
    if not path.is_file():
        raise MissingFeatureError(f"pair {pair_id!r}: missing {role} file {path}")
    arr = read_mfv(path)
    if arr.ndim != rank:
        raise FeatureShapeError(
            f"pair {pair_id!r}: {role} file {path} has rank {arr.ndim}, expected {rank}"
        )
    if not np.isfinite(arr).all():
        raise NonFiniteFeatureError(
            f"pair {pair_id!r}: {role} file {path} contains non-finite values"
        )
    return arr


def resolve_features(root: str | Path, entry: ManifestEntry, layout: FeatureLayout) -> FeatureRecord:
    """Load every feature file for one manifest entry, strictly validated."""
    root = Path(root)
    record = FeatureRecord(pair_id=entry.pair_id)
    for name in layout.sim_experts:
        base = root / name
        audio = _load_checked(
            base / f"{entry.pair_id}.audio.mfv", entry.pair_id, 1, f"{name} audio vector"
        )
        text = _load_checked(
            base / f"{entry.pair_id}.text.mfv", entry.pair_id, 1, f"{name} text vector"
        )
        if audio.shape != text.shape:
            raise FeatureShapeError(
                f"pair {entry.pair_id!r}: {name} audio width {audio.shape[0]} != "
                f"text width {text.shape[0]}"
            )
        record.sim[name] = (audio, text)
    if layout.include_seq:
        base = root / layout.seq_dir
        record.audio_layers = _load_checked(
            base / f"{entry.pair_id}.audio_layers.mfv", entry.pair_id, 3, "layered audio"
        )
        record.text_seq = _load_checked(
            base / f"{entry.pair_id}.text_seq.mfv", entry.pair_id, 2, "text sequence"
        )
    return record


@dataclass
class LoadedPair:
    entry: ManifestEntry
    record: FeatureRecord


@dataclass
class Dataset:
    pairs: list[LoadedPair]

    def split(self, name: str) -> list[LoadedPair]:
        return [p for p in self.pairs if p.entry.split == name]


def load_dataset(root: str | Path, manifest: str | Path, layout: FeatureLayout) -> Dataset:
    entries = load_manifest(manifest)
    pairs = [LoadedPair(e, resolve_features(root, e, layout)) for e in entries]
    return Dataset(pairs)
