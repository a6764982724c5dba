"""Batch extraction: (audio file, caption) pairs in, scorer-ready tree out.

Output layout under --out, identical to what the relevance scorer's
validate command expects:

    <out>/<expert>/<pair_id>.audio.mfv   rank-1 pooled audio embedding
    <out>/<expert>/<pair_id>.text.mfv    rank-1 pooled text embedding
    <out>/seq/<pair_id>.audio_layers.mfv rank-3 (layers, frames, dim)
    <out>/seq/<pair_id>.text_seq.mfv     rank-2 (tokens, dim)
    <out>/manifest.jsonl                 pair_id, split, label per line

Pairs fail independently: a bad pair is logged to extract_errors.log and
dropped from the manifest while the rest proceed. All feature arrays for a
pair are computed before any of its files are written, and each file is
written via rename, so a crash never leaves a manifest entry pointing at
partial features.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .audio import read_wav
from .encoders import EncoderSet
from .errors import ConfigError, PairError
from .mfv import write_mfv_atomic

SPLITS = ("train", "dev", "test")
ERROR_LOG = "extract_errors.log"


@dataclass(frozen=True)
class CaptionEntry:
    pair_id: str
    audio: str
    text: str
    split: str
    label: float | None


def load_captions(path: str | Path) -> list[CaptionEntry]:
    """Parse the captions JSONL; structural problems abort the whole run.

    Each line needs pair_id, audio, text. Optional: label (number) and
    split (train/dev/test). Split defaults to train when a label is
    present, test otherwise; train and dev entries must carry a label.
    """
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read captions {path}: {exc}") from exc
    entries: list[CaptionEntry] = []
    seen: set[str] = set()
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: line {lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise ConfigError(f"{path}: line {lineno}: expected a JSON object")
            pair_id = obj.get("pair_id")
            if not isinstance(pair_id, str) or not pair_id:
                raise ConfigError(f"{path}: line {lineno}: missing or empty pair_id")
            if pair_id in seen:
                raise ConfigError(f"{path}: line {lineno}: duplicate pair_id {pair_id!r}")
            seen.add(pair_id)
            audio = obj.get("audio")
            if not isinstance(audio, str) or not audio:
                raise ConfigError(
                    f"{path}: line {lineno}: pair {pair_id!r} missing audio filename"
                )
            text = obj.get("text")
            if not isinstance(text, str):
                raise ConfigError(f"{path}: line {lineno}: pair {pair_id!r} missing text")
            label = obj.get("label")
            if label is not None and (isinstance(label, bool)
                                      or not isinstance(label, (int, float))):
                raise ConfigError(
                    f"{path}: line {lineno}: pair {pair_id!r} label must be a number"
                )
            split = obj.get("split", "train" if label is not None else "test")
            if split not in SPLITS:
                raise ConfigError(
                    f"{path}: line {lineno}: pair {pair_id!r} has split {split!r}, "
                    f"expected one of {SPLITS}"
                )
            if label is None and split in ("train", "dev"):
                raise ConfigError(
                    f"{path}: line {lineno}: pair {pair_id!r} in split {split!r} "
                    f"requires a label"
                )
            for key in obj:
                if key not in ("pair_id", "audio", "text", "label", "split"):
                    raise ConfigError(
                        f"{path}: line {lineno}: pair {pair_id!r}: unknown field {key!r}"
                    )
            entries.append(CaptionEntry(
                pair_id, audio, text, split,
                None if label is None else float(label),
            ))
    return entries


def extract_pair(entry: CaptionEntry, audio_dir: Path, encoders: EncoderSet,
                 out_root: Path) -> None:
    """Compute every feature array for one pair, then write them all."""
    clip = read_wav(audio_dir / entry.audio)
    writes = []
    for name, enc in encoders.sims.items():
        audio_vec = enc.embed_audio(clip)
        text_vec = enc.embed_text(entry.text)
        base = out_root / name
        writes.append((base / f"{entry.pair_id}.audio.mfv", audio_vec))
        writes.append((base / f"{entry.pair_id}.text.mfv", text_vec))
    if encoders.seq is not None:
        base = out_root / "seq"
        writes.append((base / f"{entry.pair_id}.audio_layers.mfv",
                       encoders.seq.encode_audio(clip)))
        writes.append((base / f"{entry.pair_id}.text_seq.mfv",
                       encoders.seq.encode_text(entry.text)))
    for path, values in writes:
        write_mfv_atomic(path, values)


@dataclass
class ExtractReport:
    ok: list[CaptionEntry]
    failed: list[tuple[str, str]]  # (pair_id, message), captions order

    @property
    def split_counts(self) -> dict:
        counts = {s: 0 for s in SPLITS}
        for entry in self.ok:
            counts[entry.split] += 1
        return counts


def run_extraction(audio_dir: str | Path, captions: str | Path,
                   out_root: str | Path, encoders: EncoderSet,
                   workers: int = 1) -> ExtractReport:
    """Extract every captioned pair; failures are collected, not fatal."""
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")
    audio_dir = Path(audio_dir)
    out_root = Path(out_root)
    entries = load_captions(captions)
    for name in encoders.sims:
        (out_root / name).mkdir(parents=True, exist_ok=True)
    if encoders.seq is not None:
        (out_root / "seq").mkdir(parents=True, exist_ok=True)

    def work(entry: CaptionEntry):
        try:
            extract_pair(entry, audio_dir, encoders, out_root)
            return None
        except PairError as exc:
            return str(exc)

    if workers == 1:
        outcomes = [work(e) for e in entries]
    else:
        # pairs are independent and files are per-pair, so completion order
        # cannot change any output byte
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(work, entries))

    report = ExtractReport(ok=[], failed=[])
    for entry, err in zip(entries, outcomes):
        if err is None:
            report.ok.append(entry)
        else:
            report.failed.append((entry.pair_id, err))
    _write_manifest(out_root / "manifest.jsonl", report.ok)
    if report.failed:
        log = out_root / ERROR_LOG
        lines = [f"{pair_id}\t{msg}" for pair_id, msg in report.failed]
        log.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return report


def _write_manifest(path: Path, entries: list[CaptionEntry]) -> None:
    lines = []
    for entry in entries:
        row = {"pair_id": entry.pair_id, "split": entry.split}
        if entry.label is not None:
            row["label"] = entry.label
        lines.append(json.dumps(row, sort_keys=True))
    tmp = path.parent / (path.name + ".tmp")
    tmp.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    os.replace(tmp, path)
