"""Captions parsing and the end-to-end extraction pipeline."""
import json

import numpy as np
import pytest

from conftest import tone, write_wav
from mfv_extractor.encoders import build_encoders
from mfv_extractor.errors import ConfigError
from mfv_extractor.mfv import mfv_decode
from mfv_extractor.pipeline import ERROR_LOG, load_captions, run_extraction


def write_captions(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


# ---------------------------------------------------------------- captions

def test_load_captions_happy_path(tmp_path):
    path = write_captions(tmp_path / "c.jsonl", [
        {"pair_id": "a", "audio": "a.wav", "text": "x", "label": 5, "split": "dev"},
        {"pair_id": "b", "audio": "b.wav", "text": "y", "label": 2.5},
        {"pair_id": "c", "audio": "c.wav", "text": "z"},
    ])
    entries = load_captions(path)
    assert [e.pair_id for e in entries] == ["a", "b", "c"]
    # label present defaults split to train; absent label defaults to test
    assert [e.split for e in entries] == ["dev", "train", "test"]
    assert entries[0].label == 5.0 and entries[2].label is None


@pytest.mark.parametrize("row,fragment", [
    ({"audio": "a.wav", "text": "x"}, "missing or empty pair_id"),
    ({"pair_id": "", "audio": "a.wav", "text": "x"}, "missing or empty pair_id"),
    ({"pair_id": "a", "text": "x"}, "missing audio filename"),
    ({"pair_id": "a", "audio": "a.wav"}, "missing text"),
    ({"pair_id": "a", "audio": "a.wav", "text": "x", "label": "high"},
     "label must be a number"),
    ({"pair_id": "a", "audio": "a.wav", "text": "x", "label": True},
     "label must be a number"),
    ({"pair_id": "a", "audio": "a.wav", "text": "x", "split": "eval"},
     "expected one of"),
    ({"pair_id": "a", "audio": "a.wav", "text": "x", "split": "train"},
     "requires a label"),
    ({"pair_id": "a", "audio": "a.wav", "text": "x", "note": "hm"},
     "unknown field 'note'"),
])
def test_load_captions_rejects_bad_rows(tmp_path, row, fragment):
    path = write_captions(tmp_path / "c.jsonl", [row])
    with pytest.raises(ConfigError, match=fragment):
        load_captions(path)


def test_load_captions_rejects_duplicates_and_bad_json(tmp_path):
    path = write_captions(tmp_path / "c.jsonl", [
        {"pair_id": "a", "audio": "a.wav", "text": "x"},
        {"pair_id": "a", "audio": "b.wav", "text": "y"},
    ])
    with pytest.raises(ConfigError, match="duplicate pair_id"):
        load_captions(path)
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{broken\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_captions(bad)
    with pytest.raises(ConfigError, match="cannot read captions"):
        load_captions(tmp_path / "nope.jsonl")


# -------------------------------------------------------------- extraction

def test_extraction_writes_full_tree(two_pair_dataset, small_cfg, tmp_path):
    out = tmp_path / "feat"
    encoders = build_encoders(small_cfg)
    report = run_extraction(two_pair_dataset["audio_dir"],
                            two_pair_dataset["captions"], out, encoders)
    assert [e.pair_id for e in report.ok] == ["p01", "p02"]
    assert report.failed == []
    for pair in ("p01", "p02"):
        for name in ("expert1", "expert2", "expert3"):
            dim = encoders.sims[name].dim
            audio = mfv_decode((out / name / f"{pair}.audio.mfv").read_bytes())
            text = mfv_decode((out / name / f"{pair}.text.mfv").read_bytes())
            assert audio.shape == (dim,) and text.shape == (dim,)
        layers = mfv_decode((out / "seq" / f"{pair}.audio_layers.mfv").read_bytes())
        tokens = mfv_decode((out / "seq" / f"{pair}.text_seq.mfv").read_bytes())
        assert layers.ndim == 3 and layers.shape[0] == 3 and layers.shape[2] == 20
        assert tokens.ndim == 2 and tokens.shape[1] == 16
    assert not list(out.rglob("*.tmp"))
    assert not (out / ERROR_LOG).exists()


def test_manifest_rows_carry_split_and_label(two_pair_dataset, small_cfg, tmp_path):
    out = tmp_path / "feat"
    run_extraction(two_pair_dataset["audio_dir"], two_pair_dataset["captions"],
                   out, build_encoders(small_cfg))
    rows = [json.loads(line) for line in
            (out / "manifest.jsonl").read_text().splitlines()]
    assert rows == [
        {"label": 8.0, "pair_id": "p01", "split": "train"},
        {"label": 3.0, "pair_id": "p02", "split": "train"},
    ]


def test_extraction_deterministic_bytes(two_pair_dataset, small_cfg, tmp_path):
    outs = []
    for run in ("one", "two"):
        out = tmp_path / run
        run_extraction(two_pair_dataset["audio_dir"], two_pair_dataset["captions"],
                       out, build_encoders(small_cfg))
        outs.append({p.relative_to(out): p.read_bytes()
                     for p in sorted(out.rglob("*")) if p.is_file()})
    assert outs[0].keys() == outs[1].keys()
    for key in outs[0]:
        assert outs[0][key] == outs[1][key], key


def test_workers_do_not_change_output(two_pair_dataset, small_cfg, tmp_path):
    seq_out, par_out = tmp_path / "seq1", tmp_path / "par4"
    run_extraction(two_pair_dataset["audio_dir"], two_pair_dataset["captions"],
                   seq_out, build_encoders(small_cfg), workers=1)
    run_extraction(two_pair_dataset["audio_dir"], two_pair_dataset["captions"],
                   par_out, build_encoders(small_cfg), workers=4)
    seq_files = {p.relative_to(seq_out): p.read_bytes()
                 for p in sorted(seq_out.rglob("*")) if p.is_file()}
    par_files = {p.relative_to(par_out): p.read_bytes()
                 for p in sorted(par_out.rglob("*")) if p.is_file()}
    assert seq_files == par_files


def test_bad_pair_is_logged_and_skipped(two_pair_dataset, small_cfg, tmp_path):
    captions = write_captions(tmp_path / "c.jsonl", [
        {"pair_id": "good", "audio": "dog.wav", "text": "a dog", "label": 7.0},
        {"pair_id": "lost", "audio": "missing.wav", "text": "gone", "label": 1.0},
        {"pair_id": "mute", "audio": "dog.wav", "text": "   ", "label": 2.0},
    ])
    out = tmp_path / "feat"
    report = run_extraction(two_pair_dataset["audio_dir"], captions, out,
                            build_encoders(small_cfg))
    assert [e.pair_id for e in report.ok] == ["good"]
    assert [pair for pair, _ in report.failed] == ["lost", "mute"]
    log = (out / ERROR_LOG).read_text().splitlines()
    assert log[0].startswith("lost\t") and "cannot read audio" in log[0]
    assert log[1].startswith("mute\t") and "empty caption" in log[1]
    rows = [json.loads(line) for line in
            (out / "manifest.jsonl").read_text().splitlines()]
    assert [r["pair_id"] for r in rows] == ["good"]
    # the failed pairs left no feature files behind
    assert not list(out.rglob("lost*")) and not list(out.rglob("mute*"))


def test_silent_audio_fails_per_pair(two_pair_dataset, small_cfg, tmp_path):
    audio_dir = tmp_path / "audio"
    audio_dir.mkdir()
    write_wav(audio_dir / "quiet.wav", np.zeros(2000))
    write_wav(audio_dir / "loud.wav", tone(seconds=0.2))
    captions = write_captions(tmp_path / "c.jsonl", [
        {"pair_id": "q", "audio": "quiet.wav", "text": "nothing", "label": 1.0},
        {"pair_id": "l", "audio": "loud.wav", "text": "a tone", "label": 9.0},
    ])
    report = run_extraction(audio_dir, captions, tmp_path / "feat",
                            build_encoders(small_cfg))
    assert [e.pair_id for e in report.ok] == ["l"]
    assert report.failed[0][0] == "q" and "silent audio" in report.failed[0][1]


def test_workers_must_be_positive(two_pair_dataset, small_cfg, tmp_path):
    with pytest.raises(ConfigError, match="workers"):
        run_extraction(two_pair_dataset["audio_dir"], two_pair_dataset["captions"],
                       tmp_path / "feat", build_encoders(small_cfg), workers=0)
