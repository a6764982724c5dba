"""Shared fixtures: tiny PCM WAV files and a 2-pair captioned dataset."""
import json
import wave
from pathlib import Path

import numpy as np
import pytest


def write_wav(path, signal, rate=8000, width=2, channels=1):
    """Write a float signal in [-1, 1] as PCM WAV at the given sample width."""
    signal = np.asarray(signal, dtype=np.float64)
    if channels > 1 and signal.ndim == 1:
        signal = np.stack([signal] * channels, axis=1)
    flat = signal.reshape(-1)
    if width == 1:
        data = (np.clip(flat, -1, 1) * 127 + 128).astype(np.uint8).tobytes()
    elif width == 2:
        data = (np.clip(flat, -1, 1) * 32767).astype("<i2").tobytes()
    elif width == 3:
        vals = (np.clip(flat, -1, 1) * ((1 << 23) - 1)).astype(np.int64)
        vals = np.where(vals < 0, vals + (1 << 24), vals)
        b = np.empty((vals.shape[0], 3), dtype=np.uint8)
        b[:, 0] = vals & 0xFF
        b[:, 1] = (vals >> 8) & 0xFF
        b[:, 2] = (vals >> 16) & 0xFF
        data = b.tobytes()
    elif width == 4:
        data = (np.clip(flat, -1, 1) * ((1 << 31) - 1)).astype("<i4").tobytes()
    else:
        raise ValueError(f"unsupported width {width}")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(channels)
        wf.setsampwidth(width)
        wf.setframerate(rate)
        wf.writeframes(data)


def tone(seconds=0.5, rate=8000, freq=440.0, amp=0.6):
    t = np.arange(int(seconds * rate)) / rate
    return amp * np.sin(2 * np.pi * freq * t)


def noise(seconds=0.5, rate=8000, seed=0, amp=0.4):
    rng = np.random.default_rng(seed)
    return amp * rng.uniform(-1, 1, int(seconds * rate))


@pytest.fixture(scope="session")
def small_cfg():
    """Encoder config scaled down so tests stay fast."""
    return {
        "audio": {"frame": 256, "hop": 128},
        "sim_experts": {
            "expert1": {"type": "spectral_hash", "dim": 24, "seed": 101},
            "expert2": {"type": "spectral_hash", "dim": 24, "seed": 202},
            "expert3": {"type": "spectral_hash", "dim": 32, "seed": 303},
        },
        "seq": {"type": "layered_spectral", "layers": 3, "audio_dim": 20,
                "text_dim": 16, "seed": 404},
    }


@pytest.fixture(scope="session")
def two_pair_dataset(tmp_path_factory, small_cfg):
    """Audio dir + captions for two labeled train pairs, plus the config file."""
    root = tmp_path_factory.mktemp("twopair")
    audio_dir = root / "audio"
    audio_dir.mkdir()
    write_wav(audio_dir / "dog.wav", tone(freq=330.0) + noise(seed=1, amp=0.1))
    write_wav(audio_dir / "rain.wav", noise(seed=2))
    captions = root / "captions.jsonl"
    rows = [
        {"pair_id": "p01", "audio": "dog.wav",
         "text": "a dog barks twice in a quiet yard", "label": 8.0, "split": "train"},
        {"pair_id": "p02", "audio": "rain.wav",
         "text": "heavy rain on a tin roof", "label": 3.0, "split": "train"},
    ]
    captions.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    cfg_path = root / "encoders.json"
    cfg_path.write_text(json.dumps(small_cfg), encoding="utf-8")
    return {"root": root, "audio_dir": audio_dir, "captions": captions,
            "config": cfg_path}
