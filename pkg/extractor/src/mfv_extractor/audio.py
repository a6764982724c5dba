"""PCM WAV decoding and the spectral frontend shared by the built-in encoders.

Only uncompressed PCM WAV is supported (8/16/24/32-bit int, any channel
count; channels are averaged to mono). Frames are Hann-windowed log1p
magnitude spectra; short clips are zero-padded to one full frame so every
readable, non-silent file yields at least one frame.
"""
from __future__ import annotations

import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AudioError

Array = np.ndarray


def read_wav(path: str | Path) -> "AudioClip":
    """Decode a PCM WAV file to a mono float64 signal in [-1, 1]."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            n = wf.getnframes()
            raw = wf.readframes(n)
    except (OSError, wave.Error, EOFError) as exc:
        raise AudioError(f"cannot read audio {path}: {exc}") from exc
    if n == 0:
        raise AudioError(f"{path}: empty audio (0 frames)")
    if width == 1:
        # 8-bit WAV is unsigned with midpoint 128
        samples = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0
        scale = 128.0
    elif width == 2:
        samples = np.frombuffer(raw, dtype="<i2").astype(np.float64)
        scale = 32768.0
    elif width == 3:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3)
        val = b[:, 0].astype(np.int64) | (b[:, 1].astype(np.int64) << 8) | (
            b[:, 2].astype(np.int64) << 16)
        val = np.where(val >= 1 << 23, val - (1 << 24), val)
        samples = val.astype(np.float64)
        scale = float(1 << 23)
    elif width == 4:
        samples = np.frombuffer(raw, dtype="<i4").astype(np.float64)
        scale = float(1 << 31)
    else:
        raise AudioError(f"{path}: unsupported sample width {width} bytes")
    signal = samples.reshape(-1, channels).mean(axis=1) / scale
    if float(np.max(np.abs(signal))) == 0.0:
        raise AudioError(f"{path}: silent audio (all samples zero)")
    return AudioClip(signal=signal, rate=rate, source=str(path))


@dataclass
class AudioClip:
    """Decoded mono signal plus a memo of spectral frames per (frame, hop)."""

    signal: Array
    rate: int
    source: str = ""
    _frames: dict = field(default_factory=dict, repr=False)

    def log_spectrum(self, frame: int, hop: int) -> Array:
        """(T, frame//2 + 1) log1p magnitude frames, cached per settings."""
        key = (frame, hop)
        if key not in self._frames:
            self._frames[key] = spectral_frames(self.signal, frame, hop)
        return self._frames[key]


def spectral_frames(signal: Array, frame: int, hop: int) -> Array:
    if frame < 2 or hop < 1:
        raise AudioError(f"bad frame settings: frame {frame}, hop {hop}")
    x = np.asarray(signal, dtype=np.float64)
    if x.shape[0] < frame:
        x = np.concatenate([x, np.zeros(frame - x.shape[0])])
    count = 1 + (x.shape[0] - frame) // hop
    window = np.hanning(frame)
    rows = np.empty((count, frame // 2 + 1))
    for t in range(count):
        seg = x[t * hop: t * hop + frame] * window
        rows[t] = np.log1p(np.abs(np.fft.rfft(seg)))
    return rows


def layered_frames(frames: Array, layers: int) -> Array:
    """(L, T, bins) stack; layer l is a centered moving average of width 2l+1.

    Deeper layers see wider temporal context, so the stack carries
    progressively smoother views of the same spectrum.
    """
    if layers < 1:
        raise AudioError(f"layers must be >= 1, got {layers}")
    t_len = frames.shape[0]
    out = np.empty((layers,) + frames.shape)
    out[0] = frames
    for l in range(1, layers):
        half = l
        for t in range(t_len):
            lo = max(0, t - half)
            hi = min(t_len, t + half + 1)
            out[l, t] = frames[lo:hi].mean(axis=0)
    return out
