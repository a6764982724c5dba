"""Encoder registry and the built-in deterministic encoders.

Which encoder produces each expert's features is configuration, not code:
the config JSON names a registered type per similarity expert plus one for
the sequence expert, and third-party adapters (for example around real
pretrained audio/text backbones) join by registering a factory under a new
type name. Every encoder publishes its embedding widths as attributes; the
pipeline reads dimensions from the loaded encoder, never from assumptions.

A similarity encoder must map audio and text into one shared space (equal
widths); the downstream scorer rejects mismatched pairs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioClip, layered_frames
from .errors import ConfigError
from .text import pooled_vector, text_key, token_matrix

Array = np.ndarray

DEFAULT_CONFIG = {
    "audio": {"frame": 1024, "hop": 512},
    "sim_experts": {
        "expert1": {"type": "spectral_hash", "dim": 384, "seed": 101},
        "expert2": {"type": "spectral_hash", "dim": 384, "seed": 202},
        "expert3": {"type": "spectral_hash", "dim": 512, "seed": 303},
    },
    "seq": {
        "type": "layered_spectral",
        "layers": 4,
        "audio_dim": 256,
        "text_dim": 256,
        "seed": 404,
    },
}


@dataclass(frozen=True)
class Frontend:
    """Shared spectral settings every built-in encoder reads from."""

    frame: int = 1024
    hop: int = 512

    @property
    def bins(self) -> int:
        return self.frame // 2 + 1


class SpectralHashEncoder:
    """Shared-space similarity encoder: seeded spectral projection for audio,
    hashed n-gram pooling for text, both of width ``dim``."""

    def __init__(self, dim: int, seed: int, frontend: Frontend):
        self.dim = dim
        self.seed = seed
        self.frontend = frontend
        rng = np.random.default_rng(seed)
        self._proj = rng.normal(size=(dim, frontend.bins)) / np.sqrt(frontend.bins)
        self._key = text_key(seed)

    def embed_audio(self, clip: AudioClip) -> Array:
        frames = clip.log_spectrum(self.frontend.frame, self.frontend.hop)
        return self._proj @ frames.mean(axis=0)

    def embed_text(self, text: str) -> Array:
        return pooled_vector(text, self.dim, self._key)


class LayeredSpectralEncoder:
    """Sequence encoder: per-layer projected spectra for audio (rank 3) and
    per-token hash embeddings for text (rank 2)."""

    def __init__(self, layers: int, audio_dim: int, text_dim: int, seed: int,
                 frontend: Frontend):
        self.layers = layers
        self.audio_dim = audio_dim
        self.text_dim = text_dim
        self.seed = seed
        self.frontend = frontend
        # one fresh generator per layer so matrices depend only on (seed, l)
        self._proj = [
            np.random.default_rng([seed, l]).normal(size=(audio_dim, frontend.bins))
            / np.sqrt(frontend.bins)
            for l in range(layers)
        ]
        self._key = text_key(seed)

    def encode_audio(self, clip: AudioClip) -> Array:
        frames = clip.log_spectrum(self.frontend.frame, self.frontend.hop)
        stack = layered_frames(frames, self.layers)
        out = np.empty((self.layers, frames.shape[0], self.audio_dim))
        for l in range(self.layers):
            out[l] = stack[l] @ self._proj[l].T
        return out

    def encode_text(self, text: str) -> Array:
        return token_matrix(text, self.text_dim, self._key)


# ------------------------------------------------------------------ registry

def _build_spectral_hash(name: str, cfg: dict, frontend: Frontend) -> SpectralHashEncoder:
    dim = _pos_int(cfg, "dim", f"sim_experts.{name}")
    seed = _any_int(cfg, "seed", f"sim_experts.{name}")
    _reject_unknown(cfg, {"type", "dim", "seed"}, f"sim_experts.{name}")
    return SpectralHashEncoder(dim, seed, frontend)


def _build_layered_spectral(name: str, cfg: dict, frontend: Frontend) -> LayeredSpectralEncoder:
    layers = _pos_int(cfg, "layers", name)
    audio_dim = _pos_int(cfg, "audio_dim", name)
    text_dim = _pos_int(cfg, "text_dim", name)
    seed = _any_int(cfg, "seed", name)
    _reject_unknown(cfg, {"type", "layers", "audio_dim", "text_dim", "seed"}, name)
    return LayeredSpectralEncoder(layers, audio_dim, text_dim, seed, frontend)


_SIM_FACTORIES = {"spectral_hash": _build_spectral_hash}
_SEQ_FACTORIES = {"layered_spectral": _build_layered_spectral}


def register_sim_encoder(type_name: str, factory) -> None:
    """factory(name, cfg_dict, frontend) -> object with dim/embed_audio/embed_text."""
    _SIM_FACTORIES[type_name] = factory


def register_seq_encoder(type_name: str, factory) -> None:
    """factory(name, cfg_dict, frontend) -> object with layers/audio_dim/text_dim/
    encode_audio/encode_text."""
    _SEQ_FACTORIES[type_name] = factory


@dataclass
class EncoderSet:
    """Every encoder the pipeline will run, keyed by output directory name."""

    frontend: Frontend
    sims: dict
    seq: object | None


def load_encoder_config(path: str | Path | None) -> dict:
    if path is None:
        return json.loads(json.dumps(DEFAULT_CONFIG))
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read encoder config {path}: {exc}") from exc
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"encoder config {path}: invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"encoder config {path}: expected a JSON object")
    return obj


def build_encoders(config: dict) -> EncoderSet:
    """Validate an encoder config dict and instantiate every encoder."""
    _reject_unknown(config, {"audio", "sim_experts", "seq"}, "encoder config")
    audio_cfg = config.get("audio", {})
    if not isinstance(audio_cfg, dict):
        raise ConfigError("encoder config: 'audio' must be an object")
    frame = _pos_int(audio_cfg, "frame", "audio") if "frame" in audio_cfg else 1024
    hop = _pos_int(audio_cfg, "hop", "audio") if "hop" in audio_cfg else 512
    _reject_unknown(audio_cfg, {"frame", "hop"}, "audio")
    frontend = Frontend(frame=frame, hop=hop)

    sim_cfg = config.get("sim_experts")
    if not isinstance(sim_cfg, dict) or not sim_cfg:
        raise ConfigError("encoder config: 'sim_experts' must be a non-empty object")
    sims = {}
    for name, cfg in sim_cfg.items():
        if not isinstance(cfg, dict):
            raise ConfigError(f"encoder config: sim_experts.{name} must be an object")
        type_name = cfg.get("type")
        if type_name not in _SIM_FACTORIES:
            raise ConfigError(
                f"sim_experts.{name}: unknown encoder type {type_name!r}; "
                f"registered: {', '.join(sorted(_SIM_FACTORIES))}"
            )
        sims[name] = _SIM_FACTORIES[type_name](name, cfg, frontend)

    seq_cfg = config.get("seq")
    seq = None
    if seq_cfg is not None:
        if not isinstance(seq_cfg, dict):
            raise ConfigError("encoder config: 'seq' must be an object or null")
        type_name = seq_cfg.get("type")
        if type_name not in _SEQ_FACTORIES:
            raise ConfigError(
                f"seq: unknown encoder type {type_name!r}; "
                f"registered: {', '.join(sorted(_SEQ_FACTORIES))}"
            )
        seq = _SEQ_FACTORIES[type_name]("seq", seq_cfg, frontend)
    return EncoderSet(frontend=frontend, sims=sims, seq=seq)


# ---------------------------------------------------------------- validation

def _pos_int(cfg: dict, key: str, where: str) -> int:
    val = cfg.get(key)
    if isinstance(val, bool) or not isinstance(val, int) or val < 1:
        raise ConfigError(f"{where}.{key}: expected a positive integer, got {val!r}")
    return val


def _any_int(cfg: dict, key: str, where: str) -> int:
    val = cfg.get(key)
    if isinstance(val, bool) or not isinstance(val, int):
        raise ConfigError(f"{where}.{key}: expected an integer, got {val!r}")
    return val


def _reject_unknown(cfg: dict, known: set, where: str) -> None:
    for key in cfg:
        if key not in known:
            raise ConfigError(f"{where}: unknown field {key!r}")
