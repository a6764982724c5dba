"""Feature extraction for text-audio relevance scoring.

Turns a directory of PCM WAV files plus a captions JSONL into the MFV1
feature tree and manifest the relevance scorer consumes: pooled audio/text
embeddings per similarity expert and layered frame/token sequences for the
cross-attention expert.
"""
from .encoders import (
    DEFAULT_CONFIG,
    EncoderSet,
    Frontend,
    LayeredSpectralEncoder,
    SpectralHashEncoder,
    build_encoders,
    load_encoder_config,
    register_seq_encoder,
    register_sim_encoder,
)
from .errors import AudioError, ConfigError, ExtractorError, PairError, TextError
from .mfv import mfv_decode, mfv_encode, write_mfv_atomic
from .pipeline import CaptionEntry, ExtractReport, load_captions, run_extraction

__all__ = [
    "AudioError",
    "CaptionEntry",
    "ConfigError",
    "DEFAULT_CONFIG",
    "EncoderSet",
    "ExtractReport",
    "ExtractorError",
    "Frontend",
    "LayeredSpectralEncoder",
    "PairError",
    "SpectralHashEncoder",
    "TextError",
    "build_encoders",
    "load_captions",
    "load_encoder_config",
    "mfv_decode",
    "mfv_encode",
    "register_seq_encoder",
    "register_sim_encoder",
    "run_extraction",
    "write_mfv_atomic",
]

__version__ = "0.1.0"
