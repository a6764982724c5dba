"""Hashed character n-gram text embeddings.

Each token is embedded as a signed bag of boundary-padded character
n-grams (n = 2..4) hashed into a fixed dimension with keyed blake2b, then
unit-normalized. Deterministic across processes and platforms; different
keys give effectively independent embedding spaces.
"""
from __future__ import annotations

import hashlib

import numpy as np

from .errors import TextError

Array = np.ndarray

_NGRAM_SIZES = (2, 3, 4)


def tokenize(text: str) -> list[str]:
    return [tok for tok in text.lower().split() if tok]


def _ngrams(token: str) -> list[str]:
    padded = "#" + token + "#"
    grams = []
    for n in _NGRAM_SIZES:
        grams.extend(padded[i: i + n] for i in range(len(padded) - n + 1))
    return grams


def token_vector(token: str, dim: int, key: bytes) -> Array:
    """Unit-norm signed hash embedding of one token."""
    vec = np.zeros(dim)
    for gram in _ngrams(token):
        digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=key).digest()
        h = int.from_bytes(digest, "little")
        sign = 1.0 if h & 1 else -1.0
        vec[(h >> 1) % dim] += sign
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise TextError(f"token {token!r} hashed to a zero vector")
    return vec / norm


def token_matrix(text: str, dim: int, key: bytes) -> Array:
    """(T, dim) per-token embeddings; empty captions are an error."""
    tokens = tokenize(text)
    if not tokens:
        raise TextError("empty caption")
    return np.stack([token_vector(tok, dim, key) for tok in tokens])


def pooled_vector(text: str, dim: int, key: bytes) -> Array:
    """Mean of token embeddings; rejects the degenerate exact-cancel case."""
    mat = token_matrix(text, dim, key)
    vec = mat.mean(axis=0)
    if float(np.linalg.norm(vec)) == 0.0:
        raise TextError("caption embeddings cancel to a zero vector")
    return vec


def text_key(seed: int) -> bytes:
    """8-byte blake2b key derived from an integer seed."""
    return (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
