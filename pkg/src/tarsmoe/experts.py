"""Embedding-similarity experts and shared scoring primitives.

A similarity expert reads a pre-computed audio/text embedding pair from one
encoder's space, applies a trainable affine calibration to their cosine,
and squashes the result into the configured score range. Its evidence
vector for the gate is the pair of unit-normalized embeddings.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateVectorError, DimensionError
from .features_io import FeatureRecord
from .numerics import Array, Tensor, softmax

# tanh reaches 1.0 exactly in float64 near |z| ~ 19.1; clamping the squash
# input keeps every score strictly inside the range.
_SQUASH_CLIP = 18.0


@dataclass(frozen=True)
class ScoreRange:
    """Closed target interval for relevance scores."""

    s_min: float = 1.0
    s_max: float = 10.0

    def __post_init__(self):
        if not (self.s_min < self.s_max):
            raise ConfigError(
                f"score range requires s_min < s_max, got [{self.s_min}, {self.s_max}]"
            )

    @property
    def mid(self) -> float:
        return self.s_min + (self.s_max - self.s_min) / 2.0


def squash_to_range(z: float, score_range: ScoreRange) -> float:
    """s_min + (s_max - s_min) * (tanh(z) + 1) / 2, strictly inside the range."""
    zc = min(max(z, -_SQUASH_CLIP), _SQUASH_CLIP)
    return score_range.s_min + (score_range.s_max - score_range.s_min) * (
        math.tanh(zc) + 1.0
    ) / 2.0


def squash_grad(z: float, score_range: ScoreRange) -> float:
    """d squash / dz; zero in the clipped saturation region."""
    if not (-_SQUASH_CLIP < z < _SQUASH_CLIP):
        return 0.0
    t = math.tanh(z)
    return (score_range.s_max - score_range.s_min) * 0.5 * (1.0 - t * t)


def unit(v: Array) -> Array:
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise DegenerateVectorError("cannot normalize a zero-norm vector")
    return v / norm


def cosine(u: Array, v: Array) -> float:
    """Cosine similarity clamped into [-1, 1]; zero-norm inputs are an error."""
    if u.shape != v.shape:
        raise DimensionError(f"cosine: shape mismatch {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise DegenerateVectorError(
            f"cosine: zero-norm vector (|u|={nu}, |v|={nv})"
        )
    c = float(np.dot(u, v) / (nu * nv))
    return min(1.0, max(-1.0, c))


@dataclass
class SimilarityHead:
    """Trainable affine calibration a*cos + b for one similarity expert."""

    a: Tensor
    b: Tensor

    @classmethod
    def create(cls) -> "SimilarityHead":
        return cls(Tensor([1.0], requires_grad=True), Tensor([0.0], requires_grad=True))

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.a": self.a, f"{prefix}.b": self.b}

    @classmethod
    def from_arrays(cls, arrays: dict, prefix: str) -> "SimilarityHead":
        for key in (f"{prefix}.a", f"{prefix}.b"):
            if key not in arrays:
                raise ConfigError(f"checkpoint is missing parameter {key!r}")
        return cls(Tensor(arrays[f"{prefix}.a"], requires_grad=True),
                   Tensor(arrays[f"{prefix}.b"], requires_grad=True))


@dataclass
class ExpertOutput:
    """One expert's score plus the evidence vector it hands to the gate."""

    score: float
    evidence: Array


def similarity_expert_graph(record: FeatureRecord, name: str, head: SimilarityHead,
                            score_range: ScoreRange):
    """Score one pair in expert ``name``'s embedding space.

    Returns (ExpertOutput, backward) where backward(d_score) accumulates
    into the head's a and b. The embeddings themselves are constants.
    """
    if name not in record.sim:
        raise ConfigError(
            f"pair {record.pair_id!r} has no features for expert {name!r}"
        )
    audio, text = record.sim[name]
    c = cosine(audio, text)
    z = float(head.a.data[0]) * c + float(head.b.data[0])
    score = squash_to_range(z, score_range)
    dz = squash_grad(z, score_range)
    evidence = np.concatenate([unit(audio), unit(text)])
    out = ExpertOutput(score=score, evidence=evidence)

    def backward(d_score: float) -> None:
        if head.a.requires_grad:
            head.a.grad[0] += d_score * dz * c
        if head.b.requires_grad:
            head.b.grad[0] += d_score * dz

    return out, backward


def similarity_expert_forward(record: FeatureRecord, name: str, head: SimilarityHead,
                              score_range: ScoreRange) -> ExpertOutput:
    out, _ = similarity_expert_graph(record, name, head, score_range)
    return out


def aggregate_layers(h: Tensor, alpha: Tensor):
    """Softmax-weighted sum of encoder layers. h (L, T, d), alpha (L,) -> (T, d).

    The output at every (t, j) is a convex combination of the layer values,
    so it stays inside their per-position hull.
    """
    if h.data.ndim != 3:
        raise DimensionError(f"aggregate_layers: need (L, T, d), got shape {h.shape}")
    if alpha.data.ndim != 1 or alpha.shape[0] != h.shape[0]:
        raise DimensionError(
            f"aggregate_layers: alpha shape {alpha.shape} does not match "
            f"{h.shape[0]} layers in {h.shape}"
        )
    w, softmax_back = softmax(alpha)
    out = Tensor(np.einsum("l,ltd->td", w.data, h.data))

    def backward(grad_out: Array) -> Array:
        grad_out = np.asarray(grad_out, dtype=np.float64)
        grad_w = np.einsum("td,ltd->l", grad_out, h.data)
        softmax_back(grad_w)
        grad_h = w.data[:, None, None] * grad_out[None, :, :]
        if h.requires_grad:
            h.grad += grad_h
        return grad_h

    return out, backward
