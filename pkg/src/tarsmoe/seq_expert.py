"""The sequence expert: bidirectional cross-attention over frame features.

Layered audio frame features are blended with learnable layer weights and
projected to a shared width d; token-level text features are projected to
the same width. Two attention layers attend in both directions, each
attended sequence is max-pooled over time, the pooled halves are
concatenated, and a small MLP (tanh hidden, dropout in training) maps the
fused vector to a raw score that is squashed into the score range. The
fused vector doubles as the expert's gate evidence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptySequenceError, ValidationError
from .experts import ExpertOutput, ScoreRange, squash_grad, squash_to_range, aggregate_layers
from .features_io import FeatureRecord
from .numerics import (
    Array,
    MhaParams,
    Rng,
    Tensor,
    activation,
    affine,
    dropout,
    max_pool_time,
    multi_head_attention,
)


@dataclass
class SeqExpertParams:
    """All trainable state of the sequence expert."""

    alpha: Tensor           # (L,) layer-blend logits
    proj_a_w: Tensor        # (d_a, d)
    proj_a_b: Tensor
    proj_t_w: Tensor        # (d_t, d)
    proj_t_b: Tensor
    mha_at: MhaParams       # queries audio, keys/values text
    mha_ta: MhaParams       # queries text, keys/values audio
    mlp_w1: Tensor          # (2d, d_h)
    mlp_b1: Tensor
    mlp_w2: Tensor          # (d_h, 1)
    mlp_b2: Tensor
    dropout_p: float

    @classmethod
    def create(cls, layers: int, d_audio: int, d_text: int, d: int, heads: int,
               hidden: int, dropout_p: float, rng: Rng) -> "SeqExpertParams":
        """Seeded init: uniform +-1/sqrt(fan_in) weights, zero biases.

        The final MLP layer starts at zero so the raw score is 0 and the
        squashed score sits at the range midpoint.
        """
        def mat(fan_in: int, fan_out: int) -> Tensor:
            s = 1.0 / math.sqrt(fan_in)
            return Tensor(rng.uniform(-s, s, (fan_in, fan_out)), requires_grad=True)

        def zeros(*shape: int) -> Tensor:
            return Tensor(np.zeros(shape), requires_grad=True)

        return cls(
            alpha=zeros(layers),
            proj_a_w=mat(d_audio, d), proj_a_b=zeros(d),
            proj_t_w=mat(d_text, d), proj_t_b=zeros(d),
            mha_at=MhaParams.create(d, heads, rng),
            mha_ta=MhaParams.create(d, heads, rng),
            mlp_w1=mat(2 * d, hidden), mlp_b1=zeros(hidden),
            mlp_w2=zeros(hidden, 1), mlp_b2=zeros(1),
            dropout_p=dropout_p,
        )

    def named(self, prefix: str = "seq") -> dict[str, Tensor]:
        out = {
            f"{prefix}.alpha": self.alpha,
            f"{prefix}.proj_a.w": self.proj_a_w, f"{prefix}.proj_a.b": self.proj_a_b,
            f"{prefix}.proj_t.w": self.proj_t_w, f"{prefix}.proj_t.b": self.proj_t_b,
        }
        out.update(self.mha_at.named(f"{prefix}.mha_at"))
        out.update(self.mha_ta.named(f"{prefix}.mha_ta"))
        out.update({
            f"{prefix}.mlp.w1": self.mlp_w1, f"{prefix}.mlp.b1": self.mlp_b1,
            f"{prefix}.mlp.w2": self.mlp_w2, f"{prefix}.mlp.b2": self.mlp_b2,
        })
        return out

    @classmethod
    def from_arrays(cls, arrays: dict, heads: int, dropout_p: float,
                    prefix: str = "seq") -> "SeqExpertParams":
        from .errors import ConfigError

        def take(key: str) -> Tensor:
            full = f"{prefix}.{key}"
            if full not in arrays:
                raise ConfigError(f"checkpoint is missing parameter {full!r}")
            return Tensor(arrays[full], requires_grad=True)

        return cls(
            alpha=take("alpha"),
            proj_a_w=take("proj_a.w"), proj_a_b=take("proj_a.b"),
            proj_t_w=take("proj_t.w"), proj_t_b=take("proj_t.b"),
            mha_at=MhaParams.from_arrays(arrays, f"{prefix}.mha_at", heads),
            mha_ta=MhaParams.from_arrays(arrays, f"{prefix}.mha_ta", heads),
            mlp_w1=take("mlp.w1"), mlp_b1=take("mlp.b1"),
            mlp_w2=take("mlp.w2"), mlp_b2=take("mlp.b2"),
            dropout_p=dropout_p,
        )


def cross_fuse(audio: Tensor, text: Tensor, mha_at: MhaParams, mha_ta: MhaParams):
    """Attend both directions, max-pool each result, concatenate.

    audio (T_a, d), text (T_t, d) -> fused (2d,). backward(grad_fused)
    returns (grad_audio, grad_text).
    """
    if audio.shape[0] == 0:
        raise EmptySequenceError(f"cross_fuse: empty audio sequence, shape {audio.shape}")
    if text.shape[0] == 0:
        raise EmptySequenceError(f"cross_fuse: empty text sequence, shape {text.shape}")
    attended_a, back_at = multi_head_attention(audio, text, mha_at)
    attended_t, back_ta = multi_head_attention(text, audio, mha_ta)
    pooled_a, back_pool_a = max_pool_time(attended_a)
    pooled_t, back_pool_t = max_pool_time(attended_t)
    d = pooled_a.shape[0]
    fused = np.concatenate([pooled_a.data, pooled_t.data])

    def backward(grad_fused: Array):
        grad_fused = np.asarray(grad_fused, dtype=np.float64)
        g_att_a = back_pool_a(grad_fused[:d])
        g_att_t = back_pool_t(grad_fused[d:])
        ga_1, gt_1 = back_at(g_att_a)   # queries audio, keys/values text
        gt_2, ga_2 = back_ta(g_att_t)   # queries text, keys/values audio
        return ga_1 + ga_2, gt_1 + gt_2

    return fused, backward


def seq_expert_graph(record: FeatureRecord, params: SeqExpertParams,
                     score_range: ScoreRange, mode: str = "eval",
                     rng: Rng | None = None):
    """Full forward pass; backward(d_score, d_evidence) reaches every parameter.

    d_evidence (length 2d, optional) is the gradient arriving through the
    gate's view of the fused vector, which is also the MLP input.
    """
    if record.audio_layers is None or record.text_seq is None:
        raise ValidationError(
            f"pair {record.pair_id!r} lacks sequence features for the sequence expert"
        )
    h = Tensor(record.audio_layers)
    blended, back_agg = aggregate_layers(h, params.alpha)
    audio, back_pa = affine(blended, params.proj_a_w, params.proj_a_b)
    text, back_pt = affine(Tensor(record.text_seq), params.proj_t_w, params.proj_t_b)
    fused, back_fuse = cross_fuse(audio, text, params.mha_at, params.mha_ta)

    fused_t = Tensor(fused.reshape(1, -1))
    h1, back_m1 = affine(fused_t, params.mlp_w1, params.mlp_b1)
    h2, back_act = activation(h1, "tanh")
    h3, back_drop = dropout(h2, params.dropout_p, mode, rng)
    raw, back_m2 = affine(h3, params.mlp_w2, params.mlp_b2)
    z = float(raw.data[0, 0])
    score = squash_to_range(z, score_range)
    dz = squash_grad(z, score_range)
    out = ExpertOutput(score=score, evidence=fused)

    def backward(d_score: float, d_evidence: Array | None = None) -> None:
        g = back_m2(np.array([[d_score * dz]]))
        g = back_drop(g)
        g = back_act(g)
        g_fused = back_m1(g)[0]
        if d_evidence is not None:
            g_fused = g_fused + np.asarray(d_evidence, dtype=np.float64)
        g_audio, g_text = back_fuse(g_fused)
        back_pt(g_text)
        g_blended = back_pa(g_audio)
        back_agg(g_blended)

    return out, backward


def seq_expert_forward(record: FeatureRecord, params: SeqExpertParams,
                       score_range: ScoreRange, mode: str = "eval",
                       rng: Rng | None = None) -> ExpertOutput:
    out, _ = seq_expert_graph(record, params, score_range, mode, rng)
    return out
