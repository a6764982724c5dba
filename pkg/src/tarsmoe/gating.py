"""Feature-aware gating network and the full mixture-of-experts forward.

The gate sees the concatenation of every expert's evidence vector followed
by all expert scores, runs a two-layer MLP (tanh hidden), and softmaxes the
logits into mixture weights. The final score is the weighted sum of expert
scores, so it always lies between the smallest and largest expert score.
The final gate layer starts at zero, which makes the initial weights
exactly uniform.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, PairEvaluationError, TarsMoeError
from .experts import (
    ExpertOutput,
    ScoreRange,
    SimilarityHead,
    similarity_expert_graph,
)
from .features_io import FeatureRecord
from .numerics import Array, Rng, Tensor, activation, affine, softmax
from .seq_expert import SeqExpertParams, seq_expert_graph

SEQ_EXPERT_NAME = "seq"


@dataclass
class GateParams:
    w1: Tensor  # (g_in, hidden)
    b1: Tensor
    w2: Tensor  # (hidden, n_experts)
    b2: Tensor

    @classmethod
    def create(cls, g_in: int, hidden: int, n_experts: int, rng: Rng) -> "GateParams":
        if g_in < 1 or hidden < 1 or n_experts < 1:
            raise ConfigError(
                f"gate dims must be positive, got g_in={g_in}, hidden={hidden}, "
                f"n_experts={n_experts}"
            )
        s = 1.0 / np.sqrt(g_in)
        return cls(
            w1=Tensor(rng.uniform(-s, s, (g_in, hidden)), requires_grad=True),
            b1=Tensor(np.zeros(hidden), requires_grad=True),
            # zero final layer: every expert starts with equal weight
            w2=Tensor(np.zeros((hidden, n_experts)), requires_grad=True),
            b2=Tensor(np.zeros(n_experts), requires_grad=True),
        )

    def named(self, prefix: str = "gate") -> dict[str, Tensor]:
        return {
            f"{prefix}.w1": self.w1, f"{prefix}.b1": self.b1,
            f"{prefix}.w2": self.w2, f"{prefix}.b2": self.b2,
        }

    @classmethod
    def from_arrays(cls, arrays: dict, prefix: str = "gate") -> "GateParams":
        def take(key: str) -> Tensor:
            full = f"{prefix}.{key}"
            if full not in arrays:
                raise ConfigError(f"checkpoint is missing parameter {full!r}")
            return Tensor(arrays[full], requires_grad=True)

        return cls(take("w1"), take("b1"), take("w2"), take("b2"))

    @property
    def g_in(self) -> int:
        return self.w1.shape[0]

    @property
    def n_experts(self) -> int:
        return self.w2.shape[1]


def gate_weights(evidence: Array, gate: GateParams):
    """Mixture weights for one pair. evidence (g_in,) -> weights (K,).

    backward(d_weights) accumulates into the gate parameters and returns
    the gradient w.r.t. the evidence vector.
    """
    evidence = np.asarray(evidence, dtype=np.float64)
    if evidence.ndim != 1 or evidence.shape[0] != gate.g_in:
        raise ConfigError(
            f"gate expects evidence of length {gate.g_in}, got shape {evidence.shape}"
        )
    ev = Tensor(evidence.reshape(1, -1), requires_grad=True)
    h1, back_a1 = affine(ev, gate.w1, gate.b1)
    h2, back_act = activation(h1, "tanh")
    logits, back_a2 = affine(h2, gate.w2, gate.b2)
    w, back_soft = softmax(logits)

    def backward(d_weights: Array) -> Array:
        g = back_soft(np.asarray(d_weights, dtype=np.float64).reshape(1, -1))
        g = back_a2(g)
        g = back_act(g)
        back_a1(g)
        return ev.grad[0].copy()

    return w.data[0].copy(), backward


def moe_combine(weights: Array, scores: Array) -> float:
    """Weighted sum of expert scores."""
    weights = np.asarray(weights, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    if weights.shape != scores.shape:
        raise ConfigError(
            f"moe_combine: {weights.shape[0] if weights.ndim else 0} weights for "
            f"{scores.shape[0] if scores.ndim else 0} scores"
        )
    return float(np.dot(weights, scores))


@dataclass
class ScoredPair:
    """Prediction record for one pair."""

    pair_id: str
    label: float | None
    expert_scores: dict[str, float]
    gate_weights: dict[str, float]
    moe_score: float


@dataclass
class ExpertSet:
    """The ordered collection of experts feeding one gate."""

    sim: list[tuple[str, SimilarityHead]]
    seq: SeqExpertParams | None = None

    @property
    def names(self) -> list[str]:
        out = [name for name, _ in self.sim]
        if self.seq is not None:
            out.append(SEQ_EXPERT_NAME)
        return out

    @property
    def count(self) -> int:
        return len(self.sim) + (1 if self.seq is not None else 0)

    def named(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for name, head in self.sim:
            params.update(head.named(f"sim.{name}"))
        if self.seq is not None:
            params.update(self.seq.named("seq"))
        return params

    def evidence_length(self, record: FeatureRecord) -> int:
        total = 0
        for name, _ in self.sim:
            if name not in record.sim:
                raise ConfigError(f"pair {record.pair_id!r} lacks features for {name!r}")
            total += 2 * record.sim[name][0].shape[0]
        if self.seq is not None:
            total += 2 * self.seq.proj_a_w.shape[1]
        return total + self.count


def build_evidence(outputs: list[ExpertOutput]) -> Array:
    """Concatenate all evidence vectors, then all scores, in expert order."""
    parts = [out.evidence for out in outputs]
    parts.append(np.array([out.score for out in outputs]))
    return np.concatenate(parts)


def run_experts(record: FeatureRecord, experts: ExpertSet, score_range: ScoreRange,
                mode: str = "eval", rng: Rng | None = None):
    """Forward every expert over one pair.

    Returns (outputs, backs, trainable_flags); any expert failure is
    re-raised with the pair id and expert name attached.
    """
    outputs: list[ExpertOutput] = []
    backs = []
    trainable_flags = []
    for name, head in experts.sim:
        try:
            out, back = similarity_expert_graph(record, name, head, score_range)
        except TarsMoeError as exc:
            raise PairEvaluationError(record.pair_id, name, exc) from exc
        outputs.append(out)
        backs.append(("sim", back))
        trainable_flags.append(head.a.requires_grad or head.b.requires_grad)
    if experts.seq is not None:
        try:
            out, back = seq_expert_graph(record, experts.seq, score_range, mode, rng)
        except TarsMoeError as exc:
            raise PairEvaluationError(record.pair_id, SEQ_EXPERT_NAME, exc) from exc
        outputs.append(out)
        backs.append(("seq", back))
        trainable_flags.append(
            any(t.requires_grad for t in experts.seq.named().values())
        )
    return outputs, backs, trainable_flags


def moe_graph(record: FeatureRecord, experts: ExpertSet, gate: GateParams,
              score_range: ScoreRange, mode: str = "eval", rng: Rng | None = None,
              label: float | None = None):
    """Run every expert and the gate over one pair.

    Returns (ScoredPair, outputs, backward). backward(d_final) propagates
    into the gate and into any expert whose parameters are trainable;
    frozen experts are left untouched.
    """
    outputs, expert_backs, trainable_flags = run_experts(
        record, experts, score_range, mode, rng
    )
    names = experts.names
    if gate.n_experts != len(outputs):
        raise ConfigError(
            f"gate was built for {gate.n_experts} experts, got {len(outputs)}"
        )
    evidence = build_evidence(outputs)
    weights, gate_back = gate_weights(evidence, gate)
    scores = np.array([out.score for out in outputs])
    final = moe_combine(weights, scores)
    pair = ScoredPair(
        pair_id=record.pair_id,
        label=label,
        expert_scores={n: float(s) for n, s in zip(names, scores)},
        gate_weights={n: float(w) for n, w in zip(names, weights)},
        moe_score=final,
    )

    def backward(d_final: float) -> None:
        d_weights = d_final * scores
        d_evidence = gate_back(d_weights)
        # split the evidence gradient back into per-expert pieces
        d_scores_direct = d_final * weights
        offset = 0
        ev_grads = []
        for out in outputs:
            n = out.evidence.shape[0]
            ev_grads.append(d_evidence[offset:offset + n])
            offset += n
        d_scores_evidence = d_evidence[offset:]
        for i, (kind, back) in enumerate(expert_backs):
            if not trainable_flags[i]:
                continue
            d_score = float(d_scores_direct[i] + d_scores_evidence[i])
            if kind == "sim":
                back(d_score)
            else:
                back(d_score, ev_grads[i])

    return pair, outputs, backward


def moe_forward(record: FeatureRecord, experts: ExpertSet, gate: GateParams,
                score_range: ScoreRange, mode: str = "eval",
                rng: Rng | None = None, label: float | None = None) -> ScoredPair:
    pair, _, _ = moe_graph(record, experts, gate, score_range, mode, rng, label)
    return pair
