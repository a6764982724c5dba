"""Gating network: uniform start, convexity, gradient routing, freezing."""
import numpy as np
import pytest

from tarsmoe.errors import ConfigError, PairEvaluationError
from tarsmoe.experts import ScoreRange, SimilarityHead
from tarsmoe.features_io import FeatureRecord
from tarsmoe.gating import (
    ExpertSet,
    GateParams,
    build_evidence,
    gate_weights,
    moe_combine,
    moe_forward,
    moe_graph,
)
from tarsmoe.numerics import Rng, Tensor, grad_check
from tarsmoe.seq_expert import SeqExpertParams

R = ScoreRange()

LAYERS, FRAMES, D_AUDIO = 2, 3, 5
TOKENS, D_TEXT = 2, 4
WIDTH, HEADS, HIDDEN = 8, 2, 6
SIM_DIM = 6


def toy_experts(seed=0, with_seq=True) -> ExpertSet:
    rng = Rng(seed)
    sim = []
    for i in range(1, 4):
        head = SimilarityHead(Tensor([rng.uniform(0.5, 1.5)], requires_grad=True),
                              Tensor([rng.uniform(-0.5, 0.5)], requires_grad=True))
        sim.append((f"emb{i}", head))
    seq = None
    if with_seq:
        seq = SeqExpertParams.create(LAYERS, D_AUDIO, D_TEXT, WIDTH, HEADS, HIDDEN,
                                     0.0, rng.derive("seq"))
        seq.mlp_w2.data[...] = rng.uniform(-0.5, 0.5, seq.mlp_w2.shape)
    return ExpertSet(sim=sim, seq=seq)


def toy_record(seed=1) -> FeatureRecord:
    rng = Rng(seed)
    sim = {f"emb{i}": (rng.uniform(-1, 1, SIM_DIM), rng.uniform(-1, 1, SIM_DIM))
           for i in range(1, 4)}
    return FeatureRecord(
        pair_id=f"p{seed}",
        sim=sim,
        audio_layers=rng.uniform(-1, 1, (LAYERS, FRAMES, D_AUDIO)),
        text_seq=rng.uniform(-1, 1, (TOKENS, D_TEXT)),
    )


def toy_gate(g_in, n_experts, seed=0) -> GateParams:
    gate = GateParams.create(g_in, 8, n_experts, Rng(seed).derive("gate"))
    # non-trivial weights for tests that need a non-uniform mixture
    gate.w2.data[...] = Rng(seed + 1).uniform(-1, 1, gate.w2.shape)
    gate.b2.data[...] = Rng(seed + 2).uniform(-1, 1, gate.b2.shape)
    return gate


# ---------------------------------------------------------- gate weights


def test_fresh_gate_weights_are_exactly_uniform():
    for k in (2, 3, 4, 7):
        gate = GateParams.create(10, 16, k, Rng(3))
        for seed in range(5):
            w, _ = gate_weights(Rng(seed).uniform(-2, 2, 10), gate)
            assert np.array_equal(w, np.full(k, 1.0 / k))


def test_gate_weights_sum_to_one_and_stay_positive():
    for seed in range(100):
        gate = toy_gate(12, 4, seed)
        w, _ = gate_weights(Rng(seed + 50).uniform(-3, 3, 12), gate)
        assert abs(w.sum() - 1.0) < 1e-9
        assert (w > 0.0).all()


def test_gate_weights_reject_wrong_evidence_length():
    gate = GateParams.create(10, 8, 3, Rng(0))
    with pytest.raises(ConfigError, match="10"):
        gate_weights(np.zeros(9), gate)


def test_gate_gradients_match_finite_differences():
    gate = toy_gate(7, 3, seed=9)
    evidence = Rng(60).uniform(-1, 1, 7)
    probe = Rng(61).uniform(-1, 1, 3)
    tensors = list(gate.named("gate").values())

    def f():
        w, back = gate_weights(evidence, gate)
        return float(w @ probe), lambda: back(probe)

    assert grad_check(f, tensors) < 1e-6


def test_gate_evidence_gradient_matches_finite_differences():
    gate = toy_gate(7, 3, seed=10)
    evidence = Rng(62).uniform(-1, 1, 7)
    probe = Rng(63).uniform(-1, 1, 3)
    _, back = gate_weights(evidence, gate)
    analytic = back(probe)
    h = 1e-6
    for i in range(7):
        bumped = evidence.copy()
        bumped[i] += h
        up, _ = gate_weights(bumped, gate)
        bumped[i] -= 2 * h
        down, _ = gate_weights(bumped, gate)
        numeric = float((up - down) @ probe) / (2 * h)
        assert abs(analytic[i] - numeric) < 1e-6


# ----------------------------------------------------------- moe combine


def test_moe_combine_is_a_convex_average():
    rng = Rng(20)
    for _ in range(50):
        logits = rng.uniform(-2, 2, 4)
        e = np.exp(logits - logits.max())
        w = e / e.sum()
        s = rng.uniform(1, 10, 4)
        combined = moe_combine(w, s)
        assert s.min() - 1e-12 <= combined <= s.max() + 1e-12
        assert abs(combined - float(w @ s)) < 1e-15


# -------------------------------------------------------------- moe graph


def test_moe_graph_fields_are_consistent():
    experts = toy_experts()
    record = toy_record()
    g_in = experts.evidence_length(record)
    gate = toy_gate(g_in, experts.count, seed=4)
    pair = moe_forward(record, experts, gate, R, label=6.5)
    assert pair.pair_id == record.pair_id
    assert pair.label == 6.5
    assert list(pair.expert_scores) == ["emb1", "emb2", "emb3", "seq"]
    assert list(pair.gate_weights) == ["emb1", "emb2", "emb3", "seq"]
    w = np.array(list(pair.gate_weights.values()))
    s = np.array(list(pair.expert_scores.values()))
    assert abs(w.sum() - 1.0) < 1e-12
    assert abs(pair.moe_score - float(w @ s)) < 1e-12
    assert s.min() <= pair.moe_score <= s.max()
    assert all(R.s_min < v < R.s_max for v in s)


def test_evidence_layout_is_vectors_then_scores():
    experts = toy_experts()
    record = toy_record()
    from tarsmoe.gating import run_experts

    outputs, _, _ = run_experts(record, experts, R)
    evidence = build_evidence(outputs)
    assert evidence.shape == (experts.evidence_length(record),)
    # last K entries are the expert scores in order
    assert np.array_equal(evidence[-4:], [o.score for o in outputs])
    # the first blocks are the expert evidence vectors in order
    offset = 0
    for out in outputs:
        n = out.evidence.shape[0]
        assert np.array_equal(evidence[offset:offset + n], out.evidence)
        offset += n


def test_moe_backward_matches_finite_differences_everywhere():
    experts = toy_experts(seed=30)
    record = toy_record(seed=31)
    gate = toy_gate(experts.evidence_length(record), experts.count, seed=32)
    tensors = dict(gate.named("gate"))
    tensors.update(experts.named())

    def f():
        pair, _, back = moe_graph(record, experts, gate, R)
        return pair.moe_score, lambda: back(1.0)

    assert grad_check(f, list(tensors.values())) < 1e-4


def test_frozen_experts_receive_no_gradient():
    experts = toy_experts(seed=40)
    record = toy_record(seed=41)
    gate = toy_gate(experts.evidence_length(record), experts.count, seed=42)
    for t in experts.named().values():
        t.requires_grad = False
        t.zero_grad()
    for t in gate.named("gate").values():
        t.zero_grad()
    _, _, back = moe_graph(record, experts, gate, R)
    back(1.0)
    for name, t in experts.named().items():
        assert np.all(t.grad == 0.0), f"gradient leaked into frozen {name}"
    # the gate itself still learns
    assert any(np.any(t.grad != 0.0) for t in gate.named("gate").values())


def test_sim_only_expert_set_works_without_seq():
    experts = toy_experts(with_seq=False)
    record = toy_record()
    gate = GateParams.create(experts.evidence_length(record), 8, experts.count, Rng(1))
    pair = moe_forward(record, experts, gate, R)
    assert list(pair.expert_scores) == ["emb1", "emb2", "emb3"]
    assert abs(sum(pair.gate_weights.values()) - 1.0) < 1e-12


def test_expert_failures_name_the_pair_and_expert():
    experts = toy_experts(with_seq=False)
    record = toy_record(seed=50)
    record.sim["emb2"] = (np.zeros(SIM_DIM), record.sim["emb2"][1])
    gate = GateParams.create(experts.evidence_length(toy_record()), 8, 3, Rng(2))
    with pytest.raises(PairEvaluationError) as e:
        moe_forward(record, experts, gate, R)
    assert e.value.pair_id == "p50"
    assert e.value.expert == "emb2"


def test_gate_expert_count_mismatch_is_rejected():
    experts = toy_experts(with_seq=False)
    record = toy_record()
    gate = GateParams.create(experts.evidence_length(record), 8, 5, Rng(0))
    with pytest.raises(ConfigError, match="5"):
        moe_forward(record, experts, gate, R)
