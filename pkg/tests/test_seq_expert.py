"""Cross-attention sequence expert: invariances, init behavior, gradients."""
import numpy as np
import pytest

from tarsmoe.errors import ValidationError
from tarsmoe.experts import ScoreRange
from tarsmoe.features_io import FeatureRecord
from tarsmoe.numerics import Rng, grad_check
from tarsmoe.seq_expert import SeqExpertParams, seq_expert_forward, seq_expert_graph

R = ScoreRange()

# toy dims keep the finite-difference sweeps fast
LAYERS, FRAMES, D_AUDIO = 2, 3, 5
TOKENS, D_TEXT = 2, 4
WIDTH, HEADS, HIDDEN = 8, 2, 6


def toy_params(seed=0, dropout=0.0) -> SeqExpertParams:
    return SeqExpertParams.create(LAYERS, D_AUDIO, D_TEXT, WIDTH, HEADS, HIDDEN,
                                  dropout, Rng(seed).derive("init:seq"))


def toy_record(seed=1) -> FeatureRecord:
    rng = Rng(seed)
    return FeatureRecord(
        pair_id="p",
        audio_layers=rng.uniform(-1, 1, (LAYERS, FRAMES, D_AUDIO)),
        text_seq=rng.uniform(-1, 1, (TOKENS, D_TEXT)),
    )


def test_untrained_expert_scores_the_range_midpoint():
    # the final readout layer starts at zero, so z = 0 exactly
    out = seq_expert_forward(toy_record(), toy_params(), R)
    assert out.score == R.mid
    assert out.evidence.shape == (2 * WIDTH,)


def test_score_stays_inside_the_range():
    params = toy_params()
    # push the readout away from zero to leave the midpoint
    params.mlp_w2.data[...] = Rng(9).uniform(-3, 3, params.mlp_w2.shape)
    params.mlp_b2.data[...] = 2.0
    for seed in range(10):
        out = seq_expert_forward(toy_record(seed), params, R)
        assert R.s_min < out.score < R.s_max


def test_duplicating_audio_frames_leaves_the_score_unchanged():
    params = toy_params()
    params.mlp_w2.data[...] = Rng(10).uniform(-1, 1, params.mlp_w2.shape)
    record = toy_record(3)
    doubled = FeatureRecord(
        pair_id="p",
        audio_layers=np.repeat(record.audio_layers, 2, axis=1),
        text_seq=record.text_seq,
    )
    a = seq_expert_forward(record, params, R)
    b = seq_expert_forward(doubled, params, R)
    assert abs(a.score - b.score) < 1e-9
    assert np.abs(a.evidence - b.evidence).max() < 1e-9


def test_duplicating_text_tokens_leaves_the_score_unchanged():
    params = toy_params()
    params.mlp_w2.data[...] = Rng(11).uniform(-1, 1, params.mlp_w2.shape)
    record = toy_record(4)
    doubled = FeatureRecord(
        pair_id="p",
        audio_layers=record.audio_layers,
        text_seq=np.repeat(record.text_seq, 2, axis=0),
    )
    a = seq_expert_forward(record, params, R)
    b = seq_expert_forward(doubled, params, R)
    assert abs(a.score - b.score) < 1e-9


def test_all_gradients_match_finite_differences():
    params = toy_params(seed=5)
    # non-zero readout so the score path carries signal
    params.mlp_w2.data[...] = Rng(12).uniform(-0.5, 0.5, params.mlp_w2.shape)
    params.mlp_b2.data[...] = 0.1
    record = toy_record(6)
    tensors = list(params.named("seq").values())

    def f():
        out, back = seq_expert_graph(record, params, R)
        return out.score, lambda: back(1.0)

    assert grad_check(f, tensors) < 1e-4


def test_evidence_gradient_path_matches_finite_differences():
    params = toy_params(seed=7)
    params.mlp_w2.data[...] = Rng(13).uniform(-0.5, 0.5, params.mlp_w2.shape)
    record = toy_record(8)
    probe = Rng(14).uniform(-1, 1, 2 * WIDTH)
    tensors = list(params.named("seq").values())

    def f():
        out, back = seq_expert_graph(record, params, R)
        value = out.score + float(probe @ out.evidence)
        return value, lambda: back(1.0, probe)

    assert grad_check(f, tensors) < 1e-4


def test_eval_is_deterministic_and_train_dropout_is_seeded():
    params = toy_params(dropout=0.5)
    record = toy_record(9)
    a = seq_expert_forward(record, params, R)
    b = seq_expert_forward(record, params, R)
    assert a.score == b.score
    t1 = seq_expert_forward(record, params, R, mode="train", rng=Rng(42))
    t2 = seq_expert_forward(record, params, R, mode="train", rng=Rng(42))
    assert t1.score == t2.score


def test_missing_sequence_features_raise():
    record = FeatureRecord(pair_id="p")
    with pytest.raises(ValidationError, match="p"):
        seq_expert_graph(record, toy_params(), R)


def test_round_trip_through_named_arrays_preserves_the_forward():
    params = toy_params(seed=15)
    params.mlp_w2.data[...] = Rng(16).uniform(-1, 1, params.mlp_w2.shape)
    record = toy_record(17)
    arrays = {name: t.data.copy() for name, t in params.named("seq").items()}
    rebuilt = SeqExpertParams.from_arrays(arrays, heads=HEADS, dropout_p=0.0)
    a = seq_expert_forward(record, params, R)
    b = seq_expert_forward(record, rebuilt, R)
    assert a.score == b.score
    assert np.array_equal(a.evidence, b.evidence)
