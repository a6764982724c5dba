"""Similarity experts: cosine geometry, range squashing, layer blending."""
import math

import numpy as np
import pytest

from tarsmoe.errors import ConfigError, DegenerateVectorError, DimensionError
from tarsmoe.experts import (
    ScoreRange,
    SimilarityHead,
    aggregate_layers,
    cosine,
    similarity_expert_graph,
    squash_grad,
    squash_to_range,
    unit,
)
from tarsmoe.features_io import FeatureRecord
from tarsmoe.numerics import Rng, Tensor, grad_check, softmax

R = ScoreRange()  # [1, 10]

# frozen from mpmath at 50 digits: 1 + 9*(tanh(1)+1)/2
SQUASH_ONE = 8.927173701800942


def cosine_oracle(u, v):
    num = sum(float(a) * float(b) for a, b in zip(u, v))
    nu = math.sqrt(sum(float(a) ** 2 for a in u))
    nv = math.sqrt(sum(float(b) ** 2 for b in v))
    return num / (nu * nv)


# ----------------------------------------------------------- score range


def test_score_range_midpoint_and_validation():
    assert R.mid == 5.5
    assert ScoreRange(0.0, 1.0).mid == 0.5
    with pytest.raises(ConfigError):
        ScoreRange(5.0, 5.0)
    with pytest.raises(ConfigError):
        ScoreRange(10.0, 1.0)


def test_squash_hits_midpoint_at_zero():
    assert squash_to_range(0.0, R) == 5.5


def test_squash_frozen_value():
    assert abs(squash_to_range(1.0, R) - SQUASH_ONE) < 1e-12


def test_squash_is_monotone_and_strictly_inside_the_range():
    zs = np.linspace(-40, 40, 401)
    vals = [squash_to_range(float(z), R) for z in zs]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert all(1.0 < v < 10.0 for v in vals)
    # even absurd magnitudes stay strictly inside
    assert 1.0 < squash_to_range(-1e12, R) < squash_to_range(1e12, R) < 10.0


def test_squash_grad_matches_finite_differences():
    h = 1e-6
    for z in (-3.0, -0.7, 0.0, 0.4, 2.5):
        numeric = (squash_to_range(z + h, R) - squash_to_range(z - h, R)) / (2 * h)
        assert abs(squash_grad(z, R) - numeric) < 1e-8


def test_squash_grad_is_zero_past_the_saturation_clamp():
    assert squash_grad(25.0, R) == 0.0
    assert squash_grad(-25.0, R) == 0.0
    assert squash_grad(17.0, R) > 0.0


# --------------------------------------------------------------- cosine


def test_unit_normalizes_and_rejects_zero():
    v = unit(np.array([3.0, 4.0]))
    assert np.allclose(v, [0.6, 0.8])
    with pytest.raises(DegenerateVectorError):
        unit(np.zeros(4))


def test_cosine_matches_pure_python_oracle():
    rng = Rng(2)
    for _ in range(50):
        u = rng.uniform(-1, 1, 9)
        v = rng.uniform(-1, 1, 9)
        assert abs(cosine(u, v) - cosine_oracle(u, v)) < 1e-12


def test_cosine_of_special_configurations():
    u = np.array([1.0, 2.0, -3.0])
    assert cosine(u, u) == 1.0
    assert cosine(u, -u) == -1.0
    assert abs(cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0]))) < 1e-15


def test_cosine_is_invariant_to_positive_scaling():
    rng = Rng(3)
    for _ in range(20):
        u = rng.uniform(-1, 1, 5)
        v = rng.uniform(-1, 1, 5)
        a = rng.uniform(0.1, 100.0)
        b = rng.uniform(0.1, 100.0)
        assert abs(cosine(a * u, b * v) - cosine(u, v)) < 1e-9


def test_cosine_stays_clamped_to_unit_interval():
    # nearly parallel vectors can round past 1 without the clamp
    u = np.full(1000, 0.1)
    v = u * (1.0 + 1e-16)
    assert -1.0 <= cosine(u, v) <= 1.0


def test_cosine_rejects_mismatched_or_zero_inputs():
    with pytest.raises(DimensionError):
        cosine(np.ones(3), np.ones(4))
    with pytest.raises(DegenerateVectorError):
        cosine(np.zeros(3), np.ones(3))


# ----------------------------------------------------- similarity expert


def sim_record(audio, text, name="emb"):
    return FeatureRecord(pair_id="p", sim={name: (np.asarray(audio, dtype=np.float64),
                                                  np.asarray(text, dtype=np.float64))})


def test_similarity_head_starts_as_identity_calibration():
    head = SimilarityHead.create()
    assert head.a.data[0] == 1.0
    assert head.b.data[0] == 0.0


def test_similarity_expert_score_and_evidence():
    record = sim_record([2.0, 0.0], [2.0, 0.0])
    out, _ = similarity_expert_graph(record, "emb", SimilarityHead.create(), R)
    # cosine 1 through the identity head
    assert abs(out.score - SQUASH_ONE) < 1e-12
    assert np.allclose(out.evidence, [1.0, 0.0, 1.0, 0.0])
    assert out.evidence.shape == (4,)


def test_similarity_expert_gradients_match_finite_differences():
    rng = Rng(4)
    record = sim_record(rng.uniform(-1, 1, 6), rng.uniform(-1, 1, 6))
    head = SimilarityHead(Tensor([0.8], requires_grad=True),
                          Tensor([-0.3], requires_grad=True))

    def f():
        out, back = similarity_expert_graph(record, "emb", head, R)
        return out.score, lambda: back(1.0)

    assert grad_check(f, [head.a, head.b]) < 1e-6


def test_similarity_expert_requires_its_features():
    record = sim_record([1.0], [1.0], name="other")
    with pytest.raises(ConfigError, match="emb"):
        similarity_expert_graph(record, "emb", SimilarityHead.create(), R)


# -------------------------------------------------------- layer blending


def test_aggregate_layers_matches_softmax_weighted_loop():
    rng = Rng(5)
    h = Tensor(rng.uniform(-1, 1, (3, 4, 5)))
    alpha = Tensor(rng.uniform(-2, 2, 3))
    out, _ = aggregate_layers(h, alpha)
    w, _ = softmax(Tensor(alpha.data))
    want = np.zeros((4, 5))
    for layer in range(3):
        want += w.data[layer] * h.data[layer]
    assert np.abs(out.data - want).max() < 1e-12


def test_aggregate_layers_output_stays_in_the_layer_hull():
    rng = Rng(6)
    for _ in range(10):
        h = Tensor(rng.uniform(-5, 5, (4, 3, 2)))
        alpha = Tensor(rng.uniform(-3, 3, 4))
        out, _ = aggregate_layers(h, alpha)
        lo = h.data.min(axis=0) - 1e-12
        hi = h.data.max(axis=0) + 1e-12
        assert (out.data >= lo).all() and (out.data <= hi).all()


def test_aggregate_layers_gradients_match_finite_differences():
    rng = Rng(7)
    h = Tensor(rng.uniform(-1, 1, (3, 2, 4)), requires_grad=True)
    alpha = Tensor(rng.uniform(-1, 1, 3), requires_grad=True)
    probe = rng.uniform(-1, 1, (2, 4))

    def f():
        out, back = aggregate_layers(h, alpha)
        return float((out.data * probe).sum()), lambda: back(probe)

    assert grad_check(f, [h, alpha]) < 1e-6


def test_aggregate_layers_with_one_layer_is_identity():
    rng = Rng(8)
    h = Tensor(rng.uniform(-1, 1, (1, 3, 4)))
    out, _ = aggregate_layers(h, Tensor(np.zeros(1)))
    assert np.abs(out.data - h.data[0]).max() < 1e-15
