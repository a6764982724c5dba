"""Two-phase training: experts first, then the gate over frozen experts.

Phase A fits each expert's own parameters against its own predictions.
Phase B freezes every expert parameter (bit-identical thereafter) and fits
only the gate; expert outputs are precomputed once since they can no
longer change. Both phases share one deterministic loop: seeded shuffling,
Adam updates, and model selection by best dev-split Spearman correlation,
with early stopping after ``patience`` epochs without improvement.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    ConfigError,
    FreezeContractError,
    NumericError,
    ParameterError,
    UndefinedCorrelationError,
)
from .experts import ScoreRange, SimilarityHead, similarity_expert_graph
from .features_io import Dataset, LoadedPair
from .gating import (
    ExpertSet,
    GateParams,
    build_evidence,
    gate_weights,
    moe_combine,
    run_experts,
)
from .losses import LossConfig, total_loss_grad
from .metrics import srcc
from .numerics import Array, Rng, Tensor
from .seq_expert import SeqExpertParams, seq_expert_graph

# selection metric assigned to an epoch whose dev predictions are constant
# (correlation undefined); below any real Spearman value
_UNDEFINED_METRIC = -1.1


@dataclass(frozen=True)
class ModelConfig:
    """Shape of the sequence expert and the gate."""

    width: int = 512          # shared attention width d
    heads: int = 8
    mlp_hidden: int = 256
    dropout: float = 0.1
    gate_hidden: int = 64

    def __post_init__(self):
        if self.width < 1 or self.heads < 1 or self.width % self.heads != 0:
            raise ConfigError(
                f"model.width {self.width} must be a positive multiple of "
                f"model.heads {self.heads}"
            )
        if self.mlp_hidden < 1 or self.gate_hidden < 1:
            raise ConfigError("model hidden sizes must be >= 1")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"model.dropout must be in [0, 1), got {self.dropout}")


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    batch_size: int = 16
    epochs: int = 50
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    pair_strategy: str = "all_in_batch"
    k_pairs: int | None = None
    patience: int = 10
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size must be >= 1, got {self.batch_size}")
        if self.loss.gamma > 0 and self.batch_size < 2:
            raise ConfigError(
                "train.batch_size must be >= 2 when the contrastive weight is positive"
            )
        if self.epochs < 1:
            raise ConfigError(f"train.epochs must be >= 1, got {self.epochs}")
        if self.lr < 0:
            raise ConfigError(f"train.lr must be >= 0, got {self.lr}")
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not (0.0 <= v < 1.0):
                raise ConfigError(f"train.{name} must be in [0, 1), got {v}")
        if self.pair_strategy not in ("all_in_batch", "random_k"):
            raise ConfigError(
                f"train.pair_strategy must be 'all_in_batch' or 'random_k', "
                f"got {self.pair_strategy!r}"
            )
        if self.pair_strategy == "random_k" and (self.k_pairs is None or self.k_pairs < 1):
            raise ConfigError("train.k_pairs must be >= 1 for the random_k strategy")
        if self.patience < 1:
            raise ConfigError(f"train.patience must be >= 1, got {self.patience}")


def sample_pairs(n: int, strategy: str = "all_in_batch", k: int | None = None,
                 rng: Rng | None = None) -> list[tuple[int, int]]:
    """Index pairs (i < j) over a batch of n samples."""
    if n < 0:
        raise ParameterError(f"sample_pairs: n must be >= 0, got {n}")
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    if strategy == "all_in_batch":
        return pairs
    if strategy == "random_k":
        if k is None or k < 1:
            raise ParameterError(f"sample_pairs: random_k needs k >= 1, got {k}")
        if k > len(pairs):
            raise ParameterError(
                f"sample_pairs: k={k} exceeds the {len(pairs)} distinct pairs of "
                f"a batch of {n}"
            )
        if rng is None:
            raise ParameterError("sample_pairs: random_k needs an rng")
        rng.shuffle(pairs)
        return pairs[:k]
    raise ConfigError(f"sample_pairs: unknown strategy {strategy!r}")


@dataclass
class ModelState:
    """Named parameters plus per-parameter frozen flags."""

    params: dict[str, Tensor]
    frozen: dict[str, bool] = field(default_factory=dict)

    def __post_init__(self):
        for name in self.params:
            self.frozen.setdefault(name, False)
            self.params[name].requires_grad = not self.frozen[name]

    def set_frozen(self, prefix: str, flag: bool) -> None:
        """Freeze/unfreeze every parameter whose name starts with prefix."""
        hit = False
        for name, tensor in self.params.items():
            if name == prefix or name.startswith(prefix + "."):
                self.frozen[name] = flag
                tensor.requires_grad = not flag
                hit = True
        if not hit:
            raise ConfigError(f"no parameter matches prefix {prefix!r}")

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def snapshot(self) -> dict[str, Array]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def restore(self, snap: dict[str, Array]) -> None:
        for name, data in snap.items():
            self.params[name].data[...] = data


class Adam:
    """Adam with bias correction; frozen parameters are never touched."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[str, Array] = {}
        self._v: dict[str, Array] = {}

    def step(self, state: ModelState) -> None:
        self.t += 1
        for name, tensor in state.params.items():
            if state.frozen.get(name, False):
                continue
            g = tensor.grad
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient on parameter {name!r}")
            m = self._m.setdefault(name, np.zeros_like(g))
            v = self._v.setdefault(name, np.zeros_like(g))
            m[...] = self.beta1 * m + (1.0 - self.beta1) * g
            v[...] = self.beta2 * v + (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1 ** self.t)
            v_hat = v / (1.0 - self.beta2 ** self.t)
            tensor.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainResult:
    history: list[dict]
    best_epoch: int
    best_metric: float


ForwardFn = Callable[[object, str, Rng | None], tuple[float, Callable[[float], None]]]


def _dev_srcc(items: Sequence[tuple[object, float]], forward: ForwardFn) -> float:
    preds = [forward(item, "eval", None)[0] for item, _ in items]
    labels = [label for _, label in items]
    try:
        return srcc(preds, labels)
    except UndefinedCorrelationError:
        return _UNDEFINED_METRIC


def _fit(train: list[tuple[object, float]], dev: list[tuple[object, float]],
         state: ModelState, forward: ForwardFn, cfg: TrainConfig, tag: str) -> TrainResult:
    """Shared training loop over opaque (item, label) samples.

    Model selection maximizes dev Spearman when the dev split has at least
    two labeled samples (the untrained initialization competes as epoch 0);
    otherwise it falls back to the lowest training loss.
    """
    if not train:
        raise ConfigError(f"{tag}: the train split is empty")
    rng = Rng(cfg.seed).derive(tag)
    shuffle_rng = rng.derive("shuffle")
    pair_rng = rng.derive("pairs")
    drop_rng = rng.derive("dropout")
    adam = Adam(cfg.lr, cfg.beta1, cfg.beta2)
    use_dev = len(dev) >= 2

    history: list[dict] = []
    best_epoch = 0
    best_metric = _dev_srcc(dev, forward) if use_dev else -math.inf
    best_snap = state.snapshot()

    order = list(range(len(train)))
    since_best = 0
    for epoch in range(1, cfg.epochs + 1):
        shuffle_rng.shuffle(order)
        loss_sum = 0.0
        batches = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            # a one-sample tail cannot form a contrastive pair; skip it
            if len(idx) < 2 and cfg.loss.gamma > 0:
                continue
            graphs = [forward(train[i][0], "train", drop_rng) for i in idx]
            preds = [g[0] for g in graphs]
            labels = [train[i][1] for i in idx]
            pair_idx = sample_pairs(len(idx), cfg.pair_strategy, cfg.k_pairs, pair_rng)
            loss, dpred = total_loss_grad(preds, labels, pair_idx, cfg.loss)
            state.zero_grads()
            for (_, back), d in zip(graphs, dpred):
                back(float(d))
            adam.step(state)
            loss_sum += loss
            batches += 1
        if batches == 0:
            raise ConfigError(f"{tag}: no trainable batch in an epoch of {len(train)} samples")
        train_loss = loss_sum / batches
        metric = _dev_srcc(dev, forward) if use_dev else -train_loss
        improved = metric > best_metric
        if improved:
            best_metric = metric
            best_epoch = epoch
            best_snap = state.snapshot()
            since_best = 0
        else:
            since_best += 1
        history.append({
            "epoch": epoch,
            "train_loss": train_loss,
            "dev_srcc": metric if use_dev and metric > _UNDEFINED_METRIC else None,
            "selected": improved,
        })
        if since_best >= cfg.patience:
            break
    state.restore(best_snap)
    return TrainResult(history=history, best_epoch=best_epoch, best_metric=best_metric)


def _labeled(pairs: Sequence[LoadedPair]) -> list[tuple[LoadedPair, float]]:
    out = []
    for p in pairs:
        if p.entry.label is None:
            raise ConfigError(f"pair {p.entry.pair_id!r} has no label for training")
        out.append((p, p.entry.label))
    return out


def train_similarity_expert(name: str, dataset: Dataset, score_range: ScoreRange,
                            cfg: TrainConfig) -> tuple[SimilarityHead, TrainResult]:
    """Phase A for one embedding-similarity expert."""
    head = SimilarityHead.create()
    state = ModelState(params=head.named(f"sim.{name}"))

    def forward(pair: LoadedPair, mode: str, rng: Rng | None):
        out, back = similarity_expert_graph(pair.record, name, head, score_range)
        return out.score, back

    result = _fit(_labeled(dataset.split("train")), _labeled(dataset.split("dev")),
                  state, forward, cfg, f"train-expert:{name}")
    return head, result


def train_seq_expert(dataset: Dataset, model_cfg: ModelConfig, score_range: ScoreRange,
                     cfg: TrainConfig) -> tuple[SeqExpertParams, TrainResult]:
    """Phase A for the cross-attention sequence expert."""
    train_pairs = dataset.split("train")
    if not train_pairs:
        raise ConfigError("train split is empty")
    sample = train_pairs[0].record
    if sample.audio_layers is None or sample.text_seq is None:
        raise ConfigError("dataset lacks sequence features for the sequence expert")
    layers, _, d_audio = sample.audio_layers.shape
    d_text = sample.text_seq.shape[1]
    init_rng = Rng(cfg.seed).derive("init:seq")
    params = SeqExpertParams.create(
        layers, d_audio, d_text, model_cfg.width, model_cfg.heads,
        model_cfg.mlp_hidden, model_cfg.dropout, init_rng,
    )
    state = ModelState(params=params.named("seq"))

    def forward(pair: LoadedPair, mode: str, rng: Rng | None):
        out, back = seq_expert_graph(pair.record, params, score_range, mode, rng)
        return out.score, back

    result = _fit(_labeled(train_pairs), _labeled(dataset.split("dev")),
                  state, forward, cfg, "train-expert:seq")
    return params, result


def check_frozen(experts: ExpertSet) -> None:
    """Phase B requires every expert parameter to be frozen."""
    for name, tensor in experts.named().items():
        if tensor.requires_grad:
            raise FreezeContractError(
                f"expert parameter {name!r} is trainable; freeze all experts "
                f"before training the gate"
            )


def train_gate(experts: ExpertSet, dataset: Dataset, model_cfg: ModelConfig,
               score_range: ScoreRange, cfg: TrainConfig) -> tuple[GateParams, TrainResult]:
    """Phase B: fit the gate over frozen experts.

    Expert outputs per pair are constants under the freeze contract, so
    they are computed once up front and the loop touches only the gate.
    """
    check_frozen(experts)

    def cache(pairs: Sequence[LoadedPair]):
        items = []
        for pair, label in _labeled(pairs):
            outputs, _, _ = run_experts(pair.record, experts, score_range, "eval")
            items.append(((build_evidence(outputs),
                           np.array([o.score for o in outputs])), label))
        return items

    # gate dims come from the first record's evidence layout
    probe = dataset.split("train") or dataset.pairs
    if not probe:
        raise ConfigError("dataset is empty")
    g_in = experts.evidence_length(probe[0].record)
    gate = GateParams.create(g_in, model_cfg.gate_hidden, experts.count,
                             Rng(cfg.seed).derive("init:gate"))
    state = ModelState(params=gate.named("gate"))

    train_items = cache(dataset.split("train"))
    dev_items = cache(dataset.split("dev"))

    def forward(item, mode: str, rng: Rng | None):
        evidence, scores = item
        weights, back = gate_weights(evidence, gate)
        pred = moe_combine(weights, scores)

        def backward(d_final: float) -> None:
            back(d_final * scores)

        return pred, backward

    result = _fit(train_items, dev_items, state, forward, cfg, "train-gate")
    return gate, result
