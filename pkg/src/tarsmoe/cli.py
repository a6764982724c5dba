"""Command line front end.

Subcommands:

    validate      check a feature directory + manifest, print a summary
    synth         generate a planted synthetic dataset
    train-expert  phase A: fit one expert, write a checkpoint
    train-gate    phase B: fit the gate over frozen expert checkpoints
    predict       score a split with a trained model, write JSONL
    evaluate      join predictions with labels, print the metric table
    ablate        retrain the gate over expert subsets, print a comparison

Exit codes: 0 success, 1 runtime or data failure, 2 usage or config error.
All commands are deterministic given the same inputs and seed.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import AppConfig, load_config
from .errors import ConfigError, TarsMoeError, ValidationError
from .experts import ScoreRange, SimilarityHead
from .features_io import FeatureLayout, load_dataset, load_manifest
from .gating import SEQ_EXPERT_NAME, ExpertSet, GateParams, ScoredPair, moe_forward
from .metrics import EvalReport, evaluate, format_report_table
from .numerics import Rng
from .seq_expert import SeqExpertParams
from .synth import SynthSpec, generate
from .training import (
    ModelState,
    TrainResult,
    train_gate,
    train_seq_expert,
    train_similarity_expert,
)

_SPLITS = ("train", "dev", "test")


def _parse_set(values: list[str]) -> dict:
    """--set train.lr=0.01 style overrides; values parse as JSON, else string."""
    out = {}
    for item in values:
        if "=" not in item:
            raise ConfigError(f"--set expects path=value, got {item!r}")
        path, raw = item.split("=", 1)
        try:
            out[path] = json.loads(raw)
        except json.JSONDecodeError:
            out[path] = raw
    return out


def _app_config(args) -> AppConfig:
    overrides = _parse_set(getattr(args, "set", []) or [])
    for flag, path in (("seed", "seed"), ("epochs", "train.epochs"),
                       ("batch_size", "train.batch_size"), ("lr", "train.lr"),
                       ("root", "data.root"), ("manifest", "data.manifest")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[path] = value
    return load_config(getattr(args, "config", None), overrides)


def _add_config_flags(p: argparse.ArgumentParser, data: bool = True) -> None:
    p.add_argument("--config", help="JSON config file (defaults apply without it)")
    p.add_argument("--set", action="append", metavar="PATH=VALUE", default=[],
                   help="override one config field, e.g. --set train.lr=0.01")
    p.add_argument("--seed", type=int, help="override the config seed")
    if data:
        p.add_argument("--root", help="feature directory root")
        p.add_argument("--manifest", help="manifest path (default <root>/manifest.jsonl)")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, help="override train.epochs")
    p.add_argument("--batch-size", type=int, dest="batch_size",
                   help="override train.batch_size")
    p.add_argument("--lr", type=float, help="override train.lr")


# ---------------------------------------------------------------- validate

def cmd_validate(args) -> int:
    cfg = _app_config(args)
    dataset = load_dataset(cfg.root, cfg.manifest, cfg.layout)
    counts = {s: len(dataset.split(s)) for s in _SPLITS}
    sample = dataset.pairs[0].record
    print(f"ok: {len(dataset.pairs)} pairs "
          f"(train {counts['train']}, dev {counts['dev']}, test {counts['test']})")
    for name in cfg.layout.sim_experts:
        audio, text = sample.sim[name]
        print(f"  {name}: audio dim {audio.shape[0]}, text dim {text.shape[0]}")
    if cfg.layout.include_seq:
        layers, frames, d_audio = sample.audio_layers.shape
        tokens, d_text = sample.text_seq.shape
        print(f"  seq: {layers} layers x {frames} frames x {d_audio} audio dims, "
              f"{tokens} tokens x {d_text} text dims")
    return 0


# ------------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    if args.noise is not None:
        try:
            noise = tuple(float(v) for v in args.noise.split(","))
        except ValueError:
            raise ConfigError(f"--noise expects comma-separated numbers, got {args.noise!r}")
    else:
        noise = (0.5, 0.5, 0.5, 0.5)
    spec = SynthSpec(n=args.n, seed=args.seed if args.seed is not None else 0,
                     noise=noise, dev_frac=args.dev_frac, test_frac=args.test_frac)
    sidecar = generate(args.out, spec)
    splits = sidecar["splits"]
    print(f"wrote {spec.n} pairs to {args.out} "
          f"(train {splits['train']}, dev {splits['dev']}, test {splits['test']})")
    return 0


# ------------------------------------------------------------ train-expert

def _print_history(result: TrainResult) -> None:
    for row in result.history:
        dev = "dev_srcc n/a" if row["dev_srcc"] is None else f"dev_srcc {row['dev_srcc']:.4f}"
        mark = " *" if row["selected"] else ""
        print(f"epoch {row['epoch']:3d}  train_loss {row['train_loss']:.6f}  {dev}{mark}")
    print(f"best epoch {result.best_epoch} (metric {result.best_metric:.6f})")


def cmd_train_expert(args) -> int:
    cfg = _app_config(args)
    name = args.expert
    if name != SEQ_EXPERT_NAME and name not in cfg.layout.sim_experts:
        raise ConfigError(
            f"unknown expert {name!r}; configured: "
            f"{', '.join(cfg.layout.sim_experts)}, {SEQ_EXPERT_NAME}"
        )
    # the manifest drives feature loading; only this expert's features matter
    layout = (FeatureLayout(sim_experts=(), include_seq=True)
              if name == SEQ_EXPERT_NAME
              else FeatureLayout(sim_experts=(name,), include_seq=False))
    dataset = load_dataset(cfg.root, cfg.manifest, layout)
    meta = {"kind": "sim", "expert": name,
            "score_range": [cfg.score_range.s_min, cfg.score_range.s_max]}
    if name == SEQ_EXPERT_NAME:
        params, result = train_seq_expert(dataset, cfg.model, cfg.score_range, cfg.train)
        state = ModelState(params=params.named("seq"))
        meta.update(kind="seq", heads=cfg.model.heads, dropout=cfg.model.dropout)
    else:
        head, result = train_similarity_expert(name, dataset, cfg.score_range, cfg.train)
        state = ModelState(params=head.named(f"sim.{name}"))
    _print_history(result)
    save_checkpoint(args.out, state, cfg.raw, cfg.seed, meta)
    print(f"saved {args.out}")
    return 0


# -------------------------------------------------------------- train-gate

def _expert_from_checkpoint(path: str, ckpt: Checkpoint):
    """(name, head_or_params) for one phase-A checkpoint."""
    kind = ckpt.meta.get("kind")
    if kind == "sim":
        name = ckpt.meta["expert"]
        return name, SimilarityHead.from_arrays(ckpt.params, f"sim.{name}")
    if kind == "seq":
        return SEQ_EXPERT_NAME, SeqExpertParams.from_arrays(
            ckpt.params, heads=int(ckpt.meta["heads"]),
            dropout_p=float(ckpt.meta["dropout"]))
    raise ConfigError(f"{path}: not an expert checkpoint (kind={kind!r})")


def _load_experts(paths: list[str]) -> tuple[ExpertSet, ScoreRange]:
    """Rebuild an ExpertSet from phase-A checkpoints, command-line order."""
    sim: list[tuple[str, SimilarityHead]] = []
    seq: SeqExpertParams | None = None
    score_range: ScoreRange | None = None
    seen: set[str] = set()
    for path in paths:
        ckpt = load_checkpoint(path)
        name, built = _expert_from_checkpoint(path, ckpt)
        if name in seen:
            raise ConfigError(f"duplicate expert {name!r} in --experts")
        seen.add(name)
        rng = ckpt.meta.get("score_range")
        if rng is None:
            raise ConfigError(f"{path}: checkpoint lacks a score range")
        this = ScoreRange(float(rng[0]), float(rng[1]))
        if score_range is None:
            score_range = this
        elif this != score_range:
            raise ConfigError(
                f"{path}: score range {rng} disagrees with "
                f"[{score_range.s_min}, {score_range.s_max}]"
            )
        if name == SEQ_EXPERT_NAME:
            seq = built
        else:
            sim.append((name, built))
    if score_range is None:
        raise ConfigError("--experts needs at least one checkpoint")
    return ExpertSet(sim=sim, seq=seq), score_range


def _layout_for(experts: ExpertSet) -> FeatureLayout:
    return FeatureLayout(sim_experts=tuple(name for name, _ in experts.sim),
                         include_seq=experts.seq is not None)


def _freeze_experts(experts: ExpertSet) -> dict[str, bool]:
    frozen = {}
    for pname, tensor in experts.named().items():
        tensor.requires_grad = False
        frozen[pname] = True
    return frozen


def _moe_meta(experts: ExpertSet, score_range: ScoreRange, cfg: AppConfig) -> dict:
    meta = {"kind": "moe",
            "sim_experts": [name for name, _ in experts.sim],
            "use_seq": experts.seq is not None,
            "score_range": [score_range.s_min, score_range.s_max]}
    if experts.seq is not None:
        meta["heads"] = experts.seq.mha_at.heads
        meta["dropout"] = experts.seq.dropout_p
    return meta


def cmd_train_gate(args) -> int:
    cfg = _app_config(args)
    experts, score_range = _load_experts(args.experts)
    dataset = load_dataset(cfg.root, cfg.manifest, _layout_for(experts))
    expert_frozen = _freeze_experts(experts)
    gate, result = train_gate(experts, dataset, cfg.model, score_range, cfg.train)
    _print_history(result)
    params = dict(experts.named())
    params.update(gate.named("gate"))
    frozen = dict(expert_frozen)
    state = ModelState(params=params, frozen=frozen)
    save_checkpoint(args.out, state, cfg.raw, cfg.seed, _moe_meta(experts, score_range, cfg))
    print(f"saved {args.out}")
    return 0


# ----------------------------------------------------------------- predict

def _load_model(path: str) -> tuple[ExpertSet, GateParams, ScoreRange]:
    ckpt = load_checkpoint(path)
    if ckpt.meta.get("kind") != "moe":
        raise ConfigError(f"{path}: not a trained model checkpoint")
    sim = [(name, SimilarityHead.from_arrays(ckpt.params, f"sim.{name}"))
           for name in ckpt.meta["sim_experts"]]
    seq = None
    if ckpt.meta.get("use_seq"):
        seq = SeqExpertParams.from_arrays(ckpt.params, heads=int(ckpt.meta["heads"]),
                                          dropout_p=float(ckpt.meta["dropout"]))
    experts = ExpertSet(sim=sim, seq=seq)
    for tensor in experts.named().values():
        tensor.requires_grad = False
    gate = GateParams.from_arrays(ckpt.params, "gate")
    rng = ckpt.meta["score_range"]
    return experts, gate, ScoreRange(float(rng[0]), float(rng[1]))


def cmd_predict(args) -> int:
    experts, gate, score_range = _load_model(args.model)
    manifest = args.manifest or str(Path(args.root) / "manifest.jsonl")
    dataset = load_dataset(args.root, manifest, _layout_for(experts))
    pairs = dataset.pairs if args.split == "all" else dataset.split(args.split)
    if not pairs:
        raise ValidationError(f"no pairs in split {args.split!r}")
    lines = []
    for pair in pairs:
        scored = moe_forward(pair.record, experts, gate, score_range,
                             label=pair.entry.label)
        lines.append(json.dumps({
            "pair_id": scored.pair_id,
            "moe_score": scored.moe_score,
            "expert_scores": scored.expert_scores,
            "gate_weights": scored.gate_weights,
        }, sort_keys=True))
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(lines)} predictions to {args.out}")
    return 0


# ---------------------------------------------------------------- evaluate

def _read_predictions(path: str) -> dict[str, dict]:
    preds: dict[str, dict] = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read predictions {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if "pair_id" not in obj or "moe_score" not in obj:
                raise ValidationError(
                    f"{path}:{lineno}: prediction needs pair_id and moe_score"
                )
            if obj["pair_id"] in preds:
                raise ValidationError(
                    f"{path}:{lineno}: duplicate prediction for {obj['pair_id']!r}"
                )
            preds[obj["pair_id"]] = obj
    if not preds:
        raise ValidationError(f"{path}: no predictions")
    return preds


def _join(preds: dict[str, dict], manifest_path: str, split: str) -> list[ScoredPair]:
    entries = [e for e in load_manifest(manifest_path)
               if split == "all" or e.split == split]
    wanted = {e.pair_id for e in entries}
    for pair_id in preds:
        if pair_id not in wanted:
            raise ValidationError(
                f"prediction for {pair_id!r} has no manifest entry in split {split!r}"
            )
    joined = []
    for entry in entries:
        if entry.pair_id not in preds:
            raise ValidationError(f"no prediction for pair {entry.pair_id!r}")
        if entry.label is None:
            raise ValidationError(f"pair {entry.pair_id!r} has no label to evaluate")
        obj = preds[entry.pair_id]
        joined.append(ScoredPair(
            pair_id=entry.pair_id, label=entry.label,
            expert_scores=obj.get("expert_scores", {}),
            gate_weights=obj.get("gate_weights", {}),
            moe_score=float(obj["moe_score"]),
        ))
    return joined


def cmd_evaluate(args) -> int:
    preds = _read_predictions(args.pred)
    joined = _join(preds, args.manifest, args.split)
    rows: list[tuple[str, EvalReport]] = [("moe", evaluate(joined))]
    if args.per_expert:
        expert_names = sorted({n for p in joined for n in p.expert_scores})
        for name in expert_names:
            solo = [ScoredPair(p.pair_id, p.label, {}, {}, p.expert_scores[name])
                    for p in joined]
            rows.append((name, evaluate(solo)))
    out = format_report_table(rows)
    if args.json:
        payload = {label: report.to_dict() for label, report in rows}
        Path(args.json).write_text(json.dumps(payload, sort_keys=True) + "\n",
                                   encoding="utf-8")
    sys.stdout.write(out)
    return 0


# ------------------------------------------------------------------ ablate

def _parse_subsets(raw: str, count: int) -> list[list[int]]:
    subsets = []
    for part in raw.split(";"):
        part = part.strip()
        if not part:
            continue
        try:
            ids = [int(tok) for tok in part.split(",")]
        except ValueError:
            raise ConfigError(f"--subsets: expected comma-separated ids, got {part!r}")
        if len(set(ids)) != len(ids):
            raise ConfigError(f"--subsets: duplicate id in {part!r}")
        for i in ids:
            if not (1 <= i <= count):
                raise ConfigError(
                    f"--subsets: id {i} out of range 1..{count} in {part!r}"
                )
        subsets.append(ids)
    if not subsets:
        raise ConfigError("--subsets: no subsets given")
    return subsets


def _subset_experts(experts: ExpertSet, ids: list[int]) -> ExpertSet:
    names = experts.names
    chosen = [names[i - 1] for i in ids]
    sim = [(n, h) for n, h in experts.sim if n in chosen]
    seq = experts.seq if SEQ_EXPERT_NAME in chosen else None
    return ExpertSet(sim=sim, seq=seq)


def cmd_ablate(args) -> int:
    cfg = _app_config(args)
    experts, score_range = _load_experts(args.experts)
    _freeze_experts(experts)
    subsets = _parse_subsets(args.subsets, experts.count)
    dataset = load_dataset(cfg.root, cfg.manifest, _layout_for(experts))
    eval_pairs = dataset.split(args.split)
    if len(eval_pairs) < 2:
        raise ValidationError(f"split {args.split!r} has {len(eval_pairs)} pairs; need >= 2")
    rows = []
    for ids in subsets:
        subset = _subset_experts(experts, ids)
        label = "+".join(subset.names)
        if subset.count == 1:
            # a single expert needs no training: softmax over one zero logit
            # pins its weight to exactly 1
            gate = GateParams.create(subset.evidence_length(eval_pairs[0].record),
                                     1, 1, Rng(cfg.seed))
        else:
            gate, _ = train_gate(subset, dataset, cfg.model, score_range, cfg.train)
        scored = [moe_forward(p.record, subset, gate, score_range, label=p.entry.label)
                  for p in eval_pairs]
        rows.append((label, evaluate(scored)))
    sys.stdout.write(format_report_table(rows))
    return 0


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tarsmoe",
        description="mixture-of-experts text-audio relevance scoring",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a feature directory and manifest")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("synth", help="generate a planted synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=100, help="number of pairs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", help="comma-separated noise per expert (default 0.5 each)")
    p.add_argument("--dev-frac", type=float, default=0.2, dest="dev_frac")
    p.add_argument("--test-frac", type=float, default=0.0, dest="test_frac")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train-expert", help="phase A: fit one expert")
    p.add_argument("--expert", required=True,
                   help=f"expert name from the config, or {SEQ_EXPERT_NAME!r}")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    _add_config_flags(p)
    _add_train_flags(p)
    p.set_defaults(fn=cmd_train_expert)

    p = sub.add_parser("train-gate", help="phase B: fit the gate over frozen experts")
    p.add_argument("--experts", required=True, nargs="+",
                   help="phase-A checkpoint paths, one per expert")
    p.add_argument("--out", required=True, help="model checkpoint path to write")
    _add_config_flags(p)
    _add_train_flags(p)
    p.set_defaults(fn=cmd_train_gate)

    p = sub.add_parser("predict", help="score a split with a trained model")
    p.add_argument("--model", required=True, help="model checkpoint from train-gate")
    p.add_argument("--root", required=True, help="feature directory root")
    p.add_argument("--manifest", help="manifest path (default <root>/manifest.jsonl)")
    p.add_argument("--split", default="dev", choices=_SPLITS + ("all",))
    p.add_argument("--out", required=True, help="predictions JSONL path to write")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("evaluate", help="metric table for a prediction file")
    p.add_argument("--pred", required=True, help="predictions JSONL from predict")
    p.add_argument("--manifest", required=True, help="manifest with labels")
    p.add_argument("--split", default="dev", choices=_SPLITS + ("all",))
    p.add_argument("--per-expert", action="store_true", dest="per_expert",
                   help="also report each expert's own scores")
    p.add_argument("--json", help="also write the report as JSON to this path")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("ablate", help="compare expert subsets")
    p.add_argument("--experts", required=True, nargs="+",
                   help="phase-A checkpoint paths, one per expert")
    p.add_argument("--subsets", default="1;2;3;4;1,2,3;1,2,3,4",
                   help="semicolon-separated id lists; ids follow --experts order")
    p.add_argument("--split", default="dev", choices=_SPLITS)
    _add_config_flags(p)
    _add_train_flags(p)
    p.set_defaults(fn=cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TarsMoeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
