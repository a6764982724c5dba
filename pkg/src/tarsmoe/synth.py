"""Planted synthetic pairs for pipeline tests and acceptance checks.

Each pair gets a latent alignment z in [-1, 1]. The label is the squashed
affine of z (``squash(label_scale * z)``), so with zero noise the label is
exactly recoverable from any expert's features. Every expert observes its
own corrupted alignment c_e = (z + noise_e * u_e) / (1 + noise_e) with u_e
uniform in [-1, 1]; similarity experts get a pair of embeddings whose
cosine equals c_e exactly, and the sequence expert gets frame features
carrying c_e along fixed planted directions. All generating parameters,
including every pair's z and c_e, go to a sidecar JSON so an oracle can
replay the labels.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .experts import ScoreRange, squash_to_range, unit
from .features_io import mfv_encode
from .numerics import Array, Rng

SIDECAR_NAME = "synth_params.json"


@dataclass(frozen=True)
class SynthSpec:
    n: int = 100
    seed: int = 0
    noise: tuple[float, float, float, float] = (0.5, 0.5, 0.5, 0.5)
    dev_frac: float = 0.2
    test_frac: float = 0.0
    label_scale: float = 1.5
    score_range: ScoreRange = field(default_factory=ScoreRange)
    sim_experts: tuple[str, ...] = ("expert1", "expert2", "expert3")
    sim_dims: tuple[int, ...] = (12, 16, 10)
    seq_layers: int = 2
    seq_frames: int = 6
    seq_audio_dim: int = 16
    seq_tokens: int = 5
    seq_text_dim: int = 12

    def __post_init__(self):
        if self.n < 4:
            raise ConfigError(f"synth: n must be >= 4, got {self.n}")
        if len(self.noise) != len(self.sim_experts) + 1:
            raise ConfigError(
                f"synth: need {len(self.sim_experts) + 1} noise values "
                f"(one per expert), got {len(self.noise)}"
            )
        if any(v < 0 for v in self.noise):
            raise ConfigError(f"synth: noise values must be >= 0, got {self.noise}")
        if len(self.sim_dims) != len(self.sim_experts):
            raise ConfigError("synth: sim_dims must match sim_experts")
        if not (0.0 <= self.dev_frac and 0.0 <= self.test_frac
                and self.dev_frac + self.test_frac < 1.0):
            raise ConfigError(
                f"synth: dev_frac {self.dev_frac} + test_frac {self.test_frac} "
                f"must leave room for a train split"
            )


def _corrupt(z: float, noise: float, rng: Rng) -> float:
    """Mix the latent with independent uniform noise; stays in [-1, 1]."""
    if noise == 0.0:
        return z
    u = rng.uniform(-1.0, 1.0)
    return (z + noise * u) / (1.0 + noise)


def _embedding_pair(c: float, dim: int, rng: Rng) -> tuple[Array, Array]:
    """Two vectors with cosine exactly c, at random directions and scales."""
    r1 = unit(rng.normal(dim))
    r2 = rng.normal(dim)
    r2 = r2 - np.dot(r2, r1) * r1
    r2 = unit(r2)
    m_a = rng.uniform(0.5, 2.0)
    m_t = rng.uniform(0.5, 2.0)
    audio = m_a * r1
    text = m_t * (c * r1 + np.sqrt(max(0.0, 1.0 - c * c)) * r2)
    return audio, text


def generate(out_dir: str | Path, spec: SynthSpec) -> dict:
    """Write manifest + features + sidecar; returns the sidecar dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in spec.sim_experts:
        (out / name).mkdir(exist_ok=True)
    (out / "seq").mkdir(exist_ok=True)

    root_rng = Rng(spec.seed).derive("synth")
    z_rng = root_rng.derive("latent")
    noise_rngs = [root_rng.derive(f"noise:{i}") for i in range(len(spec.noise))]
    emb_rng = root_rng.derive("embeddings")
    seq_rng = root_rng.derive("sequence")

    # planted signal directions for the sequence expert, fixed per dataset
    dir_rng = root_rng.derive("directions")
    g_audio = unit(dir_rng.normal(spec.seq_audio_dim))
    g_text = unit(dir_rng.normal(spec.seq_text_dim))
    # per-layer (signal, noise) strengths: layer 0 is clean, layer 1 murky
    layer_mix = [(1.0, 0.25), (0.15, 0.5)]
    while len(layer_mix) < spec.seq_layers:
        layer_mix.append((0.0, 0.5))
    layer_mix = layer_mix[: spec.seq_layers]

    n_dev = int(round(spec.n * spec.dev_frac))
    n_test = int(round(spec.n * spec.test_frac))
    n_train = spec.n - n_dev - n_test

    width = len(str(spec.n - 1))
    manifest_lines = []
    sidecar_pairs = []
    for i in range(spec.n):
        pair_id = f"pair-{i:0{width}d}"
        split = "train" if i < n_train else ("dev" if i < n_train + n_dev else "test")
        z = z_rng.uniform(-1.0, 1.0)
        label = squash_to_range(spec.label_scale * z, spec.score_range)

        cs = []
        for e, name in enumerate(spec.sim_experts):
            c = _corrupt(z, spec.noise[e], noise_rngs[e])
            cs.append(c)
            audio, text = _embedding_pair(c, spec.sim_dims[e], emb_rng)
            (out / name / f"{pair_id}.audio.mfv").write_bytes(mfv_encode(audio))
            (out / name / f"{pair_id}.text.mfv").write_bytes(mfv_encode(text))

        c_seq = _corrupt(z, spec.noise[-1], noise_rngs[-1])
        cs.append(c_seq)
        layers = np.empty((spec.seq_layers, spec.seq_frames, spec.seq_audio_dim))
        for layer, (sig, nz) in enumerate(layer_mix):
            noise_block = seq_rng.normal((spec.seq_frames, spec.seq_audio_dim))
            layers[layer] = sig * c_seq * g_audio[None, :] + nz * noise_block
        text_seq = (c_seq * g_text[None, :]
                    + 0.3 * seq_rng.normal((spec.seq_tokens, spec.seq_text_dim)))
        (out / "seq" / f"{pair_id}.audio_layers.mfv").write_bytes(mfv_encode(layers))
        (out / "seq" / f"{pair_id}.text_seq.mfv").write_bytes(mfv_encode(text_seq))

        manifest_lines.append(json.dumps(
            {"pair_id": pair_id, "label": label, "split": split}
        ))
        sidecar_pairs.append({"pair_id": pair_id, "split": split, "z": z,
                              "c": cs, "label": label})

    (out / "manifest.jsonl").write_text("\n".join(manifest_lines) + "\n",
                                        encoding="utf-8")
    sidecar = {
        "seed": spec.seed,
        "n": spec.n,
        "noise": list(spec.noise),
        "label_scale": spec.label_scale,
        "score_range": [spec.score_range.s_min, spec.score_range.s_max],
        "sim_experts": list(spec.sim_experts),
        "sim_dims": list(spec.sim_dims),
        "seq_dims": {
            "layers": spec.seq_layers,
            "frames": spec.seq_frames,
            "audio_dim": spec.seq_audio_dim,
            "tokens": spec.seq_tokens,
            "text_dim": spec.seq_text_dim,
        },
        "splits": {"train": n_train, "dev": n_dev, "test": n_test},
        "pairs": sidecar_pairs,
    }
    (out / SIDECAR_NAME).write_text(
        json.dumps(sidecar, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    return sidecar
