import json

import pytest

from tarsmoe.synth import SynthSpec, generate


@pytest.fixture(scope="session")
def synth_root(tmp_path_factory):
    """One small planted dataset shared by the CLI-level tests."""
    root = tmp_path_factory.mktemp("synthdata")
    generate(root, SynthSpec(n=24, seed=11, noise=(0.6, 0.6, 0.6, 0.6),
                             dev_frac=0.25))
    return root


@pytest.fixture(scope="session")
def fast_cfg(tmp_path_factory):
    """Config file that keeps CLI training runs to a couple of seconds."""
    path = tmp_path_factory.mktemp("cfg") / "fast.json"
    path.write_text(json.dumps({
        "model": {"width": 8, "heads": 2, "mlp_hidden": 6, "dropout": 0.0,
                  "gate_hidden": 6},
        "train": {"epochs": 3, "batch_size": 8, "patience": 5},
    }))
    return str(path)
