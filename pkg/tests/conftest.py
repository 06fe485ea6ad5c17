import json

import pytest

from seds.data import SyntheticSpec, synth_dataset

TINY_SPEC = {"n_glosses": 6, "rgb_dim": 24, "glosses_per_sample": [2, 3], "seed": 5}


def tiny_train_config(**over) -> dict:
    cfg = {
        "seed": 0,
        "epochs": 2,
        "batch_size": 4,
        "n_clips": 4,
        "precision": "float64",
        "model": {
            "d_model": 8, "d_group": 4, "gcn_depth": 1, "tr_depth": 1, "tr_heads": 2,
            "text_depth": 1, "rgb_dim": 24, "fusion": {"n_neighbors": 3},
        },
    }
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(cfg.get(k), dict):
            cfg[k] = {**cfg[k], **v}
        else:
            cfg[k] = v
    return cfg


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    synth_dataset(SyntheticSpec(**TINY_SPEC), root, 8, 4, 4)
    return root


@pytest.fixture
def tiny_config_file(tmp_path):
    def write(**over):
        path = tmp_path / "train.json"
        path.write_text(json.dumps(tiny_train_config(**over)))
        return path
    return write


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: s.split()[1]):
            terminalreporter.write_line(line)
