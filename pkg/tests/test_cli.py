import json

import pytest

from seds.cli import _merge, main

from conftest import TINY_SPEC, tiny_train_config


def test_gradcheck_tensor_passes(capsys):
    assert main(["gradcheck", "--module", "tensor", "--seeds", "1"]) == 0
    assert "checks passed" in capsys.readouterr().out


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--bogus"])
    assert exc.value.code == 2


def test_missing_checkpoint(tmp_path, capsys):
    code = main(["eval", "--ckpt", str(tmp_path / "none.ckpt"), "--data", str(tmp_path)])
    assert code == 1
    assert "checkpoint not found" in capsys.readouterr().err


def test_missing_config(tmp_path, capsys):
    code = main(["train", "--config", str(tmp_path / "x.json"), "--data", str(tmp_path), "--out", str(tmp_path)])
    assert code == 1
    assert "file not found" in capsys.readouterr().err


def test_merge_is_deep():
    a = {"beta": 0.4, "model": {"d_model": 8, "fusion": {"variant": "cgaf", "n_neighbors": 3}}}
    out = _merge(a, {"model": {"fusion": {"variant": "add_mlp"}}})
    assert out["model"]["fusion"] == {"variant": "add_mlp", "n_neighbors": 3}
    assert a["model"]["fusion"]["variant"] == "cgaf"


def test_round_trip(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({**TINY_SPEC, "splits": {"train": 8, "val": 4, "test": 4}}))
    data = tmp_path / "data"
    assert main(["synth", "--spec", str(spec), "--out", str(data)]) == 0
    cfg = tmp_path / "train.json"
    cfg.write_text(json.dumps(tiny_train_config(epochs=1)))
    assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path / "run")]) == 0
    best = json.loads(capsys.readouterr().out.strip().splitlines()[-1])["best"]
    assert main(["eval", "--ckpt", best, "--data", str(data), "--modality", "pose"]) == 0
    rep = json.loads((tmp_path / "run" / "report_test_pose.json").read_text())
    assert rep[0]["modality"] == "pose" and len(rep[0]["ranks"]) == 4


def test_ablate_writes_tables(tiny_data, tmp_path):
    grid = {
        "base": tiny_train_config(epochs=1),
        "seeds": [0],
        "modalities": ["fused", "pose"],
        "arms": [{"name": "b04", "overrides": {}}, {"name": "b0", "overrides": {"beta": 0.0}}],
    }
    path = tmp_path / "grid.json"
    path.write_text(json.dumps(grid))
    out = tmp_path / "abl"
    assert main(["ablate", "--grid", str(path), "--data", str(tiny_data), "--out", str(out)]) == 0
    rows = json.loads((out / "ablation.json").read_text())
    assert [r["arm"] for r in rows] == ["b04", "b0"]
    assert "pose_t2v_r1" in rows[0]
    header = (out / "ablation.csv").read_text().splitlines()[0]
    assert header.startswith("arm,seed,fused_t2v_r1")


def test_shipped_configs_resolve_by_name():
    from seds.cli import CliError, resolve_config
    from seds.train import TrainConfig

    for name in ("desk_train", "desk_train.json", "reference_scale_train"):
        TrainConfig.load(resolve_config(name))
    grid = json.loads(resolve_config("desk_ablation").read_text())
    assert (resolve_config("desk_ablation").parent / grid["base"]).is_file()
    with pytest.raises(CliError):
        resolve_config("no_such_config")
