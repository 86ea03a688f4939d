import json

import numpy as np
import pytest

from cbfuse.cli import main
from cbfuse.volio import load_volume


def test_stage_commands(tmp_path, capsys):
    d = tmp_path
    assert main(["phantom", "--seed", "2", "--dims", "32", "32", "32", "--out", str(d / "ph")]) == 0
    ct = load_volume(d / "ph" / "ct.cbv")
    assert ct.dims == (32, 32, 32)
    assert main(["project", "--np", "6", "--in", str(d / "ph" / "ct.cbv"),
                 "--out", str(d / "p.cbp")]) == 0
    assert main(["reconstruct", "--in", str(d / "p.cbp"), "--out", str(d / "cbct.cbv"),
                 "--dims", "32", "32", "32"]) == 0
    cbct = load_volume(d / "cbct.cbv")
    assert cbct.grid == ct.grid
    assert main(["misalign", "--alpha-a", "0.5", "--mode", "elastic", "--seed", "3",
                 "--in", str(d / "ph" / "ct.cbv"), "--out", str(d / "mis.cbv"),
                 "--dump-params", str(d / "params.json")]) == 0
    params = json.loads((d / "params.json").read_text())
    assert params["spec"]["mode"] == "affine_then_elastic"
    assert not np.array_equal(load_volume(d / "mis.cbv").data, ct.data)


def test_dataset_train_eval(tmp_path, capsys):
    d = tmp_path
    assert main(["fuse", "--n-phantoms", "10", "--np", "8", "--alpha-a", "0.25",
                 "--out", str(d / "ds")]) == 0
    (d / "cfg.json").write_text(json.dumps({"train": {"epochs": 1},
                                            "unet": {"encoder_channels": [4, 4, 8, 8]}}))
    assert main(["train", "--config", str(d / "cfg.json"), "--data", str(d / "ds"),
                 "--out", str(d / "m.ckpt")]) == 0
    assert main(["eval", "--model", str(d / "m.ckpt"), "--data", str(d / "ds"),
                 "--out", str(d / "r.json")]) == 0
    rep = json.loads((d / "r.json").read_text())
    assert rep["n_volumes"] == 1 and set(rep["mean"]) == {"liver", "tumor"}


def test_report_reference(tmp_path, capsys):
    assert main(["report", "--reference", "--format", "csv", "--out", str(tmp_path / "t.csv")]) == 0
    text = (tmp_path / "t.csv").read_text()
    assert "no misalignment,tumor,32,0.297,0.268,True,False,True" in text


def test_errors_exit_nonzero(tmp_path, capsys):
    (tmp_path / "bad.cbv").write_bytes(b"junk")
    assert main(["project", "--np", "4", "--in", str(tmp_path / "bad.cbv"),
                 "--out", str(tmp_path / "p.cbp")]) == 2
    assert "CorruptHeader" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["nonsense"])
