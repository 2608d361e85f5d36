import sys
import os

sys.path.append(os.path.join(os.path.dirname(__file__), os.pardir))

import json

import numpy as np
import pandas as pd
import pytest

from cli import generated_sequences, main
from vidmask.config import RunConfig
from vidmask.constant import CSV_COLUMNS, ORACLE_COLUMNS
from vidmask.formats import config_from_fields, read_annotations, read_frames, read_mask, read_pgm, read_tensors

TOY = ["--toy", "--frames", "8", "--train-sequences", "2"]


@pytest.fixture(autouse=True)
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    for key in list(os.environ):
        if key.startswith("VIDMASK_"):
            monkeypatch.delenv(key)
    return tmp_path


def read_bytes(directory):
    files = {}
    for root, _, names in os.walk(directory):
        for name in names:
            path = os.path.join(root, name)
            with open(path, "rb") as f:
                files[os.path.relpath(path, directory)] = f.read()
    return files


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--help"])
    assert e.value.code == 0
    with pytest.raises(SystemExit) as e:
        main(["run", "--help"])
    assert e.value.code == 0
    out = capsys.readouterr().out
    assert "--period" in out and "--static-keep" in out and "--oracle" in out


def test_unknown_flag_one_line_diagnostic(capsys):
    with pytest.raises(SystemExit) as e:
        main(["gen", "--bogus"])
    assert e.value.code == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert err[-1].startswith("vidmask: error:")


def test_gen_rejects_zero_frames(workdir, capsys):
    assert main(["gen", "--toy", "--frames", "0", "--out", str(workdir / "data")]) == 2
    err = capsys.readouterr().err
    assert "num_frames must be ≥ 1" in err
    assert len([line for line in err.splitlines() if line.startswith("vidmask: error:")]) == 1


def test_gen_is_deterministic(workdir):
    assert main(["gen", *TOY, "--sequences", "2", "--out", str(workdir / "a")]) == 0
    assert main(["gen", *TOY, "--sequences", "2", "--out", str(workdir / "b")]) == 0
    a, b = read_bytes(workdir / "a"), read_bytes(workdir / "b")
    assert sorted(a) == sorted(
        ["seq000/frames.mvdf", "seq000/annotations.json", "seq001/frames.mvdf", "seq001/annotations.json", "train_annotations.json"]
    )
    assert a == b


def test_gen_annotations_read_back(workdir, capsys):
    assert main(["gen", *TOY, "--seed-scene", "4", "--out", str(workdir / "data")]) == 0
    out = capsys.readouterr().out
    assert "seed_scene=4" in out
    config = RunConfig.resolve(flags={"toy": True, "num_frames": 8, "train_sequences": 2, "seed_scene": 4})
    expected = generated_sequences(config)[0]
    assert read_annotations(str(workdir / "data" / "seq000" / "annotations.json")) == expected.to_annotations()
    assert np.array_equal(read_frames(str(workdir / "data" / "seq000" / "frames.mvdf")), expected.frames)


def test_mask_keep_rates(workdir, capsys):
    out = workdir / "masks"
    assert main(["mask", *TOY, "--static-keep", "0", "1", "0.3", "--seed-scene", "7", "--out", str(out)]) == 0
    assert capsys.readouterr().out.startswith("# seed_scene=7 seed_model=")
    assert read_mask(str(out / "static_mask_ks0.json")).keep_count == 0
    assert read_mask(str(out / "static_mask_ks1.json")).keep_count == 64
    mask = read_mask(str(out / "static_mask_ks0.3.json"))
    assert mask.keep_count == 19
    assert read_pgm(str(out / "static_mask_ks0.3.pgm")).shape == (8, 8)
    assert read_pgm(str(out / "heatmap.pgm")).shape == (128, 128)


def test_mask_reports_malformed_annotations(workdir, capsys):
    path = workdir / "annotations.json"
    path.write_text('{"frame_size": [128, 128],\n "frames": [oops]}')
    assert main(["mask", "--toy", "--annotations", str(path), "--out", str(workdir / "m")]) == 3
    err = capsys.readouterr().err
    assert "line 2" in err and str(path) in err


def test_run_period_one(workdir):
    out = workdir / "run"
    assert main(["run", *TOY, "--period", "1", "--out", str(out)]) == 0
    df = pd.read_csv(out / "results.csv")
    assert list(df.columns) == CSV_COLUMNS
    assert df.loc[0, "patch_keep_rate"] == 1.0
    assert df.loc[0, "scatter_gather_ops"] == 0
    assert np.isfinite(df.select_dtypes("number").to_numpy()).all()
    with open(out / "run_P1_ks0.3.json") as f:
        report = json.load(f)
    assert report["header"]["seed_scene"] == 0 and "seed_model" in report["header"]
    assert len(report["sequences"][0]["frames"]) == 8
    assert os.path.exists(out / "detections_P1_ks0.3_seq000.json")


def test_run_is_deterministic(workdir):
    for name in ("a", "b"):
        assert main(["run", *TOY, "--period", "4", "--oracle", "--out", str(workdir / name)]) == 0
    a, b = read_bytes(workdir / "a"), read_bytes(workdir / "b")
    assert {"results.csv", "run_P4_ks0.3.json", "weights.mvdt", "detections_P4_ks0.3_seq000.json"} <= set(a)
    assert sorted(a) == sorted(b)
    for name in a:
        assert a[name] == b[name], name


def test_run_with_oracle_matches_dense_run(workdir):
    assert main(["run", *TOY, "--period", "1", "4", "--oracle", "--out", str(workdir / "o")]) == 0
    df = pd.read_csv(workdir / "o" / "results.csv")
    assert list(df.columns) == CSV_COLUMNS + ORACLE_COLUMNS
    dense, masked = df.iloc[0], df.iloc[1]
    assert dense["mean_relative_error"] == 0.0
    assert masked["oracle_precision"] == dense["precision"]
    assert masked["oracle_recall"] == dense["recall"]
    assert masked["patch_keep_rate"] < 1.0


def test_run_from_generated_input(workdir):
    assert main(["gen", *TOY, "--out", str(workdir / "data")]) == 0
    assert main(["run", *TOY, "--input", str(workdir / "data"), "--out", str(workdir / "from_input")]) == 0
    assert main(["run", *TOY, "--out", str(workdir / "regenerated")]) == 0
    with open(workdir / "from_input" / "results.csv") as a, open(workdir / "regenerated" / "results.csv") as b:
        assert a.read() == b.read()


def test_ablate_writes_three_modes(workdir):
    assert main(["ablate", *TOY, "--out", str(workdir / "ab")]) == 0
    df = pd.read_csv(workdir / "ab" / "ablation.csv")
    assert df["masking"].tolist() == ["combined", "static", "dynamic"]


def test_cost_table(workdir):
    out = workdir / "cost"
    assert main(["cost", "--keep-rates", "0.57", "0.41", "--tokens", "952", "--out", str(out)]) == 0
    df = pd.read_csv(out / "cost.csv")
    assert df.loc[0, "masking"] == "dense"
    assert df.loc[0, "gmacs"] == pytest.approx(174.93, rel=0.02)
    assert sorted(df["tokens_processed"].tolist()) == [723, 952, 1005, 1764]
    ordered = df.sort_values("tokens_processed")
    assert ordered["gmacs"].is_monotonic_increasing
    memory = pd.read_csv(out / "memory.csv").set_index("mechanism")
    assert memory.loc["reference_reuse_blocks", "mb"] == pytest.approx(43.2, rel=0.01)
    assert memory.loc["reference_reuse_output", "mb"] == pytest.approx(5.4, rel=0.01)


def test_config_file_and_flags(workdir):
    path = workdir / "config.json"
    path.write_text(json.dumps({"toy": True, "num_frames": 4, "train_sequences": 1, "period": [2]}))
    assert main(["run", "--config", str(path), "--period", "4", "--out", str(workdir / "c")]) == 0
    assert os.path.exists(workdir / "c" / "run_P4_ks0.3.json")


def test_run_reloads_written_weights(workdir):
    assert main(["run", *TOY, "--seed-model", "5", "--out", str(workdir / "a")]) == 0
    weights = workdir / "a" / "weights.mvdt"
    assert weights.exists()
    assert main(["run", *TOY, "--weights", str(weights), "--out", str(workdir / "b")]) == 0
    with open(workdir / "a" / "results.csv") as a, open(workdir / "b" / "results.csv") as b:
        assert a.read() == b.read()


def test_run_rejects_weights_of_another_geometry(workdir, capsys):
    assert main(["run", *TOY, "--out", str(workdir / "a")]) == 0
    weights = str(workdir / "a" / "weights.mvdt")
    assert main(["run", *TOY, "--backbone", "global", "--weights", weights, "--out", str(workdir / "b")]) == 3
    assert "does not match" in capsys.readouterr().err


def test_run_saves_feature_maps(workdir):
    assert main(["run", *TOY, "--period", "4", "--oracle", "--save-features", "--out", str(workdir / "f")]) == 0
    fields, maps = read_tensors(str(workdir / "f" / "features_P4_ks0.3_seq000.mvdt"))
    assert config_from_fields(fields, "features") == RunConfig.resolve(flags={"toy": True}).to_model_config()
    assert sorted(maps) == ["masked", "oracle"]
    assert maps["masked"].shape == maps["oracle"].shape == (64, 64)
