import csv
import json

import numpy as np
import pytest
import torch

from neuroscreen.classifier import ModelConfig, build_model, load_checkpoint
from neuroscreen.cli import main
from neuroscreen.plate import TreatmentRegime, default_layout
from neuroscreen.screening import ImageScore, write_scores_csv


def _run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    """Three small plates plus a briefly trained checkpoint."""
    root = tmp_path_factory.mktemp("cli")
    data, run = root / "data", root / "run"
    assert _run("generate", "--out", data, "--plates", 3, "--fields", 2, "--channels", "Cy5",
                "--image-size", 64, "--seed", 1) == 0
    assert _run("train", "--data-root", data, "--out", run, "--n-test", 1, "--seed", 1,
                "--epochs-stage1", 1, "--epochs-stage2", 1, "--input-size", 32,
                "--batch-size", 8) == 0
    return data, run


def test_generate_counts_and_determinism(tmp_path):
    args = ["generate", "--plates", 2, "--fields", 5, "--channels", "Cy5", "--image-size", 64,
            "--seed", 3]
    assert _run(*args, "--out", tmp_path / "a") == 0
    assert _run(*args, "--out", tmp_path / "b") == 0
    pngs = sorted(p.name for p in (tmp_path / "a").rglob("*.png"))
    assert len(pngs) == 2 * 48 * 5
    for plate in ("P01", "P02"):
        assert ((tmp_path / "a" / plate / "manifest.csv").read_bytes()
                == (tmp_path / "b" / plate / "manifest.csv").read_bytes())
    layout = json.loads((tmp_path / "a" / "P02" / "layout.json").read_text())
    assert layout["compound"] == "Bucladesine" and layout["plate_id"] == "P02"
    assert (tmp_path / "a" / "run_config.json").is_file()


def test_generate_default_plate_count(tmp_path):
    assert _run("generate", "--out", tmp_path, "--fields", 1, "--channels", "Cy5",
                "--image-size", 64) == 0
    plates = sorted(p.name for p in tmp_path.iterdir() if p.is_dir())
    assert len(plates) == 36 and plates[0] == "P01" and plates[-1] == "P36"
    assert json.loads((tmp_path / "P36" / "layout.json").read_text())["compound"] == "Thiamphenicol"


def test_generate_protective_flag(tmp_path):
    assert _run("generate", "--out", tmp_path, "--plates", 1, "--fields", 1, "--channels", "Cy5",
                "--image-size", 64, "--protective", "Amprolium=0.8", "--dose-k", 1) == 0
    cfg = json.loads((tmp_path / "P01" / "synth_config.json").read_text())
    assert cfg["protective_map"] == {"Amprolium": 0.8} and cfg["dose_k_um"] == 1.0


@pytest.mark.parametrize("bad", [
    ["--effect-size", "1.5"],
    ["--image-size", "16"],
    ["--protective", "Nope=0.5"],
    ["--protective", "Amprolium"],
    ["--plates", "40"],
    ["--channels", "Cy7"],
])
def test_generate_invalid_config(tmp_path, bad):
    assert _run("generate", "--out", tmp_path, "--fields", 1, *bad) == 2
    assert not list(tmp_path.rglob("*.png"))


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"plates": 1, "fields": 2, "channels": "Cy5", "image_size": 64}))
    assert _run("generate", "--config", cfg, "--out", tmp_path / "a") == 0
    assert len(list((tmp_path / "a").rglob("*.png"))) == 48 * 2
    assert _run("generate", "--config", cfg, "--fields", 1, "--out", tmp_path / "b") == 0
    assert len(list((tmp_path / "b").rglob("*.png"))) == 48
    cfg.write_text(json.dumps({"plates": "many"}))
    assert _run("generate", "--config", cfg, "--out", tmp_path / "c") == 2
    cfg.write_text(json.dumps({"no_such_option": 1}))
    assert _run("generate", "--config", cfg, "--out", tmp_path / "c") == 2


def test_train_outputs(tiny, capsys):
    data, run = tiny
    for name in ("checkpoint.pt", "split.json", "train_report.json", "metrics.csv", "run_config.json"):
        assert (run / name).is_file()
    split = json.loads((run / "split.json").read_text())
    assert len(split["test"]) == 1 and len(split["train"]) == 2 and split["seed"] == 1
    _, ckpt = load_checkpoint(run / "checkpoint.pt")
    assert ckpt["split_hash"] and ckpt["train_config"]["epochs_stage1"] == 1


def test_train_prints_table_header(tmp_path, tiny, capsys):
    data, _ = tiny
    assert _run("train", "--data-root", data, "--out", tmp_path, "--n-test", 1,
                "--epochs-stage1", 0, "--epochs-stage2", 0, "--input-size", 32, "--seed", 5) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[-2] == "train_loss, train_acc, valid_loss, valid_acc"
    model, _ = load_checkpoint(tmp_path / "checkpoint.pt")
    init = build_model(ModelConfig(input_size=32), seed=5)
    for (k, a), b in zip(model.state_dict().items(), init.state_dict().values()):
        assert torch.equal(a, b), k


def test_train_missing_data(tmp_path, capsys):
    assert _run("train", "--data-root", tmp_path / "missing", "--out", tmp_path) == 2
    assert "does not exist" in capsys.readouterr().err
    assert _run("train", "--out", tmp_path) == 2


def test_screen_with_model(tiny, tmp_path):
    data, run = tiny
    out = tmp_path / "screen"
    assert _run("screen", "--checkpoint", run / "checkpoint.pt", "--data-root", data,
                "--out", out) == 0
    test_plate = json.loads((run / "split.json").read_text())["test"][0]
    rows = list(csv.reader((out / f"{test_plate}_summary.csv").open()))
    assert [r[0] for r in rows] == (["compound_dose_um", "abeta_dose_um"]
                                    + [f"well_{i}" for i in range(1, 7)]
                                    + ["mean", "std_wells", "std_images"])
    assert all(len(r) == 9 for r in rows)
    verdicts = json.loads((out / "verdicts.json").read_text())
    assert [v["plate_id"] for v in verdicts] == [test_plate]
    assert [d["compound_dose_um"] for d in verdicts[0]["verdicts"]] == [1, 3, 10]
    n_scores = len((out / f"{test_plate}_scores.csv").read_text().splitlines()) - 1
    assert n_scores == 48 * 2
    assert _run("screen", "--checkpoint", run / "checkpoint.pt", "--data-root", data,
                "--out", tmp_path / "all", "--plates", "all") == 0
    assert len(json.loads((tmp_path / "all" / "verdicts.json").read_text())) == 3


def test_screen_missing_checkpoint(tiny, tmp_path):
    data, _ = tiny
    assert _run("screen", "--checkpoint", tmp_path / "none.pt", "--data-root", data,
                "--out", tmp_path) == 2


def _scores_file(path, value_of):
    layout = default_layout("x", "P1")
    scores = [ImageScore("P1", w, f, value_of(w, r, f)) for w, r in layout.wells for f in range(3)]
    write_scores_csv(path, scores)
    return scores


def test_screen_constant_scores_flag_invalid_controls(tmp_path):
    _scores_file(tmp_path / "s.csv", lambda w, r, f: 0.5)
    assert _run("screen", "--scores", tmp_path / "s.csv", "--out", tmp_path / "o") == 0
    doc = json.loads((tmp_path / "o" / "P1_verdicts.json").read_text())
    assert doc["invalid_controls"] is True


def test_screen_table_scores_all_non_protective(tmp_path, screening_tables):
    for name, columns in screening_tables.items():
        layout = default_layout(name, "P1")
        means = {}
        for col in columns:
            regime = TreatmentRegime(col["compound_dose_um"], col["abeta_dose_um"])
            means.update(zip(layout.wells_of(regime), col["well_means"]))
        _scores_file(tmp_path / f"{name}.csv", lambda w, r, f: means[w])
        out = tmp_path / name
        assert _run("screen", "--scores", tmp_path / f"{name}.csv", "--compound", name,
                    "--out", out) == 0
        doc = json.loads((out / "P1_verdicts.json").read_text())
        assert doc["compound"] == name and doc["invalid_controls"] is False
        assert not any(v["protective"] for v in doc["verdicts"])


def test_screen_bad_threshold(tmp_path):
    _scores_file(tmp_path / "s.csv", lambda w, r, f: 0.5)
    assert _run("screen", "--scores", tmp_path / "s.csv", "--threshold", "1.5",
                "--out", tmp_path / "o") == 2


def test_report(tmp_path):
    import matplotlib.pyplot as plt

    from neuroscreen.report import plot_well_grid, well_histograms

    scores = _scores_file(tmp_path / "s.csv", lambda w, r, f: 0.0)
    assert _run("report", "--scores", tmp_path / "s.csv", "--out", tmp_path / "r") == 0
    assert (tmp_path / "r" / "P1_histograms.png").is_file()
    rows = list(csv.DictReader((tmp_path / "r" / "P1_histograms.csv").open()))
    assert len(rows) == 48
    bins = [k for k in rows[0] if k.startswith("bin_")]
    assert len(bins) == 20
    for row in rows:
        counts = [int(row[b]) for b in bins]
        assert sum(counts) == int(row["n"]) == 3
        assert counts[0] == 3
    hist = well_histograms(scores, default_layout("x", "P1"))
    fig = plot_well_grid(hist)
    assert len(fig.axes) == 48
    assert fig.axes[0].get_subplotspec().get_gridspec().get_geometry() == (8, 6)
    plt.close(fig)


def test_report_conservation_random(tmp_path):
    rng = np.random.default_rng(0)
    _scores_file(tmp_path / "s.csv", lambda w, r, f: float(rng.random()))
    assert _run("report", "--scores", tmp_path / "s.csv", "--out", tmp_path / "r", "--bins", 7) == 0
    rows = list(csv.DictReader((tmp_path / "r" / "P1_histograms.csv").open()))
    for row in rows:
        assert sum(int(v) for k, v in row.items() if k.startswith("bin_")) == int(row["n"])


def test_report_empty_scores(tmp_path):
    write_scores_csv(tmp_path / "s.csv", [])
    assert _run("report", "--scores", tmp_path / "s.csv", "--out", tmp_path / "r") == 2


def test_gradcam(tiny, tmp_path):
    data, run = tiny
    for out in (tmp_path / "a", tmp_path / "b"):
        assert _run("gradcam", "--checkpoint", run / "checkpoint.pt", "--data-root", data,
                    "--plate", "P02", "--out", out, "--seed", 11) == 0
    overlays = sorted(p.name for p in (tmp_path / "a").glob("*.png"))
    assert len(overlays) == 6
    assert overlays == sorted(p.name for p in (tmp_path / "b").glob("*.png"))
    assert all("_cam_c" in n for n in overlays)
    pairs = set()
    for p in (tmp_path / "a").glob("*_cam_c*.json"):
        cap = json.loads(p.read_text())
        a, b, c = cap["triple"]
        assert (a, b) == (cap["compound_dose_um"], cap["abeta_dose_um"])
        assert 0.0 <= c <= 1.0
        pairs.add((a, b))
    assert pairs == {(d, ab) for d in (1, 3, 10) for ab in (0, 30)}


def test_gradcam_missing_inputs(tiny, tmp_path):
    data, run = tiny
    assert _run("gradcam", "--checkpoint", tmp_path / "x.pt", "--data-root", data,
                "--plate", "P01", "--out", tmp_path) == 2
    assert _run("gradcam", "--checkpoint", run / "checkpoint.pt", "--data-root", data,
                "--plate", "P99", "--out", tmp_path) == 2
