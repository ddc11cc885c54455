import json

import numpy as np
import pytest

from neural_sdot.apps import Image, read_ppm, write_ppm
from neural_sdot.cli import main

SMALL = ["--hidden", "32,32,32", "--lr", "0.01"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def ring_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("ring")
    assert run("train", "--dataset", "ring", "--ratio", "1.0", "--seed", 7, "--out", out, *SMALL) == 0
    return out


def test_train_writes_artifacts(ring_run):
    assert {p.name for p in ring_run.iterdir()} >= {"checkpoint.json", "heights.csv", "report.json"}
    rep = json.loads((ring_run / "report.json").read_text())
    assert rep["converged"] is True
    assert rep["config"]["volume"]["seed"] == 7 and rep["run"]["seed"] == 7
    assert rep["config"]["delta"] == 0.01 and rep["config"]["hidden"] == [32, 32, 32]
    assert rep["predict_optimizer_steps"] == 0
    assert "wall_time_train" in rep["metadata"]
    assert len((ring_run / "heights.csv").read_text().splitlines()) == 9


def test_train_is_byte_identical(ring_run, tmp_path):
    assert run("train", "--dataset", "ring", "--ratio", "1.0", "--seed", 7, "--out", tmp_path, *SMALL) == 0
    for name in ("heights.csv", "checkpoint.json", "atoms.csv"):
        assert (tmp_path / name).read_bytes() == (ring_run / name).read_bytes()
    a = json.loads((ring_run / "report.json").read_text())
    b = json.loads((tmp_path / "report.json").read_text())
    a.pop("metadata"), b.pop("metadata")
    a["run"].pop("out"), b["run"].pop("out")
    assert a == b


def test_train_single_atom_file(tmp_path):
    (tmp_path / "atoms.csv").write_text("0.5,0.5\n")
    assert run("train", "--atoms", tmp_path / "atoms.csv", "--out", tmp_path / "o", *SMALL) == 0
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["converged"] is True and rep["iterations"] == 0


def test_train_atom_file_with_masses_and_source(tmp_path):
    (tmp_path / "atoms.csv").write_text("x,mass\n0,0.3\n1,0.7\n")
    out = tmp_path / "o"
    assert run("train", "--atoms", tmp_path / "atoms.csv", "--source-low", "0", "--source-high", "1",
               "--out", out, *SMALL) == 0
    h = np.loadtxt(out / "heights.csv", skiprows=1)
    assert np.abs(h - [0.15, -0.15]).max() <= 0.02


def test_input_errors_exit_2(tmp_path, capsys):
    assert run("train", "--atoms", tmp_path / "missing.csv") == 2
    assert run("train", "--dataset", "ring", "--ratio", "0.1", "--out", tmp_path) == 2
    with pytest.raises(SystemExit) as exc:
        run("train", "--dataset", "spiral")
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        run("frobnicate")
    assert exc.value.code == 2


def test_map_outputs(ring_run, tmp_path):
    q = tmp_path / "q.csv"
    np.savetxt(q, np.random.default_rng(0).uniform(-1.5, 1.5, (10_000, 2)), delimiter=",")
    assert run("map", "--checkpoint", ring_run / "checkpoint.json", "--dataset", "ring",
               "--queries", q, "--out", tmp_path / "m") == 0
    d = np.loadtxt(tmp_path / "m" / "mapped.csv", delimiter=",", skiprows=1)
    assert d.shape == (10_000, 3)
    frac = np.bincount(d[:, 0].astype(int), minlength=8) / d.shape[0]
    assert np.abs(frac - 1 / 8).max() <= 0.01 + 4 * np.sqrt(1 / 8 * 7 / 8 / 10_000)


def test_map_query_at_dominant_atom(tmp_path):
    (tmp_path / "atoms.csv").write_text("0,0\n3,3\n")
    out = tmp_path / "t"
    assert run("train", "--atoms", tmp_path / "atoms.csv", "--out", out, *SMALL) == 0
    (tmp_path / "q.csv").write_text("3,3\n")
    assert run("map", "--checkpoint", out / "checkpoint.json", "--atoms", tmp_path / "atoms.csv",
               "--queries", tmp_path / "q.csv", "--out", tmp_path / "m") == 0
    lines = (tmp_path / "m" / "mapped.csv").read_text().splitlines()
    assert lines[1] == "1,3.0,3.0"


def test_map_empty_and_mismatch(ring_run, tmp_path):
    (tmp_path / "empty.csv").write_text("")
    assert run("map", "--checkpoint", ring_run / "checkpoint.json", "--dataset", "ring",
               "--queries", tmp_path / "empty.csv", "--out", tmp_path / "e") == 0
    assert (tmp_path / "e" / "mapped.csv").read_text() == "index,y0,y1\n"
    (tmp_path / "bad.csv").write_text("1,2,3\n")
    assert run("map", "--checkpoint", ring_run / "checkpoint.json", "--dataset", "ring",
               "--queries", tmp_path / "bad.csv", "--out", tmp_path / "e") == 2


def test_metrics_report_and_scatter(tmp_path):
    assert run("metrics", "--dataset", "grid", "--ratio", "0.9", "--generate", 2000,
               "--out", tmp_path, "--hidden", "64,64,64", "--lr", "0.01") == 0
    rep = json.loads((tmp_path / "metrics.json").read_text())
    assert rep["metrics"]["modes_captured"] == 25 and rep["n_trained"] == 23
    lines = (tmp_path / "scatter.csv").read_text().splitlines()
    assert lines[0] == "kind,x,y" and len(lines) == 4001
    assert {ln.split(",")[0] for ln in lines[1:]} == {"generated", "real"}


def test_color_self_transfer(tmp_path):
    rng = np.random.default_rng(0)
    codes = rng.choice(256**3, size=64, replace=False)
    px = np.stack([(codes >> 16) & 255, (codes >> 8) & 255, codes & 255], -1).astype(np.uint8)
    write_ppm(tmp_path / "a.ppm", Image(px.reshape(8, 8, 3)))
    assert run("color", "--source", tmp_path / "a.ppm", "--target", tmp_path / "a.ppm",
               "--palette-size", 64, "--out", tmp_path / "c", "--hidden", "64,64,64") == 0
    rep = json.loads((tmp_path / "c" / "report.json").read_text())
    assert rep["histogram_l1_vs_uniform"] <= 0.05
    out = read_ppm(tmp_path / "c" / "output.ppm")
    assert {tuple(c) for c in out.pixels.reshape(-1, 3).tolist()} <= {tuple(c) for c in px.tolist()}


def test_color_png_needs_pillow_or_writes(tmp_path):
    pytest.importorskip("PIL")
    write_ppm(tmp_path / "a.ppm", Image(np.full((2, 2, 3), 9)))
    assert run("color", "--source", tmp_path / "a.ppm", "--target", tmp_path / "a.ppm", "--png",
               "--out", tmp_path, *SMALL) == 0
    assert (tmp_path / "output.png").exists()


def test_da_partial_report(tmp_path):
    assert run("da", "--count", 300, "--ratio", 0.8, "--out", tmp_path, *SMALL) == 0
    rep = json.loads((tmp_path / "da.json").read_text())
    assert 0 <= rep["accuracy_part"] <= 1 and 0 <= rep["accuracy_all"] <= 1
    assert rep["n_trained"] == 240 and rep["config"]["scheme"] == "global"
    assert (tmp_path / "scatter.csv").exists()


def test_config_file_sets_defaults(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"hidden": [8, 8, 8], "max_iter": 2, "seed": 3}))
    assert run("--config", cfg, "train", "--dataset", "ring", "--seed", 5, "--out", tmp_path / "o") == 0
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["config"]["max_iter"] == 2 and rep["config"]["hidden"] == [8, 8, 8]
    assert rep["config"]["volume"]["seed"] == 5  # explicit flag wins
    (tmp_path / "bad.json").write_text("[1]")
    with pytest.raises(SystemExit) as exc:
        run("--config", tmp_path / "bad.json", "train", "--dataset", "ring")
    assert exc.value.code == 2


def test_invariant_violation_exits_3(monkeypatch, ring_run, tmp_path):
    import neural_sdot.cli as cli

    def broken(*a, **k):
        return np.full(len(a[0]), 99)

    monkeypatch.setattr(cli, "assign_cells", broken)
    (tmp_path / "q.csv").write_text("0,0\n")
    assert run("map", "--checkpoint", ring_run / "checkpoint.json", "--dataset", "ring",
               "--queries", tmp_path / "q.csv", "--out", tmp_path) == 3
