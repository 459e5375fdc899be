import csv

import pytest

from flightrts import pipeline
from flightrts.cli import EXIT_INPUT, EXIT_OK, EXIT_SMOOTHER, main
from flightrts.errors import DivergenceError
from flightrts.sqm import RUN_LABELS


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    base = tmp_path_factory.mktemp("sim")
    (base / "scn.yaml").write_text("seed: 3\nnoise_profile: step\n")
    assert main(["simulate", "--scenario", str(base / "scn.yaml"), "--out", str(base / "out")]) == EXIT_OK
    return base


def test_simulate_writes_tables(sim_dir):
    out = sim_dir / "out"
    for f in ("truth.csv", "measured.csv", "metadata.json"):
        assert (out / f).exists()


def test_simulate_repeat_is_identical(sim_dir, tmp_path):
    assert main(["simulate", "--scenario", str(sim_dir / "scn.yaml"), "--out", str(tmp_path)]) == EXIT_OK
    for f in ("truth.csv", "measured.csv"):
        assert (tmp_path / f).read_bytes() == (sim_dir / "out" / f).read_bytes()


def test_simulate_bad_path(tmp_path, capsys):
    missing = tmp_path / "nope.yaml"
    assert main(["simulate", "--scenario", str(missing), "--out", str(tmp_path)]) == EXIT_INPUT
    assert str(missing) in capsys.readouterr().err


def test_simulate_bad_scenario_content(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("noise_profile: pink\n")
    assert main(["simulate", "--scenario", str(p), "--out", str(tmp_path / "o")]) == EXIT_INPUT


def test_pipeline_single_limit(sim_dir, tmp_path):
    measured = sim_dir / "out" / "measured.csv"
    rc = main(["pipeline", "--input", str(measured), "--out", str(tmp_path), "--limits", "0.1", "--no-figures"])
    assert rc == EXIT_OK
    with open(tmp_path / "summary.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["flight", "iter1", "iter2-0.1", "selected"]
    assert sorted(p.name for p in (tmp_path / "runs").iterdir()) == ["iter1", "iter2-0.1"]
    assert not list(tmp_path.rglob("*.png"))


def test_pipeline_full_with_figures_and_smaller_steps(sim_dir, tmp_path):
    measured = sim_dir / "out" / "measured.csv"
    assert main(["pipeline", "--input", str(measured), "--out", str(tmp_path / "p"), "--flight-id", "F1"]) == EXIT_OK
    rows = list(csv.reader(open(tmp_path / "p" / "summary.csv")))
    assert rows[0] == ["flight", *RUN_LABELS, "selected"]
    assert rows[1][0] == "F1" and len(rows[1]) == 7 and rows[1][-1] in RUN_LABELS
    assert list((tmp_path / "p").rglob("*.png"))

    run1 = tmp_path / "p" / "runs" / "iter1"
    assert main(["smooth", "--input", str(measured), "--out", str(tmp_path / "s")]) == EXIT_OK
    assert (tmp_path / "s" / "iter1" / "smoothed.csv").read_bytes() == (run1 / "smoothed.csv").read_bytes()
    assert main(["estimate-noise", "--run", str(run1), "--out", str(tmp_path / "e")]) == EXIT_OK
    assert (tmp_path / "e" / "estimated_R.csv").read_bytes() == (tmp_path / "p" / "estimated_R.csv").read_bytes()
    assert main(["resmooth", "--input", str(measured), "--schedule", str(tmp_path / "e" / "estimated_R.csv"),
                 "--limits", "0.4", "--out", str(tmp_path / "r")]) == EXIT_OK
    assert ((tmp_path / "r" / "iter2-0.4" / "smoothed.csv").read_bytes()
            == (tmp_path / "p" / "runs" / "iter2-0.4" / "smoothed.csv").read_bytes())
    runs = [str(tmp_path / "p" / "runs" / lab) for lab in RUN_LABELS]
    assert main(["sqm", *runs]) == EXIT_OK
    assert main(["diagnose", "--run", str(run1), "--out", str(tmp_path / "d"), "--no-figures"]) == EXIT_OK
    assert (tmp_path / "d" / "kde.csv").exists()


def test_pipeline_scenarios_in_parallel(tmp_path):
    paths = []
    for seed in (1, 2):
        p = tmp_path / f"flight{seed}.yaml"
        p.write_text(f"seed: {seed}\n")
        paths += ["--scenario", str(p)]
    rc = main(["pipeline", *paths, "--out", str(tmp_path / "o"), "--limits", "0.1", "--jobs", "2", "--no-figures"])
    assert rc == EXIT_OK
    rows = list(csv.reader(open(tmp_path / "o" / "summary.csv")))
    assert [r[0] for r in rows[1:]] == ["flight1", "flight2"]
    assert (tmp_path / "o" / "flight1" / "runs" / "iter1" / "manifest.json").exists()


def test_config_file_and_flag_precedence(sim_dir, tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(f"input: {sim_dir / 'out' / 'measured.csv'}\nlimits: [0.1, 0.4]\nfigures: false\n")
    assert main(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "o"), "--limits", "0.6"]) == EXIT_OK
    rows = list(csv.reader(open(tmp_path / "o" / "summary.csv")))
    assert rows[0] == ["flight", "iter1", "iter2-0.6", "selected"]


@pytest.mark.parametrize("args", [
    ["pipeline", "--out", "{tmp}"],
    ["pipeline", "--input", "{tmp}/missing.csv", "--out", "{tmp}"],
    ["pipeline", "--input", "{measured}", "--out", "{tmp}", "--limits", "1.5"],
    ["pipeline", "--input", "{measured}", "--out", "{tmp}", "--bandwidth", "0"],
    ["diagnose", "--run", "{tmp}/norun"],
    ["sqm", "{tmp}"],
])
def test_input_errors_exit_2(args, sim_dir, tmp_path):
    fill = {"tmp": str(tmp_path), "measured": str(sim_dir / "out" / "measured.csv")}
    assert main([a.format(**fill) for a in args]) == EXIT_INPUT


def test_bad_config_key(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("colour: blue\n")
    assert main(["pipeline", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_INPUT


def test_iteration_one_divergence_exit_3(sim_dir, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise DivergenceError("state became non-finite", index=0)

    monkeypatch.setattr(pipeline, "forward_pass", boom)
    rc = main(["pipeline", "--input", str(sim_dir / "out" / "measured.csv"), "--out", str(tmp_path), "--no-figures"])
    assert rc == EXIT_SMOOTHER
    assert main(["smooth", "--input", str(sim_dir / "out" / "measured.csv"), "--out", str(tmp_path)]) == EXIT_SMOOTHER
