import json
import subprocess
import sys

import pytest

from shelterfl import cli

TINY = """\
[experiment]
repeats = 1
[cohort]
n_clients = {n}
{extra}
[train]
epochs = 2
batch_size = 128
[federated]
rounds = 2
local_epochs = 1
[sweep]
observation_days = 90
n_bins = 10
prediction_days = 548
"""


def write_config(tmp_path, n=500, extra=""):
    path = tmp_path / f"c{n}.ini"
    path.write_text(TINY.format(n=n, extra=extra))
    return str(path)


def run(*args):
    return cli.main([str(a) for a in args])


def test_generate_empty_cohort(tmp_path, capsys):
    cfg = write_config(tmp_path, n=0)
    assert run("generate", "--config", cfg, "--out", tmp_path / "g") == 0
    assert (tmp_path / "g" / "stays.csv").read_text() == "client_id,agency_id,date\n"
    assert (tmp_path / "g" / "truth.csv").read_text() == "client_id,true_class\n"
    assert "clients: 0" in capsys.readouterr().out


def test_generate_is_byte_reproducible(tmp_path):
    cfg = write_config(tmp_path)
    for d in ("a", "b"):
        assert run("generate", "--config", cfg, "--out", tmp_path / d, "--seed", 4) == 0
    for name in ("stays.csv", "truth.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    run("generate", "--config", cfg, "--out", tmp_path / "c", "--seed", 5)
    assert (tmp_path / "c" / "stays.csv").read_bytes() != (tmp_path / "a" / "stays.csv").read_bytes()


def test_label_modes(tmp_path, capsys):
    cfg = write_config(tmp_path)
    for mode in ("central", "decentral", "isolated"):
        assert run("label", "--config", cfg, "--mode", mode, "--out", tmp_path / mode) == 0
        lines = (tmp_path / mode / "labels.csv").read_text().splitlines()
        assert lines[0] == "client_id,agency_id,n_stays,n_episodes,label"
        assert len(lines) > 400
    report = json.loads((tmp_path / "decentral" / "centroids.json").read_text())
    assert set(report["distance_to_central"]) == {"transitional", "episodic", "chronic"}
    assert "centroid distance to central" in capsys.readouterr().out


def test_label_rerun_deterministic(tmp_path):
    cfg = write_config(tmp_path)
    for d in ("a", "b"):
        run("label", "--config", cfg, "--mode", "decentral", "--out", tmp_path / d)
    assert (tmp_path / "a" / "labels.csv").read_bytes() == (tmp_path / "b" / "labels.csv").read_bytes()


def test_label_central_equals_isolated_on_one_agency(tmp_path):
    cfg = write_config(tmp_path, extra="agency_weights = solo:1.0")
    run("label", "--config", cfg, "--mode", "central", "--out", tmp_path / "c")
    run("label", "--config", cfg, "--mode", "isolated", "--out", tmp_path / "i")
    assert (tmp_path / "c" / "labels.csv").read_bytes() == (tmp_path / "i" / "labels.csv").read_bytes()


def test_label_external_data_matches_generated(tmp_path):
    cfg = write_config(tmp_path)
    run("generate", "--config", cfg, "--out", tmp_path / "g")
    run("label", "--config", cfg, "--out", tmp_path / "synthetic")
    run("label", "--config", cfg, "--data", tmp_path / "g" / "stays.csv", "--out", tmp_path / "file")
    assert (tmp_path / "synthetic" / "labels.csv").read_bytes() == (tmp_path / "file" / "labels.csv").read_bytes()


def test_sweep_one_cell(tmp_path):
    cfg = write_config(tmp_path)
    assert run("sweep", "--config", cfg, "--out", tmp_path / "s") == 0
    rows = (tmp_path / "s" / "sweep.csv").read_text().splitlines()
    assert rows[0] == "T_b,T_o,T_p,precision,recall,f1,recall_std" and len(rows) == 2
    manifest = json.loads((tmp_path / "s" / "manifest.json").read_text())
    assert all(c["passed"] for c in manifest["checks"].values())


def test_compare_smoke_and_outputs(tmp_path):
    cfg = write_config(tmp_path)
    code = run("compare", "--config", cfg, "--out", tmp_path / "o")
    out = tmp_path / "o"
    manifest = json.loads((out / "manifest.json").read_text())
    assert code == (0 if manifest["checks"]["scenario_ordering"]["passed"] else 3)
    for name in ("aggregate", "per_class", "per_agency"):
        assert (out / f"{name}.txt").exists() and (out / f"{name}.csv").exists()
    chart = (out / "f1_chart.csv").read_text().splitlines()
    assert chart[0] == "agency,scenario,f1"
    rounds = [json.loads(l) for l in (out / "metrics_rounds.jsonl").read_text().splitlines()]
    assert [r["round"] for r in rounds] == [1, 2]
    assert set(manifest["metrics"]) == {"centralized", "federated", "isolated"}
    assert manifest["test"]["digest"] and manifest["centroids"]["central"]
    assert "wall" not in (out / "manifest.json").read_text()


def test_compare_is_byte_reproducible(tmp_path):
    cfg = write_config(tmp_path, n=300)
    for d in ("a", "b"):
        run("compare", "--config", cfg, "--scenario", "federated", "--out", tmp_path / d)
    for f in sorted((tmp_path / "a").iterdir()):
        if f.name != "timings.jsonl":
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


def test_manifest_config_reproduces_run(tmp_path):
    cfg = write_config(tmp_path, n=300)
    run("compare", "--config", cfg, "--scenario", "central", "--seed", 3, "--out", tmp_path / "a")
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    (tmp_path / "echo.ini").write_text(manifest["config"])
    run("compare", "--config", tmp_path / "echo.ini", "--out", tmp_path / "b")
    assert (tmp_path / "a" / "aggregate.csv").read_bytes() == (tmp_path / "b" / "aggregate.csv").read_bytes()


def test_single_scenario_skips_ordering(tmp_path):
    cfg = write_config(tmp_path, n=300)
    assert run("compare", "--config", cfg, "--scenario", "isolated", "--out", tmp_path / "o") == 0
    assert json.loads((tmp_path / "o" / "manifest.json").read_text())["checks"] == {}


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[train]\nepochs = lots\n")
    assert run("compare", "--config", bad, "--out", tmp_path / "o") == 2
    assert run("generate", "--config", tmp_path / "missing.ini") == 2
    junk = tmp_path / "junk.csv"
    junk.write_text("who,where,when\n")
    assert run("label", "--data", junk, "--out", tmp_path / "o") == 2
    assert "config error" in capsys.readouterr().err


def test_repeats_override(tmp_path):
    cfg = write_config(tmp_path, n=300)
    run("compare", "--config", cfg, "--scenario", "central", "--repeats", 2, "--out", tmp_path / "o")
    assert json.loads((tmp_path / "o" / "manifest.json").read_text())["repeat_seeds"] == [0, 1]


def test_unknown_subcommand_and_module_entry():
    with pytest.raises(SystemExit):
        cli.main(["train"])
    proc = subprocess.run([sys.executable, "-m", "shelterfl", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("generate", "label", "sweep", "compare"):
        assert sub in proc.stdout
