import csv
import io
import subprocess
import sys

import pytest

from asymcoop import cli, sim

TINY = """\
[network]
n_bs = 2
n_ms = 2
antennas = 1
noise_dbm = -130
[run]
gamma_db = 5
epsilon = 0
location_draws = 2
master_seed = 4
max_outer_iterations = 10
"""


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "tiny.toml"
    p.write_text(TINY)
    return p


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run(argv, capsys):
    rc = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return rc, out, err


def test_run_with_override(config, tmp_path, capsys):
    out = tmp_path / "o"
    rc, stdout, _ = run(["run", "--config", config, "--method", "proposed",
                         "--set", "epsilon=0.1", "--out", out, "--jobs", 1], capsys)
    assert rc == 0
    rows = _rows(out / "records.csv")
    assert len(rows) == 2
    assert {r["method"] for r in rows} == {"proposed"}
    assert {float(r["epsilon"]) for r in rows} == {0.1}
    agg = _rows(out / "aggregates.csv")
    assert len(agg) == 1 and agg[0]["n"] == "2"


def test_run_is_repeatable(config, tmp_path, capsys):
    texts = []
    for name in ("a", "b"):
        run(["run", "--config", config, "--method", "b5", "--out", tmp_path / name], capsys)
        rows = (tmp_path / name / "records.csv").read_text().splitlines()
        texts.append([r.rsplit(",", 1)[0] for r in rows])
    assert texts[0] == texts[1]


def test_output_dir_from_environment(config, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("ASYMCOOP_OUT", str(tmp_path / "env"))
    rc, _, _ = run(["run", "--config", config, "--method", "b4"], capsys)
    assert rc == 0 and (tmp_path / "env" / "records.csv").exists()


@pytest.mark.parametrize("argv, needle", [
    (["--set", "epsilon=-1"], "epsilon"),
    (["--set", "foo=1"], "foo"),
    (["--method", "baseline2"], "not implemented: under-specified"),
    (["--method", "magic"], "unknown method"),
    (["--jobs", "0"], "--jobs"),
])
def test_run_rejects_bad_input(config, tmp_path, capsys, argv, needle):
    rc, _, err = run(["run", "--config", config, "--out", tmp_path] + argv, capsys)
    assert rc != 0
    assert needle in err


def test_missing_config_names_path(tmp_path, capsys):
    missing = tmp_path / "absent.toml"
    rc, _, err = run(["run", "--config", missing], capsys)
    assert rc != 0 and str(missing) in err


def test_fullsearch_command(config, tmp_path, capsys):
    rc, _, _ = run(["fullsearch", "--config", config, "--out", tmp_path], capsys)
    assert rc == 0
    rows = _rows(tmp_path / "records.csv")
    assert {r["method"] for r in rows} == {"fullsearch"}
    assert {r["sdp_count"] for r in rows} == {"9"}


def test_sweep_grid(config, tmp_path, capsys):
    rc, _, _ = run(["sweep", "--config", config, "--out", tmp_path,
                    "--set", 'methods=["b4", "b5"]', "--set", "epsilon=[0, 0.1, 0.5]",
                    "--set", "gamma_db=[0, 5]", "--set", "location_draws=1"], capsys)
    assert rc == 0
    agg = _rows(tmp_path / "aggregates.csv")
    assert len(agg) == 2 * 3 * 2
    assert list(agg[0])[0] == "lambda_ms"


def test_sweep_density_grid(config, tmp_path, capsys):
    rc, _, _ = run(["sweep", "--config", config, "--out", tmp_path, "--set", "n_ms='ppp'",
                    "--set", 'methods=["b5"]', "--set", "lambda_ms_grid=[1, 2]",
                    "--set", "location_draws=1"], capsys)
    assert rc == 0
    agg = _rows(tmp_path / "aggregates.csv")
    assert [float(r["lambda_ms"]) for r in agg] == [1.0, 2.0]
    ids = [int(r["trial_id"]) for r in _rows(tmp_path / "records.csv")]
    assert ids == [0, 1]


@pytest.mark.parametrize("override", ["epsilon=[]", "methods=[]", "gamma_db=[]",
                                      "lambda_ms_grid=[]"])
def test_empty_sweep(config, tmp_path, capsys, override):
    rc, _, err = run(["sweep", "--config", config, "--out", tmp_path, "--set", override], capsys)
    assert rc != 0 and "empty sweep" in err


# --- figdata -----------------------------------------------------------------


def _records_file(tmp_path):
    recs = []
    for i, (m, e, g, c, p) in enumerate([("proposed", 0.0, 15, 1, 10.0), ("proposed", 0.0, 15, 3, 20.0),
                                         ("b4", 0.0, 15, 2, 13.0), ("proposed", 0.1, 30, 2, 5.0)]):
        recs.append(sim.TrialRecord(i, i, 3, 3, m, e, g, c, c / 3, p, 7, 9, True, True, 1.0))
    path = tmp_path / "records.csv"
    sim.write_records(recs, path)
    return path


def test_figdata_table5(tmp_path, capsys):
    rc, out, _ = run(["figdata", "--records", _records_file(tmp_path), "--figure", "table5"], capsys)
    assert rc == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["epsilon", "method", "avg_pwr_dbm", "avg_coop", "sdp_count"]
    first = rows[1]
    assert first[:2] == ["0.0", "b4"]


def test_figdata_coop_vs_sinr(tmp_path, capsys):
    rc, out, _ = run(["figdata", "--records", _records_file(tmp_path), "--figure",
                      "coop_vs_sinr"], capsys)
    rows = list(csv.DictReader(io.StringIO(out)))
    cell = [r for r in rows if r["series"] == "proposed(eps=0)"][0]
    assert float(cell["x"]) == 15.0
    assert float(cell["mean"]) == 2.0 and float(cell["stderr"]) == pytest.approx(1.0)
    assert {r["series"] for r in rows} == {"proposed(eps=0)", "b4", "proposed(eps=0.1)"}


def test_figdata_is_reproducible(tmp_path, capsys):
    src = _records_file(tmp_path)
    outs = []
    for fig in cli.FIGURES:
        a = run(["figdata", "--records", src, "--figure", fig], capsys)[1]
        b = run(["figdata", "--records", src, "--figure", fig], capsys)[1]
        assert a == b
        outs.append(a)
    density = list(csv.DictReader(io.StringIO(outs[cli.FIGURES.index("coop_vs_density")])))
    assert {float(r["x"]) for r in density} == {3.0}


def test_figdata_errors(tmp_path, capsys):
    rc, _, err = run(["figdata", "--records", _records_file(tmp_path), "--figure", "fig9"], capsys)
    assert rc != 0
    for fig in cli.FIGURES:
        assert fig in err
    bad = tmp_path / "bad.csv"
    bad.write_text("trial_id,seed\n0,0\n")
    rc, _, err = run(["figdata", "--records", bad, "--figure", "table5"], capsys)
    assert rc != 0 and "power_dbm" in err


# --- check -------------------------------------------------------------------


def test_check_passes(capsys):
    rc, out, _ = run(["check", "--seed", "3"], capsys)
    assert rc == 0, out
    assert "all checks passed" in out


def test_check_fault_injection(capsys):
    rc, out, _ = run(["check", "--tolerance", "1e-2"], capsys)
    assert rc == 1
    assert "kkt" in out.lower()


def test_check_same_seed_same_report(capsys):
    a = run(["check", "--seed", "5"], capsys)[1]
    b = run(["check", "--seed", "5"], capsys)[1]
    assert a == b


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "asymcoop", "--version"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "0.1.0" in res.stdout
