import csv
import io
import json
import math

import pytest

from stringlab import cli, pipelines
from stringlab.simulate import GridSpec


def run(capsys, *argv):
    code = cli.run(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def table(text):
    lines = text.splitlines()
    assert lines[0].startswith("# stringlab ") and "config_digest=" in lines[0]
    return list(csv.reader(io.StringIO("\n".join(lines[1:]))))


def test_kernel_table(capsys):
    code, out, _ = run(capsys, "kernel", "--x-grid", "0,10")
    assert code == 0 and "\r" not in out
    rows = table(out)
    assert rows[0] == ["x", "H", "F", "h_tail"]
    assert float(rows[1][1]) == pytest.approx(1.1283791671, abs=1e-10)
    assert float(rows[1][2]) == pytest.approx(0.7294368867, abs=1e-9)
    assert float(rows[2][3]) <= 1e-6


def test_kernel_empty_grid_header_only(capsys):
    code, out, _ = run(capsys, "kernel", "--x-grid", "")
    assert code == 0 and table(out) == [["x", "H", "F", "h_tail"]]


def test_dims_table(capsys):
    code, out, _ = run(capsys, "dims")
    rows = table(out)
    assert rows[0] == ["d", "range", "graph", "level", "double_I", "double_II"]
    assert rows[1] == ["1", "1", "2.75", "1.75", "3.75", "2.75"]
    assert rows[12][4] == "EMPTY" and rows[12][3] == "EMPTY"
    assert rows[13][1:3] == ["6", "6"]
    assert len(rows) == 14


def test_energy_table(capsys):
    code, out, _ = run(capsys, "energy", "--gammas", "4", "--resolutions", "8,16")
    rows = table(out)
    assert rows[0] == ["gamma", "resolution", "value"] and len(rows) == 3


def test_simulate_and_localtime(tmp_path, capsys):
    path = tmp_path / "f.csv"
    code, out, _ = run(capsys, "simulate", "--n-t", "6", "--n-x", "5", "--seed", "4", "--output", str(path))
    assert code == 0 and json.loads(out)["seed"] == 4
    meta = json.loads((tmp_path / "f.csv.meta.json").read_text())
    assert meta["seed"] == 4 and "config_digest" in meta
    code, out, _ = run(capsys, "localtime", "--field", str(path), "--u", "0,0.2", "--n", "100")
    rows = table(out)
    assert code == 0 and rows[0] == ["u", "n", "estimate"] and len(rows) == 3
    assert "seed=4" in out.splitlines()[0]


def test_config_file_and_override(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"x_grid": [1.0, 2.0], "mode": "quadrature"}))
    _, out, _ = run(capsys, "kernel", "--config", str(cfg))
    assert len(table(out)) == 3
    _, out, _ = run(capsys, "kernel", "--config", str(cfg), "--x-grid", "5")
    assert len(table(out)) == 2


def test_config_errors(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"n_t": 4, "bogus": 1}))
    code, _, err = run(capsys, "simulate", "--config", str(cfg), "--output", "x.csv")
    assert code == cli.EXIT_CONFIG and "bogus" in err
    code, _, err = run(capsys, "simulate", "--n-t", "1")
    assert code == cli.EXIT_CONFIG and "grid" in err
    code, _, err = run(capsys, "estimate", "--kappa", "-1")
    assert code == cli.EXIT_CONFIG and "kappa" in err
    code, _, err = run(capsys, "kernel", "--mode", "magic")
    assert code == cli.EXIT_CONFIG and "mode" in err
    code, _, err = run(capsys, "localtime", "--field", str(tmp_path / "missing.csv"))
    assert code == cli.EXIT_CONFIG


def test_estimate_deterministic(tmp_path, capsys):
    args = ["estimate", "--pipeline", "range", "--n-t", "16", "--n-x", "16", "--replicas", "3"]
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert cli.run(args + ["--output", str(a)]) == 0
    assert cli.run(args + ["--output", str(b), "--threads", "2"]) == 0
    assert a.read_bytes() != b"" and a.read_text().count("\n") == 4
    recs = [json.loads(l) for l in a.read_text().splitlines()]
    # thread count is part of the config but must not change the numbers
    assert [r.get("slope") for r in recs] == [json.loads(l).get("slope") for l in b.read_text().splitlines()]
    assert recs[-1]["aggregate"] and recs[-1]["target"] == 1.0
    assert all("config_digest" in r for r in recs)
    assert cli.run(args + ["--output", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_estimate_acceptance_exit(capsys):
    code, out, _ = run(capsys, "estimate", "--pipeline", "range", "--n-t", "8", "--n-x", "8",
                       "--replicas", "2", "--tolerance", "0")
    assert code == cli.EXIT_ACCEPTANCE
    assert json.loads(out.splitlines()[-1])["pass"] is False


def test_threads_env(monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "3")
    assert cli.resolve_config("estimate", {}, {})["threads"] == 3
    assert cli.resolve_config("estimate", {}, {"threads": "2"})["threads"] == 2


def test_digest_ignores_output_only():
    a = cli.resolve_config("energy", {}, {"output": "x"})
    b = cli.resolve_config("energy", {}, {})
    c = cli.resolve_config("energy", {}, {"gammas": "3"})
    assert cli.config_digest(a) == cli.config_digest(b) != cli.config_digest(c)


def test_self_check(capsys):
    code, _, err = run(capsys, "--self-check", "dims")
    assert code == 0 and err.count("pass") == 4


def test_lnd_check_small(capsys):
    code, out, _ = run(capsys, "lnd-check", "--samples", "300", "--lemmas", "L13,L15",
                       "--necessity-factor", "1.0")
    recs = [json.loads(l) for l in out.splitlines()]
    assert [r["lemma"] for r in recs] == ["L13", "L15", "L15"]
    assert recs[-1]["probe"] == "L15-unrestricted"
    assert code == 0


def test_pipeline_targets():
    assert pipelines.target_dim("level", 1) == 1.75
    assert pipelines.target_dim("range", 1) == 1.0
    assert pipelines.target_dim("double-I", 12) is pipelines.fractal.EMPTY
    s = pipelines.EstimateSettings(pipeline="double-II", grid=GridSpec(0.5, 1, 0, 1, 8, 8), replicas=2)
    results, agg = pipelines.run_estimate(s)
    assert len(results) == 2 and agg.target == 2.75
    assert math.isfinite(agg.mean_slope) or agg.used == 0
