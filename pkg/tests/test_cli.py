import csv
import json
import subprocess
import sys

import pytest

from skellam_lwe import cli, psa

SMALL = {"kappa": 16, "n": 50, "m": 100, "lambda": 2000, "epsilon": 1.0, "delta": 0.1}


def run(args, capsys=None):
    code = cli.main([str(a) for a in args])
    out = capsys.readouterr() if capsys else None
    return code, out


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(SMALL))
    return path


def test_params_example(capsys):
    code, out = run(["params", "--n", 20000, "--m", 1000, "--epsilon", 1, "--delta", 0.1, "--kappa", 200], capsys)
    assert code == 0
    plan = json.loads(out.out)
    assert plan["security_ok"] is True
    assert plan["epsilon_cap"] == pytest.approx(1.0730, abs=1e-3)
    assert plan["alpha"] == pytest.approx(5991.46, abs=0.01)
    assert plan["alpha_formula"] == "1000*lambda*(log(2/beta) + log(10))"
    for key in ("mu_total", "mu_user", "q", "security_ok", "alpha", "epsilon_cap"):
        assert key in plan


def test_params_exit_codes(capsys, tmp_path):
    assert run(["params", "--kappa", 400], capsys)[0] == 2
    assert run(["params", "--delta", 1.5], capsys)[0] == 1
    assert run(["params", "--beta", 0], capsys)[0] == 1
    assert run(["params", "--kappa", "x"], capsys)[0] == 1
    assert run(["nonsense"], capsys)[0] == 1
    bad = tmp_path / "bad.json"
    bad.write_text('{"kappa": 200, "colour": 3}')
    assert run(["params", "--config", bad], capsys)[0] == 1
    bad.write_text("{not json")
    assert run(["params", "--config", bad], capsys)[0] == 1
    assert run(["params", "--config", tmp_path / "missing.json"], capsys)[0] == 1


def test_flags_override_config(config, capsys):
    code, out = run(["params", "--config", config, "--m", 200], capsys)
    plan = json.loads(out.out)
    assert plan["alpha"] == pytest.approx(200 * 2000 * 5.991464547107982, rel=1e-12)


def test_keygen_deterministic(config, tmp_path):
    a, b, c = tmp_path / "a.json", tmp_path / "b.json", tmp_path / "c.json"
    assert run(["keygen", "--config", config, "--seed", 9, "--out", a])[0] == 0
    assert run(["keygen", "--config", config, "--seed", 9, "--out", b])[0] == 0
    assert run(["keygen", "--config", config, "--seed", 10, "--out", c])[0] == 0
    assert a.read_bytes() == b.read_bytes() != c.read_bytes()
    pp, keys = psa.keys_from_json(a.read_text())
    assert (pp.kappa, pp.n, pp.lam, pp.m) == (16, 50, 2000, 100)


def test_keygen_contract(config, tmp_path, capsys):
    assert run(["keygen", "--config", config, "--n", 0, "--out", tmp_path / "k.json"], capsys)[0] == 1
    assert run(["keygen", "--config", config, "--kappa", 10**6, "--out", tmp_path / "k.json"], capsys)[0] == 2
    assert not (tmp_path / "k.json").exists()
    assert run(["keygen", "--config", config, "--kappa", 10**3, "--allow-insecure",
                "--out", tmp_path / "k.json"], capsys)[0] == 0


def _simulate(config, tmp_path, *extra):
    keys = tmp_path / "keys.json"
    run(["keygen", "--config", config, "--seed", 1, "--out", keys])
    out = tmp_path / "sim.csv"
    code = cli.main(["simulate", "--config", str(config), "--seed", "4", "--keys", str(keys),
                     "--out", str(out), *map(str, extra)])
    return code, out, tmp_path / "sim.summary.json"


def test_simulate_default(config, tmp_path, capsys):
    code, out, summary = _simulate(config, tmp_path)
    assert code == 0
    rows = list(csv.DictReader(out.open()))
    assert list(rows[0].keys()) == list(cli.SIM_HEADER)
    assert len(rows) == SMALL["lambda"]
    for r in rows:
        assert int(r["abs_error"]) == abs(int(r["noisy_sum"]) - int(r["true_sum"]))
        assert abs(int(r["true_sum"])) <= SMALL["n"] * SMALL["m"]
    s = json.loads(summary.read_text())
    assert s["rows"] == SMALL["lambda"]
    assert s["gof_p_value"] > 1e-3
    sigma = (0.05 * 0.95 / SMALL["lambda"]) ** 0.5
    assert s["empirical_beta"] <= 0.05 + 3 * sigma
    _, printed = run(["params", "--config", config], capsys)
    assert json.loads(printed.out)["alpha"] == s["alpha"]


def test_simulate_zero_noise(config, tmp_path):
    code, out, summary = _simulate(config, tmp_path, "--zero-noise")
    assert code == 0
    assert all(int(r["abs_error"]) == 0 for r in csv.DictReader(out.open()))
    assert json.loads(summary.read_text())["gof_p_value"] is None


def test_simulate_mismatched_keys(config, tmp_path, capsys):
    keys = tmp_path / "keys.json"
    run(["keygen", "--config", config, "--seed", 1, "--out", keys])
    code = cli.main(["simulate", "--config", str(config), "--n", "49", "--keys", str(keys), "--out", str(tmp_path / "o.csv")])
    assert code == 1
    code = cli.main(["simulate", "--config", str(config), "--keys", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "o.csv")])
    assert code == 1


def test_simulate_data_ingestion(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"kappa": 4, "n": 3, "m": 5, "lambda": 2, "epsilon": 1.0, "delta": 0.1}))
    data = tmp_path / "data.csv"
    data.write_text("time_index,user_index,value\n0,1,1\n0,2,9\n0,3,-2\n1,1,-7\n1,2,0\n1,3,3\n")
    keys = tmp_path / "k.json"
    assert cli.main(["keygen", "--config", str(cfg), "--out", str(keys)]) == 0
    out = tmp_path / "s.csv"
    args = ["simulate", "--config", str(cfg), "--keys", str(keys), "--data", str(data), "--out", str(out), "--zero-noise"]
    assert cli.main(args) == 0
    rows = list(csv.DictReader(out.open()))
    assert [int(r["true_sum"]) for r in rows] == [4, -2]
    assert json.loads((tmp_path / "s.summary.json").read_text())["clipped"] == 2
    data.write_text("time_index,user_index,value\n0,1,1\n")
    assert cli.main(args) == 1
    data.write_text("t,u,v\n")
    assert cli.main(args) == 1


def test_dist_test_suites(capsys):
    code, out = run(["dist-test", "skellam", "--mu", 2, "--samples", 1_000_000, "--seed", 3], capsys)
    assert code == 0
    report = json.loads(out.out)
    assert all(report[s]["pass"] for s in ("moment", "symmetry", "tail", "chi_square"))
    assert "moment: pass" in out.err


def test_dist_test_gaussian_and_poisson(capsys):
    code, out = run(["dist-test", "gaussian", "--nu", 100, "--samples", 1_000_000], capsys)
    assert code == 0
    report = json.loads(out.out)
    assert report["moment"]["expected_variance"] == pytest.approx(100 + 1 / 6, abs=1e-9)
    code, out = run(["dist-test", "poisson", "--mean", 40, "--samples", 200_000], capsys)
    assert code == 0
    assert json.loads(out.out)["symmetry"]["pass"] is None


def test_dist_test_contract(capsys):
    assert run(["dist-test", "skellam", "--mu", 2, "--samples", 10], capsys)[0] == 1
    assert run(["dist-test", "cauchy", "--mu", 2], capsys)[0] == 1
    assert run(["dist-test", "skellam"], capsys)[0] == 1


def test_lossy_command(tmp_path, capsys):
    out = tmp_path / "l.csv"
    code, res = run(["lossy", "--kappa", 2, "--q", 23, "--lambda", 12, "--trials", 200, "--out", out], capsys)
    assert code == 0
    rows = list(csv.reader(out.open()))
    assert len(rows) == 1 + 400
    assert tuple(rows[0]) == ("law", "kappa", "lambda", "q", "nu", "mu", "trial", "entropy_bits")
    assert json.loads(res.out)["rows"] == 400
    assert run(["lossy", "--kappa", 4, "--q", 101, "--out", out], capsys)[0] == 2
    assert run(["lossy", "--q", 24, "--out", out], capsys)[0] == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "skellam_lwe", "params", "--kappa", "400"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert json.loads(proc.stdout)["security_ok"] is False
