import json
import math

import numpy as np
import pytest

from fptlik.cli import main
from fptlik.inference import write_trials_csv
from fptlik.model import schedule_to_dict


@pytest.fixture(scope="module")
def schedule_file(tmp_path_factory, piecewise_schedule):
    p = tmp_path_factory.mktemp("cfg") / "schedule.json"
    p.write_text(json.dumps(schedule_to_dict(piecewise_schedule)))
    return str(p)


@pytest.fixture(scope="module")
def trials_file(tmp_path_factory, addm_trials_5k):
    p = tmp_path_factory.mktemp("data") / "trials.csv"
    write_trials_csv(addm_trials_5k[:300], p)
    return str(p)


@pytest.fixture(scope="module")
def params_file(tmp_path_factory):
    p = tmp_path_factory.mktemp("params") / "params.json"
    p.write_text(json.dumps({"eta": 0.7, "kappa": 0.5, "a": 2.1, "b": 0.3, "x0": -0.2}))
    return str(p)


def _read_density_csv(path):
    rows = []
    npp_value = None
    for line in open(path):
        line = line.strip()
        if line.startswith("# NPP"):
            npp_value = float(line.split()[-1])
        elif line and not line.startswith("t,"):
            rows.append([float(v) for v in line.split(",")])
    return np.asarray(rows), npp_value


def test_density_conservation_on_export_grid(tmp_path, schedule_file):
    out = str(tmp_path / "dens.csv")
    assert main(["density", "--config", schedule_file, "--output", out]) == 0
    rows, q = _read_density_csv(out)
    t, fu, fl = rows[:, 0], rows[:, 1], rows[:, 2]
    total = np.trapezoid(fu + fl, t)
    assert abs(total - (1.0 - q)) < 1e-4
    assert rows.shape[0] == 2048  # documented default grid
    manifest = json.loads(open(out + ".manifest.json").read())
    assert manifest["command"] == "density"
    assert "fptlik" in manifest["versions"]


def test_density_signed_time(tmp_path, schedule_file):
    out = str(tmp_path / "signed.csv")
    assert main(["density", "--config", schedule_file, "--output", out,
                 "--signed-time", "--grid", "0:5:100"]) == 0
    rows, _ = _read_density_csv(out)
    assert rows[0, 0] < 0 < rows[-1, 0]
    assert np.all(np.diff(rows[:, 0]) > 0)


def test_density_custom_grid(tmp_path, schedule_file):
    out = str(tmp_path / "grid.csv")
    assert main(["density", "--config", schedule_file, "--output", out, "--grid", "0:5:64"]) == 0
    rows, _ = _read_density_csv(out)
    assert rows.shape[0] == 63  # t = 0 excluded


def test_unknown_schedule_key_named(tmp_path, schedule_file, capsys):
    cfg = json.loads(open(schedule_file).read())
    cfg["extra_key"] = 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(cfg))
    assert main(["density", "--config", str(bad), "--output", str(tmp_path / "x.csv")]) == 2
    assert "extra_key" in capsys.readouterr().err


def test_invalid_schedule_exit_code(tmp_path, capsys):
    bad = tmp_path / "cross.json"
    bad.write_text(json.dumps({
        "breakpoints": [0.0, 1.5], "mu": [0.0], "sigma": [1.0],
        "upper_values": [1.0, -0.5], "lower_values": [-1.0, 0.5],
        "initial": {"type": "point", "x0": 0.0},
    }))
    assert main(["density", "--config", str(bad), "--output", str(tmp_path / "x.csv")]) == 2
    assert "cross" in capsys.readouterr().err


def test_dry_run_writes_nothing(tmp_path, schedule_file, capsys):
    out = tmp_path / "never.csv"
    assert main(["density", "--config", schedule_file, "--output", str(out), "--dry-run"]) == 0
    assert not out.exists()
    assert "config ok" in capsys.readouterr().out


def test_simulate_reproducible_bytes(tmp_path, schedule_file):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    for out in (a, b):
        assert main(["simulate", "--config", schedule_file, "--output", str(out),
                     "--n-paths", "500", "--step", "0.001", "--seed", "3"]) == 0
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.csv"
    assert main(["simulate", "--config", schedule_file, "--output", str(c),
                 "--n-paths", "500", "--step", "0.001", "--seed", "4"]) == 0
    assert a.read_bytes() != c.read_bytes()


def test_simulate_histogram_output(tmp_path, schedule_file):
    out = tmp_path / "s.csv"
    hist = tmp_path / "h.csv"
    assert main(["simulate", "--config", schedule_file, "--output", str(out),
                 "--histogram", str(hist), "--n-paths", "400", "--step", "0.001"]) == 0
    assert hist.read_text().startswith("bin_left,bin_right,density,outcome")


def test_kstest_report(tmp_path, schedule_file):
    out = tmp_path / "ks.json"
    assert main(["kstest", "--config", schedule_file, "--output", str(out),
                 "--n-paths", "2000", "--step", "0.001", "--seed", "0"]) == 0
    report = json.loads(out.read_text())
    assert set(report) >= {"statistic", "p_value", "n_used", "rejected", "alpha"}
    assert report["p_value"] > 0.01


def test_loglik_threads_identical(tmp_path, trials_file, params_file):
    outs = []
    for threads in ("1", "2"):
        out = tmp_path / f"ll{threads}.json"
        assert main(["loglik", "--trials", trials_file, "--params", params_file,
                     "--output", str(out), "--threads", threads,
                     "--quad-order", "15", "--final-quad-order", "20"]) == 0
        outs.append(json.loads(out.read_text())["loglik"])
    assert abs(outs[0] - outs[1]) <= 1e-10 * abs(outs[0])


def test_fit_and_resume(tmp_path, trials_file, params_file):
    out1 = tmp_path / "fit1.json"
    assert main(["fit", "--trials", trials_file, "--init", params_file,
                 "--free", "kappa", "--output", str(out1),
                 "--quad-order", "10", "--final-quad-order", "12"]) == 0
    fit1 = json.loads(out1.read_text())
    assert fit1["converged"]
    est_file = tmp_path / "est.json"
    est_file.write_text(json.dumps(fit1["estimate"]))
    out2 = tmp_path / "fit2.json"
    assert main(["fit", "--trials", trials_file, "--init", str(est_file),
                 "--free", "kappa", "--output", str(out2),
                 "--quad-order", "10", "--final-quad-order", "12"]) == 0
    fit2 = json.loads(out2.read_text())
    assert fit2["iterations"] <= 2


def test_mcmc_chain_output(tmp_path, trials_file, params_file):
    out = tmp_path / "chain.csv"
    assert main(["mcmc", "--trials", trials_file, "--init", params_file,
                 "--free", "kappa", "--draws", "25", "--burn", "5",
                 "--scale", "0.05", "--output", str(out),
                 "--quad-order", "10", "--final-quad-order", "12"]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "kappa"
    assert len(lines) == 26
    summary = json.loads((tmp_path / "chain.csv.summary.json").read_text())
    assert 0.0 <= summary["acceptance_rate"] <= 1.0


def test_help_runs():
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    for sub in ("density", "simulate", "kstest", "loglik", "fit", "mcmc"):
        with pytest.raises(SystemExit) as exc:
            main([sub, "--help"])
        assert exc.value.code == 0


def test_model_config_density(tmp_path):
    cfg = {
        "model": "ou", "theta": 1.0, "lam": 1.5, "sigma": 2.0,
        "upper": {"type": "exp_power", "scale": 2.0, "tau": 2.0, "power": 3.0},
        "lower": {"type": "exp_power", "scale": -2.0, "tau": 2.0, "power": 3.0},
        "initial": {"type": "beta", "alpha": 10, "beta": 25}, "horizon": 3.0,
        "linearize": {"max_abs_dev": 0.001},
    }
    f = tmp_path / "ou.json"
    f.write_text(json.dumps(cfg))
    out = tmp_path / "dens.csv"
    assert main(["density", "--config", str(f), "--output", str(out), "--grid", "0:3:50"]) == 0
    rows, q = _read_density_csv(out)
    assert np.all(rows[:, 1:] >= 0)
    assert 0 <= q <= 1
