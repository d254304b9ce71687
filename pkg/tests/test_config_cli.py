import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from bngd import config as C
from bngd.cli import main

SMALL_INSTANCE = {"spectrum": {"kind": "logspace", "d": 6, "lo": 1.0, "hi": 100.0},
                  "u_mode": "random_sphere"}


def write_config(path, data):
    path.write_text(json.dumps(data))
    return path


def read_json(path):
    return json.loads(path.read_text())


# ---------------------------------------------------------------- config

def test_resolve_fills_defaults_and_overrides():
    cfg = C.resolve("sweep", {"sweep": {"k": 10}}, {"seed": 4, "workers": 2, "thin": 5, "out": "x"})
    assert cfg["sweep"]["k"] == 10
    assert cfg["sweep"]["eps_a"] == {"logspace": [-10, 0, 41], "scale": 1.99}
    assert cfg["seed"] == 4 and cfg["workers"] == 2
    assert cfg["output"] == {"dir": "x", "thin": 5, "full_record": 1000}


def test_default_sweep_grid_size():
    cfg = C.resolve("sweep", overrides={"seed": 0})
    assert C.grid(cfg["sweep"]["eps_a"]).size * C.grid(cfg["sweep"]["eps"]).size == 1763
    np.testing.assert_allclose(C.grid(cfg["sweep"]["eps_a"])[-1], 1.99)


@pytest.mark.parametrize("user, overrides, fragment", [
    ({}, {}, "seed is required"),
    ({"kind": "sweep"}, {"seed": 1}, "does not match"),
    ({"schema_version": 9}, {"seed": 1}, "schema_version"),
    ({}, {"seed": -1}, "non-negative"),
    ({}, {"seed": 1, "workers": 0}, "workers"),
    ({}, {"seed": 1, "thin": 0}, "thin"),
    ({"instance": {"spectrum": {"kind": "explicit"}}}, {"seed": 1}, "missing field"),
    ({"instance": {"spectrum": {"kind": "explicit", "values": [1, -2]}}}, {"seed": 1}, "instance.spectrum"),
    ({"run": {"mode": "adam"}}, {"seed": 1}, "run.mode"),
    ({"run": {"w0_mode": "given"}}, {"seed": 1}, "run.w0"),
])
def test_resolve_errors(user, overrides, fragment):
    with pytest.raises(C.ConfigError, match=fragment):
        C.resolve("single_run", user, overrides)


def test_seed_not_needed_for_given_instance():
    user = {"instance": {"spectrum": {"kind": "explicit", "values": [2.0]}, "u_mode": "given", "u": [3.0]},
            "run": {"w0_mode": "given", "w0": [0.0]}}
    assert C.resolve("single_run", user)["seed"] is None


def test_grid_forms():
    np.testing.assert_array_equal(C.grid([1, 2]), [1.0, 2.0])
    np.testing.assert_allclose(C.grid({"logspace": [0, 2, 3], "scale": 2}), [2, 20, 200])
    np.testing.assert_allclose(C.grid({"linspace": [1, 2, 3]}), [1, 1.5, 2])
    np.testing.assert_array_equal(C.grid(3), [3.0])
    with pytest.raises(C.ConfigError):
        C.grid({"range": 1})
    with pytest.raises(C.ConfigError):
        C.grid([])


def test_load_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(C.ConfigError, match="invalid JSON"):
        C.load(bad)
    bad.write_text("[1, 2]")
    with pytest.raises(C.ConfigError, match="object"):
        C.load(bad)


# ---------------------------------------------------------------- cli: run

def test_run_requires_seed(tmp_path, capsys):
    assert main(["run", "--out", str(tmp_path)]) == 2
    assert "seed" in capsys.readouterr().err


def test_missing_config_is_usage_error(tmp_path):
    assert main(["run", "--config", str(tmp_path / "none.json"), "--seed", "1"]) == 2


def test_bad_subcommand():
    assert main(["launch"]) == 2


def test_run_one_dimensional_gd(tmp_path):
    cfg = write_config(tmp_path / "c.json", {
        "instance": {"spectrum": {"kind": "explicit", "values": [2.0]}, "u_mode": "given", "u": [3.0]},
        "run": {"mode": "gd", "eps": 0.5, "w0_mode": "given", "w0": [0.0]},
    })
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    lines = (out / "trajectory.csv").read_text().splitlines()
    # header, the initial row and the single step
    assert len(lines) == 3
    summary = read_json(out / "summary.json")
    assert summary["outcome"] == "converged_minimizer"
    assert summary["n_iters"] == 1


def test_run_exit_codes(tmp_path):
    cfg = {"instance": SMALL_INSTANCE, "run": {"eps": 1e3, "max_iters": 5}}
    assert main(["run", "--config", str(write_config(tmp_path / "a.json", cfg)), "--seed", "1",
                 "--out", str(tmp_path / "a")]) == 4
    cfg = {"instance": SMALL_INSTANCE, "run": {"mode": "gd", "eps": 1.0, "max_iters": 500}}
    assert main(["run", "--config", str(write_config(tmp_path / "b.json", cfg)), "--seed", "1",
                 "--out", str(tmp_path / "b")]) == 5


def test_run_thinning_and_outputs(tmp_path):
    cfg = write_config(tmp_path / "c.json", {"instance": SMALL_INSTANCE,
                                             "run": {"eps": 1e4, "max_iters": 60},
                                             "output": {"full_record": 20}})
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--seed", "3", "--thin", "7", "--out", str(out)]) == 4
    ks = [int(float(line.split(",")[0])) for line in (out / "trajectory.csv").read_text().splitlines()[1:]]
    assert ks == list(range(21)) + [21, 28, 35, 42, 49, 56, 60]
    manifest = read_json(out / "manifest.json")
    assert manifest["schema_version"] == C.SCHEMA_VERSION
    assert set(manifest["artifacts"]) == {"config.json", "trajectory.csv", "summary.json"}
    assert manifest["config"] == read_json(out / "config.json")


def test_run_deterministic_and_echo_reproduces(tmp_path):
    cfg = write_config(tmp_path / "c.json", {"instance": SMALL_INSTANCE,
                                             "run": {"eps": 0.3, "max_iters": 200, "w0_mode": "random_sphere"}})
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    main(["run", "--config", str(cfg), "--seed", "9", "--out", str(a)])
    main(["run", "--config", str(cfg), "--seed", "9", "--out", str(b)])
    assert (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()
    echo = read_json(a / "config.json")
    echo["output"]["dir"] = str(c)
    main(["run", "--config", str(write_config(tmp_path / "echo.json", echo))])
    assert (a / "trajectory.csv").read_bytes() == (c / "trajectory.csv").read_bytes()
    assert (a / "summary.json").read_bytes() == (c / "summary.json").read_bytes()


# ---------------------------------------------------------------- cli: sweep

def sweep_config(tmp_path):
    return write_config(tmp_path / "sweep.json", {
        "kind": "sweep",
        "instance": {"spectrum": {"kind": "logspace", "d": 8, "lo": 1.0, "hi": 1e3}},
        "run": {"a0": 0.0},
        "sweep": {"eps_a": {"logspace": [-2, 0, 3]}, "eps": {"logspace": [-3, 3, 4]},
                  "kappas": [1e2, 1e3], "k": 100},
    })


def test_sweep_outputs_independent_of_workers(tmp_path):
    cfg = sweep_config(tmp_path)
    a, b = tmp_path / "w1", tmp_path / "w3"
    assert main(["sweep", "--config", str(cfg), "--seed", "2", "--workers", "1", "--out", str(a)]) == 0
    assert main(["sweep", "--config", str(cfg), "--seed", "2", "--workers", "3", "--out", str(b)]) == 0
    for name in ("sweep_kappa100.csv", "sweep_kappa100.json", "sweep_kappa1000.csv", "sweep_kappa1000.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    rows = (a / "sweep_kappa100.csv").read_text().splitlines()
    assert json.loads(rows[0][2:])["k"] == 100
    assert rows[1] == "eps_a,eps,final_loss,eps_hat,color,status"
    assert len(rows) == 2 + 12
    header = read_json(a / "sweep_kappa100.json")
    assert sum(header["color_counts"].values()) == 12


def test_sweep_single_cell_matches_run(tmp_path):
    from bngd.dynamics import RunConfig, run
    cfg = write_config(tmp_path / "one.json", {
        "kind": "sweep", "instance": SMALL_INSTANCE, "run": {"a0": 0.5},
        "sweep": {"eps_a": [0.7], "eps": [2.0], "kappas": [], "k": 50},
    })
    out = tmp_path / "out"
    assert main(["sweep", "--config", str(cfg), "--seed", "5", "--out", str(out)]) == 0
    resolved = read_json(out / "config.json")
    p = C.build_instance(resolved)
    tr = run(p, RunConfig(eps=2.0, w0=C.initial_w(resolved, p), eps_a=0.7, a0=0.5, max_iters=50,
                          grad_tol=1e-300))
    assert tr.n_iters == 50
    row = (out / "sweep.csv").read_text().splitlines()[2].split(",")
    assert float(row[2]) == pytest.approx(tr.final.loss, rel=1e-12)
    assert float(row[3]) == pytest.approx(tr.final.eps_hat, rel=1e-12)


# ---------------------------------------------------------------- cli: other kinds

def test_dim_scan_tiny(tmp_path):
    cfg = write_config(tmp_path / "dim.json", {
        "kind": "dim_scan",
        "dim_scan": {"dims": [4, 8], "n_runs": 2, "eps": {"logspace": [-4, -1, 7]}, "k": 30, "n_mc": 20},
    })
    out = tmp_path / "out"
    assert main(["dim-scan", "--config", str(cfg), "--seed", "0", "--out", str(out)]) == 0
    rows = (out / "dim_scan.csv").read_text().splitlines()
    assert len(rows) == 3
    for line in rows[1:]:
        vals = dict(zip(rows[0].split(","), line.split(",")))
        assert float(vals["omega_predicted"]) >= float(vals["lower_bound_arithmetic"])
    assert len((out / "dim_scan_curves.csv").read_text().splitlines()) == 1 + 2 * 7
    assert "predicted_slope" in read_json(out / "dim_scan.json")


def test_omega_command(tmp_path):
    cfg = write_config(tmp_path / "om.json", {"kind": "omega", "omega": {"n_samples": 20, "include_samples": True}})
    out = tmp_path / "out"
    assert main(["omega", "--config", str(cfg), "--seed", "3", "--out", str(out)]) == 0
    est = read_json(out / "omega.json")
    assert len(est["beta0_samples"]) == 20
    assert est["omega"] >= est["lower_bound_arithmetic"]


def test_scaling_check_command(tmp_path):
    cfg = write_config(tmp_path / "sc.json", {"kind": "scaling_check", "scaling_check": {"n_cases": 5}})
    out = tmp_path / "out"
    assert main(["scaling-check", "--config", str(cfg), "--seed", "0", "--out", str(out)]) == 0
    report = read_json(out / "scaling.json")
    assert report["conjugate"]["passed"] and report["rescale_w"]["passed"]


# ---------------------------------------------------------------- cli: verify

def test_verify_empty_filter(tmp_path):
    out = tmp_path / "out"
    assert main(["verify", "--checks", "", "--out", str(out)]) == 0
    report = read_json(out / "verify.json")
    assert report == {"seed": 0, "fault": None, "passed": True, "n_checks": 0, "checks": {}}


def test_verify_subset_passes(tmp_path):
    out = tmp_path / "out"
    assert main(["verify", "--checks", "interlacing,saddle_strict,contraction_bound", "--out", str(out)]) == 0
    assert set(read_json(out / "verify.json")["checks"]) == {"interlacing", "saddle_strict", "contraction_bound"}


def test_verify_fault_is_detected(tmp_path):
    out = tmp_path / "out"
    assert main(["verify", "--checks", "contraction_bound", "--fault", "flip_a_sign", "--out", str(out)]) == 6
    assert read_json(out / "verify.json")["checks"]["contraction_bound"]["violations"] > 0


def test_verify_unknown_check(tmp_path):
    assert main(["verify", "--checks", "nope", "--out", str(tmp_path)]) == 1


def test_verify_list(capsys):
    assert main(["verify", "--list"]) == 0
    assert "residual_recurrence" in capsys.readouterr().out.split()


@pytest.mark.skipif(shutil.which("bngd") is None, reason="console script not installed")
def test_console_script(tmp_path):
    proc = subprocess.run(["bngd", "verify", "--checks", "", "--out", str(tmp_path)], capture_output=True)
    assert proc.returncode == 0


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "bngd.cli", "run", "--out", str(tmp_path)], capture_output=True,
                          text=True)
    assert proc.returncode == 2
    assert "seed" in proc.stderr
