"""End-to-end CLI behaviour: artifacts, reproducibility, error paths."""

import json
import subprocess
import sys

import numpy as np
import pytest

from longmix import cli


def run_cli(args):
    return cli.main(list(args))


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    rc = run_cli(["simulate", "--scenario", "S1", "--K", "2", "--noise", "2",
                  "--seed", "5", "--out", str(out)])
    assert rc == 0
    return out


def write_config(path, **kv):
    path.write_text("# chain settings\n" +
                    "\n".join(f"{k} = {v}" for k, v in kv.items()) + "\n")
    return str(path)


def test_simulate_writes_expected_files(sim_dir):
    for name in ("data.csv", "covariates.csv", "spec.csv", "truth.csv",
                 "manifest.json"):
        assert (sim_dir / name).exists(), name
    truth = (sim_dir / "truth.csv").read_text().strip().split("\n")
    assert truth[0] == "individual_id,label"
    assert len(truth) == 101


def test_fit_writes_all_artifacts(sim_dir, tmp_path):
    cfg = write_config(tmp_path / "chain.cfg", n_iter=200, n_burn=100, thin=2,
                       seed=11, time_scale=26, d=2)
    out = tmp_path / "fit"
    rc = run_cli(["fit", "--data", str(sim_dir / "data.csv"),
                  "--covariates", str(sim_dir / "covariates.csv"),
                  "--spec", str(sim_dir / "spec.csv"),
                  "--config", cfg, "--truth", str(sim_dir / "truth.csv"),
                  "--out", str(out)])
    assert rc == 0
    for name in ("trace.csv", "similarity.csv", "partition.csv",
                 "metrics.json", "manifest.json"):
        assert (out / name).exists(), name

    metrics = json.loads((out / "metrics.json").read_text())
    assert set(metrics) >= {"K", "binder_loss", "d", "n_draws", "aRand"}
    assert metrics["d"] == 2
    assert metrics["n_draws"] == 50
    assert -1.0 <= metrics["aRand"] <= 1.0

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == "11"
    assert "data" in manifest["input_digests"]
    assert manifest["config"]["d"] == "2"

    part = (out / "partition.csv").read_text().strip().split("\n")
    assert part[0] == "individual_id,label"
    assert len(part) == 101

    trace = (out / "trace.csv").read_text().split("\n")
    assert trace[0].startswith("iter,alpha,K,sigma2_1")
    sim = np.loadtxt(out / "similarity.csv", delimiter=",")
    assert sim.shape == (100, 100)
    np.testing.assert_allclose(np.diag(sim), 1.0)


def test_fit_identical_seed_byte_identical_outputs(sim_dir, tmp_path):
    """Same seed and config twice: trace.csv, similarity.csv, and
    partition.csv must match byte for byte."""
    cfg = write_config(tmp_path / "chain.cfg", n_iter=150, n_burn=50, thin=2,
                       seed=21, time_scale=26, d=2)
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        rc = run_cli(["fit", "--data", str(sim_dir / "data.csv"),
                      "--covariates", str(sim_dir / "covariates.csv"),
                      "--spec", str(sim_dir / "spec.csv"),
                      "--config", cfg, "--out", str(out)])
        assert rc == 0
        outs.append(out)
    for name in ("trace.csv", "similarity.csv", "partition.csv"):
        a = (outs[0] / name).read_bytes()
        b = (outs[1] / name).read_bytes()
        assert a == b, f"{name} differs between identical runs"


def test_fit_seed_flag_overrides_config(sim_dir, tmp_path):
    cfg = write_config(tmp_path / "chain.cfg", n_iter=150, n_burn=50, thin=2,
                       seed=21, time_scale=26, d=2)
    out = tmp_path / "fit"
    rc = run_cli(["fit", "--data", str(sim_dir / "data.csv"),
                  "--covariates", str(sim_dir / "covariates.csv"),
                  "--spec", str(sim_dir / "spec.csv"),
                  "--config", cfg, "--seed", "99", "--out", str(out)])
    assert rc == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 99


def test_fit_error_path_writes_error_json(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("individual_id,feature_id,time,value\n")
    out = tmp_path / "fit"
    rc = run_cli(["fit", "--data", str(bad), "--out", str(out)])
    assert rc == 1
    err = json.loads((out / "error.json").read_text())
    assert "error" in err and "message" in err


def test_unknown_config_key_rejected(sim_dir, tmp_path):
    cfg = write_config(tmp_path / "chain.cfg", n_iter=100, n_burn=50,
                       bogus_key=3)
    out = tmp_path / "fit"
    rc = run_cli(["fit", "--data", str(sim_dir / "data.csv"),
                  "--covariates", str(sim_dir / "covariates.csv"),
                  "--spec", str(sim_dir / "spec.csv"),
                  "--config", cfg, "--out", str(out)])
    assert rc == 1
    err = json.loads((out / "error.json").read_text())
    assert "bogus_key" in err["message"]


def test_config_file_parse_error_line_number(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("n_iter = 100\nnot a pair\n")
    with pytest.raises(ValueError, match=":2:"):
        cli.load_config_file(str(cfg))


def test_build_chain_config_mappings():
    cfg, ts = cli.build_chain_config({
        "n_iter": "100", "n_burn": "50", "thin": "2", "seed": "7",
        "d": "3", "alpha_prior": "0.5,0.5", "time_scale": "26",
        "eta_update": "standard", "kappa0": "0.01"})
    assert cfg.d_override == 3
    assert cfg.hyper.alpha_prior == (0.5, 0.5)
    assert cfg.hyper.kappa0 == 0.01
    assert cfg.eta_update == "standard"
    assert ts == 26.0


def test_bench_smoke(tmp_path):
    cfg = write_config(tmp_path / "chain.cfg", n_iter=150, n_burn=50, thin=2,
                       seed=3)
    out = tmp_path / "bench"
    rc = run_cli(["bench", "--scenarios", "S1", "--K", "2", "--noise", "2",
                  "--variants", "twostage,first", "--replicates", "1",
                  "--seed", "4", "--config", cfg, "--out", str(out)])
    assert rc == 0
    lines = (out / "bench_results.csv").read_text().strip().split("\n")
    assert lines[0] == "scenario,K,R_noise,variant,replicate,K_hat,aRand,seconds"
    assert len(lines) == 3
    summary = json.loads((out / "summary.json").read_text())
    assert len(summary) == 2


def test_stability_smoke(sim_dir, tmp_path):
    cfg = write_config(tmp_path / "chain.cfg", n_iter=150, n_burn=50, thin=2,
                       seed=13, d=2)
    out = tmp_path / "stab"
    rc = run_cli(["stability", "--data", str(sim_dir / "data.csv"),
                  "--covariates", str(sim_dir / "covariates.csv"),
                  "--spec", str(sim_dir / "spec.csv"),
                  "--config", cfg, "--subsets", "2", "--out", str(out)])
    assert rc == 0
    lines = (out / "stability.csv").read_text().strip().split("\n")
    assert lines[0] == "subset,K_hat,aRand"
    assert len(lines) == 3


def test_diag_flags_nonstationary_trace(tmp_path, capsys):
    rng = np.random.default_rng(0)
    n = 2000
    good = rng.standard_normal(n)
    bad = rng.standard_normal(n) + np.linspace(0.0, 6.0, n)
    path = tmp_path / "trace.csv"
    with open(path, "w") as fh:
        fh.write("iter,steady,drifting\n")
        for i in range(n):
            fh.write(f"{i},{float(good[i])!r},{float(bad[i])!r}\n")
    rc = run_cli(["diag", str(path)])
    assert rc == 0
    lines = capsys.readouterr().out.strip().split("\n")
    report = dict(line.split(": ", 1) for line in lines)
    assert not report["steady"].endswith("*")
    assert report["drifting"].endswith("*")


def test_diag_short_trace_reports_error(tmp_path, capsys):
    path = tmp_path / "trace.csv"
    with open(path, "w") as fh:
        fh.write("iter,x\n")
        for i in range(20):
            fh.write(f"{i},{float(i)}\n")
    rc = run_cli(["diag", str(path)])
    assert rc == 0
    assert "too short" in capsys.readouterr().out


def test_version_string():
    proc = subprocess.run([sys.executable, "-m", "longmix", "--version"],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    out = proc.stdout.strip()
    assert out.startswith("longmix 0.1.0 (constants ")
    digest = out.split("constants ")[1].rstrip(")")
    assert len(digest) == 12
    assert all(c in "0123456789abcdef" for c in digest)
