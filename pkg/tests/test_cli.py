import json
from pathlib import Path

import numpy as np
import pytest

from resample_lab.cli import main
from resample_lab.io import read_metrics_csv, read_tensor

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
TWO_MODE = str(CONFIGS / "two_mode.json")


def test_run_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--config", TWO_MODE, "--out", str(out), "--override", "schedule.T=200"]) == 0
    rows = read_metrics_csv(out / "metrics.csv")
    assert {r["metric"] for r in rows} == {"residual"}
    assert float(rows[0]["value"]) <= 1e-4
    assert read_tensor(out / "z0.f64").shape == (2,)
    report = json.loads((out / "report.json").read_text())
    assert report["solver"] == "resample" and len(report["diagnostics"]) == 199
    assert "resample:" in capsys.readouterr().out


def test_run_is_byte_identical(tmp_path):
    args = ["run", "--config", TWO_MODE, "--seed", "4", "--override", "schedule.T=150"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("metrics.csv", "report.json", "z0.f64", "x0.f64"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_solver_flag(tmp_path):
    out = tmp_path / "dps"
    assert main(["run", "--config", TWO_MODE, "--solver", "latent_dps", "--out", str(out),
                 "--override", "schedule.T=150"]) == 0
    assert read_metrics_csv(out / "metrics.csv")[0]["experiment"] == "run:latent_dps"


def test_config_errors_exit_2(tmp_path, capsys):
    cfg = json.loads(Path(TWO_MODE).read_text())
    del cfg["gamma"]
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "/gamma" in capsys.readouterr().err
    assert main(["run", "--config", TWO_MODE, "--override", "consistency.kappa=2"]) == 2
    assert "/consistency/kappa" in capsys.readouterr().err


def test_missing_file_exits_1(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.json")]) in (1, 2)


def test_solver_abort_exits_3(tmp_path):
    out = tmp_path / "abort"
    code = main(["run", "--config", TWO_MODE, "--solver", "latent_dps", "--out", str(out),
                 "--override", "schedule.T=100", "--override", "latent_dps=1e200"])
    assert code == 3
    info = json.loads((out / "abort.json").read_text())
    assert "t" in info and isinstance(info["diagnostics"], list)


def test_oracle_matches_quadrature(tmp_path):
    out = tmp_path / "oracle"
    assert main(["oracle", "--config", TWO_MODE, "--out", str(out)]) == 0
    mean = read_tensor(out / "posterior_mean.f64")
    cov = read_tensor(out / "posterior_cov.f64")
    # coordinate 0 is measured: brute-force the 1-D posterior on a fine grid
    s = np.linspace(-6.0, 6.0, 1_200_001)
    prior = 0.5 * np.exp(-(s - 3) ** 2 / 0.5) + 0.5 * np.exp(-(s + 3) ** 2 / 0.5)
    w = prior * np.exp(-(3.02 - s) ** 2 / (2 * 0.01 ** 2))
    w /= w.sum()
    m0 = float(w @ s)
    v0 = float(w @ (s - m0) ** 2)
    assert mean[0] == pytest.approx(m0, abs=1e-8)
    assert cov[0, 0] == pytest.approx(v0, rel=1e-6)
    assert mean[1] == pytest.approx(0.0, abs=1e-12)
    assert cov[1, 1] == pytest.approx(0.25, rel=1e-12)


def test_oracle_rejects_nonlinear_chain(tmp_path):
    assert main(["oracle", "--config", str(CONFIGS / "mlp_inpainting.json"),
                 "--out", str(tmp_path / "o")]) == 2


def test_experiment_command(tmp_path, capsys):
    out = tmp_path / "exp"
    code = main(["experiment", "tweedie-exactness", "--out", str(out), "--override", "n_cases=5"])
    assert code == 0
    rows = read_metrics_csv(out / "summary.csv")
    assert any(r["metric"] == "verdict" and r["value"] == "PASS" for r in rows)
    assert "verdict" in capsys.readouterr().out
