import pytest

from resample_lab.errors import ConfigError
from resample_lab.experiments import (EXPERIMENTS, experiment_params, run_experiment, thread_count,
                                      trial_rng)


def test_trial_streams_are_independent_and_reproducible():
    a = trial_rng(0, 1, 0).standard_normal(4)
    assert (a == trial_rng(0, 1, 0).standard_normal(4)).all()
    assert not (a == trial_rng(0, 1, 1).standard_normal(4)).any()
    assert not (a == trial_rng(0, 2, 0).standard_normal(4)).any()


def test_thread_count(monkeypatch):
    monkeypatch.delenv("RESAMPLE_LAB_THREADS", raising=False)
    assert thread_count() == 1
    monkeypatch.setenv("RESAMPLE_LAB_THREADS", "3")
    assert thread_count() == 3
    monkeypatch.setenv("RESAMPLE_LAB_THREADS", "zero")
    with pytest.raises(ConfigError):
        thread_count()


def test_params_validation():
    assert experiment_params("gamma-sweep")["n_seeds"] == 20
    assert experiment_params("gamma-sweep", ["n_seeds=3"])["n_seeds"] == 3
    with pytest.raises(ConfigError):
        experiment_params("gamma-sweep", ["n_sedes=3"])
    with pytest.raises(ConfigError):
        experiment_params("gamma-sweep", ['n_seeds="many"'])
    with pytest.raises(ConfigError):
        run_experiment("no-such-thing", 0)
    assert "ct-bench" in EXPERIMENTS


def test_threads_do_not_change_results(tmp_path):
    over = ["n_seeds=3", "T=100"]
    a = run_experiment("resample-vs-encode", 0, tmp_path / "a", over, threads=1)
    b = run_experiment("resample-vs-encode", 0, tmp_path / "b", over, threads=2)
    assert a.rows == b.rows
    assert (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()
    trials = sorted(p.name for p in (tmp_path / "a" / "trials").iterdir())
    assert trials == ["trial_000.csv", "trial_001.csv", "trial_002.csv"]


def test_fast_protocols_pass():
    assert run_experiment("tweedie-exactness", 0, overrides=["n_cases=20"]).passed
    assert run_experiment("covariance-theorem", 0, overrides=["n_cases=20"]).passed
