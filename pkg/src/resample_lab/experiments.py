"""Predefined desk-scale experiment protocols with pass/fail verdicts.

Every experiment is a pure function of its parameters and the master seed.
Trial ``i`` draws from its own counter-based stream
``Philox(SeedSequence(seed, spawn_key=(i, stream)))``, so trials can run on
a thread pool (size from ``RESAMPLE_LAB_THREADS``) without changing any
number. Per-trial CSVs are written by the workers; the summary CSV is
written once after all trials have joined.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigError, EncoderConvergenceWarning
from .io import write_metrics_csv
from .metrics import mc_moments, psnr, ssim
from .operators import fbp_reconstruct
from .optim import ConsistencyConfig
from .prior import random_mixture
from .problems import ct_problem, mlp_inpainting_problem, two_mode_problem
from .sampler import (SamplerConfig, _ddim_parts, _encode_draw, _resample_draw, latent_dps_solve,
                      resample_solve, tweedie_estimate)
from .schedule import build_linear_schedule, build_timetable, resample_sigma2

THREADS_ENV = "RESAMPLE_LAB_THREADS"


def trial_rng(seed: int, trial: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for ``(seed, trial, stream)``."""
    ss = np.random.SeedSequence(seed, spawn_key=(trial, stream))
    return np.random.Generator(np.random.Philox(ss))


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


@dataclass
class ExperimentResult:
    name: str
    seed: int
    params: dict
    passed: bool
    rows: list[tuple[str, object]] = field(default_factory=list)

    @property
    def config_hash(self) -> str:
        return protocol_hash(self.name, self.params)

    def csv_rows(self):
        h = self.config_hash
        return [(self.name, m, v, self.seed, h) for m, v in self.rows]

    def value(self, metric: str):
        for m, v in self.rows:
            if m == metric:
                return v
        raise KeyError(metric)


def protocol_hash(name: str, params: dict) -> str:
    canon = json.dumps({"experiment": name, "params": params}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


class _Runner:
    """Maps a trial function over trial indices, in order, on a thread pool."""

    def __init__(self, name: str, seed: int, chash: str, out: Path | None, threads: int):
        self.name, self.seed, self.chash, self.out, self.threads = name, seed, chash, out, threads

    def map(self, fn: Callable[[int], list[tuple[str, float]]], n: int) -> list[list]:
        def work(i):
            with warnings.catch_warnings():
                # off-range pixel projections can leave the encoder short of its
                # tolerance; the step's residual is recorded either way
                warnings.simplefilter("ignore", EncoderConvergenceWarning)
                rows = fn(i)
            if self.out is not None:
                d = self.out / "trials"
                d.mkdir(parents=True, exist_ok=True)
                write_metrics_csv(d / f"trial_{i:03d}.csv",
                                  [(self.name, f"trial_{i}/{m}", v, self.seed, self.chash)
                                   for m, v in rows])
            return rows

        if self.threads == 1 or n == 1:
            return [work(i) for i in range(n)]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(work, range(n)))


def _sampler(T: int, skip: int, gamma: float, preset: str = "natural", tau: float = 1e-4,
             remap_mode: str = "resample", latent_dps=None, **consistency) -> SamplerConfig:
    sched = build_linear_schedule(T)
    return SamplerConfig(sched, build_timetable(sched, skip=skip, mode=preset), gamma=gamma,
                         consistency=ConsistencyConfig(tau=tau, **consistency),
                         latent_dps=latent_dps, remap_mode=remap_mode)


def _col(trials, key):
    return np.array([dict(r)[key] for r in trials])


# ------------------------------------------------------------- identities

def _tweedie_exactness(p, seed, run):
    sched = build_linear_schedule(p["T"])

    def trial(i):
        rng = trial_rng(seed, i)
        prior = random_mixture(rng, int(rng.integers(1, 5)), int(rng.integers(1, 5)))
        t = int(rng.integers(0, p["T"]))
        ab = float(sched.alpha_bar[t])
        z_t = np.sqrt(ab) * prior.sample(rng) + np.sqrt(1 - ab) * rng.standard_normal(prior.dim)
        mean, _ = prior.posterior(z_t, ab)
        return [("abs_error", float(np.max(np.abs(tweedie_estimate(prior, sched, t, z_t) - mean))))]

    err = _col(run.map(trial, p["n_cases"]), "abs_error")
    worst = float(err.max())
    return worst < p["tol"], [("n_cases", p["n_cases"]), ("max_abs_error", worst),
                              ("tolerance", p["tol"])]


def _covariance_theorem(p, seed, run):
    sched = build_linear_schedule(p["T"])

    def trial(i):
        rng = trial_rng(seed, i)
        prior = random_mixture(rng, int(rng.integers(1, 5)), int(rng.integers(1, 5)))
        t = int(rng.integers(0, p["T"]))
        ab = float(sched.alpha_bar[t])
        z_t = np.sqrt(ab) * prior.sample(rng) + np.sqrt(1 - ab) * rng.standard_normal(prior.dim)
        _, cov = prior.posterior(z_t, ab)
        H = prior.hessian(z_t, ab)
        formula = (1 - ab) ** 2 / ab * H + (1 - ab) / ab * np.eye(prior.dim)
        return [("abs_error", float(np.max(np.abs(formula - cov))))]

    err = _col(run.map(trial, p["n_cases"]), "abs_error")
    worst = float(err.max())
    return worst < p["tol"], [("n_cases", p["n_cases"]), ("max_abs_error", worst),
                              ("tolerance", p["tol"])]


def _within(moments, mean, var, n_se):
    """Mean and covariance of draws against an isotropic Gaussian, in standard errors."""
    d = mean.size
    z_mean = np.abs(moments.mean - mean) / np.sqrt(var / moments.n)
    # sampling std of a Gaussian sample covariance entry: sqrt((S_ii S_jj + S_ij^2) / n)
    target = var * np.eye(d)
    se_cov = np.sqrt((var * var + target ** 2) / moments.n)
    z_cov = np.abs(moments.cov - target) / se_cov
    worst = max(float(z_mean.max()), float(z_cov.max()))
    return worst < n_se, worst


def _prop_distributions(p, seed, run):
    N, d, n_se = p["n_draws"], p["dim"], p["n_se"]

    def trial(i):
        rng = trial_rng(seed, i)
        ab = float(rng.uniform(0.05, 0.95))
        z0 = rng.normal(scale=2.0, size=d)
        zp = rng.normal(scale=2.0, size=d)
        s2 = float(np.exp(rng.uniform(np.log(1e-2), np.log(1e2))))
        draws = rng.standard_normal((2, N, d))
        enc = _encode_draw(ab, z0, draws[0])
        ok1, w1 = _within(mc_moments(enc), np.sqrt(ab) * z0, 1 - ab, n_se)
        res = _resample_draw(ab, z0, zp, s2, draws[1])
        denom = s2 + 1 - ab
        ok2, w2 = _within(mc_moments(res), (s2 * np.sqrt(ab) * z0 + (1 - ab) * zp) / denom,
                          s2 * (1 - ab) / denom, n_se)
        return [("alpha_bar", ab), ("sigma2", s2), ("encode_max_se", w1), ("encode_ok", ok1),
                ("resample_max_se", w2), ("resample_ok", ok2)]

    trials = run.map(trial, p["n_settings"])
    rows = []
    for i, r in enumerate(trials):
        rows += [(f"setting_{i}/{m}", v) for m, v in r]
    ok = all(dict(r)["encode_ok"] and dict(r)["resample_ok"] for r in trials)
    return ok, rows


def _variance_ordering(p, seed, run):
    ab = p["alpha_bar"]
    grid = np.logspace(-4, 4, p["n_grid"])
    analytic = grid * (1 - ab) / (grid + 1 - ab)
    exact_ok = bool(np.all(analytic < 1 - ab))
    rows = [("analytic_grid_points", p["n_grid"]), ("analytic_ok", exact_ok)]
    N, d = p["n_draws"], p["dim"]
    z0 = np.linspace(-1.0, 1.0, d)
    zp = np.linspace(0.5, -0.5, d)

    def trial(i):
        s2 = p["empirical_sigma2"][i]
        enc = _encode_draw(ab, z0, trial_rng(seed, i, 0).standard_normal((N, d)))
        res = _resample_draw(ab, z0, zp, s2, trial_rng(seed, i, 1).standard_normal((N, d)))
        ve, vr = enc.var(axis=0, ddof=1), res.var(axis=0, ddof=1)
        return [("sigma2", s2), ("var_encode_max", float(ve.max())),
                ("var_resample_max", float(vr.max())), ("var_encode_min", float(ve.min())),
                ("var_resample_theory", s2 * (1 - ab) / (s2 + 1 - ab)),
                ("strict", bool(np.all(vr < ve)))]

    trials = run.map(trial, len(p["empirical_sigma2"]))
    for i, r in enumerate(trials):
        rows += [(f"sigma2_{i}/{m}", v) for m, v in r]
    return exact_ok and all(dict(r)["strict"] for r in trials), rows


def _unbiasedness(p, seed, run):
    sched = build_linear_schedule(p["T"])
    N = p["n_draws"]

    def trial(i):
        t = p["steps"][i]
        rng = trial_rng(seed, i)
        prior = random_mixture(rng, 2, p["dim"], spread=2.0)
        ab1 = float(sched.alpha_bar[t + 1])
        z0 = prior.sample(rng, N)
        z_next = np.sqrt(ab1) * z0 + np.sqrt(1 - ab1) * rng.standard_normal(z0.shape)
        z_prime = _ddim_parts(prior, sched, t, z_next, rng.standard_normal(z0.shape))[0]
        # A(D(z)) = z with noiseless y = z0: the consistent estimate is z0 itself
        z_hat = _resample_draw(float(sched.alpha_bar[t]), z0, z_prime,
                               resample_sigma2(sched, t, p["gamma"]), rng.standard_normal(z0.shape))
        diff = mc_moments(z_hat - z_prime)
        score = np.abs(diff.mean) / diff.stderr_mean
        return [("t", t), ("max_abs_mean_diff", float(np.abs(diff.mean).max())),
                ("max_se", float(score.max())), ("ok", bool(np.all(score < p["n_se"])))]

    trials = run.map(trial, len(p["steps"]))
    rows = []
    for i, r in enumerate(trials):
        rows += [(f"step_{i}/{m}", v) for m, v in r]
    return all(dict(r)["ok"] for r in trials), rows


# --------------------------------------------------------------- solvers

def _mlp_trial(p, seed, i, **overrides):
    prob = mlp_inpainting_problem(trial_rng(seed, i, 0), sigma_y=p["sigma_y"])
    cfg = _sampler(p["T"], overrides.pop("skip", p["skip"]), overrides.pop("gamma", p["gamma"]),
                   tau=p["tau"], **overrides)
    rep = resample_solve(prob.prior, prob.dmap, prob.op, prob.measurement, cfg, trial_rng(seed, i, 1))
    return rep.metrics["residual"], psnr(rep.x0, prob.x_true)


def _resample_vs_dps(p, seed, run):
    prob = two_mode_problem(p["y"], p["sigma_y"])
    cfg = _sampler(p["T"], p["skip"], p["gamma"], tau=p["tau"])
    dps_cfg = _sampler(p["T"], p["skip"], p["gamma"], tau=p["tau"], latent_dps=p["k"])

    def trial(i):
        r = resample_solve(prob.prior, prob.dmap, prob.op, prob.measurement, cfg, trial_rng(seed, i, 1))
        d = latent_dps_solve(prob.prior, prob.dmap, prob.op, prob.measurement, dps_cfg,
                             trial_rng(seed, i, 1))
        return [("residual_resample", r.metrics["residual"]), ("residual_dps", d.metrics["residual"])]

    trials = run.map(trial, p["n_seeds"])
    rr, rd = _col(trials, "residual_resample"), _col(trials, "residual_dps")
    ratio = float(np.median(rd) / np.median(rr))
    ok = ratio >= p["min_ratio"] and float(rr.max()) <= p["tau"]
    rows = [("median_residual_resample", float(np.median(rr))),
            ("median_residual_dps", float(np.median(rd))), ("median_ratio_dps_over_resample", ratio),
            ("max_residual_resample", float(rr.max())), ("tau", p["tau"])]
    rows += [(f"trial_{i}/{m}", v) for i, r in enumerate(trials) for m, v in r]
    return ok, rows


def _resample_vs_encode(p, seed, run):
    def trial(i):
        r_res, p_res = _mlp_trial(p, seed, i, remap_mode="resample")
        r_enc, p_enc = _mlp_trial(p, seed, i, remap_mode="encode")
        return [("residual_resample", r_res), ("residual_encode", r_enc),
                ("psnr_resample", p_res), ("psnr_encode", p_enc)]

    trials = run.map(trial, p["n_seeds"])
    m = {k: float(_col(trials, k).mean()) for k in
         ("residual_resample", "residual_encode", "psnr_resample", "psnr_encode")}
    ok = m["psnr_resample"] >= m["psnr_encode"] and m["residual_resample"] <= m["residual_encode"]
    rows = [(f"mean_{k}", v) for k, v in m.items()]
    rows += [(f"trial_{i}/{k}", v) for i, r in enumerate(trials) for k, v in r]
    return ok, rows


def _sweep(p, seed, run, key, values):
    def trial(i):
        out = []
        for v in values:
            res, ps = _mlp_trial(p, seed, i, **{key: v})
            out += [(f"residual_{key}_{v}", res), (f"psnr_{key}_{v}", ps)]
        return out

    trials = run.map(trial, p["n_seeds"])
    med = [float(np.median(_col(trials, f"residual_{key}_{v}"))) for v in values]
    rows = []
    for v, m in zip(values, med):
        rows += [(f"median_residual_{key}_{v}", m),
                 (f"mean_psnr_{key}_{v}", float(_col(trials, f"psnr_{key}_{v}").mean()))]
    rows += [(f"trial_{i}/{k}", v) for i, r in enumerate(trials) for k, v in r]
    return med, rows


def _skip_step_sweep(p, seed, run):
    med, rows = _sweep(p, seed, run, "skip", p["skips"])
    return bool(np.all(np.diff(med) >= 0)), rows


def _gamma_sweep(p, seed, run):
    med, rows = _sweep(p, seed, run, "gamma", p["gammas"])
    lo, hi = p["gammas"].index(min(p["gammas"])), p["gammas"].index(max(p["gammas"]))
    return med[hi] <= med[lo], rows


def _ct_bench(p, seed, run):
    cfg = _sampler(p["T"], p["skip"], p["gamma"], preset="medical", tau=p["tau"])

    def trial(i):
        prob = ct_problem(trial_rng(seed, i, 0), p["grid"], p["n_angles"], p["sigma_y"])
        rep = resample_solve(prob.prior, prob.dmap, prob.op, prob.measurement, cfg, trial_rng(seed, i, 1))
        x_fbp = fbp_reconstruct(prob.op, prob.measurement.y)
        shape = prob.image_shape
        truth = prob.x_true.reshape(shape)
        return [("psnr_resample", psnr(rep.x0, prob.x_true)), ("psnr_fbp", psnr(x_fbp, prob.x_true)),
                ("ssim_resample", ssim(rep.x0.reshape(shape), truth)),
                ("ssim_fbp", ssim(x_fbp.reshape(shape), truth)),
                ("residual_resample", rep.metrics["residual"])]

    trials = run.map(trial, p["n_seeds"])
    pr, pf = float(_col(trials, "psnr_resample").mean()), float(_col(trials, "psnr_fbp").mean())
    rows = [("mean_psnr_resample", pr), ("mean_psnr_fbp", pf), ("psnr_margin", pr - pf),
            ("mean_ssim_resample", float(_col(trials, "ssim_resample").mean())),
            ("mean_ssim_fbp", float(_col(trials, "ssim_fbp").mean()))]
    rows += [(f"trial_{i}/{k}", v) for i, r in enumerate(trials) for k, v in r]
    return pr - pf >= p["min_margin_db"], rows


_MLP = {"sigma_y": 0.05, "T": 500, "skip": 10, "gamma": 40.0, "tau": 1e-4}

EXPERIMENTS: dict[str, tuple[Callable, dict]] = {
    "tweedie-exactness": (_tweedie_exactness, {"n_cases": 200, "T": 1000, "tol": 1e-10}),
    "covariance-theorem": (_covariance_theorem, {"n_cases": 100, "T": 1000, "tol": 1e-8}),
    "prop-distributions": (_prop_distributions,
                           {"n_settings": 5, "n_draws": 100_000, "dim": 2, "n_se": 3.0}),
    "variance-ordering": (_variance_ordering,
                          {"n_grid": 50, "alpha_bar": 0.5, "n_draws": 100_000, "dim": 3,
                           "empirical_sigma2": [0.01, 0.1, 1.0, 10.0]}),
    "unbiasedness": (_unbiasedness, {"n_draws": 100_000, "T": 1000, "steps": [50, 300, 700],
                                     "dim": 2, "gamma": 40.0, "n_se": 3.0}),
    "resample-vs-dps": (_resample_vs_dps,
                        {"n_seeds": 50, "T": 500, "skip": 10, "gamma": 40.0, "tau": 1e-4,
                         "k": 0.5, "y": 3.02, "sigma_y": 0.01, "min_ratio": 10.0}),
    "resample-vs-encode": (_resample_vs_encode, {**_MLP, "n_seeds": 50}),
    "skip-step-sweep": (_skip_step_sweep, {**_MLP, "n_seeds": 20, "skips": [1, 10, 50, 200]}),
    "gamma-sweep": (_gamma_sweep, {**_MLP, "n_seeds": 20, "gammas": [0.1, 1.0, 10.0, 40.0]}),
    "ct-bench": (_ct_bench, {"n_seeds": 5, "grid": 33, "n_angles": 25, "sigma_y": 0.01, "T": 200,
                             "skip": 10, "gamma": 40.0, "tau": 1e-4, "min_margin_db": 3.0}),
}


def experiment_params(name: str, overrides=()) -> dict:
    """Default protocol parameters of ``name`` with ``key=value`` overrides applied."""
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
    params = copy.deepcopy(EXPERIMENTS[name][1])
    for text in overrides or ():
        key, sep, raw = text.partition("=")
        if not sep:
            raise ConfigError(f"override {text!r} is not of the form key=value")
        if key not in params:
            raise ConfigError(f"unknown parameter {key!r} for {name}", "/" + key)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        if isinstance(params[key], (int, float)) and not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number", "/" + key)
        if isinstance(params[key], list) and not isinstance(value, list):
            raise ConfigError(f"{key} must be a list", "/" + key)
        params[key] = value
    return params


def run_experiment(name: str, seed: int, out=None, overrides=(),
                   threads: int | None = None) -> ExperimentResult:
    """Run one protocol; with ``out`` set, write per-trial CSVs and ``summary.csv`` there."""
    params = experiment_params(name, overrides)
    out = None if out is None else Path(out)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    runner = _Runner(name, seed, protocol_hash(name, params), out, thread_count() if threads is None else threads)
    passed, rows = EXPERIMENTS[name][0](params, seed, runner)
    result = ExperimentResult(name, seed, params, bool(passed),
                              rows + [("verdict", "PASS" if passed else "FAIL")])
    if out is not None:
        write_metrics_csv(out / "summary.csv", result.csv_rows())
    return result
