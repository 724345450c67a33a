"""Acceptance criteria, one test each.

Every test prints a single ``criterion N: PASS|FAIL`` line (visible even when
pytest captures output) and then asserts the same verdict.
"""

import time

import numpy as np
import pytest

from resample_lab.experiments import run_experiment
from resample_lab.latentmap import mlp_map
from resample_lab.linalg import cgls_solve
from resample_lab.operators import (Downsample, GaussianBlur, Identity, MatrixOperator,
                                    NonlinearBlur, box_mask, make_radon, random_mask)
from resample_lab.optim import data_loss, data_loss_grad
from resample_lab.prior import random_mixture
from resample_lab.sampler import latent_dps_gradient, tweedie_from_score


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} {title} ({detail})")
        assert ok, f"criterion {number} failed: {detail}"
    return emit


def _timed_experiment(name, out=None, overrides=()):
    start = time.perf_counter()
    res = run_experiment(name, 0, out, overrides)
    return res, time.perf_counter() - start


def _summary(res, keys):
    return ", ".join(f"{k}={res.value(k):.4g}" for k in keys)


def test_criterion_01_tweedie_exactness(report):
    res, sec = _timed_experiment("tweedie-exactness")
    ok = res.passed and res.value("max_abs_error") < 1e-10 and sec < 1.0
    report(1, "Tweedie exactness", ok, f"{_summary(res, ['max_abs_error'])}, {sec:.2f}s")


def test_criterion_02_posterior_covariance(report):
    res, sec = _timed_experiment("covariance-theorem")
    ok = res.passed and res.value("max_abs_error") < 1e-8 and sec < 2.0
    report(2, "posterior covariance identity", ok, f"{_summary(res, ['max_abs_error'])}, {sec:.2f}s")


def test_criterion_03_prop_distributions(report):
    res, sec = _timed_experiment("prop-distributions")
    ok = res.passed and sec < 10.0
    report(3, "encode/resample distributions", ok,
           f"max SE {max(res.value(f'setting_{i}/{k}_max_se') for i in range(5) for k in ('encode', 'resample')):.3g}, "
           f"{sec:.2f}s")


def test_criterion_04_variance_ordering(report):
    res, sec = _timed_experiment("variance-ordering")
    ok = res.passed and sec < 10.0
    report(4, "variance ordering", ok, f"analytic_ok={res.value('analytic_ok')}, {sec:.2f}s")


def test_criterion_05_unbiasedness(report):
    res, sec = _timed_experiment("unbiasedness")
    ok = res.passed and sec < 30.0
    report(5, "unbiasedness", ok, f"{_summary(res, ['step_0/max_abs_mean_diff', 'step_1/max_abs_mean_diff', 'step_2/max_abs_mean_diff'])}, "
           f"{sec:.2f}s")


def test_criterion_06_resample_vs_dps(report):
    res, sec = _timed_experiment("resample-vs-dps")
    ratio = res.value("median_ratio_dps_over_resample")
    ok = ratio >= 10 and res.value("max_residual_resample") <= 1e-4 and sec < 300
    report(6, "ReSample vs Latent-DPS residual gap", ok,
           f"{_summary(res, ['median_residual_resample', 'median_residual_dps', 'median_ratio_dps_over_resample'])}, "
           f"{sec:.1f}s")


def test_criterion_07_resample_vs_encode(report):
    res, sec = _timed_experiment("resample-vs-encode")
    ok = (res.value("mean_psnr_resample") >= res.value("mean_psnr_encode")
          and res.value("mean_residual_resample") <= res.value("mean_residual_encode") and sec < 300)
    report(7, "resample vs encode ablation", ok,
           f"{_summary(res, ['mean_psnr_resample', 'mean_psnr_encode', 'mean_residual_resample', 'mean_residual_encode'])}, "
           f"{sec:.1f}s")


def test_criterion_08_skip_step_trend(report):
    res, sec = _timed_experiment("skip-step-sweep")
    med = [res.value(f"median_residual_skip_{s}") for s in (1, 10, 50, 200)]
    ok = all(a <= b for a, b in zip(med, med[1:])) and sec < 600
    report(8, "skip-step trend", ok, f"medians {[f'{m:.4g}' for m in med]}, {sec:.1f}s")


def test_criterion_09_ct_desk_scale(report):
    res, sec = _timed_experiment("ct-bench")
    margin = res.value("mean_psnr_resample") - res.value("mean_psnr_fbp")
    ok = margin >= 3.0 and sec < 600
    report(9, "CT ReSample vs FBP", ok,
           f"{_summary(res, ['mean_psnr_resample', 'mean_psnr_fbp'])}, margin={margin:.2f} dB, {sec:.1f}s")


def _fd_rel(f, grad, z, h=1e-6):
    fd = np.array([(f(z + h * e) - f(z - h * e)) / (2 * h) for e in np.eye(z.size)])
    return np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12)


def test_criterion_10_solver_algebra(report):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    cgls_err = 0.0
    for shape in ((12, 5), (30, 30), (40, 8)):
        A = rng.normal(size=shape)
        b = rng.normal(size=shape[0])
        x = cgls_solve(lambda v: A @ v, lambda v: A.T @ v, b, 500, 1e-14).x
        cgls_err = max(cgls_err, float(np.max(np.abs(x - np.linalg.pinv(A) @ b))))

    ops = [Identity(9), random_mask(16, 0.7, seed=1), box_mask((6, 6), 1, 2, 3, 2), Downsample((8, 8), 2),
           GaussianBlur((8, 8), 5, 1.0), MatrixOperator(rng.normal(size=(6, 10))), make_radon(33, 25)]
    adj_err = 0.0
    for op in ops:
        for _ in range(5):
            x, u = rng.normal(size=op.n), rng.normal(size=op.m)
            lhs = op.apply(x) @ u
            adj_err = max(adj_err, abs(lhs - x @ op.adjoint(u)) / max(1.0, abs(lhs)))

    fd_err = 0.0
    for i in range(20):
        dmap = mlp_map(3, 8, seed=i)
        op = NonlinearBlur((8,), 3, 1.0)
        y = rng.normal(size=8) * 0.3
        z = rng.normal(size=3)
        fd_err = max(fd_err, _fd_rel(lambda v: data_loss(dmap, op, y, v), data_loss_grad(dmap, op, y, z)[1], z))
        c = rng.normal(size=8)
        fd_err = max(fd_err, _fd_rel(lambda v: c @ dmap.decode(v), dmap.decode_vjp(z, c), z))
        xp = rng.normal(size=8) * 0.3
        fd_err = max(fd_err, _fd_rel(lambda v: c @ op.apply(v), op.jacobian_tvp(xp, c), xp))
        prior = random_mixture(rng, 2, 3)
        ab = float(rng.uniform(0.1, 0.9))

        def dps_obj(v):
            r = op.apply(dmap.decode(tweedie_from_score(v, prior.score(v, ab), ab))) - y
            return float(r @ r)

        fd_err = max(fd_err, _fd_rel(dps_obj, latent_dps_gradient(prior, dmap, op, y, ab, z), z))
    sec = time.perf_counter() - start
    ok = cgls_err < 1e-8 and adj_err < 1e-10 and fd_err < 1e-5 and sec < 10.0
    report(10, "solver algebra", ok,
           f"cgls={cgls_err:.2e}, adjoint={adj_err:.2e}, fd={fd_err:.2e}, {sec:.2f}s")


def test_criterion_11_determinism(report, tmp_path):
    runs = [("prop-distributions", ()), ("unbiasedness", ()), ("resample-vs-encode", ("n_seeds=4",)),
            ("ct-bench", ("n_seeds=2",))]
    mismatched = []
    for name, over in runs:
        files = []
        for tag in ("a", "b"):
            out = tmp_path / name / tag
            run_experiment(name, 0, out, over)
            files.append({p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*.csv"))})
        if files[0] != files[1] or not files[0]:
            mismatched.append(name)
    report(11, "byte-identical CSVs", not mismatched,
           f"{len(runs)} experiments compared, mismatches={mismatched or 'none'}")
