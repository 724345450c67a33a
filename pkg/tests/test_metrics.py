import numpy as np
import pytest
from hypothesis import given, strategies as st
from skimage.metrics import structural_similarity

from resample_lab.metrics import MetricReport, mc_moments, measurement_residual, psnr, ssim
from resample_lab.operators import Mask


def _structured(n=32):
    yy, xx = np.mgrid[:n, :n]
    return 0.5 + 0.4 * np.sin(xx / 3.0) * np.cos(yy / 5.0)


def _checkerboard(n=32, cell=4):
    yy, xx = np.mgrid[:n, :n]
    return ((xx // cell + yy // cell) % 2).astype(float)


def test_psnr_examples():
    x = np.linspace(0, 1, 100)
    assert psnr(x, x) == 100.0
    assert psnr(x + 0.1, x) == pytest.approx(20.0, abs=1e-12)
    ref = np.zeros(4)
    assert psnr(np.array([0.2, 0.0, 0.0, 0.0]), ref) == pytest.approx(20.0, abs=1e-12)
    with pytest.raises(ValueError):
        psnr(np.zeros(3), np.zeros(4))


@given(st.floats(1e-3, 0.9))
def test_psnr_shift(c):
    x = np.linspace(0, 0.1, 64)
    assert psnr(x + c, x) == pytest.approx(10 * np.log10(1 / c ** 2), abs=1e-9)


def test_ssim_examples():
    ref = _structured()
    assert ssim(ref, ref) == pytest.approx(1.0, abs=1e-12)
    assert ssim(1.0 - ref, ref) < 1.0
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))
    with pytest.raises(ValueError):
        ssim(np.zeros(64), np.zeros(64))


def test_ssim_decreases_with_noise():
    board = _checkerboard()
    rng = np.random.default_rng(0)
    e = rng.standard_normal(board.shape)
    vals = [ssim(board + s * e, board) for s in (0.01, 0.05, 0.1)]
    assert vals[0] > vals[1] > vals[2]


def test_ssim_symmetric(rng):
    a, b = rng.uniform(size=(20, 24)), rng.uniform(size=(20, 24))
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-12


def test_ssim_agrees_with_skimage(rng):
    ref = _structured(40)
    x = np.clip(ref + 0.05 * rng.standard_normal(ref.shape), 0, 1)
    want = structural_similarity(x, ref, gaussian_weights=True, sigma=1.5, use_sample_covariance=True,
                                 data_range=1.0)
    assert ssim(x, ref) == pytest.approx(want, abs=1e-10)


def test_mc_moments_examples():
    m = mc_moments(np.tile([1.0, 2.0], (5, 1)))
    assert not m.cov.any()
    two = mc_moments(np.array([[-1.0], [1.0]]))
    assert two.mean[0] == 0.0 and two.cov[0, 0] == 2.0
    with pytest.raises(ValueError):
        mc_moments(np.ones((1, 3)))


def test_mc_moments_two_pass_oracle(rng):
    s = rng.normal(size=(500, 3)) * [1.0, 5.0, 0.1] + [2.0, -1.0, 0.0]
    m = mc_moments(s)
    mean = [sum(s[:, j]) / 500 for j in range(3)]
    cov = [[sum((s[i, a] - mean[a]) * (s[i, b] - mean[b]) for i in range(500)) / 499 for b in range(3)]
           for a in range(3)]
    np.testing.assert_allclose(m.mean, mean, atol=1e-12)
    np.testing.assert_allclose(m.cov, cov, atol=1e-12)
    np.testing.assert_allclose(m.stderr_mean, np.sqrt(np.diag(m.cov) / 500))


def test_mc_mean_concentration_budget():
    hits = 0
    for seed in range(200):
        m = mc_moments(np.random.default_rng(seed).standard_normal((100_000, 1)))
        hits += abs(m.mean[0]) < 3 * m.stderr_mean[0]
    assert hits >= 0.99 * 200


def test_measurement_residual_and_report():
    op = Mask(3, [0, 2])
    assert measurement_residual(op, np.array([1.0, 1.0]), np.zeros(3)) == 1.0
    with pytest.raises(ValueError):
        MetricReport(30.0, 0.9, -1.0)
    with pytest.raises(ValueError):
        MetricReport(30.0, 1.5, 0.0)
    assert MetricReport(30.0, None, 0.0).to_dict()["ssim"] is None
