import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from resample_lab.errors import EncoderConvergenceWarning
from resample_lab.latentmap import LatentMap, identity_map, linear_map, map_from_dict, mlp_map
from resample_lab.problems import random_modes_prior


def test_identity_decode_and_vjp():
    m = identity_map(3)
    z = np.array([1.0, -2.0, 0.5])
    np.testing.assert_array_equal(m.decode(z), z)
    np.testing.assert_array_equal(m.decode_vjp(z, z), z)


def test_linear_vjp_is_transpose(rng):
    W = rng.normal(size=(6, 3))
    m = linear_map(W, rng.normal(size=6))
    v = rng.normal(size=6)
    np.testing.assert_allclose(m.decode_vjp(rng.normal(size=3), v), W.T @ v, rtol=1e-14)
    np.testing.assert_array_equal(m.decode_vjp(np.zeros(3), np.zeros(6)), np.zeros(3))


def test_mlp_with_zero_first_layer_is_constant():
    base = mlp_map(2, 6, seed=0)
    p = dict(base.params)
    p["W1"] = np.zeros_like(p["W1"])
    # bypass the rank check: build through the dataclass machinery without validation
    m = object.__new__(LatentMap)
    object.__setattr__(m, "kind", "mlp")
    object.__setattr__(m, "params", p)
    out = m.decode(np.array([0.3, -4.0]))
    np.testing.assert_allclose(out, p["W2"] @ np.tanh(p["b1"]) + p["b2"])


def test_rank_validation():
    with pytest.raises(ValueError):
        linear_map(np.array([[1.0, 2.0], [2.0, 4.0], [0.0, 0.0]]))
    p = dict(mlp_map(2, 6, seed=0).params)
    p["W1"] = np.zeros_like(p["W1"])
    with pytest.raises(ValueError):
        LatentMap("mlp", p)
    with pytest.raises(ValueError):
        LatentMap("conv", {})
    with pytest.raises(ValueError):
        linear_map(np.ones((2, 3)))


def test_dimension_errors():
    m = mlp_map(2, 6)
    with pytest.raises(ValueError):
        m.decode(np.zeros(3))
    with pytest.raises(ValueError):
        m.decode_vjp(np.zeros(2), np.zeros(5))
    with pytest.raises(ValueError):
        m.encode(np.zeros(2))


def test_params_are_immutable():
    m = mlp_map(2, 6)
    with pytest.raises(ValueError):
        m.params["W1"][0, 0] = 1.0


@given(st.integers(0, 1000))
def test_mlp_directional_derivative_and_vjp(seed):
    rng = np.random.default_rng(seed)
    m = mlp_map(3, 8, seed=seed % 17)
    z, v, c = rng.normal(size=3), rng.normal(size=3), rng.normal(size=8)
    h = 1e-5
    fd = (m.decode(z + h * v) - m.decode(z - h * v)) / (2 * h)
    np.testing.assert_allclose(m.jacobian(z) @ v, fd, atol=1e-6)
    fd_vjp = np.array([(c @ m.decode(z + h * e) - c @ m.decode(z - h * e)) / (2 * h) for e in np.eye(3)])
    np.testing.assert_allclose(m.decode_vjp(z, c), fd_vjp, atol=1e-6)
    W1, b1, W2 = m.params["W1"], m.params["b1"], m.params["W2"]
    s = 1 - np.tanh(W1 @ z + b1) ** 2
    np.testing.assert_allclose(m.decode_vjp(z, c), W1.T @ (s * (W2.T @ c)), rtol=1e-12)


def test_linear_round_trip_and_projection(rng):
    W = rng.normal(size=(7, 3))
    b = rng.normal(size=7)
    m = linear_map(W, b)
    z = rng.normal(size=3)
    assert np.max(np.abs(m.encode(m.decode(z)) - z)) < 1e-10
    x = rng.normal(size=7)
    r = x - m.decode(m.encode(x))
    assert np.max(np.abs(W.T @ r)) < 1e-10


def test_mlp_round_trip_near_prior_modes():
    # shipped decoder and prior of the nonlinear inpainting instance
    m = mlp_map(4, 16, seed=7)
    prior = random_modes_prior(3, 4, 1.5, 0.05, 7)
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(300):
        u = rng.normal(size=4)
        u /= np.linalg.norm(u)
        z = prior.means[rng.integers(3)] + 3.0 * rng.uniform() ** 0.25 * u
        worst = max(worst, np.linalg.norm(m.encode(m.decode(z)) - z))
    assert worst < 1e-6


def test_mlp_round_trip_prior_draws():
    m = mlp_map(4, 16, seed=7)
    prior = random_modes_prior(3, 4, 1.5, 0.05, 7)
    for z in prior.sample(np.random.default_rng(5), 50):
        z_hat, info = m.encode(m.decode(z), return_info=True)
        assert info.converged
        assert np.linalg.norm(z_hat - z) < 1e-6


def test_encoder_off_range_is_stationary(rng):
    m = mlp_map(4, 16, seed=7)
    x = m.decode(rng.normal(size=4)) + 0.5 * rng.normal(size=16)
    z, info = m.encode(x, return_info=True)
    g = m.jacobian(z).T @ (m.decode(z) - x)
    assert info.converged
    assert np.linalg.norm(g) < 1e-8 * max(1.0, np.linalg.norm(m.decode(z) - x))


def test_encoder_reports_nonconvergence():
    m = mlp_map(4, 16, seed=7)
    capped = LatentMap("mlp", dict(m.params), gn_max_iter=1)
    x = m.decode(np.array([1.0, -1.0, 0.5, 2.0])) + 0.3
    with pytest.warns(EncoderConvergenceWarning):
        z, info = capped.encode(x, return_info=True)
    assert not info.converged
    assert np.all(np.isfinite(z))


def test_midpoint_of_modes_leaves_decoder_manifold():
    m = mlp_map(4, 16, seed=7)
    prior = random_modes_prior(3, 4, 1.5, 0.05, 7)
    z1, z2 = prior.means[0], prior.means[1]
    gap = np.linalg.norm(m.decode((z1 + z2) / 2) - (m.decode(z1) + m.decode(z2)) / 2)
    assert gap > 0


def test_dict_round_trip():
    for m in (mlp_map(2, 5, seed=3), linear_map(np.eye(3)[:, :2])):
        q = map_from_dict(m.to_dict())
        z = np.array([0.2, -0.7])
        np.testing.assert_array_equal(q.decode(z), m.decode(z))


def test_encode_is_silent_on_range():
    m = mlp_map(3, 9, seed=2)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        m.encode(m.decode(np.array([0.1, 0.2, -0.3])))
