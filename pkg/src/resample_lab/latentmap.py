"""Decoder/encoder pair between latent and pixel space.

Two decoder families: an affine map ``W z + b`` and a fixed one-hidden-layer
network ``W2 tanh(W1 z + b1) + b2``. The encoder is an optimization problem
(exact least squares for the affine map, damped Gauss-Newton for the network,
run from two starting points).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import EncoderConvergenceWarning


@dataclass(frozen=True)
class EncodeInfo:
    converged: bool
    n_iter: int
    grad_norm: float


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class LatentMap:
    """Decoder ``D: R^d_latent -> R^d_pixel`` with analytic Jacobian products.

    Use :func:`linear_map` or :func:`mlp_map` to construct one.
    """

    kind: str
    params: dict = field(repr=False)
    gn_tol: float = 1e-8
    gn_max_iter: int = 100

    def __post_init__(self):
        p = {k: _readonly(v) for k, v in self.params.items()}
        object.__setattr__(self, "params", p)
        if self.kind == "linear":
            W = p["W"]
            if W.ndim != 2 or p["b"].shape != (W.shape[0],):
                raise ValueError("linear map needs W (d_pixel, d_latent) and b (d_pixel,)")
            _check_full_column_rank(W, "W")
            object.__setattr__(self, "_W_pinv", _readonly(np.linalg.pinv(W)))
        elif self.kind == "mlp":
            W1, b1, W2, b2 = p["W1"], p["b1"], p["W2"], p["b2"]
            if (W1.shape[0] != b1.size or W2.shape[1] != W1.shape[0]
                    or W2.shape[0] != b2.size):
                raise ValueError("inconsistent mlp weight shapes")
            _check_full_column_rank(W1, "W1")
            _check_full_column_rank(W2.T, "W2^T")
        else:
            raise ValueError(f"unknown latent map kind {self.kind!r}")
        if self.d_latent > self.d_pixel:
            raise ValueError("d_latent must not exceed d_pixel")

    @property
    def d_latent(self) -> int:
        return self.params["W"].shape[1] if self.kind == "linear" else self.params["W1"].shape[1]

    @property
    def d_pixel(self) -> int:
        return self.params["W"].shape[0] if self.kind == "linear" else self.params["W2"].shape[0]

    def _check(self, v, dim, what):
        v = np.asarray(v, dtype=np.float64)
        if v.shape[-1] != dim:
            raise ValueError(f"{what} has dimension {v.shape[-1]}, expected {dim}")
        return v

    def decode(self, z) -> np.ndarray:
        z = self._check(z, self.d_latent, "latent")
        p = self.params
        if self.kind == "linear":
            return z @ p["W"].T + p["b"]
        return np.tanh(z @ p["W1"].T + p["b1"]) @ p["W2"].T + p["b2"]

    def jacobian(self, z) -> np.ndarray:
        """Dense decoder Jacobian at a single point, shape ``(d_pixel, d_latent)``."""
        z = self._check(z, self.d_latent, "latent")
        p = self.params
        if self.kind == "linear":
            return p["W"].copy()
        s = 1.0 - np.tanh(p["W1"] @ z + p["b1"]) ** 2
        return p["W2"] @ (s[:, None] * p["W1"])

    def decode_vjp(self, z, cotangent) -> np.ndarray:
        """``J(z)^T cotangent``."""
        z = self._check(z, self.d_latent, "latent")
        v = self._check(cotangent, self.d_pixel, "cotangent")
        p = self.params
        if self.kind == "linear":
            return v @ p["W"]
        s = 1.0 - np.tanh(z @ p["W1"].T + p["b1"]) ** 2
        return ((v @ p["W2"]) * s) @ p["W1"]

    def encode(self, x, return_info: bool = False):
        """Latent whose decoding is closest to ``x`` in least squares.

        Warns with :class:`EncoderConvergenceWarning` if Gauss-Newton stops at
        its iteration cap; the last iterate is still returned.
        """
        x = self._check(x, self.d_pixel, "pixel")
        if self.kind == "linear":
            z = self._W_pinv @ (x - self.params["b"])
            info = EncodeInfo(True, 0, 0.0)
        else:
            z, info = self._gauss_newton(x)
            if not info.converged:
                warnings.warn(f"Gauss-Newton encoder stopped at |grad|={info.grad_norm:.3g} "
                              f"after {info.n_iter} iterations", EncoderConvergenceWarning,
                              stacklevel=2)
        return (z, info) if return_info else z

    def _starts(self, x):
        """Linearization at the origin, and layer-wise inversion through ``arctanh``."""
        p = self.params
        z0 = np.zeros(self.d_latent)
        lin = np.linalg.lstsq(self.jacobian(z0), x - self.decode(z0), rcond=None)[0]
        h = np.clip(np.linalg.lstsq(p["W2"], x - p["b2"], rcond=None)[0], -0.999, 0.999)
        inv = np.linalg.lstsq(p["W1"], np.arctanh(h) - p["b1"], rcond=None)[0]
        return lin, inv

    def _gauss_newton(self, x):
        best = None
        for z in self._starts(x):
            z, info = self._gauss_newton_from(x, z)
            r = self.decode(z) - x
            cost = float(r @ r)
            if best is None or cost < best[0]:
                best = (cost, z, info)
        return best[1], best[2]

    def _gauss_newton_from(self, x, z):
        r = self.decode(z) - x
        cost = 0.5 * r @ r
        lam = 1e-3
        g_norm = np.inf
        for it in range(1, self.gn_max_iter + 1):
            J = self.jacobian(z)
            g = J.T @ r
            g_norm = float(np.linalg.norm(g))
            if g_norm < self._gn_threshold(r):
                return z, EncodeInfo(True, it - 1, g_norm)
            JtJ = J.T @ J
            # the residual curvature term matters once x is far from the decoder range
            H = JtJ + self._residual_curvature(z, r)
            scale = np.diag(np.diag(JtJ) + 1e-12)
            while True:
                try:
                    step = np.linalg.solve(H + lam * scale, -g)
                except np.linalg.LinAlgError:
                    step = None
                if step is not None and g @ step < 0:
                    z_new = z + step
                    r_new = self.decode(z_new) - x
                    cost_new = 0.5 * r_new @ r_new
                    if cost_new <= cost:
                        z, r, cost = z_new, r_new, cost_new
                        lam = max(lam / 10.0, 1e-12)
                        break
                lam *= 10.0
                if lam > 1e12:
                    # no descent left at working precision
                    g_norm = float(np.linalg.norm(self.jacobian(z).T @ r))
                    return z, EncodeInfo(g_norm < 1e3 * self._gn_threshold(r), it, g_norm)
        g_norm = float(np.linalg.norm(self.jacobian(z).T @ r))
        return z, EncodeInfo(g_norm < self._gn_threshold(r), self.gn_max_iter, g_norm)

    def _residual_curvature(self, z, r) -> np.ndarray:
        """``sum_i r_i Hess D_i(z)`` for the tanh network."""
        p = self.params
        t = np.tanh(p["W1"] @ z + p["b1"])
        w = (r @ p["W2"]) * (-2.0 * t * (1.0 - t * t))
        return p["W1"].T @ (w[:, None] * p["W1"])

    def _gn_threshold(self, r) -> float:
        # absolute tolerance for near-range inputs, scaled by the residual otherwise
        return self.gn_tol * max(1.0, float(np.linalg.norm(r)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, **{k: v.tolist() for k, v in self.params.items()}}


def _check_full_column_rank(M: np.ndarray, name: str):
    if M.shape[0] < M.shape[1] or np.linalg.svd(M, compute_uv=False).min() <= 1e-8:
        raise ValueError(f"{name} must have full column rank")


def linear_map(W, b=None) -> LatentMap:
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    b = np.zeros(W.shape[0]) if b is None else b
    return LatentMap("linear", {"W": W, "b": b})


def identity_map(d: int) -> LatentMap:
    return linear_map(np.eye(d))


def mlp_map(d_latent: int, d_pixel: int, seed: int = 0, hidden: int | None = None) -> LatentMap:
    """Fixed random tanh network with ``1/sqrt(fan_in)`` weight scale.

    Hidden width defaults to ``2 * d_pixel``.
    """
    rng = np.random.default_rng(seed)
    h = 2 * d_pixel if hidden is None else hidden
    W1 = rng.standard_normal((h, d_latent)) / np.sqrt(d_latent)
    b1 = 0.1 * rng.standard_normal(h)
    W2 = rng.standard_normal((d_pixel, h)) / np.sqrt(h)
    b2 = 0.1 * rng.standard_normal(d_pixel)
    return LatentMap("mlp", {"W1": W1, "b1": b1, "W2": W2, "b2": b2})


def map_from_dict(spec: dict) -> LatentMap:
    kind = spec["kind"]
    if kind == "linear":
        return linear_map(spec["W"], spec.get("b"))
    return LatentMap("mlp", {k: spec[k] for k in ("W1", "b1", "W2", "b2")})
