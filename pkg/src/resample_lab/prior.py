"""Exact Gaussian-mixture latent prior.

Stands in for a trained score network: the time-``t`` marginal of a
Gaussian mixture under the forward process is again a Gaussian mixture, so
its score, Hessian and the posterior ``p(z_0 | z_t)`` are all available in
closed form.

All query methods accept a single point of shape ``(d,)`` or a batch of
shape ``(n, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .schedule import NoiseSchedule

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GaussianMixturePrior:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    # eigendecomposition of each covariance, shared by every noise level
    _evals: np.ndarray = field(init=False, repr=False, compare=False)
    _evecs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        cov = np.asarray(self.covariances, dtype=np.float64)
        if cov.ndim == 2:
            cov = cov[None]
        K, d = mu.shape
        if w.shape != (K,) or cov.shape != (K, d, d):
            raise ValueError(f"inconsistent shapes: weights {w.shape}, means {mu.shape}, "
                             f"covariances {cov.shape}")
        if np.any(w <= 0):
            raise ValueError("mixture weights must be strictly positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights sum to {w.sum()!r}, not 1")
        if not np.allclose(cov, np.swapaxes(cov, 1, 2), rtol=0, atol=1e-12):
            raise ValueError("covariances must be symmetric")
        cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
        evals, evecs = np.linalg.eigh(cov)
        if np.any(evals <= 0):
            raise ValueError("covariances must be positive definite")
        for name, val in (("weights", w), ("means", mu), ("covariances", cov),
                          ("_evals", evals), ("_evecs", evecs)):
            val.flags.writeable = False
            object.__setattr__(self, name, val)

    @property
    def K(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    # ------------------------------------------------------------------ sampling

    def sample(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        """Draw ``z_0 ~ p_data``; returns ``(d,)`` when ``n`` is None."""
        m = 1 if n is None else n
        k = rng.choice(self.K, size=m, p=self.weights)
        eps = rng.standard_normal((m, self.dim))
        scale = self._evecs[k] * np.sqrt(self._evals[k])[:, None, :]
        z = self.means[k] + np.einsum("nij,nj->ni", scale, eps)
        return z[0] if n is None else z

    # ---------------------------------------------------------- noisy marginals

    def marginal(self, alpha_bar: float) -> "GaussianMixturePrior":
        """Mixture law of ``sqrt(ab) z_0 + sqrt(1 - ab) eps``."""
        eye = np.eye(self.dim)
        return GaussianMixturePrior(self.weights, np.sqrt(alpha_bar) * self.means,
                                    alpha_bar * self.covariances + (1.0 - alpha_bar) * eye)

    def _components(self, z: np.ndarray, alpha_bar: float):
        """Per-component log densities and rotated residuals at noise level ``alpha_bar``."""
        lam = alpha_bar * self._evals + (1.0 - alpha_bar)          # (K, d)
        diff = z[:, None, :] - np.sqrt(alpha_bar) * self.means[None]  # (n, K, d)
        w = np.einsum("kji,nkj->nki", self._evecs, diff)            # U_k^T diff
        log_comp = (-0.5 * np.sum(w * w / lam, axis=-1)
                    - 0.5 * np.sum(np.log(lam), axis=-1)
                    - 0.5 * self.dim * _LOG_2PI)
        return log_comp + np.log(self.weights), w, lam

    def log_density(self, z, alpha_bar: float = 1.0) -> np.ndarray:
        z, single = _as_batch(z, self.dim)
        log_joint, _, _ = self._components(z, alpha_bar)
        out = logsumexp(log_joint, axis=1)
        return out[0] if single else out

    def responsibilities(self, z, alpha_bar: float = 1.0) -> np.ndarray:
        z, single = _as_batch(z, self.dim)
        log_joint, _, _ = self._components(z, alpha_bar)
        r = np.exp(log_joint - logsumexp(log_joint, axis=1, keepdims=True))
        return r[0] if single else r

    def score(self, z, alpha_bar: float = 1.0) -> np.ndarray:
        """Gradient of the log marginal density at noise level ``alpha_bar``."""
        z, single = _as_batch(z, self.dim)
        g = self._score_parts(z, alpha_bar)[0]
        return g[0] if single else g

    def _score_parts(self, z, alpha_bar):
        log_joint, w, lam = self._components(z, alpha_bar)
        r = np.exp(log_joint - logsumexp(log_joint, axis=1, keepdims=True))  # (n, K)
        g_k = -np.einsum("kij,nkj->nki", self._evecs, w / lam)               # (n, K, d)
        g = np.einsum("nk,nki->ni", r, g_k)
        return g, g_k, r, lam

    def hessian(self, z, alpha_bar: float = 1.0) -> np.ndarray:
        """Hessian of the log marginal density.

        Uses ``H = sum_k r_k (H_k + g_k g_k^T) - g g^T``.
        """
        z, single = _as_batch(z, self.dim)
        g, g_k, r, lam = self._score_parts(z, alpha_bar)
        prec = np.einsum("kij,kj,klj->kil", self._evecs, 1.0 / lam, self._evecs)
        H = (-np.einsum("nk,kij->nij", r, prec)
             + np.einsum("nk,nki,nkj->nij", r, g_k, g_k)
             - np.einsum("ni,nj->nij", g, g))
        H = 0.5 * (H + np.swapaxes(H, 1, 2))
        return H[0] if single else H

    def posterior(self, z_t, alpha_bar: float):
        """Exact mean and covariance of ``z_0`` given ``z_t``.

        Computed by per-component Gaussian conditioning with dense solves,
        independently of the score path.
        """
        z, single = _as_batch(z_t, self.dim)
        d, sa = self.dim, np.sqrt(alpha_bar)
        eye = np.eye(d)
        log_w = np.empty((z.shape[0], self.K))
        comp_means = np.empty((z.shape[0], self.K, d))
        comp_covs = np.empty((self.K, d, d))
        for k in range(self.K):
            S = self.covariances[k]
            C = alpha_bar * S + (1.0 - alpha_bar) * eye
            diff = z - sa * self.means[k]
            sol = np.linalg.solve(C, diff.T).T
            _, logdet = np.linalg.slogdet(C)
            log_w[:, k] = (np.log(self.weights[k]) - 0.5 * np.sum(diff * sol, axis=1)
                           - 0.5 * logdet - 0.5 * d * _LOG_2PI)
            gain = sa * np.linalg.solve(C, S).T          # S C^{-1} scaled
            comp_means[:, k] = self.means[k] + sol @ (sa * S)
            cov_k = S - sa * gain @ S
            comp_covs[k] = 0.5 * (cov_k + cov_k.T)
        r = np.exp(log_w - logsumexp(log_w, axis=1, keepdims=True))
        mean = np.einsum("nk,nki->ni", r, comp_means)
        spread = comp_means - mean[:, None, :]
        cov = (np.einsum("nk,kij->nij", r, comp_covs)
               + np.einsum("nk,nki,nkj->nij", r, spread, spread))
        cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
        if single:
            return mean[0], cov[0]
        return mean, cov

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "means": self.means.tolist(),
                "covariances": self.covariances.tolist()}

    @classmethod
    def from_dict(cls, spec: dict) -> "GaussianMixturePrior":
        return cls(np.asarray(spec["weights"]), np.asarray(spec["means"]),
                   np.asarray(spec["covariances"]))


def _as_batch(z, d: int):
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    if z.shape[-1] != d:
        raise ValueError(f"expected latent dimension {d}, got {z.shape[-1]}")
    return z, single


def isotropic_mixture(weights, means, variances) -> GaussianMixturePrior:
    """Mixture with covariances ``variances[k] * I``."""
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    K, d = means.shape
    var = np.broadcast_to(np.asarray(variances, dtype=np.float64), (K,))
    covs = var[:, None, None] * np.eye(d)[None]
    return GaussianMixturePrior(np.asarray(weights, dtype=np.float64), means, covs)


def random_mixture(rng: np.random.Generator, K: int, d: int, spread: float = 3.0) -> GaussianMixturePrior:
    """Random mixture with well-conditioned random covariances (for tests)."""
    w = rng.dirichlet(np.ones(K) * 2.0)
    w = w / w.sum()
    means = rng.normal(scale=spread, size=(K, d))
    covs = []
    for _ in range(K):
        Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        covs.append(Q @ np.diag(rng.uniform(0.2, 1.5, size=d)) @ Q.T)
    covs = np.array(covs)
    covs = 0.5 * (covs + np.swapaxes(covs, 1, 2))
    return GaussianMixturePrior(w, means, covs)


# Schedule-indexed wrappers -------------------------------------------------

def sample_prior(prior: GaussianMixturePrior, rng: np.random.Generator, n: int | None = None):
    return prior.sample(rng, n)


def marginal_at_t(prior: GaussianMixturePrior, schedule: NoiseSchedule, t: int) -> GaussianMixturePrior:
    return prior.marginal(float(schedule.alpha_bar[t]))


def score_t(prior: GaussianMixturePrior, schedule: NoiseSchedule, t: int, z) -> np.ndarray:
    return prior.score(z, float(schedule.alpha_bar[t]))


def hessian_log_density_t(prior: GaussianMixturePrior, schedule: NoiseSchedule, t: int, z) -> np.ndarray:
    return prior.hessian(z, float(schedule.alpha_bar[t]))


def posterior_z0_given_zt(prior: GaussianMixturePrior, schedule: NoiseSchedule, t: int, z_t):
    return prior.posterior(z_t, float(schedule.alpha_bar[t]))
