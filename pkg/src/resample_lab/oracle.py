"""Exact posterior of a Gaussian-mixture latent under a linear measurement chain.

With ``y = M z + c + n``, ``n ~ N(0, sigma_y^2 I)``, each mixture component is
conditioned in closed form and reweighted by its evidence ``N(y; M mu_k + c, S_k)``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from .latentmap import LatentMap
from .operators import ForwardOperator
from .prior import GaussianMixturePrior


def linear_chain(dmap: LatentMap, op: ForwardOperator):
    """``(M, c)`` with ``A(D(z)) = M z + c``; both maps must be linear."""
    if dmap.kind != "linear" or not op.linear:
        raise ValueError("the exact posterior needs a linear decoder and a linear operator")
    W, b = dmap.params["W"], dmap.params["b"]
    AW = np.stack([op.apply(W[:, j]) for j in range(W.shape[1])], axis=1)
    return AW, op.apply(b)


def gaussian_mixture_posterior(prior: GaussianMixturePrior, M, c, y, sigma_y: float):
    """Posterior mixture of ``z`` and the log evidence ``log p(y)``."""
    if sigma_y <= 0:
        raise ValueError("sigma_y must be > 0 for a proper posterior")
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    m = M.shape[0]
    logw, means, covs = [], [], []
    for w, mu, S in zip(prior.weights, prior.means, prior.covariances):
        SM = S @ M.T
        Sy = M @ SM + sigma_y ** 2 * np.eye(m)
        r = y - (M @ mu + c)
        gain = np.linalg.solve(Sy, SM.T).T                 # S M^T Sy^{-1}
        means.append(mu + gain @ r)
        cov = S - gain @ SM.T
        covs.append(0.5 * (cov + cov.T))
        _, logdet = np.linalg.slogdet(Sy)
        logw.append(np.log(w) - 0.5 * (r @ np.linalg.solve(Sy, r) + logdet + m * np.log(2 * np.pi)))
    logw = np.asarray(logw)
    log_evidence = float(logsumexp(logw))
    # components with underflowing evidence keep a tiny positive weight
    w = np.maximum(np.exp(logw - log_evidence), 1e-300)
    post = GaussianMixturePrior(w / w.sum(), np.asarray(means), np.asarray(covs))
    return post, log_evidence


def posterior_moments(post: GaussianMixturePrior):
    """Overall mean and covariance of a mixture."""
    mean = post.weights @ post.means
    dev = post.means - mean
    cov = np.einsum("k,kij->ij", post.weights, post.covariances) + (post.weights[:, None] * dev).T @ dev
    return mean, cov
