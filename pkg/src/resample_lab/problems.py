"""Named desk-scale problem instances shared by the experiments and the CLI."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .latentmap import LatentMap, identity_map, linear_map, mlp_map
from .operators import ForwardOperator, Mask, Measurement, add_noise, make_radon, random_mask
from .prior import GaussianMixturePrior, isotropic_mixture


@dataclass
class Problem:
    prior: GaussianMixturePrior
    dmap: LatentMap
    op: ForwardOperator
    measurement: Measurement
    x_true: np.ndarray | None = None
    z_true: np.ndarray | None = None
    image_shape: tuple[int, int] | None = None


def two_mode_prior(separation: float = 3.0, variance: float = 0.25) -> GaussianMixturePrior:
    """Equal-weight modes at ``(+-separation, 0)``; default modes sit 12 std apart."""
    return isotropic_mixture([0.5, 0.5], [[separation, 0.0], [-separation, 0.0]], variance)


def two_mode_problem(y: float = 3.02, sigma_y: float = 0.01) -> Problem:
    """Identity decoder, measure coordinate 0 of a 2-D latent."""
    return Problem(two_mode_prior(), identity_map(2), Mask(2, [0]),
                   Measurement(np.array([y]), sigma_y, "mask"))


# --------------------------------------------------------------- CT phantom

# (centre_x, centre_y, semi_axis_x, semi_axis_y) in pixels from the image centre
PHANTOM_SHAPES = (
    (0.0, 0.0, 14.0, 11.0),    # body
    (-6.0, -0.5, 4.0, 7.0),    # left lung
    (6.0, -0.5, 4.0, 7.0),     # right lung
    (0.0, 8.0, 2.5, 2.5),      # spine
    (-1.0, -3.5, 3.5, 3.0),    # heart
    (5.0, 3.0, 1.8, 1.8),      # lesion
)
PHANTOM_MEANS = np.array([0.6, -0.42, -0.42, 0.35, 0.15, 0.0])
PHANTOM_STDS = np.array([0.04, 0.03, 0.03, 0.04, 0.03, 0.04])
LESION_CONTRAST = 0.3


def phantom_basis(grid: int = 33, edge: float = 0.6) -> np.ndarray:
    """Soft ellipse indicators, one column per shape, shape ``(grid**2, 6)``."""
    c = np.arange(grid) - (grid - 1) / 2.0
    yy, xx = np.meshgrid(c, c, indexing="ij")
    cols = []
    for cx, cy, ax, ay in PHANTOM_SHAPES:
        rho = np.sqrt(((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2)
        dist = (1.0 - rho) * min(ax, ay)     # approx signed distance to the boundary
        cols.append((1.0 / (1.0 + np.exp(-dist / edge))).ravel())
    return np.stack(cols, axis=1)


def phantom_prior() -> GaussianMixturePrior:
    """Two anatomies: without and with a lesion, otherwise identical."""
    lesion = PHANTOM_MEANS.copy()
    lesion[-1] = LESION_CONTRAST
    cov = np.diag(PHANTOM_STDS ** 2)
    return GaussianMixturePrior(np.array([0.5, 0.5]), np.stack([PHANTOM_MEANS, lesion]),
                                np.stack([cov, cov]))


def ct_problem(seed: int, grid: int = 33, n_angles: int = 25, sigma_y: float = 0.01,
               n_detectors: int | None = None) -> Problem:
    """Sparse-view parallel-beam CT of a phantom drawn from :func:`phantom_prior`."""
    rng = np.random.default_rng(seed)
    prior = phantom_prior()
    dmap = linear_map(phantom_basis(grid))
    op = make_radon(grid, n_angles, n_detectors)
    z = prior.sample(rng)
    x = dmap.decode(z)
    meas = add_noise(op.apply(x), sigma_y, rng, "radon")
    return Problem(prior, dmap, op, meas, x, z, (grid, grid))


# ------------------------------------------------------- nonlinear decoder

def random_modes_prior(K: int, d: int, spread: float = 1.5, variance: float = 0.05,
                       seed: int = 0) -> GaussianMixturePrior:
    """Equal-weight isotropic modes with means ``spread * N(0, I)`` drawn from ``seed``."""
    means = spread * np.random.default_rng(seed).standard_normal((K, d))
    return isotropic_mixture(np.full(K, 1.0 / K), means, variance)


def mlp_inpainting_problem(seed: int, sigma_y: float = 0.05, d_latent: int = 4, d_pixel: int = 16,
                           keep_fraction: float = 0.5, decoder_seed: int = 7) -> Problem:
    """Tanh-network decoder, random pixel mask, truth drawn from a 3-mode prior."""
    rng = np.random.default_rng(seed)
    prior = random_modes_prior(3, d_latent, 1.5, 0.05, decoder_seed)
    dmap = mlp_map(d_latent, d_pixel, seed=decoder_seed)
    op = random_mask(d_pixel, keep_fraction, seed=decoder_seed)
    z = prior.sample(rng)
    x = dmap.decode(z)
    meas = add_noise(op.apply(x), sigma_y, rng, "mask")
    return Problem(prior, dmap, op, meas, x, z)
