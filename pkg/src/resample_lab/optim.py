"""Hard data-consistency solvers.

Latent-space: adaptive first-order descent on ``f(z) = 0.5 ||y - A(D(z))||^2``
with early stopping at ``tau``. Pixel-space: projection of ``D(z)`` onto the
measurement-consistent set through ``A^+``, optionally relaxed by ``kappa``,
then mapped back with the encoder.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg

from .errors import NonFiniteLoss, UnsupportedOperation
from .latentmap import LatentMap
from .linalg import cgls_solve, conjugate_gradient  # noqa: F401  (re-exported)
from .operators import ForwardOperator, pseudoinverse_apply


@dataclass(frozen=True)
class ConsistencyConfig:
    tau: float = 1e-4
    max_iters_latent: int = 500
    max_iters_pixel: int = 2000
    step_size: float = 1e-2
    kappa: float = 0.9
    cg_iters: int = 50
    cg_tol: float = 1e-10
    beta1: float = 0.9
    beta2: float = 0.999

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if not 0 <= self.kappa <= 1:
            raise ValueError("kappa must lie in [0, 1]")
        if min(self.max_iters_latent, self.max_iters_pixel, self.cg_iters) < 1:
            raise ValueError("iteration caps must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def data_loss(dmap: LatentMap, op: ForwardOperator, y, z) -> float:
    r = op.apply(dmap.decode(z)) - y
    return 0.5 * float(r @ r)


def data_loss_grad(dmap: LatentMap, op: ForwardOperator, y, z):
    """Loss ``0.5 ||A(D(z)) - y||^2`` and its gradient in ``z``."""
    x = dmap.decode(z)
    r = op.apply(x) - y
    return 0.5 * float(r @ r), dmap.decode_vjp(z, op.jacobian_tvp(x, r))


def latent_consistency(dmap: LatentMap, op: ForwardOperator, y, z_init,
                       cfg: ConsistencyConfig = ConsistencyConfig(), rng=None):
    """Minimize the data loss in latent space from ``z_init``.

    Adam-style updates (momentum ``beta1``, second moment ``beta2``, bias
    correction) with a cosine-decayed step. Stops as soon as the loss drops to
    ``cfg.tau`` or after ``cfg.max_iters_latent`` iterations.

    Returns
    -------
    z_hat
        Best iterate seen.
    trace
        Best loss so far, one entry per evaluated iterate (index 0 is ``z_init``).

    ``rng`` is accepted for interface symmetry; the solver is deterministic.
    """
    y = np.asarray(y, dtype=np.float64)
    z = np.array(z_init, dtype=np.float64)
    loss, grad = data_loss_grad(dmap, op, y, z)
    if not np.isfinite(loss):
        raise NonFiniteLoss("initial loss is not finite", z, [])
    best_z, best = z.copy(), loss
    trace = [best]
    m = np.zeros_like(z)
    v = np.zeros_like(z)
    n_iter = cfg.max_iters_latent
    for k in range(1, n_iter + 1):
        if best <= cfg.tau:
            break
        lr = cfg.step_size * 0.5 * (1.0 + np.cos(np.pi * (k - 1) / n_iter))
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad
        m_hat = m / (1.0 - cfg.beta1 ** k)
        v_hat = v / (1.0 - cfg.beta2 ** k)
        z = z - lr * m_hat / (np.sqrt(v_hat) + 1e-12)
        loss, grad = data_loss_grad(dmap, op, y, z)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise NonFiniteLoss(f"non-finite loss at iteration {k}", best_z, trace)
        if loss < best:
            best_z, best = z.copy(), loss
        trace.append(best)
    return best_z, np.asarray(trace)


def _require_linear(op: ForwardOperator):
    if not op.linear:
        raise UnsupportedOperation(f"pixel-space consistency needs a linear operator, got {op.kind}")


def pixel_project_closed_form(op: ForwardOperator, y, x0) -> np.ndarray:
    """``x0 - A^+ (A x0 - y)`` with a direct minimum-norm solve."""
    _require_linear(op)
    A = op.matrix()
    corr = scipy.linalg.lstsq(A, op.apply(x0) - y, cond=None)[0]
    return x0 - corr


def pixel_consistency_closed_form(dmap: LatentMap, op: ForwardOperator, y, z_est,
                                  return_pixel: bool = False):
    """Closed-form pixel projection of ``D(z_est)``, then re-encoded."""
    x_hat = pixel_project_closed_form(op, np.asarray(y, dtype=np.float64), dmap.decode(z_est))
    z = dmap.encode(x_hat)
    return (z, x_hat) if return_pixel else z


def pixel_project_cg(op: ForwardOperator, y, x0, cfg: ConsistencyConfig) -> np.ndarray:
    """``x0 - kappa A^+ (A x0 - y)`` with ``A^+`` applied through CG."""
    _require_linear(op)
    if cfg.kappa == 0:
        return np.array(x0, dtype=np.float64)
    corr = pseudoinverse_apply(op, op.apply(x0) - y, cfg.cg_iters, cfg.cg_tol)
    return x0 - cfg.kappa * corr


def pixel_consistency_cg(dmap: LatentMap, op: ForwardOperator, y, z_est,
                         cfg: ConsistencyConfig = ConsistencyConfig(), return_pixel: bool = False):
    """Relaxed pixel projection with CG-based pseudo-inverse, then re-encoded."""
    x_hat = pixel_project_cg(op, np.asarray(y, dtype=np.float64), dmap.decode(z_est), cfg)
    z = dmap.encode(x_hat)
    return (z, x_hat) if return_pixel else z
