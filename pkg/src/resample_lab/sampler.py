"""Reverse diffusion in latent space: DDIM, remapping, ReSample and Latent-DPS.

The chain starts at ``z_{T-1} ~ N(0, I)`` and each iteration ``t = T-2, ..., 0``
produces ``z_t`` from ``z_{t+1}``. The predicted noise is recovered from the
exact score as ``eps_hat = -sqrt(1 - abar) * score``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CGBreakdown, NonFiniteLoss, SolverAbort
from .latentmap import LatentMap
from .operators import ForwardOperator, Measurement
from .optim import (ConsistencyConfig, data_loss, latent_consistency, pixel_consistency_cg)
from .prior import GaussianMixturePrior
from .schedule import NoiseSchedule, ResampleTimetable, resample_sigma2

REMAP_MODES = ("resample", "encode")


@dataclass(frozen=True)
class SamplerConfig:
    """Everything a reverse-sampling run needs besides the problem itself.

    ``latent_dps`` is the scale ``k`` of the Latent-DPS step ``zeta_t = k * abar_t``;
    ``None`` disables the add-on inside ReSample. ``check_tweedie`` asserts at
    every step that the Tweedie estimate equals the exact posterior mean.
    """

    schedule: NoiseSchedule
    timetable: ResampleTimetable
    gamma: float = 40.0
    consistency: ConsistencyConfig = field(default_factory=ConsistencyConfig)
    latent_dps: float | None = None
    remap_mode: str = "resample"
    check_tweedie: bool = False

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.remap_mode not in REMAP_MODES:
            raise ValueError(f"remap_mode must be one of {REMAP_MODES}")
        if self.latent_dps is not None and self.latent_dps < 0:
            raise ValueError("latent_dps scale must be >= 0")
        if self.timetable.T != self.schedule.T:
            raise ValueError("timetable and schedule disagree on T")

    def to_dict(self) -> dict:
        return {"schedule": {"T": self.schedule.T, "eta": self.schedule.eta,
                             "beta_min": float(self.schedule.beta[0]),
                             "beta_max": float(self.schedule.beta[-1])},
                "timetable": {"skip": self.timetable.skip, "stages": [list(s) for s in self.timetable.stages],
                              "stage_mode": list(self.timetable.stage_mode)},
                "gamma": self.gamma, "consistency": self.consistency.to_dict(),
                "latent_dps": self.latent_dps, "remap_mode": self.remap_mode}


@dataclass(frozen=True)
class StepDiagnostics:
    t: int
    loss_before: float
    loss_after: float
    resampled: bool
    residual: float


@dataclass
class ReconstructionReport:
    solver: str
    z0: np.ndarray
    x0: np.ndarray
    diagnostics: list[StepDiagnostics]
    metrics: dict = field(default_factory=dict)
    seed: int | None = None
    config: dict = field(default_factory=dict)

    def diagnostics_table(self) -> dict[str, np.ndarray]:
        cols = ("t", "loss_before", "loss_after", "resampled", "residual")
        return {c: np.array([getattr(d, c) for d in self.diagnostics]) for c in cols}


# --------------------------------------------------------------- primitives

def tweedie_from_score(z, score, alpha_bar: float) -> np.ndarray:
    return (np.asarray(z) + (1.0 - alpha_bar) * score) / np.sqrt(alpha_bar)


def tweedie_estimate(prior: GaussianMixturePrior, schedule: NoiseSchedule, t: int, z_t) -> np.ndarray:
    """Posterior-mean estimate of ``z_0`` from ``z_t`` via Tweedie's formula."""
    ab = float(schedule.alpha_bar[t])
    return tweedie_from_score(z_t, prior.score(z_t, ab), ab)


def ddim_update(z0_hat, eps_hat, alpha_bar: float, noise_scale: float, eps1) -> np.ndarray:
    """``sqrt(abar) z0_hat + sqrt(1 - abar - noise_scale^2) eps_hat + noise_scale eps1``."""
    slack = 1.0 - alpha_bar - noise_scale ** 2
    if slack < -1e-15:
        raise ValueError(f"DDIM coefficient is imaginary (1 - abar - (eta delta)^2 = {slack:.3g})")
    return (np.sqrt(alpha_bar) * z0_hat + np.sqrt(max(slack, 0.0)) * eps_hat
            + noise_scale * eps1)


def _ddim_parts(prior, schedule, t, z_next, eps1):
    ab_next = float(schedule.alpha_bar[t + 1])
    score = prior.score(z_next, ab_next)
    z0_hat = tweedie_from_score(z_next, score, ab_next)
    eps_hat = -np.sqrt(1.0 - ab_next) * score
    noise = schedule.eta * float(schedule.delta[t + 1])
    return ddim_update(z0_hat, eps_hat, float(schedule.alpha_bar[t]), noise, eps1), z0_hat


def ddim_step(prior: GaussianMixturePrior, schedule: NoiseSchedule, t: int, z_next,
              rng: np.random.Generator) -> np.ndarray:
    """Unconditional DDIM move from ``z_{t+1}`` to ``z'_t``."""
    if not 0 <= t < schedule.T - 1:
        raise ValueError(f"ddim_step needs 0 <= t < T-1, got t={t}")
    eps1 = rng.standard_normal(np.shape(z_next))
    return _ddim_parts(prior, schedule, t, z_next, eps1)[0]


def _encode_draw(alpha_bar, z0_hat, eps):
    return np.sqrt(alpha_bar) * z0_hat + np.sqrt(1.0 - alpha_bar) * eps


def _resample_draw(alpha_bar, z0_hat_y, z_prime, sigma2, eps):
    if sigma2 < 0:
        raise ValueError("sigma2 must be >= 0")
    if sigma2 == 0:
        return np.array(z_prime, dtype=np.float64, copy=True)
    denom = sigma2 + (1.0 - alpha_bar)
    mean = (sigma2 * np.sqrt(alpha_bar) * z0_hat_y + (1.0 - alpha_bar) * z_prime) / denom
    return mean + np.sqrt(sigma2 * (1.0 - alpha_bar) / denom) * eps


def stochastic_encode(schedule: NoiseSchedule, t: int, z0_hat, rng: np.random.Generator,
                      alpha_bar: float | None = None) -> np.ndarray:
    """One draw from ``N(sqrt(abar_t) z0_hat, (1 - abar_t) I)``.

    ``alpha_bar`` overrides the schedule lookup (``t`` is then ignored).
    """
    ab = float(schedule.alpha_bar[t]) if alpha_bar is None else alpha_bar
    z0_hat = np.asarray(z0_hat, dtype=np.float64)
    return _encode_draw(ab, z0_hat, rng.standard_normal(z0_hat.shape))


def stochastic_resample(schedule: NoiseSchedule, t: int, z0_hat_y, z_prime_t, sigma2: float,
                        rng: np.random.Generator, alpha_bar: float | None = None) -> np.ndarray:
    """One draw from the Gaussian that fuses the consistent estimate with ``z'_t``.

    Mean ``(sigma2 sqrt(abar) z0_hat_y + (1 - abar) z'_t) / (sigma2 + 1 - abar)``,
    variance ``sigma2 (1 - abar) / (sigma2 + 1 - abar)`` per coordinate.
    """
    ab = float(schedule.alpha_bar[t]) if alpha_bar is None else alpha_bar
    z_prime_t = np.asarray(z_prime_t, dtype=np.float64)
    eps = rng.standard_normal(np.broadcast_shapes(np.shape(z0_hat_y), z_prime_t.shape))
    return _resample_draw(ab, np.asarray(z0_hat_y, dtype=np.float64), z_prime_t, sigma2, eps)


def latent_dps_gradient(prior: GaussianMixturePrior, dmap: LatentMap, op: ForwardOperator, y,
                        alpha_bar: float, z) -> np.ndarray:
    """Gradient in ``z_t`` of ``||y - A(D(tweedie(z_t)))||^2``.

    The Tweedie Jacobian is ``(I + (1 - abar) H) / sqrt(abar)`` with ``H`` the
    exact Hessian of the log marginal, which is symmetric.
    """
    z0 = tweedie_from_score(z, prior.score(z, alpha_bar), alpha_bar)
    x0 = dmap.decode(z0)
    r = op.apply(x0) - y
    g0 = 2.0 * dmap.decode_vjp(z0, op.jacobian_tvp(x0, r))
    H = prior.hessian(z, alpha_bar)
    return (g0 + (1.0 - alpha_bar) * (H @ g0)) / np.sqrt(alpha_bar)


# ----------------------------------------------------------------- solvers

def _check_dims(prior, dmap, op, y):
    if dmap.d_latent != prior.dim:
        raise ValueError(f"prior dim {prior.dim} != decoder latent dim {dmap.d_latent}")
    if op.n != dmap.d_pixel:
        raise ValueError(f"operator input dim {op.n} != decoder pixel dim {dmap.d_pixel}")
    if np.shape(y) != (op.m,):
        raise ValueError(f"measurement shape {np.shape(y)} != ({op.m},)")


def _assert_tweedie(prior, ab, z, z0_hat, t):
    mean, _ = prior.posterior(z, ab)
    err = float(np.max(np.abs(mean - z0_hat)))
    if err > 1e-10 * max(1.0, float(np.max(np.abs(mean)))):
        raise AssertionError(f"Tweedie estimate off the Bayes posterior mean by {err:.3g} at t={t}")


def _consistency(mode, dmap, op, y, z_init, cfg):
    if mode == "pixel" and op.linear:
        z_hat = pixel_consistency_cg(dmap, op, y, z_init, cfg)
        return z_hat, data_loss(dmap, op, y, z_hat)
    z_hat, trace = latent_consistency(dmap, op, y, z_init, cfg)
    return z_hat, float(trace[-1])


def _run_chain(prior, dmap, op, y, config: SamplerConfig, rng, *, consistency: bool,
               dps_scale: float | None, solver: str) -> ReconstructionReport:
    _check_dims(prior, dmap, op, y)
    sched, table, cfg = config.schedule, config.timetable, config.consistency
    y = np.asarray(y, dtype=np.float64)
    z = rng.standard_normal(prior.dim)
    diags: list[StepDiagnostics] = []
    # overflow shows up as a non-finite state and aborts below
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(sched.T - 2, -1, -1):
            eps1 = rng.standard_normal(prior.dim)
            try:
                z_prime, z0_pred = _ddim_parts(prior, sched, t, z, eps1)
                ab_next = float(sched.alpha_bar[t + 1])
                if config.check_tweedie:
                    _assert_tweedie(prior, ab_next, z, z0_pred, t + 1)
                if dps_scale:
                    z_prime = z_prime - dps_scale * ab_next * latent_dps_gradient(
                        prior, dmap, op, y, ab_next, z)
                loss_pred = data_loss(dmap, op, y, z0_pred)
                if consistency and t in table:
                    z0_y, loss_y = _consistency(table.mode_at(t), dmap, op, y, z0_pred, cfg)
                    if t == 0:
                        # data end: both remaps collapse onto the consistent latent
                        z = z0_y
                    elif config.remap_mode == "encode":
                        z = _encode_draw(float(sched.alpha_bar[t]), z0_y, rng.standard_normal(prior.dim))
                    else:
                        s2 = resample_sigma2(sched, t, config.gamma)
                        z = _resample_draw(float(sched.alpha_bar[t]), z0_y, z_prime, s2,
                                           rng.standard_normal(prior.dim))
                    diags.append(StepDiagnostics(t, loss_pred, loss_y, True, float(np.sqrt(2 * loss_y))))
                else:
                    z = z_prime
                    diags.append(StepDiagnostics(t, loss_pred, loss_pred, False,
                                                 float(np.sqrt(2 * loss_pred))))
            except (NonFiniteLoss, CGBreakdown, ValueError) as exc:
                raise SolverAbort(str(exc), t, diags) from exc
            if not np.all(np.isfinite(z)):
                raise SolverAbort("latent state became non-finite", t, diags)
    x0 = dmap.decode(z)
    r = y - op.apply(x0)
    report = ReconstructionReport(solver, z, x0, diags, config=config.to_dict())
    report.metrics["residual"] = 0.5 * float(r @ r)
    return report


def resample_solve(prior: GaussianMixturePrior, dmap: LatentMap, op: ForwardOperator,
                   measurement: Measurement, config: SamplerConfig,
                   rng: np.random.Generator) -> ReconstructionReport:
    """ReSample: DDIM with hard data consistency and remapping on the timetable's steps.

    Stage 2 steps use the pixel projection (latent descent when the operator
    is nonlinear), stage 3 steps the latent descent, both started from the
    Tweedie estimate of the previous state. At ``t = 0`` the consistent latent
    is returned directly.
    """
    return _run_chain(prior, dmap, op, measurement.y, config, rng, consistency=True,
                      dps_scale=config.latent_dps, solver="resample")


def latent_dps_solve(prior: GaussianMixturePrior, dmap: LatentMap, op: ForwardOperator,
                     measurement: Measurement, config: SamplerConfig,
                     rng: np.random.Generator) -> ReconstructionReport:
    """Latent-DPS baseline: DDIM plus a gradient step of size ``k * abar`` every step.

    ``k`` is ``config.latent_dps`` (0.5 when unset).
    """
    k = 0.5 if config.latent_dps is None else config.latent_dps
    return _run_chain(prior, dmap, op, measurement.y, config, rng, consistency=False,
                      dps_scale=k, solver="latent_dps")


def ddim_sample(prior: GaussianMixturePrior, schedule: NoiseSchedule, rng: np.random.Generator,
                n: int | None = None) -> np.ndarray:
    """Unconditional DDIM samples (vectorized over ``n`` chains)."""
    shape = (prior.dim,) if n is None else (n, prior.dim)
    z = rng.standard_normal(shape)
    for t in range(schedule.T - 2, -1, -1):
        z = _ddim_parts(prior, schedule, t, z, rng.standard_normal(shape))[0]
    return z
