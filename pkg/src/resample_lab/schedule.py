"""Noise schedules, DDIM coefficients and the resampling timetable.

Indices are 0-based: ``t = 0`` is the data end and ``t = T - 1`` the noise
end. The reverse chain starts from ``z_{T-1} ~ N(0, I)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STAGE_MODES = ("none", "pixel", "latent")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance-preserving schedule with DDIM stochasticity terms.

    Parameters
    ----------
    beta
        Per-step noise rates, non-decreasing, each in (0, 1).
    eta
        DDIM temperature. ``eta = 0`` gives deterministic sampling.
    """

    beta: np.ndarray
    eta: float = 0.0
    alpha: np.ndarray = field(init=False, repr=False)
    alpha_bar: np.ndarray = field(init=False, repr=False)
    delta: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 2:
            raise ValueError("beta must be a 1-D array with at least 2 entries")
        if np.any(beta <= 0) or np.any(beta >= 1):
            raise ValueError("beta entries must lie in (0, 1)")
        if np.any(np.diff(beta) < 0):
            raise ValueError("beta must be non-decreasing")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        alpha = 1.0 - beta
        # cumprod multiplies sequentially, so alpha_bar[t] == alpha_bar[t-1] * alpha[t] exactly
        alpha_bar = np.cumprod(alpha)
        prev = np.concatenate(([1.0], alpha_bar[:-1]))
        delta = np.sqrt((1.0 - prev) / (1.0 - alpha_bar)) * np.sqrt(1.0 - alpha_bar / prev)
        slack = 1.0 - prev - (self.eta * delta) ** 2
        if np.any(slack < -1e-15):
            bad = int(np.argmin(slack))
            raise ValueError(f"eta={self.eta} makes the DDIM coefficient imaginary at t={bad}")
        object.__setattr__(self, "beta", _frozen(beta))
        object.__setattr__(self, "alpha", _frozen(alpha))
        object.__setattr__(self, "alpha_bar", _frozen(alpha_bar))
        object.__setattr__(self, "delta", _frozen(delta))

    @property
    def T(self) -> int:
        return int(self.beta.size)

    def alpha_bar_prev(self, t: int) -> float:
        """``alpha_bar[t-1]``, with the convention ``alpha_bar[-1] = 1``."""
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    def to_dict(self) -> dict:
        return {"T": self.T, "beta": self.beta.tolist(), "eta": self.eta}


def build_linear_schedule(T: int, beta_min: float = 1e-4, beta_max: float = 0.02,
                          eta: float = 0.0) -> NoiseSchedule:
    """Linear beta ramp from ``beta_min`` to ``beta_max`` over ``T`` steps."""
    if T < 2:
        raise ValueError("T must be >= 2")
    if not (0 < beta_min <= beta_max < 1):
        raise ValueError("need 0 < beta_min <= beta_max < 1")
    return NoiseSchedule(np.linspace(beta_min, beta_max, T), eta=eta)


def resample_sigma2(schedule: NoiseSchedule, t: int, gamma: float) -> float:
    """Adaptive variance of the stochastic resampling step at index ``t``.

    ``gamma * (1 - abar[t-1]) / abar[t] * (1 - abar[t] / abar[t-1])``.
    """
    if not 1 <= t < schedule.T:
        raise ValueError(f"resample_sigma2 needs 1 <= t < T, got t={t}")
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    ab, ab_prev = schedule.alpha_bar[t], schedule.alpha_bar[t - 1]
    return float(gamma * ((1.0 - ab_prev) / ab) * (1.0 - ab / ab_prev))


@dataclass(frozen=True)
class ResampleTimetable:
    """Three-stage partition of ``[0, T)`` plus the hard-consistency step set.

    ``stages`` are half-open ``(lo, hi)`` intervals ordered from the noise end
    (stage 1) to the data end (stage 3).
    """

    T: int
    stages: tuple[tuple[int, int], tuple[int, int], tuple[int, int]]
    stage_mode: tuple[str, str, str]
    skip: int
    resample_steps: tuple[int, ...]

    def __post_init__(self):
        covered = sorted(t for lo, hi in self.stages for t in range(lo, hi))
        if covered != list(range(self.T)):
            raise ValueError("stages must partition [0, T) exactly once")
        if any(m not in STAGE_MODES for m in self.stage_mode):
            raise ValueError(f"stage modes must be in {STAGE_MODES}")
        lo1, hi1 = self.stages[0]
        if any(lo1 <= t < hi1 for t in self.resample_steps):
            raise ValueError("no hard consistency is allowed in stage 1")
        object.__setattr__(self, "_steps", frozenset(self.resample_steps))

    def __contains__(self, t: int) -> bool:
        return t in self._steps

    def stage_of(self, t: int) -> int:
        """1-based stage number containing ``t``."""
        for i, (lo, hi) in enumerate(self.stages):
            if lo <= t < hi:
                return i + 1
        raise ValueError(f"t={t} outside [0, {self.T})")

    def mode_at(self, t: int) -> str:
        return self.stage_mode[self.stage_of(t) - 1]

    def without_resampling(self) -> "ResampleTimetable":
        return ResampleTimetable(self.T, self.stages, self.stage_mode, self.skip, ())

    def to_dict(self) -> dict:
        return {"T": self.T, "stages": [list(s) for s in self.stages],
                "stage_mode": list(self.stage_mode), "skip": self.skip,
                "resample_steps": list(self.resample_steps)}


def build_timetable(schedule: NoiseSchedule | int, skip: int = 10,
                    mode: str = "natural") -> ResampleTimetable:
    """Stage split and skipped-step set for a preset.

    ``natural`` splits ``T`` into even thirds. ``medical`` puts the stage
    boundaries at ``0.75 T`` and ``0.3 T`` (750 and 300 for ``T = 1000``).
    Stage 2 runs pixel-space consistency, stage 3 latent-space consistency.
    Consistency runs at every ``t`` in stages 2-3 with ``t % skip == 0``, so
    the chain always ends on a consistent step at ``t = 0``.
    """
    T = schedule if isinstance(schedule, int) else schedule.T
    if skip < 1:
        raise ValueError("skip must be >= 1")
    if mode == "natural":
        b_low, b_high = round(T / 3), round(2 * T / 3)
    elif mode == "medical":
        b_low, b_high = round(0.3 * T) + 1, round(0.75 * T) + 1
    else:
        raise ValueError(f"unknown timetable preset {mode!r}")
    if not 0 < b_low < b_high < T:
        raise ValueError(f"T={T} too small for a three-stage split")
    stages = ((b_high, T), (b_low, b_high), (0, b_low))
    steps = tuple(t for t in range(b_high) if t % skip == 0)
    return ResampleTimetable(T, stages, ("none", "pixel", "latent"), skip, steps)
