"""Noise schedules, forward noising and the reverse-process variance.

Alphas follow the cumulative-product convention: alpha_t is the signal
fraction left at step t, alpha_0 is fixed to 1, and the per-step beta is
1 - alpha_t / alpha_{t-1}.
"""

import math
from dataclasses import dataclass

import numpy as np

from constants import ALPHA_T_WARN_THRESHOLD, COSINE_DEFAULT_PARAMS, DEFAULT_BETA_RANGE
from errors import RangeError, ScheduleError, check_same_shape

SCHEDULE_KINDS = ("linear-beta", "cosine")


@dataclass(frozen=True)
class Schedule:
    alphas: tuple  # alpha_1 .. alpha_T
    kind: str = "linear-beta"
    params: tuple = DEFAULT_BETA_RANGE

    @property
    def T(self):
        return len(self.alphas)

    def alpha(self, t):
        """alpha_t with alpha_0 = 1."""
        if t == 0:
            return 1.0
        if not 1 <= t <= self.T:
            raise RangeError(f"Timestep {t} outside [0, {self.T}]")
        return self.alphas[t - 1]

    def to_config(self):
        return {
            "schedule.kind": self.kind,
            "schedule.T": self.T,
            "schedule.params": list(self.params),
        }


@dataclass(frozen=True)
class TimestepPlan:
    steps: tuple

    def __post_init__(self):
        steps = self.steps
        if not steps:
            raise RangeError("Timestep plan is empty")
        if steps[-1] != 1:
            raise RangeError(f"Timestep plan must end at 1, got {steps[-1]}")
        if any(a <= b for a, b in zip(steps, steps[1:])):
            raise RangeError(f"Timestep plan is not strictly decreasing: {steps}")

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def transitions(self):
        """(t, s) pairs visited by the reverse process, ending with s = 0."""
        targets = self.steps[1:] + (0,)
        return list(zip(self.steps, targets))


def _cosine_alphas(T, offset, max_beta):
    def f(t):
        return math.cos((t / T + offset) / (1 + offset) * math.pi / 2) ** 2

    betas = np.array(
        [min(1.0 - f(t) / f(t - 1), max_beta) for t in range(1, T + 1)], dtype=np.float64
    )
    return np.cumprod(1.0 - betas)


def build_schedule(T, kind="linear-beta", params=None):
    """Builds the alpha sequence for a linear-beta or squared-cosine schedule."""
    if T < 1:
        raise ScheduleError(f"T must be >= 1, got {T}")

    if kind == "linear-beta":
        params = tuple(params) if params is not None else DEFAULT_BETA_RANGE
        beta_min, beta_max = params
        if not (0.0 < beta_min <= beta_max < 1.0):
            raise ScheduleError(
                f"linear-beta needs 0 < beta_min <= beta_max < 1, got {params}"
            )
        betas = np.linspace(beta_min, beta_max, T, dtype=np.float64)
        alphas = np.cumprod(1.0 - betas)
    elif kind == "cosine":
        params = tuple(params) if params is not None else COSINE_DEFAULT_PARAMS
        offset, max_beta = params
        if offset < 0 or not 0.0 < max_beta < 1.0:
            raise ScheduleError(f"cosine needs offset >= 0 and 0 < max_beta < 1, got {params}")
        alphas = _cosine_alphas(T, offset, max_beta)
    else:
        raise ScheduleError(f"Unknown schedule kind '{kind}' (expected one of {SCHEDULE_KINDS})")

    if not np.all((alphas > 0.0) & (alphas <= 1.0)):
        raise ScheduleError("Schedule produced alphas outside (0, 1]")
    if np.any(np.diff(alphas) >= 0.0):
        raise ScheduleError("Schedule produced a non-decreasing alpha sequence")

    if alphas[-1] > ALPHA_T_WARN_THRESHOLD:
        print(
            f"[WARN] alpha_T = {alphas[-1]:.4g} > {ALPHA_T_WARN_THRESHOLD}; "
            "x_T will keep a visible amount of signal."
        )

    return Schedule(alphas=tuple(float(a) for a in alphas), kind=kind, params=params)


def add_noise(x0, t, eps, sched):
    """Forward process sample sqrt(alpha_t) x0 + sqrt(1 - alpha_t) eps."""
    check_same_shape(x0, eps, "x0 and eps")
    if t == 0:
        raise RangeError("add_noise needs 1 <= t <= T")
    a = sched.alpha(t)
    return math.sqrt(a) * x0 + math.sqrt(1.0 - a) * eps


def sigma_sq(t, sched):
    """DDPM posterior variance ((1-a_{t-1})/(1-a_t)) * (1 - a_t/a_{t-1})."""
    if not 1 <= t <= sched.T:
        raise RangeError(f"sigma_sq needs 1 <= t <= {sched.T}, got {t}")
    a_t = sched.alpha(t)
    a_prev = sched.alpha(t - 1)
    return ((1.0 - a_prev) / (1.0 - a_t)) * (1.0 - a_t / a_prev)


def make_plan(sched, n_steps):
    """Evenly spaced decreasing timesteps round(T (1 - i/n)), forced to end at 1."""
    T = sched.T
    if not 1 <= n_steps <= T:
        raise RangeError(f"n_steps must be in [1, {T}], got {n_steps}")

    steps = []
    for i in range(n_steps):
        # Half-up rounding: a spacing of T/n >= 1 then never collapses two entries
        value = int(math.floor(T * (1.0 - i / n_steps) + 0.5))
        if not steps or value < steps[-1]:
            steps.append(value)
    steps[-1] = 1
    return TimestepPlan(steps=tuple(steps))
