"""Reverse-process transitions: DDPM, DDIM and the sampler operator S."""

import math
from dataclasses import dataclass

import numpy as np

from constants import DEFAULT_ETA
from errors import RangeError, UnsupportedTransitionError, VarianceError
from rng_streams import STREAM_REFERENCE, STREAM_SAMPLER, stream
from schedule import sigma_sq

SAMPLER_VARIANTS = ("ddpm", "ddim")


@dataclass(frozen=True)
class SamplerKind:
    variant: str = "ddim"
    eta: float = DEFAULT_ETA

    def __post_init__(self):
        if self.variant not in SAMPLER_VARIANTS:
            raise ValueError(f"Unknown sampler '{self.variant}' (expected one of {SAMPLER_VARIANTS})")
        if not 0.0 <= self.eta <= 1.0:
            raise RangeError(f"eta must be in [0, 1], got {self.eta}")

    @classmethod
    def ddpm(cls):
        return cls("ddpm", 0.0)

    @classmethod
    def ddim(cls, eta=DEFAULT_ETA):
        return cls("ddim", float(eta))


def _check_t(t, sched):
    if not 1 <= t <= sched.T:
        raise RangeError(f"Timestep {t} outside [1, {sched.T}]")


def _denoised_from_eps(x_t, eps, a_t):
    return (x_t - math.sqrt(1.0 - a_t) * eps) / math.sqrt(a_t)


def predict_denoised(model, x_t, t, sched):
    """phi(x_t, t) = (x_t - sqrt(1 - alpha_t) eps_theta(x_t, t)) / sqrt(alpha_t)."""
    _check_t(t, sched)
    return _denoised_from_eps(x_t, model.predict_eps(x_t, t), sched.alpha(t))


def ddpm_step(model, x_t, t, noise, sched):
    """One ancestral step t -> t-1; sigma_1 = 0 so the last step ignores noise."""
    _check_t(t, sched)
    a_t = sched.alpha(t)
    a_prev = sched.alpha(t - 1)
    beta = 1.0 - a_t / a_prev
    eps = model.predict_eps(x_t, t)
    mean = (x_t - beta / math.sqrt(1.0 - a_t) * eps) / math.sqrt(a_t / a_prev)
    var = sigma_sq(t, sched)
    if var == 0.0:
        return mean
    return mean + math.sqrt(var) * noise


def ddim_sigma(t, s, sched, eta):
    """eta * sqrt((1 - a_s)/(1 - a_t)) * sqrt(1 - a_t/a_s)."""
    a_t = sched.alpha(t)
    a_s = sched.alpha(s)
    return eta * math.sqrt((1.0 - a_s) / (1.0 - a_t)) * math.sqrt(1.0 - a_t / a_s)


def ddim_step(model, x_t, t, s, noise, sched, eta=DEFAULT_ETA):
    """Generalised DDIM transition t -> s; s = 0 emits the denoised prediction."""
    _check_t(t, sched)
    if not 0 <= s < t:
        raise RangeError(f"DDIM target step must satisfy 0 <= s < t, got s={s}, t={t}")

    a_t = sched.alpha(t)
    eps = model.predict_eps(x_t, t)
    x0_hat = _denoised_from_eps(x_t, eps, a_t)
    if s == 0:
        # sigma at the boundary is sigma_1 = 0 for alpha_0 = 1
        return x0_hat

    a_s = sched.alpha(s)
    sigma = ddim_sigma(t, s, sched, eta)
    dir_var = 1.0 - a_s - sigma * sigma
    if dir_var < 0.0:
        if dir_var < -1e-12:
            raise VarianceError(f"1 - alpha_s - sigma^2 = {dir_var:.3g} < 0 at t={t}, s={s}")
        dir_var = 0.0
    direction = (x_t - math.sqrt(a_t) * x0_hat) / math.sqrt(1.0 - a_t)
    out = math.sqrt(a_s) * x0_hat + math.sqrt(dir_var) * direction
    if sigma > 0.0:
        out = out + sigma * noise
    return out


def sample_S(model, x_t, t, s, rng, kind, sched):
    """Dispatches one transition, drawing noise from rng only when it is used."""
    if kind.variant == "ddpm":
        if s != t - 1:
            raise UnsupportedTransitionError(
                f"DDPM only supports adjacent steps, got t={t} -> s={s}; use a full plan or DDIM"
            )
        noise = rng.standard_normal(x_t.shape) if t > 1 else None
        return ddpm_step(model, x_t, t, noise, sched)

    noise = None
    if s >= 1 and ddim_sigma(t, s, sched, kind.eta) > 0.0:
        noise = rng.standard_normal(x_t.shape)
    return ddim_step(model, x_t, t, s, noise, sched, kind.eta)


def run_sampler(model, x_T, plan, kind, sched, seed, window_index=0, purpose=STREAM_SAMPLER):
    """Plain single-window sampling along a plan.

    Noise for step t comes from the stream (seed, purpose, window_index, t), the
    same keying the panorama engine uses for window window_index.
    """
    x = np.asarray(x_T, dtype=np.float64)
    for t, s in plan.transitions():
        x = sample_S(model, x, t, s, stream(seed, purpose, window_index, t), kind, sched)
    return x


def sample_reference_set(model, shape, count, plan, kind, sched, seed):
    """count independent single-window samples, keyed apart from panorama streams."""
    samples = []
    for i in range(count):
        x_T = stream(seed, STREAM_REFERENCE, i, 0).standard_normal(tuple(shape))
        samples.append(run_sampler(model, x_T, plan, kind, sched, seed, i, STREAM_REFERENCE))
    return samples
