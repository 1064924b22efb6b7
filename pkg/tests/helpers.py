"""Shared fixtures and central finite-difference oracles for the test suites."""

import numpy as np

from schedule import Schedule


def schedule_from_alphas(alphas):
    """A Schedule with hand-picked alphas (no construction checks)."""
    return Schedule(alphas=tuple(float(a) for a in alphas), kind="manual", params=())


def rel_err(a, b):
    a, b = float(a), float(b)
    denom = max(abs(a), abs(b), 1e-300)
    return abs(a - b) / denom


def directional_derivative(f, x, v, h=1e-5):
    """Central difference of a scalar or array function along direction v."""
    return (np.asarray(f(x + h * v)) - np.asarray(f(x - h * v))) / (2.0 * h)


def gradient_check(f, grad, x, rng, draws=10, h=1e-5):
    """Worst relative error of <grad, v> against the central difference of f along v."""
    worst = 0.0
    for _ in range(draws):
        v = rng.standard_normal(x.shape)
        analytic = float(np.sum(grad * v))
        numeric = float(directional_derivative(f, x, v, h))
        worst = max(worst, rel_err(analytic, numeric))
    return worst


def vjp_check(fn, vjp, x, rng, draws=10, h=1e-5):
    """Worst relative error of <vjp(u), v> against <u, J v> by central differences."""
    worst = 0.0
    for _ in range(draws):
        u = rng.standard_normal(x.shape)
        v = rng.standard_normal(x.shape)
        analytic = float(np.sum(vjp(x, u) * v))
        numeric = float(np.sum(u * directional_derivative(fn, x, v, h)))
        worst = max(worst, rel_err(analytic, numeric))
    return worst


class ConstantEpsModel:
    """Denoiser double that always predicts the same epsilon value."""

    def __init__(self, value, shape):
        self.value = value
        self.shape = tuple(shape)

    def predict_eps(self, x_t, t):
        return np.full(x_t.shape, float(self.value))

    def vjp_eps(self, x_t, t, cotangent):
        return np.zeros_like(cotangent)


class FailingModel:
    """Denoiser double that raises at one timestep."""

    def __init__(self, shape, fail_at, error):
        self.shape = tuple(shape)
        self.fail_at = fail_at
        self.error = error

    def predict_eps(self, x_t, t):
        if t == self.fail_at:
            raise self.error
        return np.zeros_like(x_t)

    def vjp_eps(self, x_t, t, cotangent):
        return np.zeros_like(cotangent)
