"""Epsilon-prediction denoisers.

Three families share one interface (predict_eps / vjp_eps):

* GaussianMixtureDenoiser: the exact epsilon of an isotropic Gaussian-mixture
  prior, diffused in closed form. Used as a verification oracle.
* PointMassDenoiser: the exact epsilon of a Dirac prior, linear in x.
* MlpDenoiser: a small fully connected network trained with the simplified
  epsilon-matching loss.

Every model accepts either a single grid of its window shape or a batch of
such grids stacked on leading axes.
"""

import math
import os
from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np
from tqdm import tqdm

from constants import (
    CHECKPOINT_MAGIC,
    DEFAULT_BATCH_SIZE,
    DEFAULT_HIDDEN,
    DEFAULT_ITERATIONS,
    DEFAULT_LEARNING_RATE,
    DEFAULT_TIME_FEATURES,
    LOSS_SMOOTHING_WINDOW,
)
from errors import (
    DimensionError,
    FormatError,
    NumericError,
    RangeError,
    TrainingDivergenceError,
)


class DenoiserModel(Protocol):
    shape: tuple

    def predict_eps(self, x_t, t):
        """Predicted noise, same shape as x_t."""

    def vjp_eps(self, x_t, t, cotangent):
        """cotangent^T . d eps / d x_t, same shape as x_t."""


def _as_rows(x, shape):
    """Flattens (..., *shape) to (batch, prod(shape)); returns rows and batch shape."""
    ndim = len(shape)
    if x.ndim < ndim or tuple(x.shape[x.ndim - ndim:]) != tuple(shape):
        raise DimensionError(f"Expected trailing shape {tuple(shape)}, got {x.shape}")
    batch_shape = x.shape[: x.ndim - ndim]
    return x.reshape(-1, int(np.prod(shape))), batch_shape


# ==============================================================
# Gaussian-mixture oracle
# ==============================================================
@dataclass(frozen=True)
class GaussianMixturePrior:
    weights: np.ndarray    # (K,)
    means: np.ndarray      # (K, d) flattened grids
    variances: np.ndarray  # (K,) isotropic per component
    shape: tuple           # (H, W, D) of one grid

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        means = np.asarray(self.means, dtype=np.float64)
        variances = np.asarray(self.variances, dtype=np.float64)
        d = int(np.prod(self.shape))
        if means.ndim != 2 or means.shape != (weights.size, d):
            raise DimensionError(
                f"Means must have shape ({weights.size}, {d}), got {means.shape}"
            )
        if variances.shape != weights.shape:
            raise DimensionError("One variance per mixture component is required")
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise NumericError(f"Mixture weights must be positive and sum to 1, got {weights}")
        if np.any(variances <= 0):
            raise NumericError("Mixture variances must be positive")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)
        object.__setattr__(self, "shape", tuple(self.shape))

    @property
    def K(self):
        return self.weights.size

    @property
    def dim(self):
        return self.means.shape[1]


def _diffused_terms(prior, x_t, t, sched):
    """Responsibilities r (B,K), offsets u_k = (m_k - x)/s_k (B,K,d) and s (K,) at step t."""
    X, batch_shape = _as_rows(np.asarray(x_t, dtype=np.float64), prior.shape)
    a = sched.alpha(t)
    d = prior.dim
    s = a * prior.variances + (1.0 - a)
    diff = math.sqrt(a) * prior.means[None, :, :] - X[:, None, :]
    log_w = (
        np.log(prior.weights)[None, :]
        - 0.5 * d * np.log(2.0 * np.pi * s)[None, :]
        - np.sum(diff * diff, axis=2) / (2.0 * s[None, :])
    )
    log_w -= log_w.max(axis=1, keepdims=True)
    r = np.exp(log_w)
    r /= r.sum(axis=1, keepdims=True)
    if not np.all(np.isfinite(r)):
        raise NumericError(f"Mixture responsibilities are not finite at t={t}")
    u = diff / s[None, :, None]
    return a, r, u, s, batch_shape


def gmm_predict_eps(prior, x_t, t, sched):
    """-sqrt(1 - alpha_t) * grad log p_t(x_t) for the diffused mixture."""
    a, r, u, _, batch_shape = _diffused_terms(prior, x_t, t, sched)
    score = np.einsum("bk,bkd->bd", r, u)
    eps = -math.sqrt(1.0 - a) * score
    return eps.reshape(batch_shape + prior.shape)


def gmm_vjp_eps(prior, x_t, t, cotangent, sched):
    """Exact cotangent-Jacobian product of gmm_predict_eps (the Jacobian is symmetric)."""
    a, r, u, s, batch_shape = _diffused_terms(prior, x_t, t, sched)
    C, _ = _as_rows(np.asarray(cotangent, dtype=np.float64), prior.shape)
    if C.shape[0] != r.shape[0]:
        raise DimensionError("Cotangent batch does not match x_t batch")
    score = np.einsum("bk,bkd->bd", r, u)
    u_dot_c = np.einsum("bkd,bd->bk", u, C)
    score_dot_c = np.sum(score * C, axis=1, keepdims=True)
    hess_c = (
        -(r @ (1.0 / s))[:, None] * C
        + np.einsum("bk,bkd->bd", r * u_dot_c, u)
        - score * score_dot_c
    )
    vjp = -math.sqrt(1.0 - a) * hess_c
    return vjp.reshape(batch_shape + prior.shape)


@dataclass(frozen=True)
class GaussianMixtureDenoiser:
    prior: GaussianMixturePrior
    sched: object

    @property
    def shape(self):
        return self.prior.shape

    def predict_eps(self, x_t, t):
        return gmm_predict_eps(self.prior, x_t, t, self.sched)

    def vjp_eps(self, x_t, t, cotangent):
        return gmm_vjp_eps(self.prior, x_t, t, cotangent, self.sched)


@dataclass(frozen=True)
class PointMassDenoiser:
    """Exact epsilon for a prior concentrated on the single grid mu."""

    mu: np.ndarray
    sched: object

    @property
    def shape(self):
        return tuple(self.mu.shape)

    def predict_eps(self, x_t, t):
        a = self.sched.alpha(t)
        _as_rows(x_t, self.shape)
        return (x_t - math.sqrt(a) * self.mu) / math.sqrt(1.0 - a)

    def vjp_eps(self, x_t, t, cotangent):
        a = self.sched.alpha(t)
        _as_rows(cotangent, self.shape)
        return cotangent / math.sqrt(1.0 - a)


# ==============================================================
# Trainable MLP denoiser
# ==============================================================
def time_embedding(t, T, n_freq):
    """[t/T, sin(2^k pi t/T), cos(2^k pi t/T) for k < n_freq] per row."""
    tau = np.atleast_1d(np.asarray(t, dtype=np.float64)) / float(T)
    feats = [tau]
    for k in range(n_freq):
        angle = (2.0 ** k) * np.pi * tau
        feats.append(np.sin(angle))
        feats.append(np.cos(angle))
    return np.stack(feats, axis=1)


def _silu(z):
    sig = 0.5 * (1.0 + np.tanh(0.5 * z))
    return z * sig


def _silu_grad(z):
    sig = 0.5 * (1.0 + np.tanh(0.5 * z))
    return sig * (1.0 + z * (1.0 - sig))


@dataclass(frozen=True)
class SkipConnection:
    """Noise-level-aware skip path from x_t to the predicted noise.

    With v the per-element second moment of the data and a = alpha_t:

        eps_hat = gain * c_skip x_t + c_out F(c_in x_t, t)
        c_skip = sqrt(1 - a) / (a v + 1 - a)
        c_out  = sqrt(a v / (a v + 1 - a))
        c_in   = 1 / sqrt(a v + 1 - a)

    c_skip x_t is the best per-step linear guess of eps. The network only
    models the unit-variance residual. Only the scalar gain is learned; it
    starts at 0.
    """

    data_variance: float
    alphas: np.ndarray
    gain: float = 0.0

    def __post_init__(self):
        if not (self.data_variance > 0.0 and math.isfinite(self.data_variance)):
            raise NumericError(f"Skip data variance must be a finite value > 0, got {self.data_variance}")

    @property
    def T(self):
        return int(np.asarray(self.alphas).size)

    def with_gain(self, gain):
        return SkipConnection(self.data_variance, self.alphas, float(gain))

    def coefficients(self, t_rows):
        """(c_skip, c_out, c_in), each a (rows, 1) column."""
        t_rows = np.asarray(t_rows, dtype=np.int64)
        if t_rows.min() < 1 or t_rows.max() > self.T:
            raise RangeError(f"Timestep outside [1, {self.T}]")
        a = np.asarray(self.alphas, dtype=np.float64)[t_rows - 1][:, None]
        total = a * self.data_variance + (1.0 - a)
        return np.sqrt(1.0 - a) / total, np.sqrt(a * self.data_variance / total), 1.0 / np.sqrt(total)


def fit_skip_connection(dataset, sched):
    """Skip path sized to the dataset's per-element second moment; gain 0."""
    data = np.stack([np.asarray(x, dtype=np.float64) for x in dataset])
    return SkipConnection(float(np.mean(data * data)), np.asarray(sched.alphas, dtype=np.float64))


@dataclass(frozen=True)
class MlpDenoiser:
    weights: tuple  # per layer (in_dim, out_dim), y = h @ W + b
    biases: tuple
    shape: tuple
    T: int
    time_features: int = DEFAULT_TIME_FEATURES
    skip: Optional[SkipConnection] = None

    def __post_init__(self):
        n = int(np.prod(self.shape))
        dims_in = n + 1 + 2 * self.time_features
        if self.weights[0].shape[0] != dims_in or self.weights[-1].shape[1] != n:
            raise DimensionError(
                f"Layer dims {[w.shape for w in self.weights]} do not fit a "
                f"{tuple(self.shape)} grid with {self.time_features} time features"
            )
        for w_in, w_out in zip(self.weights, self.weights[1:]):
            if w_in.shape[1] != w_out.shape[0]:
                raise DimensionError("Consecutive layer dims do not chain")
        if self.skip is not None and self.skip.T != self.T:
            raise DimensionError(f"Skip path covers {self.skip.T} timesteps, model has T={self.T}")

    @property
    def layer_dims(self):
        return [w.shape for w in self.weights]

    def _forward(self, X, t_rows):
        coeffs = self.skip.coefficients(t_rows) if self.skip is not None else None
        h_in = X if coeffs is None else coeffs[2] * X
        h = np.concatenate([h_in, time_embedding(t_rows, self.T, self.time_features)], axis=1)
        acts, pres = [h], []
        last = len(self.weights) - 1
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            if l < last:
                pres.append(z)
                h = _silu(z)
            else:
                h = z
            acts.append(h)
        if coeffs is None:
            return h, (acts, pres, X, None)
        c_skip, c_out, _ = coeffs
        return self.skip.gain * c_skip * X + c_out * h, (acts, pres, X, coeffs)

    def _backward(self, cache, G, want_params=False):
        """Returns (input grad, weight grads, bias grads, skip gain grad)."""
        acts, pres, X, coeffs = cache
        g = G if coeffs is None else coeffs[1] * G
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        for l in range(len(self.weights) - 1, -1, -1):
            if want_params:
                grads_w[l] = acts[l].T @ g
                grads_b[l] = g.sum(axis=0)
            g = g @ self.weights[l].T
            if l > 0:
                g = g * _silu_grad(pres[l - 1])
        n = int(np.prod(self.shape))
        if coeffs is None:
            return g[:, :n], grads_w, grads_b, None
        c_skip, _, c_in = coeffs
        g_in = c_in * g[:, :n] + self.skip.gain * c_skip * G
        grad_gain = float(np.sum(G * c_skip * X)) if want_params else None
        return g_in, grads_w, grads_b, grad_gain

    def predict_eps(self, x_t, t):
        X, batch_shape = _as_rows(np.asarray(x_t, dtype=np.float64), self.shape)
        out, _ = self._forward(X, np.full(X.shape[0], t))
        return out.reshape(batch_shape + tuple(self.shape))

    def vjp_eps(self, x_t, t, cotangent):
        X, batch_shape = _as_rows(np.asarray(x_t, dtype=np.float64), self.shape)
        C, _ = _as_rows(np.asarray(cotangent, dtype=np.float64), self.shape)
        _, cache = self._forward(X, np.full(X.shape[0], t))
        g_in, _, _, _ = self._backward(cache, C)
        return g_in.reshape(batch_shape + tuple(self.shape))


def init_mlp(shape, T, hidden=DEFAULT_HIDDEN, time_features=DEFAULT_TIME_FEATURES, seed=0, skip=None):
    """Seeded initialisation; the output layer starts small so eps_hat ~ 0."""
    rng = np.random.default_rng(seed)
    n = int(np.prod(shape))
    dims = [n + 1 + 2 * time_features] + list(hidden) + [n]
    weights, biases = [], []
    for l, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
        std = 1.0 / math.sqrt(d_in)
        if l == len(dims) - 2:
            std *= 0.1
        weights.append(rng.standard_normal((d_in, d_out)) * std)
        biases.append(np.zeros(d_out))
    return MlpDenoiser(
        weights=tuple(weights),
        biases=tuple(biases),
        shape=tuple(shape),
        T=T,
        time_features=time_features,
        skip=skip,
    )


# ==============================================================
# Training (simplified epsilon-matching loss)
# ==============================================================
@dataclass(frozen=True)
class TrainOptions:
    learning_rate: float = DEFAULT_LEARNING_RATE
    batch_size: int = DEFAULT_BATCH_SIZE
    iterations: int = DEFAULT_ITERATIONS
    seed: int = 0
    optimizer: str = "adam"
    adam_betas: tuple = field(default=(0.9, 0.999))
    adam_eps: float = 1e-8


def _noisy_batch(rng, data, sched_alphas, batch_size):
    idx = rng.integers(0, data.shape[0], size=batch_size)
    t = rng.integers(1, sched_alphas.size + 1, size=batch_size)
    eps = rng.standard_normal((batch_size, data.shape[1]))
    a = sched_alphas[t - 1][:, None]
    x_t = np.sqrt(a) * data[idx] + np.sqrt(1.0 - a) * eps
    return x_t, t, eps


def mlp_train(model, dataset, sched, opt, verbose=False):
    """Fits eps_theta with SGD/Adam on E||eps_theta(x_t, t) - eps||^2, t ~ U[1, T].

    The skip gain, when the model has a skip path, is trained with the layers.
    Returns the trained model (a new object) and the per-iteration loss list.
    """
    if len(dataset) == 0:
        raise DimensionError("Training dataset is empty")
    if opt.optimizer not in ("adam", "sgd"):
        raise ValueError(f"Unknown optimizer '{opt.optimizer}'")
    if model.skip is not None and model.skip.T != sched.T:
        raise DimensionError(f"Skip path covers {model.skip.T} timesteps, schedule has T={sched.T}")
    data = np.stack([np.asarray(x, dtype=np.float64) for x in dataset])
    data, _ = _as_rows(data, model.shape)
    alphas = np.asarray(sched.alphas, dtype=np.float64)

    rng = np.random.default_rng(opt.seed)
    weights = [w.copy() for w in model.weights]
    biases = [b.copy() for b in model.biases]
    params = weights + biases
    gain = None
    if model.skip is not None:
        gain = np.array(model.skip.gain, dtype=np.float64)  # 0-d, updated in place
        params.append(gain)
    m_state = [np.zeros_like(p) for p in params]
    v_state = [np.zeros_like(p) for p in params]
    beta1, beta2 = opt.adam_betas
    losses = []

    def snapshot():
        skip = model.skip.with_gain(gain) if gain is not None else None
        return MlpDenoiser(tuple(weights), tuple(biases), model.shape, model.T, model.time_features, skip)

    for it in tqdm(range(opt.iterations), desc="train", disable=not verbose):
        current = snapshot()
        x_t, t, eps = _noisy_batch(rng, data, alphas, opt.batch_size)
        out, cache = current._forward(x_t, t)
        diff = out - eps
        loss = float(np.mean(diff * diff))
        if not math.isfinite(loss):
            raise TrainingDivergenceError(it, loss)
        losses.append(loss)

        G = 2.0 * diff / diff.size
        _, grads_w, grads_b, grad_gain = current._backward(cache, G, want_params=True)
        grads = grads_w + grads_b
        if gain is not None:
            grads.append(np.asarray(grad_gain))

        for k, (p, g) in enumerate(zip(params, grads)):
            if opt.optimizer == "sgd":
                p -= opt.learning_rate * g
                continue
            m_state[k] = beta1 * m_state[k] + (1.0 - beta1) * g
            v_state[k] = beta2 * v_state[k] + (1.0 - beta2) * g * g
            m_hat = m_state[k] / (1.0 - beta1 ** (it + 1))
            v_hat = v_state[k] / (1.0 - beta2 ** (it + 1))
            p -= opt.learning_rate * m_hat / (np.sqrt(v_hat) + opt.adam_eps)

    return snapshot(), losses


def denoising_loss(model, dataset, sched, n_draws=256, seed=0):
    """Monte-Carlo estimate of the per-element epsilon-matching loss."""
    data = np.stack([np.asarray(x, dtype=np.float64) for x in dataset])
    data, _ = _as_rows(data, model.shape)
    rng = np.random.default_rng(seed)
    x_t, t, eps = _noisy_batch(rng, data, np.asarray(sched.alphas), n_draws)
    total = 0.0
    for row in range(n_draws):
        pred = model.predict_eps(x_t[row].reshape(model.shape), int(t[row])).reshape(-1)
        total += float(np.mean((pred - eps[row]) ** 2))
    return total / n_draws


def smoothed_losses(losses, window=LOSS_SMOOTHING_WINDOW):
    """Trailing moving average; shorter traces average over what exists."""
    values = np.asarray(losses, dtype=np.float64)
    if values.size == 0:
        return values
    window = max(1, min(window, values.size))
    return np.convolve(values, np.ones(window) / window, mode="valid")


# ==============================================================
# SDM1 checkpoints
# ==============================================================
def save_checkpoint(model, path):
    """Writes magic, u32 layer count, u32 (in, out) per layer, then f32 W and b per layer.

    A model with a skip path appends two f32 values: data variance and gain.
    """
    header = [len(model.weights)]
    for W in model.weights:
        header.extend(W.shape)
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(np.asarray(header, dtype="<u4").tobytes())
        for W, b in zip(model.weights, model.biases):
            f.write(np.ascontiguousarray(W, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f4").tobytes())
        if model.skip is not None:
            f.write(np.asarray([model.skip.data_variance, model.skip.gain], dtype="<f4").tobytes())


def load_checkpoint(path, shape, T, alphas=None):
    """Reads an SDM1 file; the window shape, T and alphas come from the run config."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: missing SDM1 magic")
    offset = 4
    try:
        n_layers = int(np.frombuffer(raw, dtype="<u4", count=1, offset=offset)[0])
        if n_layers == 0:
            raise FormatError(f"{path}: checkpoint declares no layers")
        offset += 4
        dims = np.frombuffer(raw, dtype="<u4", count=2 * n_layers, offset=offset)
        offset += 8 * n_layers
        weights, biases = [], []
        for l in range(n_layers):
            d_in, d_out = int(dims[2 * l]), int(dims[2 * l + 1])
            W = np.frombuffer(raw, dtype="<f4", count=d_in * d_out, offset=offset)
            offset += 4 * d_in * d_out
            b = np.frombuffer(raw, dtype="<f4", count=d_out, offset=offset)
            offset += 4 * d_out
            weights.append(W.astype(np.float64).reshape(d_in, d_out))
            biases.append(b.astype(np.float64))
    except FormatError:
        raise
    except ValueError as e:
        raise FormatError(f"{path}: truncated checkpoint ({e})") from e

    skip = None
    trailing = len(raw) - offset
    if trailing == 8:
        variance, gain = np.frombuffer(raw, dtype="<f4", count=2, offset=offset).astype(np.float64)
        if alphas is None:
            raise FormatError(f"{path}: skip path needs the schedule's alphas")
        try:
            skip = SkipConnection(float(variance), np.asarray(alphas, dtype=np.float64), float(gain))
        except NumericError as e:
            raise FormatError(f"{path}: bad skip path ({e})") from e
    elif trailing != 0:
        raise FormatError(f"{path}: {trailing} trailing bytes after the last layer")

    n = int(np.prod(shape))
    extra = weights[0].shape[0] - n - 1
    if extra < 0 or extra % 2:
        raise FormatError(f"{path}: input width {weights[0].shape[0]} does not fit a {tuple(shape)} grid")
    return MlpDenoiser(tuple(weights), tuple(biases), tuple(shape), T, extra // 2, skip)
