"""Window synchronization and the joint denoising loop.

Each denoising step optionally pulls every window toward the anchor window by
one gradient step on a perceptual loss between predicted denoised grids, then
advances every window with the sampler and averages overlaps back into the
panorama. With a zero weight the loop is plain averaging fusion.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from tqdm import tqdm

from constants import DEFAULT_DECAY, thread_count
from errors import ConfigError, NumericError, StepError, SyncDiffError
from panorama import fuse_average, scatter
from rng_streams import init_stream, window_stream
from samplers import predict_denoised, sample_S

GUIDANCE_TARGETS = ("denoised", "noisy")


# --- Application schedule ---
@dataclass(frozen=True)
class SyncSchedule:
    mode: str = "every"  # every | interval | initial
    param: int = 0

    @classmethod
    def parse(cls, text):
        """'every', 'interval:f' or 'initial:k'."""
        text = str(text).strip()
        if text == "every":
            return cls("every", 0)
        mode, sep, raw = text.partition(":")
        if not sep or mode not in ("interval", "initial"):
            raise ConfigError("sync.schedule", f"expected every|interval:f|initial:k, got '{text}'")
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError("sync.schedule", f"'{raw}' is not an integer") from None
        if value < 1:
            raise ConfigError("sync.schedule", f"{mode} needs a positive integer, got {value}")
        return cls(mode, value)

    def __str__(self):
        return self.mode if self.mode == "every" else f"{self.mode}:{self.param}"

    def validate(self, n_steps):
        if self.mode != "every" and self.param > n_steps:
            raise ConfigError(
                "sync.schedule", f"{self} exceeds the {n_steps} reverse steps of the plan"
            )

    def applies(self, index, n_steps):
        """Whether sync runs on step `index` (0-based) of an n_steps plan."""
        if self.mode == "every":
            return True
        if self.mode == "initial":
            return index < self.param
        # interval:f spreads f applications uniformly: indices floor(k n / f)
        return any(k * n_steps // self.param == index for k in range(self.param))


@dataclass(frozen=True)
class SyncPolicy:
    loss: object
    w0: float = 0.0
    decay: float = DEFAULT_DECAY
    schedule: SyncSchedule = field(default_factory=SyncSchedule)
    guidance_target: str = "denoised"
    step_clip: Optional[float] = None  # RMS cap on one window's update

    def __post_init__(self):
        if not (self.w0 >= 0.0 and math.isfinite(self.w0)):
            raise ConfigError("sync.w0", f"must be a finite value >= 0, got {self.w0}")
        if not 0.0 < self.decay <= 1.0:
            raise ConfigError("sync.decay", f"must be in (0, 1], got {self.decay}")
        if self.guidance_target not in GUIDANCE_TARGETS:
            raise ConfigError(
                "sync.guidance", f"expected one of {GUIDANCE_TARGETS}, got '{self.guidance_target}'"
            )
        if self.step_clip is not None and not (self.step_clip > 0.0 and math.isfinite(self.step_clip)):
            raise ConfigError("sync.step_clip", f"must be a finite value > 0, got {self.step_clip}")

    def weight_at(self, n_completed):
        return self.w0 * self.decay ** n_completed

    def to_dict(self):
        return {
            "w0": self.w0,
            "decay": self.decay,
            "schedule": str(self.schedule),
            "guidance": self.guidance_target,
            "loss": getattr(self.loss, "kind", type(self.loss).__name__),
            "loss_scale": getattr(self.loss, "scale", 1.0),
            "step_clip": self.step_clip,
        }


# --- Run state and trace ---
@dataclass(frozen=True)
class StepRecord:
    index: int
    t: int
    s: int
    weight: float
    sync_applied: bool
    losses: list


@dataclass
class RunState:
    windows: list
    weight: float
    seed: int
    position: int = 0
    panorama: Optional[np.ndarray] = None
    records: list = field(default_factory=list)


@dataclass
class RunTrace:
    layout: dict
    plan: list
    seed: int
    sampler: dict
    policy: Optional[dict]
    steps: list

    @property
    def n_windows(self):
        return self.layout["n_windows"]

    @property
    def anchor_index(self):
        return self.layout["anchor_index"]

    @property
    def weights(self):
        return [rec.weight for rec in self.steps]

    @property
    def sync_steps(self):
        return [rec.index for rec in self.steps if rec.sync_applied]

    def to_dict(self):
        return {
            "n_windows": self.n_windows,
            "anchor_index": self.anchor_index,
            "layout": self.layout,
            "plan": list(self.plan),
            "seed": self.seed,
            "sampler": self.sampler,
            "policy": self.policy,
            "steps": [asdict(rec) for rec in self.steps],
        }


def _map(fn, items, pool):
    # Executor.map keeps input order, so results never depend on thread scheduling
    if pool is None:
        return [fn(item) for item in items]
    return list(pool.map(fn, items))


# --- Synchronization update ---
def clip_step(step, limit):
    """Scales step down so its root-mean-square does not exceed limit (None: no cap)."""
    if limit is None:
        return step
    rms = math.sqrt(float(np.mean(step * step)))
    return step if rms <= limit else step * (limit / rms)


def sync_gradient(x, t, model, sched, loss, anchor_phi):
    """Gradient of loss(phi(x, t), anchor_phi) w.r.t. x, and the loss value.

    Chain rule through phi = (x - sqrt(1 - a) eps(x)) / sqrt(a):
        grad = (g - sqrt(1 - a) vjp_eps(x, t, g)) / sqrt(a),  g = dL/dphi
    """
    a = sched.alpha(t)
    phi = predict_denoised(model, x, t, sched)
    g = loss.grad_a(phi, anchor_phi)
    grad = (g - math.sqrt(1.0 - a) * model.vjp_eps(x, t, g)) / math.sqrt(a)
    return grad, loss.value(phi, anchor_phi)


def sync_update(ws, t, model, sched, policy, layout, weight=None, pool=None):
    """One gradient step of every non-anchor window toward the anchor's denoised grid.

    Returns (windows, losses); losses are evaluated before the step, 0.0 for
    the anchor, and empty when the weight is zero.
    """
    weight = policy.w0 if weight is None else weight
    if weight == 0.0:
        return list(ws), []

    anchor = layout.anchor_index
    anchor_phi = predict_denoised(model, ws[anchor], t, sched)

    def update(i):
        if i == anchor:
            return ws[i], 0.0
        grad, value = sync_gradient(ws[i], t, model, sched, policy.loss, anchor_phi)
        return ws[i] - clip_step(weight * grad, policy.step_clip), value

    results = _map(update, range(layout.n_windows), pool)
    return [x for x, _ in results], [v for _, v in results]


def sync_update_noisy(ws, t, policy, layout, weight=None, pool=None):
    """Same step with the loss taken directly on the noisy grids (no model gradient)."""
    weight = policy.w0 if weight is None else weight
    if weight == 0.0:
        return list(ws), []

    anchor = layout.anchor_index
    x_anchor = ws[anchor]

    def update(i):
        if i == anchor:
            return ws[i], 0.0
        g = policy.loss.grad_a(ws[i], x_anchor)
        return ws[i] - clip_step(weight * g, policy.step_clip), policy.loss.value(ws[i], x_anchor)

    results = _map(update, range(layout.n_windows), pool)
    return [x for x, _ in results], [v for _, v in results]


# --- Joint denoising ---
def denoising_one_step(state, t, s, model, sched, policy, layout, kind, n_steps, pool=None):
    """Sync (when scheduled), per-window sampler step, fusion, then weight decay.

    policy=None runs plain averaging fusion with no synchronization.
    """
    index = state.position
    windows = state.windows
    losses = []
    applied = False

    if policy is not None and policy.schedule.applies(index, n_steps):
        if policy.guidance_target == "noisy":
            windows, losses = sync_update_noisy(windows, t, policy, layout, state.weight, pool)
        else:
            windows, losses = sync_update(windows, t, model, sched, policy, layout, state.weight, pool)
        applied = state.weight > 0.0

    def advance(i):
        return sample_S(model, windows[i], t, s, window_stream(state.seed, i, t), kind, sched)

    stepped = _map(advance, range(layout.n_windows), pool)
    z = fuse_average(stepped, layout)
    if not np.all(np.isfinite(z)):
        raise NumericError(f"Non-finite values in the fused panorama at t={t}")

    record = StepRecord(
        index=index,
        t=t,
        s=s,
        weight=state.weight,
        sync_applied=applied,
        losses=[float(v) for v in losses],
    )
    next_weight = policy.weight_at(index + 1) if policy is not None else 0.0
    return RunState(
        windows=scatter(z, layout),
        weight=next_weight,
        seed=state.seed,
        position=index + 1,
        panorama=z,
        records=state.records + [record],
    )


def run_panorama(model, sched, layout, kind, plan, policy, seed, verbose=False):
    """Generates one panorama from a shared x_T draw; returns (z, RunTrace)."""
    if tuple(model.shape) != layout.window_shape:
        raise ConfigError("layout", f"model window {tuple(model.shape)} != layout window {layout.window_shape}")
    n_steps = len(plan)
    if policy is not None:
        policy.schedule.validate(n_steps)

    x_T = init_stream(seed).standard_normal(layout.panorama_shape)
    state = RunState(
        windows=scatter(x_T, layout),
        weight=policy.w0 if policy is not None else 0.0,
        seed=seed,
    )

    workers = thread_count()
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for t, s in tqdm(plan.transitions(), desc="denoise", disable=not verbose):
            try:
                state = denoising_one_step(
                    state, t, s, model, sched, policy, layout, kind, n_steps, pool
                )
            except (SyncDiffError, ArithmeticError, ValueError) as e:
                raise StepError(state.position + 1, t, s, e) from e
    finally:
        if pool is not None:
            pool.shutdown()

    trace = RunTrace(
        layout=layout.to_dict(),
        plan=list(plan.steps),
        seed=seed,
        sampler={"variant": kind.variant, "eta": kind.eta},
        policy=policy.to_dict() if policy is not None else None,
        steps=state.records,
    )
    return state.panorama, trace
