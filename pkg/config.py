"""Run configuration: a flat JSON document with dotted keys per module.

Missing keys fall back to the defaults below; unknown keys are rejected.
The build_* helpers turn a RunConfig into engine objects and report any
validation failure as a ConfigError naming the offending key.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from constants import (
    DEFAULT_BANK_CHANNELS,
    DEFAULT_BANK_KERNEL,
    DEFAULT_BANK_SEED,
    DEFAULT_BATCH_SIZE,
    DEFAULT_BETA_RANGE,
    DEFAULT_CHANNELS,
    DEFAULT_DECAY,
    DEFAULT_ETA,
    DEFAULT_FREQUENCY_RANGE,
    DEFAULT_HIDDEN,
    DEFAULT_ITERATIONS,
    DEFAULT_LEARNING_RATE,
    DEFAULT_LOSS,
    DEFAULT_N_CROPS,
    DEFAULT_N_STEPS,
    DEFAULT_ORIENTATION_RANGE,
    DEFAULT_PALETTE,
    DEFAULT_PANORAMA_HEIGHT,
    DEFAULT_PANORAMA_WIDTH,
    DEFAULT_REFERENCE_PAIRS,
    DEFAULT_SAMPLER,
    DEFAULT_SCHEDULE_KIND,
    DEFAULT_STRIDE,
    DEFAULT_T,
    DEFAULT_TEXTURE_COUNT,
    DEFAULT_TEXTURE_SHAPE,
    DEFAULT_TIME_FEATURES,
    DEFAULT_W0,
    DEFAULT_WINDOW,
)
from errors import ConfigError, SyncDiffError
from losses import make_loss
from models import (
    GaussianMixtureDenoiser,
    GaussianMixturePrior,
    PointMassDenoiser,
    TrainOptions,
    init_mlp,
    load_checkpoint,
)
from panorama import make_layout
from samplers import SamplerKind
from schedule import build_schedule, make_plan
from sync import SyncPolicy, SyncSchedule
from textures import TextureDatasetSpec

MODEL_KINDS = ("gmm", "point", "mlp")

DEFAULTS = {
    "seed": 0,
    "out": "output",
    # --- schedule ---
    "schedule.T": DEFAULT_T,
    "schedule.kind": DEFAULT_SCHEDULE_KIND,
    "schedule.params": list(DEFAULT_BETA_RANGE),
    # --- model ---
    "model.kind": "gmm",
    "model.checkpoint": None,
    "model.gmm.weights": [1.0],
    "model.gmm.means": [0.0],
    "model.gmm.variances": [1.0],
    "model.point.value": 0.0,
    "model.mlp.hidden": list(DEFAULT_HIDDEN),
    "model.mlp.time_features": DEFAULT_TIME_FEATURES,
    "model.mlp.init_seed": 0,
    "model.mlp.skip": True,
    # --- layout ---
    "layout.height": DEFAULT_PANORAMA_HEIGHT,
    "layout.width": DEFAULT_PANORAMA_WIDTH,
    "layout.channels": DEFAULT_CHANNELS,
    "layout.window": DEFAULT_WINDOW,
    "layout.stride": DEFAULT_STRIDE,
    "layout.anchor": "center",
    # --- sampler ---
    "sampler.kind": DEFAULT_SAMPLER,
    "sampler.eta": DEFAULT_ETA,
    "sampler.n_steps": DEFAULT_N_STEPS,
    # --- sync ---
    "sync.enabled": True,
    "sync.w0": DEFAULT_W0,
    "sync.decay": DEFAULT_DECAY,
    "sync.schedule": "every",
    "sync.guidance": "denoised",
    "sync.loss": DEFAULT_LOSS,
    "sync.loss_scale": 1.0,
    "sync.bank_seed": DEFAULT_BANK_SEED,
    "sync.bank_channels": list(DEFAULT_BANK_CHANNELS),
    "sync.bank_kernel": DEFAULT_BANK_KERNEL,
    "sync.bank_weights": None,
    "sync.step_clip": None,
    # --- metrics ---
    "metrics.n_crops": DEFAULT_N_CROPS,
    "metrics.crop_width": None,
    "metrics.reference_pairs": DEFAULT_REFERENCE_PAIRS,
    "metrics.loss_scale": 1.0,
    # --- dataset (train) ---
    "dataset.count": DEFAULT_TEXTURE_COUNT,
    "dataset.shape": list(DEFAULT_TEXTURE_SHAPE),
    "dataset.orientation_range": list(DEFAULT_ORIENTATION_RANGE),
    "dataset.frequency_range": list(DEFAULT_FREQUENCY_RANGE),
    "dataset.palette": [[list(c) for c in pair] for pair in DEFAULT_PALETTE],
    "dataset.seed": 0,
    # --- training ---
    "train.learning_rate": DEFAULT_LEARNING_RATE,
    "train.batch_size": DEFAULT_BATCH_SIZE,
    "train.iterations": DEFAULT_ITERATIONS,
    "train.seed": 0,
    "train.optimizer": "adam",
}


def _flatten(doc, prefix=""):
    flat = {}
    for key, value in doc.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, name + "."))
        else:
            flat[name] = value
    return flat


def _coerce(key, value):
    default = DEFAULTS[key]
    if value is None or default is None:
        return value
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError
            return int(value)
        if isinstance(default, float):
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected {type(default).__name__}, got {value!r}") from None
    return value


@dataclass(frozen=True)
class RunConfig:
    values: dict
    name: str = "<defaults>"
    base_dir: str = "."

    def __getitem__(self, key):
        return self.values[key]

    def with_overrides(self, overrides):
        merged = dict(self.values)
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in DEFAULTS:
                raise ConfigError(key, "unknown configuration key")
            merged[key] = _coerce(key, value)
        return RunConfig(merged, self.name, self.base_dir)

    def resolve_path(self, path):
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)


def config_from_dict(doc, name="<dict>", base_dir="."):
    return RunConfig(dict(DEFAULTS), name, base_dir).with_overrides(_flatten(doc))


def load_config(path, overrides=None):
    """Reads a JSON config file and applies CLI overrides on top."""
    if not os.path.exists(path):
        raise ConfigError("--config", f"file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError("--config", f"{path} is not valid JSON ({e})") from e
    if not isinstance(doc, dict):
        raise ConfigError("--config", "top level must be a JSON object")
    cfg = config_from_dict(doc, name=os.path.basename(path), base_dir=os.path.dirname(os.path.abspath(path)))
    return cfg.with_overrides(overrides or {})


# --- Builders ---
def _as_config_error(field, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except (SyncDiffError, ValueError, TypeError) as e:
        raise ConfigError(field, str(e)) from e


def build_schedule_from(cfg):
    params = cfg["schedule.params"]
    if cfg["schedule.kind"] == "cosine" and params == list(DEFAULT_BETA_RANGE):
        params = None
    return _as_config_error("schedule", build_schedule, cfg["schedule.T"], cfg["schedule.kind"], params)


def build_layout_from(cfg):
    return _as_config_error(
        "layout", make_layout,
        cfg["layout.height"], cfg["layout.width"], cfg["layout.channels"],
        cfg["layout.height"], cfg["layout.window"], cfg["layout.stride"], cfg["layout.anchor"],
    )


def build_sampler_from(cfg):
    return _as_config_error("sampler.kind", SamplerKind, cfg["sampler.kind"], cfg["sampler.eta"])


def build_plan_from(cfg, sched):
    return _as_config_error("sampler.n_steps", make_plan, sched, cfg["sampler.n_steps"])


def _component_means(raw, K, shape):
    """Each mean may be a scalar, a per-channel list or a full flattened grid."""
    d = int(np.prod(shape))
    if len(raw) != K:
        raise ConfigError("model.gmm.means", f"expected {K} means, got {len(raw)}")
    rows = []
    for mean in raw:
        arr = np.asarray(mean, dtype=np.float64).reshape(-1)
        if arr.size == 1:
            rows.append(np.full(d, arr[0]))
        elif arr.size == shape[-1]:
            rows.append(np.broadcast_to(arr, shape).reshape(-1).copy())
        elif arr.size == d:
            rows.append(arr)
        else:
            raise ConfigError(
                "model.gmm.means", f"a mean must have 1, {shape[-1]} or {d} values, got {arr.size}"
            )
    return np.stack(rows)


def prior_from_config(cfg, shape):
    weights = np.asarray(cfg["model.gmm.weights"], dtype=np.float64)
    means = _component_means(cfg["model.gmm.means"], weights.size, shape)
    variances = np.asarray(cfg["model.gmm.variances"], dtype=np.float64)
    return _as_config_error("model.gmm", GaussianMixturePrior, weights, means, variances, tuple(shape))


def build_model_from(cfg, sched, shape):
    kind = cfg["model.kind"]
    if kind == "gmm":
        return GaussianMixtureDenoiser(prior_from_config(cfg, shape), sched)
    if kind == "point":
        return PointMassDenoiser(np.full(tuple(shape), float(cfg["model.point.value"])), sched)
    if kind == "mlp":
        path = cfg["model.checkpoint"]
        if path is None:
            return init_mlp(
                tuple(shape), sched.T, cfg["model.mlp.hidden"],
                cfg["model.mlp.time_features"], cfg["model.mlp.init_seed"],
            )
        path = cfg.resolve_path(path)
        if not os.path.exists(path):
            raise ConfigError("model.checkpoint", f"file not found: {path}")
        return _as_config_error(
            "model.checkpoint", load_checkpoint, path, tuple(shape), sched.T, sched.alphas
        )
    raise ConfigError("model.kind", f"expected one of {MODEL_KINDS}, got '{kind}'")


def build_loss_from(cfg, channels, kind=None, scale=None):
    kind = kind or cfg["sync.loss"]
    scale = cfg["sync.loss_scale"] if scale is None else scale
    bank_weights = cfg["sync.bank_weights"]
    return _as_config_error(
        "sync.loss", make_loss, kind, channels, scale,
        cfg["sync.bank_seed"], tuple(cfg["sync.bank_channels"]), cfg["sync.bank_kernel"],
        tuple(bank_weights) if bank_weights is not None else None,
    )


def build_policy_from(cfg, channels):
    """None when sync is disabled (plain averaging fusion)."""
    if not cfg["sync.enabled"]:
        return None
    step_clip = cfg["sync.step_clip"]
    if step_clip is not None and (isinstance(step_clip, bool) or not isinstance(step_clip, (int, float))):
        raise ConfigError("sync.step_clip", f"expected a number or null, got {step_clip!r}")
    return SyncPolicy(
        loss=build_loss_from(cfg, channels),
        w0=cfg["sync.w0"],
        decay=cfg["sync.decay"],
        schedule=SyncSchedule.parse(cfg["sync.schedule"]),
        guidance_target=cfg["sync.guidance"],
        step_clip=float(step_clip) if step_clip is not None else None,
    )


def build_dataset_spec_from(cfg):
    return _as_config_error(
        "dataset", TextureDatasetSpec,
        count=cfg["dataset.count"],
        shape=tuple(cfg["dataset.shape"]),
        orientation_range=tuple(cfg["dataset.orientation_range"]),
        frequency_range=tuple(cfg["dataset.frequency_range"]),
        palette=tuple(tuple(tuple(c) for c in pair) for pair in cfg["dataset.palette"]),
        seed=cfg["dataset.seed"],
    )


def build_train_options_from(cfg):
    if cfg["train.optimizer"] not in ("adam", "sgd"):
        raise ConfigError("train.optimizer", f"expected 'adam' or 'sgd', got '{cfg['train.optimizer']}'")
    if cfg["train.iterations"] < 0:
        raise ConfigError("train.iterations", "must be >= 0")
    if cfg["train.batch_size"] < 1:
        raise ConfigError("train.batch_size", "must be >= 1")
    return TrainOptions(
        learning_rate=cfg["train.learning_rate"],
        batch_size=cfg["train.batch_size"],
        iterations=cfg["train.iterations"],
        seed=cfg["train.seed"],
        optimizer=cfg["train.optimizer"],
    )


def build_crop_geometry_from(cfg, width, n_crops=None, crop_width=None, window=None):
    """(n_crops, crop_width) for scoring a panorama of the given width.

    Crops are window-wide when the generation window is known. Without an
    explicit count, a configured count that does not tile the width becomes
    one crop per crop width.
    """
    crop_width = crop_width or cfg["metrics.crop_width"] or window
    if n_crops:
        return n_crops, crop_width
    n_crops = cfg["metrics.n_crops"]
    if crop_width and n_crops * crop_width != width and width % crop_width == 0:
        n_crops = width // crop_width
    return n_crops, crop_width


@dataclass(frozen=True)
class GenerationSetup:
    sched: object
    layout: object
    model: object
    kind: object
    plan: object
    policy: object


def build_generation(cfg):
    """Validates every sub-spec of a generation run before any sampling starts."""
    sched = build_schedule_from(cfg)
    layout = build_layout_from(cfg)
    model = build_model_from(cfg, sched, layout.window_shape)
    kind = build_sampler_from(cfg)
    plan = build_plan_from(cfg, sched)
    if kind.variant == "ddpm" and len(plan) != sched.T:
        raise ConfigError("sampler.n_steps", "DDPM needs the full plan (n_steps = schedule.T)")
    policy = build_policy_from(cfg, layout.D)
    if policy is not None:
        policy.schedule.validate(len(plan))
    return GenerationSetup(sched, layout, model, kind, plan, policy)
