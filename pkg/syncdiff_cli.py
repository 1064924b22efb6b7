import argparse
import csv
import json
import os
import sys

import numpy as np
from tqdm import tqdm

from config import (
    build_crop_geometry_from,
    build_dataset_spec_from,
    build_generation,
    build_loss_from,
    build_schedule_from,
    build_train_options_from,
    config_from_dict,
    load_config,
)
from constants import EXIT_CONFIG_ERROR, EXIT_OK, EXIT_RUNTIME_ERROR, NOT_COMPUTED_METRICS, W0_SWEEP
from errors import ConfigError, SyncDiffError
from grid_io import parse_tensor_bytes, read_tensor, render_png, tensor_bytes, write_tensor
from logger import log_run
from metrics import evaluate_panorama, reference_baseline
from models import fit_skip_connection, init_mlp, mlp_train, save_checkpoint, smoothed_losses
from samplers import sample_reference_set
from sync import run_panorama
from textures import make_texture_dataset

# --- 1. WINDOWS UNICODE FIX ---
if sys.platform == "win32":
    sys.stdout.reconfigure(encoding="utf-8")

# --- Output file names ---
PANORAMA_FILE = "panorama.sdt"
PANORAMA_PNG = "panorama.png"
TRACE_FILE = "trace.json"
CHECKPOINT_FILE = "model.sdm"
LOSS_TRACE_FILE = "loss_trace.csv"
REPORT_FILE = "report.json"
SWEEP_FILE = "sweep.json"


def _generate_overrides(args):
    overrides = {
        "seed": args.seed,
        "sync.w0": args.w0,
        "sync.schedule": args.sync_schedule,
        "sync.loss": args.loss,
        "out": args.out,
    }
    if getattr(args, "no_sync", False):
        overrides["sync.enabled"] = False
    return overrides


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=4)


def _preview(z):
    """PNG bytes; 4-channel latents preview their first three channels."""
    if z.shape[2] > 3:
        print(f"[INFO] Rendering channels 0-2 of a {z.shape[2]}-channel panorama.")
        z = z[:, :, :3]
    return render_png(z)


def _eval_losses(cfg, channels, which):
    kinds = ("style", "feature") if which == "both" else (which,)
    return {
        kind: build_loss_from(cfg, channels, kind=kind, scale=cfg["metrics.loss_scale"])
        for kind in kinds
    }


# ==============================================================
# generate
# ==============================================================
def generate_panorama(cfg, verbose=False):
    """Runs one panorama for a validated config; returns (z, trace, setup)."""
    setup = build_generation(cfg)
    print(
        f"[INFO] {setup.layout.n_windows} windows of {setup.layout.window_w} columns, "
        f"stride {setup.layout.stride}, anchor {setup.layout.anchor_index}, "
        f"{len(setup.plan)} {setup.kind.variant} steps, seed {cfg['seed']}"
    )
    z, trace = run_panorama(
        setup.model, setup.sched, setup.layout, setup.kind, setup.plan,
        setup.policy, cfg["seed"], verbose=verbose,
    )
    return z, trace, setup


def cmd_generate(args):
    cfg = load_config(args.config, _generate_overrides(args))
    out_dir = cfg["out"]
    os.makedirs(out_dir, exist_ok=True)

    z, trace, _ = generate_panorama(cfg, verbose=args.verbose)

    write_tensor(os.path.join(out_dir, PANORAMA_FILE), z)
    with open(os.path.join(out_dir, PANORAMA_PNG), "wb") as f:
        f.write(_preview(z))
    _write_json(os.path.join(out_dir, TRACE_FILE), trace.to_dict())

    print(f"[DONE] Panorama {z.shape} written to {out_dir}")
    log_run(out_dir, "generate", cfg.name, cfg["seed"])
    return EXIT_OK


# ==============================================================
# train
# ==============================================================
def cmd_train(args):
    cfg = load_config(args.config, {
        "train.seed": args.seed,
        "train.iterations": args.iterations,
        "out": args.out,
    })
    out_dir = cfg["out"]
    os.makedirs(out_dir, exist_ok=True)

    sched = build_schedule_from(cfg)
    spec = build_dataset_spec_from(cfg)
    opt = build_train_options_from(cfg)
    dataset = make_texture_dataset(spec)
    skip = fit_skip_connection(dataset, sched) if cfg["model.mlp.skip"] else None
    model = init_mlp(
        spec.shape, sched.T, cfg["model.mlp.hidden"],
        cfg["model.mlp.time_features"], cfg["model.mlp.init_seed"], skip,
    )
    print(f"[INFO] Training on {spec.count} textures {spec.shape}, {opt.iterations} iterations ({opt.optimizer})")

    model, losses = mlp_train(model, dataset, sched, opt, verbose=args.verbose)

    save_checkpoint(model, os.path.join(out_dir, CHECKPOINT_FILE))
    with open(os.path.join(out_dir, LOSS_TRACE_FILE), "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "loss"])
        for it, value in enumerate(losses):
            writer.writerow([it, repr(value)])

    if losses:
        smooth = smoothed_losses(losses)
        print(f"[INFO] Smoothed loss {smooth[0]:.4f} -> {smooth[-1]:.4f}")
    if model.skip is not None:
        print(f"[INFO] Skip gain {model.skip.gain:.4f} (data variance {model.skip.data_variance:.4f})")
    print(f"[DONE] Checkpoint written to {os.path.join(out_dir, CHECKPOINT_FILE)}")
    log_run(out_dir, "train", cfg.name, opt.seed)
    return EXIT_OK


# ==============================================================
# evaluate
# ==============================================================
def evaluate_files(paths, cfg, which="both", n_crops=None, crop_width=None, references=None, window=None):
    """MetricsReport dicts for each panorama file; crops are window-wide when window is given."""
    ref_grids = [read_tensor(p) for p in references] if references else None
    reports = []
    for path in paths:
        z = read_tensor(path)
        if z.ndim != 3:
            raise SyncDiffError(f"{path}: expected an H x W x D panorama, got shape {z.shape}")
        losses = _eval_losses(cfg, z.shape[2], which)
        crops, width = build_crop_geometry_from(cfg, z.shape[1], n_crops, crop_width, window)
        report = evaluate_panorama(
            z, losses, crops, width, source=path, references=ref_grids,
            n_pairs=cfg["metrics.reference_pairs"], seed=cfg["seed"],
        )
        reports.append(report.to_dict())
    return reports


def cmd_evaluate(args):
    cfg = load_config(args.config, {"out": args.out}) if args.config else config_from_dict({"out": args.out or "output"})
    out_dir = cfg["out"]
    os.makedirs(out_dir, exist_ok=True)

    for path in list(args.panoramas) + list(args.reference or []):
        if not os.path.exists(path):
            raise ConfigError("panoramas", f"file not found: {path}")

    window = cfg["layout.window"] if args.config else None
    reports = evaluate_files(
        args.panoramas, cfg, args.loss, args.n_crops, args.crop_width, args.reference, window
    )
    for report in reports:
        scores = ", ".join(f"{k}={v:.6g}" for k, v in report["intra"].items())
        print(f"[INFO] {report['source']}: {report['pair_count']} pairs, {scores}")
    for name, reason in NOT_COMPUTED_METRICS.items():
        print(f"[SKIP] {name}: {reason}")

    _write_json(os.path.join(out_dir, REPORT_FILE), {"reports": reports})
    print(f"[DONE] Report written to {os.path.join(out_dir, REPORT_FILE)}")
    log_run(out_dir, "evaluate", cfg.name, cfg["seed"])
    return EXIT_OK


# ==============================================================
# sweep
# ==============================================================
def parse_seeds(tokens):
    """Accepts integers and inclusive ranges like '0-19'."""
    seeds = []
    for token in tokens or []:
        lo, sep, hi = str(token).partition("-")
        try:
            seeds.extend(range(int(lo), int(hi) + 1) if sep else [int(lo)])
        except ValueError:
            raise ConfigError("--seeds", f"'{token}' is not an integer or a range") from None
    if not seeds:
        raise ConfigError("--seeds", "at least one seed is required")
    return seeds


def _summary(values):
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std()), "values": [float(v) for v in arr]}


def run_sweep(cfg, w0_values, seeds, widths=None, which="both", reference_count=0, verbose=False):
    """Generates the w0 x seed grid (per panorama width) and aggregates intra metrics."""
    widths = widths or [cfg["layout.width"]]
    results = []
    for width in widths:
        wcfg = cfg.with_overrides({"layout.width": width})
        losses = None
        n_crops, crop_width = build_crop_geometry_from(wcfg, width, window=wcfg["layout.window"])
        entry = {"width": width, "n_crops": n_crops, "crop_width": crop_width, "by_w0": []}
        grid = [(w0, seed) for w0 in w0_values for seed in seeds]
        per_w0 = {w0: {} for w0 in w0_values}
        setup = None
        for w0, seed in tqdm(grid, desc=f"sweep W={width}", disable=not verbose):
            run_cfg = wcfg.with_overrides({"sync.w0": w0, "seed": seed})
            z, _, setup = generate_panorama(run_cfg)
            # score the f32 values a generate run stores on disk
            z = parse_tensor_bytes(tensor_bytes(z))
            if losses is None:
                losses = _eval_losses(wcfg, z.shape[2], which)
            report = evaluate_panorama(z, losses, n_crops, crop_width)
            for kind, value in report.intra.items():
                per_w0[w0].setdefault(kind, []).append(value)

        for w0 in w0_values:
            entry["by_w0"].append({
                "w0": w0,
                "seeds": list(seeds),
                "intra": {kind: _summary(vals) for kind, vals in per_w0[w0].items()},
            })

        if reference_count:
            refs = sample_reference_set(
                setup.model, setup.layout.window_shape, reference_count,
                setup.plan, setup.kind, setup.sched, wcfg["seed"],
            )
            refs = [parse_tensor_bytes(tensor_bytes(x)) for x in refs]
            n_pairs = wcfg["metrics.reference_pairs"]
            entry["reference"] = {}
            for kind, loss in losses.items():
                mean, std = reference_baseline(refs, loss, n_pairs, wcfg["seed"])
                entry["reference"][kind] = {
                    "mean": mean, "std": std, "n_pairs": n_pairs, "n_samples": len(refs),
                }
        results.append(entry)
    return {"widths": results, "not_computed": dict(NOT_COMPUTED_METRICS)}


def cmd_sweep(args):
    cfg = load_config(args.config, {"out": args.out, "sync.schedule": args.sync_schedule, "sync.loss": args.loss})
    seeds = parse_seeds(args.seeds)
    if not args.w0:
        raise ConfigError("--w0", "at least one w0 value is required")
    out_dir = cfg["out"]
    os.makedirs(out_dir, exist_ok=True)

    summary = run_sweep(cfg, args.w0, seeds, args.widths, args.metric_loss, args.reference_count, args.verbose)
    for entry in summary["widths"]:
        for row in entry["by_w0"]:
            scores = ", ".join(f"{k}={v['mean']:.6g}+-{v['std']:.3g}" for k, v in row["intra"].items())
            print(f"[INFO] W={entry['width']} w0={row['w0']:g}: {scores}")

    _write_json(os.path.join(out_dir, SWEEP_FILE), summary)
    print(f"[DONE] Sweep written to {os.path.join(out_dir, SWEEP_FILE)}")
    log_run(out_dir, "sweep", cfg.name, ",".join(str(s) for s in seeds))
    return EXIT_OK


# ==============================================================
# Entry point
# ==============================================================
def build_parser():
    parser = argparse.ArgumentParser(description="Synchronized joint-diffusion panorama engine")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="Generate one panorama")
    gen.add_argument("--config", required=True, help="JSON run config")
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--w0", type=float, default=None, help="Initial sync gradient weight")
    gen.add_argument("--sync-schedule", default=None, help="every | interval:f | initial:k")
    gen.add_argument("--loss", choices=["style", "feature"], default=None)
    gen.add_argument("--no-sync", action="store_true", help="Plain averaging fusion, no sync")
    gen.add_argument("--out", default=None, help="Output directory")
    gen.add_argument("--verbose", action="store_true")
    gen.set_defaults(func=cmd_generate)

    train = sub.add_parser("train", help="Train the toy MLP denoiser")
    train.add_argument("--config", required=True)
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--iterations", type=int, default=None)
    train.add_argument("--out", default=None)
    train.add_argument("--verbose", action="store_true")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("evaluate", help="Intra-panorama coherence metrics")
    ev.add_argument("panoramas", nargs="+", help="SDT1 panorama files")
    ev.add_argument("--config", default=None, help="Config with loss and metric settings")
    ev.add_argument("--loss", choices=["style", "feature", "both"], default="both")
    ev.add_argument("--n-crops", type=int, default=None)
    ev.add_argument("--crop-width", type=int, default=None)
    ev.add_argument("--reference", nargs="*", default=None, help="SDT1 reference samples")
    ev.add_argument("--out", default=None)
    ev.set_defaults(func=cmd_evaluate)

    sw = sub.add_parser("sweep", help="w0 x seed grid with aggregated metrics")
    sw.add_argument("--config", required=True)
    sw.add_argument("--w0", type=float, nargs="+", default=list(W0_SWEEP))
    sw.add_argument("--seeds", nargs="*", default=None, help="Seeds or ranges, e.g. 0-19")
    sw.add_argument("--widths", type=int, nargs="*", default=None, help="Panorama widths to repeat the grid at")
    sw.add_argument("--sync-schedule", default=None)
    sw.add_argument("--loss", choices=["style", "feature"], default=None, help="Sync loss")
    sw.add_argument("--metric-loss", choices=["style", "feature", "both"], default="both")
    sw.add_argument("--reference-count", type=int, default=0)
    sw.add_argument("--out", default=None)
    sw.add_argument("--verbose", action="store_true")
    sw.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"[ERROR] {e.field}: {e.message}")
        return EXIT_CONFIG_ERROR
    except (SyncDiffError, OSError) as e:
        print(f"[ERROR] {args.command}: {e}")
        return EXIT_RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
