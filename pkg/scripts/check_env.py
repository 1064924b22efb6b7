import os
import sys

import numpy as np
import PIL
import tqdm

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from constants import thread_count  # noqa: E402
from config import build_generation, config_from_dict  # noqa: E402
from grid_io import render_png  # noqa: E402
from sync import run_panorama  # noqa: E402


def print_separator():
    print("\n" + "=" * 50 + "\n")


def check_numpy():
    print("🧪 TESTING NUMPY...")
    print(f"NumPy Version: {np.__version__}")
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([0, 1, 2, 3])))
    print(f"Philox stream sample: {gen.standard_normal():.6f}")
    print("✅ Success: NumPy and the Philox bit generator are available.")


def check_pillow():
    print("🧪 TESTING PILLOW...")
    print(f"Pillow Version: {PIL.__version__}")
    png = render_png(np.zeros((4, 4, 3)))
    print(f"Rendered a 4x4 test PNG ({len(png)} bytes)")
    print("✅ Success: Pillow can encode PNG.")


def check_tiny_panorama():
    print("🧪 TESTING A TINY PANORAMA RUN...")
    print(f"tqdm Version: {tqdm.__version__}, window threads: {thread_count()}")
    cfg = config_from_dict({
        "schedule.T": 50, "schedule.params": [0.001, 0.2],
        "layout.height": 8, "layout.width": 24, "layout.channels": 3,
        "layout.window": 8, "layout.stride": 4,
        "sampler.n_steps": 10,
        "sync.loss": "style", "sync.w0": 1.0,
    })
    try:
        setup = build_generation(cfg)
        z, trace = run_panorama(
            setup.model, setup.sched, setup.layout, setup.kind, setup.plan, setup.policy, seed=0
        )
        print(f"Panorama {z.shape}, {trace.n_windows} windows, {len(trace.steps)} steps")
        print("✅ Success: end-to-end generation works.")
    except Exception as e:
        print(f"❌ Panorama run failed: {e}")


if __name__ == "__main__":
    print_separator()
    print("🚀 STARTING ENVIRONMENT DIAGNOSTICS")
    print_separator()

    check_numpy()
    print_separator()

    check_pillow()
    print_separator()

    check_tiny_panorama()
    print_separator()

    print("Diagnostics complete! You are ready to generate. 🖼️")
