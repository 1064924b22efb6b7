"""Counter-based random streams keyed by (seed, purpose, window, timestep).

Each key gets its own Philox generator, so a window's sampling noise does
not depend on how many other windows ran before it or on which thread ran
them.
"""

import numpy as np

# --- Stream purposes ---
STREAM_INIT = 0       # panorama-level x_T draw
STREAM_SAMPLER = 1    # per-window reverse-process noise
STREAM_REFERENCE = 2  # independent single-window reference samples
STREAM_PAIRS = 3      # pair selection for reference baselines


def stream(seed, purpose, window=0, t=0):
    """Returns a fresh Philox generator for the given key."""
    key = np.random.SeedSequence([int(seed), int(purpose), int(window), int(t)])
    return np.random.Generator(np.random.Philox(key))


def init_stream(seed):
    return stream(seed, STREAM_INIT)


def window_stream(seed, window, t):
    return stream(seed, STREAM_SAMPLER, window, t)


def stream_position(gen):
    """Snapshot of a generator's counter state, for checking RNG consumption."""
    full = gen.bit_generator.state
    state = full["state"]
    return (
        tuple(int(v) for v in state["counter"]),
        tuple(int(v) for v in state["key"]),
        int(full["buffer_pos"]),
        int(full["has_uint32"]),
    )
