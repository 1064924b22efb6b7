import os

# --- Noise Schedule (common pretrained-model convention) ---
DEFAULT_T = 1000
DEFAULT_SCHEDULE_KIND = "linear-beta"
DEFAULT_BETA_RANGE = (1e-4, 2e-2)
COSINE_DEFAULT_PARAMS = (0.008, 0.999)  # (offset s, max beta)
ALPHA_T_WARN_THRESHOLD = 0.01           # alpha_T above this gives weak final noise

# --- Sampler ---
DEFAULT_N_STEPS = 50
DEFAULT_SAMPLER = "ddim"
DEFAULT_ETA = 0.0

# --- Panorama Geometry (latent space: 512x3072 image -> 64x384) ---
DEFAULT_PANORAMA_HEIGHT = 64
DEFAULT_PANORAMA_WIDTH = 384
DEFAULT_CHANNELS = 4
DEFAULT_WINDOW = 64
DEFAULT_STRIDE = 16

# --- Synchronization Guidance ---
DEFAULT_W0 = 20.0
DEFAULT_DECAY = 0.95
W0_SWEEP = (0.0, 5.0, 10.0, 15.0, 20.0)

# --- Perceptual Losses ---
DEFAULT_LOSS = "feature"
DEFAULT_BANK_SEED = 0
DEFAULT_BANK_CHANNELS = (8, 16, 16)
DEFAULT_BANK_KERNEL = 3

# --- Coherence Metrics ---
DEFAULT_N_CROPS = 6
DEFAULT_REFERENCE_PAIRS = 1000
NOT_COMPUTED_METRICS = {
    "GIQA": "needs a pretrained feature network and a reference corpus",
    "FID": "needs a pretrained Inception network",
    "KID": "needs a pretrained Inception network",
    "CLIP-S": "needs a pretrained CLIP model and text prompts",
}

# --- Toy Denoiser Training ---
DEFAULT_HIDDEN = (256, 256)
DEFAULT_TIME_FEATURES = 4
DEFAULT_LEARNING_RATE = 1e-3
DEFAULT_BATCH_SIZE = 32
DEFAULT_ITERATIONS = 5000
LOSS_SMOOTHING_WINDOW = 100

# --- Toy Texture Dataset ---
DEFAULT_TEXTURE_COUNT = 512
DEFAULT_TEXTURE_SHAPE = (32, 32, 3)
DEFAULT_ORIENTATION_RANGE = (0.0, 3.141592653589793)
DEFAULT_FREQUENCY_RANGE = (1.0, 4.0)  # cycles per window width
DEFAULT_PALETTE = (
    ((0.9, 0.2, -0.6), (-0.8, -0.4, 0.7)),
    ((0.1, 0.8, 0.1), (-0.7, -0.9, -0.2)),
    ((0.9, 0.9, 0.6), (-0.2, -0.6, -0.9)),
    ((-0.9, 0.3, 0.9), (0.7, -0.5, -0.7)),
)

# --- File Formats ---
TENSOR_MAGIC = b"SDT1"
CHECKPOINT_MAGIC = b"SDM1"
RUN_HISTORY_FILE = "run_history.csv"

# --- Exit Codes ---
EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_ERROR = 3

# --- Environment ---
THREADS_ENV_VAR = "SYNCDIFF_THREADS"


def thread_count():
    """Worker cap for the per-window thread pool (SYNCDIFF_THREADS, default 1)."""
    raw = os.getenv(THREADS_ENV_VAR, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        print(f"[WARN] Ignoring non-integer {THREADS_ENV_VAR}={raw!r}")
        return 1
