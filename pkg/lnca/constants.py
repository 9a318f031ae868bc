from __future__ import annotations

# ──────────────────────────────────────────────────────────────────────────────
# Artifact contract
# ──────────────────────────────────────────────────────────────────────────────
SCHEMA_VERSION = 1
CSV_HEADER_LINE = f"# lnca schema_version={SCHEMA_VERSION}"

AE_CHECKPOINT = "ae.lnca"
FULL_CHECKPOINT = "lnca.lnca"

# ──────────────────────────────────────────────────────────────────────────────
# Cellular automaton defaults
# ──────────────────────────────────────────────────────────────────────────────
HIDDEN_CHANNELS = 32
POOL_SIZE = 1024
TRAIN_STEPS_MIN = 8
TRAIN_STEPS_MAX = 32
EVAL_STEPS = 64

# Overflow clip ranges
VISIBLE_RANGE = (0.0, 1.0)
HIDDEN_RANGE = (-1.0, 1.0)

# ──────────────────────────────────────────────────────────────────────────────
# Model families
#   latent-*          : NCA inside the autoencoder's latent space
#   vitca-input-space : ViTCA transition applied straight to image pixels
# ──────────────────────────────────────────────────────────────────────────────
LATENT_VITCA = "latent-vitca"
LATENT_NAFCA = "latent-nafca"
INPUT_VITCA = "vitca-input-space"
MODEL_KINDS = (LATENT_VITCA, LATENT_NAFCA, INPUT_VITCA)

# ──────────────────────────────────────────────────────────────────────────────
# Benchmark grid (resolution × batch)
# ──────────────────────────────────────────────────────────────────────────────
BENCH_RESOLUTIONS = (32, 64, 128)
BENCH_BATCHES = (8, 16, 32)
BENCH_TRAIN_STEPS = 16
BENCH_REPEATS = 10
DEFAULT_BYTE_BUDGET = 2 * 1024 ** 3

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".pgm")
