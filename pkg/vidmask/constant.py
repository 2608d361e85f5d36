REGION_SIZE = 16
BYTES_PER_FLOAT = 4
GIGA = 1e9

# ViT-B detection backbone at 672x672 input.
VIT_B_FRAME_SIZE = (672, 672)
VIT_B_EMBED_DIM = 768
VIT_B_NUM_HEADS = 12
VIT_B_NUM_BLOCKS = 12
VIT_B_WINDOW_SIDE = 14
VIT_B_FFN_HIDDEN = 3072
VIT_B_GLOBAL_EVERY = 3

# Desk-scale model used by --toy and the test suite.
TOY_FRAME_SIZE = (128, 128)
TOY_EMBED_DIM = 64
TOY_NUM_HEADS = 4
TOY_NUM_BLOCKS = 4
TOY_WINDOW_SIDE = 4
TOY_FFN_HIDDEN = 256
TOY_GLOBAL_EVERY = 2

# Token gates and buffers per block in gated (delta-based) transformers.
GATES_PER_BLOCK = 8

DEFAULT_OBJECTNESS_THRESHOLD = 0.5
DEFAULT_IOU_THRESHOLD = 0.5
DEFAULT_CONNECTIVITY = 4
OBJECTNESS_LOGIT_TARGET = 4.0
DEFAULT_RIDGE = 1e-1

FRAME_MAGIC = b"MVDF"
FRAME_VERSION = 1
TENSOR_MAGIC = b"MVDT"
TENSOR_VERSION = 1

# Published backbone GMACs for the ViT-B geometry, keyed by (backbone, tokens processed).
REFERENCE_GMACS = {
    ("windowed", 1764): 174.93,
    ("windowed", 1005): 110.75,
    ("windowed", 723): 85.08,
    ("windowed", 459): 63.59,
    ("windowed", 952): 106.18,
    ("windowed", 635): 79.16,
    ("windowed", 370): 55.67,
    ("global", 1764): 208.85,
    ("global", 1005): 105.3,
    ("global", 723): 72.28,
    ("global", 952): 98.87,
    ("global", 635): 62.59,
}

CSV_COLUMNS = [
    "dataset",
    "backbone",
    "tokens_processed",
    "patch_keep_rate",
    "period",
    "static_keep_rate",
    "precision",
    "recall",
    "gmacs",
    "buffer_mb",
    "scatter_gather_ops",
    "masking",
]

MEMORY_COLUMNS = [
    "mechanism",
    "buffers",
    "bytes",
    "mb",
]

# Distinct object colours, indexed by class id. Each has a larger channel sum than any background
# texel, so objectness is linearly separable from the background for every class.
CLASS_COLORS = [
    (250, 110, 110),
    (110, 250, 110),
    (110, 110, 250),
    (250, 250, 110),
]

# Background texels are uniform per channel in [low, high).
TEXTURE_RANGE = (20, 100)

# Objects in a random scene stay this many pixels apart on every frame (one region at the
# default region size). Candidates are redrawn at most PLACEMENT_ATTEMPTS times.
MIN_OBJECT_GAP = 16
PLACEMENT_ATTEMPTS = 32

# Extra result columns present when a run is compared against the dense oracle.
ORACLE_COLUMNS = [
    "oracle_precision",
    "oracle_recall",
    "mean_relative_error",
    "max_selected_error",
]

DATASET_NAME = "synthetic"
MASKING_MODES = ("combined", "static", "dynamic")

# Output layout of `gen`, read back by `run --input`.
SEQUENCE_DIR_PREFIX = "seq"
FRAMES_FILE = "frames.mvdf"
ANNOTATIONS_FILE = "annotations.json"
TRAIN_ANNOTATIONS_FILE = "train_annotations.json"
