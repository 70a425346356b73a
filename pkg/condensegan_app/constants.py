"""Shared constant values for the condensegan toolkit."""

import numpy as np

# Numerics
DTYPE = np.float32
BCE_EPSILON = 1e-7
INSTANCE_NORM_EPSILON = 1e-5
INIT_STD = 0.02

# Adam (pix2pix recipe; only the learning rate comes from the method itself)
DEFAULT_LEARNING_RATE = 1e-4
ADAM_BETA1 = 0.5
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

# Network building
NETWORK_INPUT = -1
IMAGE_CHANNELS = 3
LEAKY_SLOPE = 0.2
UNET_KERNEL = 4
PATCHGAN_KERNELS = (4, 4, 4, 3, 2, 2)
PATCHGAN_STRIDES = (2, 2, 2, 2, 1, 1)
PATCHGAN_PADDINGS = (1, 1, 1, 1, 0, 0)

# Penalization
EXPONENTIAL_RATE = 0.01
DEFAULT_TARGET_RATIO = 0.1
LOW_REG_SCALE = 0.1

# Hinge detection
DEFAULT_MIN_DROP_RATIO = 10.0
DEFAULT_HINGE_FLOOR = 1e-12
DEFAULT_NEAR_ZERO_THRESHOLD = 0.01

# Loss weights
DEFAULT_LAMBDA_L1 = 100.0

# Latency profiling
MIN_PROFILE_REPEATS = 3
MIN_SAMPLE_SECONDS = 1e-4
MAX_BATCHED_INVOCATIONS = 1024

# Checkpoint format
CHECKPOINT_MAGIC = b"CNDSGAN\x00"
CHECKPOINT_VERSION = 1

# Synthetic dataset: per-class RGB colors in [-1, 1] and the background
CLASS_COLORS = (
    (0.9, -0.2, -0.5),
    (-0.4, 0.8, -0.3),
    (-0.3, -0.1, 0.9),
)
BACKGROUND_COLOR = (-0.8, -0.8, -0.8)

# CSV report headers
REPORT_HEADERS = {
    "magnitude_curve": ["layer_id", "rank", "channel_id", "gamma", "keep"],
    "hinge": ["layer_id", "out_ch", "keep_count", "method", "drop_ratio"],
    "cost_vector": ["layer_id", "macs", "params", "latency_mean_ms", "latency_std_ms", "factor"],
    "training_log": [
        "epoch",
        "step",
        "gan_g",
        "gan_d",
        "l1",
        "penal",
        "total_g",
        "near_zero_fraction",
    ],
    "distill_log": [
        "epoch",
        "step",
        "gan_g",
        "gan_d",
        "l1",
        "penal",
        "total_g",
        "near_zero_fraction",
        "teacher_l1",
    ],
    "summary": ["metric", "before", "after", "ratio"],
    "bundle": ["source", "row", "column", "value"],
}

# Workdir layout
CHECKPOINT_DIR = "checkpoints"
REPORT_DIR = "reports"
STAGE1_CHECKPOINT = "stage1.ckpt"
PRUNED_CHECKPOINT = "pruned.ckpt"
STUDENT_CHECKPOINT = "student.ckpt"
