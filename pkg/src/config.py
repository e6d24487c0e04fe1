"""Configuration settings for the magnetic plasma control solver."""

from pathlib import Path

import os
from dotenv import load_dotenv

load_dotenv()

# File Paths
OUTPUT_DIR = Path(os.getenv("VPC_OUTPUT_DIR", "output"))
LOG_DIR = Path(os.getenv("VPC_LOG_DIR", "logs"))
LOG_FILE_NAME = "vlasov_control.log"
LOG_LEVEL = os.getenv("VPC_LOG_LEVEL", "INFO").upper()

# Parallelism
DEFAULT_THREADS = int(os.getenv("VPC_THREADS", os.cpu_count() or 1))
KERNEL_CHUNK_SIZE = int(os.getenv("VPC_KERNEL_CHUNK_SIZE", "128"))
SHOW_PROGRESS = os.getenv("VPC_SHOW_PROGRESS", "1") not in ("0", "false", "False")

# Physical and numerical defaults
DEFAULT_FINAL_TIME = 1.0
DEFAULT_TIME_STEP = 1e-2
DEFAULT_SAMPLE_SPACING = 0.42
DEFAULT_SOFTENING_FACTOR = 0.2  # softening = factor * sample spacing
DEFAULT_WEIGHT_FLOOR = 0.0
DEFAULT_LAMBDA = 1e-2
DEFAULT_NORM_BOUND = 50.0
DEFAULT_BETA = 4.0
DEFAULT_BUMP_EXPONENT = 3

# Control field grid defaults
DEFAULT_GRID_ORIGIN = (-4.0, -4.0, -4.0)
DEFAULT_GRID_DIMS = (16, 16, 16)
DEFAULT_GRID_SPACING = (8.0 / 15, 8.0 / 15, 8.0 / 15)
DEFAULT_TIME_KNOTS = 11

# Optimizer defaults
DEFAULT_STEP_SIZE = 10.0
DEFAULT_ARMIJO = 1e-4
DEFAULT_BACKTRACK = 0.5
DEFAULT_MAX_ITERS = 20
DEFAULT_TOLERANCE = 1e-6
DEFAULT_DAMPING = 0.5
DEFAULT_MAX_FIELD_STEP = 0.5
MAX_LINE_SEARCH_TRIALS = 30

# Gradient check defaults
DEFAULT_FD_DELTA = 1e-4
DEFAULT_GRADCHECK_DIRECTIONS = 3
DEFAULT_GRADCHECK_TOLERANCE = 1e-3
DEFAULT_TANGENT_TOLERANCE = 5e-2
DEFAULT_GRADCHECK_ABS_TOLERANCE = 1e-7

# Exit codes of the command line interface
EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_INVALID_SCENARIO = 2
EXIT_GRADCHECK_FAILED = 3
EXIT_LINE_SEARCH_FAILED = 4
EXIT_FIXED_POINT_DIVERGED = 5
EXIT_PICARD_FAILED = 6

# Binary artifact format
SNAPSHOT_MAGIC = b"VPMG"
SNAPSHOT_VERSION = 1

# Default scenario, overridden section by section by scenario files
DEFAULT_SCENARIO = {
    "mode": "forward",
    "initial_datum": [
        {
            "center": [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            "radius_x": 1.0,
            "radius_v": 1.0,
            "amplitude": 1.0,
            "exponent": DEFAULT_BUMP_EXPONENT,
        }
    ],
    "target": [
        {
            "center": [0.5, 0.0, 0.0, 0.0, 0.0, 0.0],
            "radius_x": 1.0,
            "radius_v": 1.0,
            "amplitude": 1.0,
            "exponent": DEFAULT_BUMP_EXPONENT,
        }
    ],
    "initial_control": {"uniform": [0.0, 0.0, 0.0]},
    "self_field": True,
    "run": {
        "T": DEFAULT_FINAL_TIME,
        "dt": DEFAULT_TIME_STEP,
        "softening": DEFAULT_SOFTENING_FACTOR * DEFAULT_SAMPLE_SPACING,
        "sample_spacing": DEFAULT_SAMPLE_SPACING,
        "weight_floor": DEFAULT_WEIGHT_FLOOR,
        "field_grid": {
            "origin": list(DEFAULT_GRID_ORIGIN),
            "spacing": list(DEFAULT_GRID_SPACING),
            "dims": list(DEFAULT_GRID_DIMS),
            "n_time_knots": DEFAULT_TIME_KNOTS,
        },
        "lambda": DEFAULT_LAMBDA,
        "admissible": {"K": DEFAULT_NORM_BOUND, "beta": DEFAULT_BETA},
        "cutoff": None,
    },
    "optimize": {
        "step_size": DEFAULT_STEP_SIZE,
        "armijo": DEFAULT_ARMIJO,
        "backtrack": DEFAULT_BACKTRACK,
        "max_iters": DEFAULT_MAX_ITERS,
        "tol": DEFAULT_TOLERANCE,
        "damping": DEFAULT_DAMPING,
        "max_field_step": DEFAULT_MAX_FIELD_STEP,
        "formula": "newton",
    },
    "gradcheck": {
        "directions": DEFAULT_GRADCHECK_DIRECTIONS,
        "delta": DEFAULT_FD_DELTA,
        "tolerance": DEFAULT_GRADCHECK_TOLERANCE,
        "tangent_tolerance": DEFAULT_TANGENT_TOLERANCE,
        "abs_tolerance": DEFAULT_GRADCHECK_ABS_TOLERANCE,
    },
    "picard": {"max_iters": 30, "tol": 1e-10},
}
