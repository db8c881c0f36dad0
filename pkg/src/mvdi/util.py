"""Small shared helpers."""

import os

import numpy as np


def round_half_up(x):
    """Round to nearest integer with .5 ties going toward +inf.

    Used everywhere a real coordinate or depth is quantized, so that
    quantization is identical across modules and platforms (np.rint
    rounds half to even, which is not what we want).
    """
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)


def worker_count() -> int:
    """Worker cap from the MVDI_THREADS env var (default 1, sequential)."""
    raw = os.environ.get("MVDI_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)
