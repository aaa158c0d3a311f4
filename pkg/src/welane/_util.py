import numpy as np


def round_half_up(x):
    """Round to nearest integer with ties going up (platform independent)."""
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)
