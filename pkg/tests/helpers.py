"""Shared test utilities."""

import numpy as np


def tie_free(shape, rng, gap=0.05, dtype=np.float32):
    """Well-separated values (pairwise gap >= ``gap``), shuffled and centered.

    Keeps finite-difference probes away from max-pool argmax flips and the
    ReLU kink at zero: no two values, and no value and zero, sit within a
    perturbation epsilon of each other when gap >> epsilon.
    """
    n = int(np.prod(shape))
    vals = (rng.permutation(n) - (n - 1) / 2.0) * gap
    vals = vals + np.sign(vals) * gap  # keep a clear margin around zero
    return vals.reshape(shape).astype(dtype)
