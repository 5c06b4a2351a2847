"""Seeded generators and Glorot-uniform initialization.

All randomness flows through ``numpy.random.Generator`` backed by PCG64, whose
output stream for a given seed is fixed across platforms and numpy releases.
"""

import numpy as np


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def derive_seed(*parts):
    """Stable 63-bit seed from arbitrary hashable parts (independent of PYTHONHASHSEED)."""
    import hashlib

    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def glorot_limit(fan_in, fan_out):
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"fan_in and fan_out must be >= 1, got {fan_in}, {fan_out}")
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def glorot_uniform_init(fan_in, fan_out, shape, rng, dtype=np.float32):
    limit = glorot_limit(fan_in, fan_out)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def conv_fans(kernel, c_in, c_out, groups=1):
    return kernel * kernel * c_in // groups, kernel * kernel * c_out // groups
