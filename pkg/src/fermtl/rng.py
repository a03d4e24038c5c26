"""Named, reproducible random substreams.

Every source of randomness in a run is derived from one root seed plus a
path of names, e.g. ``substream(seed, "augment", epoch, index)``.  Streams
are independent of execution order and of how work is sharded, which is
what makes parallel and sequential runs produce identical results.
"""

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Map a (seed, name, ...) path to a stable 64-bit integer seed."""
    key = "/".join(str(p) for p in parts)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(*parts) -> np.random.Generator:
    """A fresh PCG64 generator for the given substream path."""
    return np.random.default_rng(derive_seed(*parts))
