"""Counter-based random streams keyed by integer tuples."""
from __future__ import annotations

import numpy as np


def stream(*key: int) -> np.random.Generator:
    """Independent Philox generator for the given key (master seed first)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


# stream tags, so that unrelated consumers never share a key
ENV = 0x45
REFINE = 0x52
SLFV = 0x53
SPDE = 0x4B
TEST = 0x54
