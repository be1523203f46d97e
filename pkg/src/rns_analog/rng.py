"""Keyed random substreams.

Every random draw in the package comes from ``substream(seed, *key)``; the
key names the unit of work (layer, tile, modulus, attempt, ...) so results
do not depend on scheduling or on how many workers run.
"""

from __future__ import annotations

import numpy as np

DEFAULT_SEED = 20230101


def substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))
    )
