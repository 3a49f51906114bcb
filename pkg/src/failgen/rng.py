"""Deterministic counter-based random streams.

Every stochastic quantity in the toolkit is drawn from a Philox stream keyed
by a tuple of integers, so results never depend on call interleaving, worker
count, or global RNG state.  Key layouts:

    monte carlo episode:  (master_seed, scenario_id, episode_index)
    trainer / cem stage:  (master_seed, scenario_id, purpose_tag, stage)
    standalone seeds:     (seed,)
"""

from __future__ import annotations

import numpy as np

# purpose tags for stage-level streams (third key slot)
TAG_NET_INIT = 1001
TAG_STATES = 1002
TAG_NOISE = 1003
TAG_THRESHOLDS = 1004
TAG_TRAIN = 1005
TAG_BEHAVIOR = 1006
TAG_SAMPLER = 1007


def stream(*key: int) -> np.random.Generator:
    """Return a Generator for an integer key tuple, independent of all others."""
    return np.random.Generator(np.random.Philox(key=None, counter=None,
                                                seed=np.random.SeedSequence([int(k) for k in key])))


def draw_seed(rng: np.random.Generator) -> int:
    """Draw a fresh 63-bit seed usable as a key component."""
    return int(rng.integers(0, 2**63))
