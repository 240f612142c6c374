"""Deterministic seed splitting.

A single master seed is split into independent child streams with a
counter-based scheme: every consumer derives its stream from the tuple
(master, stage, *indices) fed to numpy's SeedSequence. Parallel and
serial runs therefore draw identical values, and partial reruns of a
stage reproduce it exactly.
"""

from __future__ import annotations

import numpy as np

# stage identifiers (part of the on-record seeding contract)
STAGE_EXPAND = 1
STAGE_RETARGET = 2
STAGE_EDGES = 3
STAGE_REQUEST = 4
STAGE_PROMPTS = 5
STAGE_GENERATE = 6
STAGE_DATASET = 7


def child_seed(master: int, *path: int) -> int:
    """Derive a 63-bit child seed for (master, *path)."""
    ss = np.random.SeedSequence([int(master), *(int(p) for p in path)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


def rng_for(master: int, *path: int) -> np.random.Generator:
    """PCG64 generator for the (master, *path) stream."""
    ss = np.random.SeedSequence([int(master), *(int(p) for p in path)])
    return np.random.Generator(np.random.PCG64(ss))
