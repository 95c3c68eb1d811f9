"""Deterministic stream splitting for reproducible parallel Monte Carlo.

One root seed governs a whole run.  Every concurrent task (chain,
dataset, replicate batch, subset integration) gets its own substream
derived by counter-style splitting: the root entropy plus a spawn key
built from the task's labels.  Results are therefore independent of
scheduling and worker count.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK32 = 0xFFFFFFFF


def _label_key(label: str | int) -> int:
    """Map a task label to a stable 32-bit spawn-key word."""
    if isinstance(label, (int, np.integer)):
        return int(label) & _MASK32
    digest = hashlib.blake2s(str(label).encode("utf-8"), digest_size=4).digest()
    return int.from_bytes(digest, "little")


def sequence(root_seed: int, *labels: str | int) -> np.random.SeedSequence:
    """SeedSequence for the substream identified by ``labels`` under ``root_seed``."""
    key = tuple(_label_key(lab) for lab in labels)
    return np.random.SeedSequence(entropy=int(root_seed), spawn_key=key)


def generator(root_seed: int, *labels: str | int) -> np.random.Generator:
    """Fresh Generator for the substream identified by ``labels``."""
    return np.random.default_rng(sequence(root_seed, *labels))


def derive_seed(root_seed: int, *labels: str | int) -> int:
    """Collapse a substream identity to a single 64-bit seed.

    Used when a downstream component takes a scalar seed of its own
    (e.g. a SamplerConfig embedded in a larger study).
    """
    state = sequence(root_seed, *labels).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)
