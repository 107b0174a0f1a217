"""Counter-based derivation of named RNG substreams from one root seed.

Every random draw in a run comes from a substream addressed by
(root seed, domain, *keys). Streams are created on demand from the address
alone, so results never depend on execution order or worker count. String
keys (task ids) hash through sha256 to stay stable across processes.
"""

from __future__ import annotations

import hashlib

import numpy as np

_DOMAINS = {
    "policy_init": 0,
    "task_data": 1,
    "rollout": 2,
    "sampler": 3,
    "fixture": 4,
}

_MASK = (1 << 64) - 1


def _key_to_int(key) -> int:
    if isinstance(key, str):
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    if isinstance(key, (int, np.integer)):
        return int(key) & _MASK
    raise TypeError(f"stream keys must be str or int, got {type(key)!r}")


def substream(root_seed: int, domain: str, *keys) -> np.random.Generator:
    """Return a fresh generator for the (seed, domain, keys) address."""
    entropy = [int(root_seed) & _MASK, _DOMAINS[domain]]
    entropy.extend(_key_to_int(k) for k in keys)
    return np.random.default_rng(np.random.SeedSequence(entropy))
