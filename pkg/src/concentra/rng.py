"""Deterministic random-number substreams.

Every random draw in the package flows from a single master seed through
named substreams, so per-region or per-permutation work is reproducible
regardless of evaluation order.  Labels are hashed with SHA-256 (never
Python's salted ``hash``) so streams are stable across processes.
"""

from __future__ import annotations

import hashlib

import numpy as np


def substream(master_seed: int, *labels: object) -> np.random.Generator:
    """Return a Generator for the substream named by ``labels``.

    Identical (seed, labels) always produce an identical stream;
    distinct labels produce independent streams.
    """
    material = ":".join([str(int(master_seed))] + [str(lab) for lab in labels])
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:32], "big"))
