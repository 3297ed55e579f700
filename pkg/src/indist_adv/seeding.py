"""Seed derivation shared by every stochastic stage.

A sub-seed is a 64-bit integer computed from a master seed and a sequence of
labels (strings or integers).  Labels are part of the public interface: the
same ``(master, *labels)`` always yields the same sub-seed on every platform.

Labels used by the toolkit:

=========================  ===============================================
``"data"``                 training-set generation
``"init"``                 MLP weight initialization
``"sgd"``                  SGD shuffling
``"test"``                 held-out accuracy set
``"attack", r``            attack-rate repeat ``r``
``"start", i``             CMA seed of start point ``i`` within a repeat
``"trial", t``             ablation trial ``t``
``"orth", k``              church-window orthogonal direction ``k``
=========================  ===============================================
"""

from __future__ import annotations

import hashlib

import numpy as np

SEED_MASK = (1 << 64) - 1


def derive_seed(master: int, *labels: str | int) -> int:
    """Hash ``master`` and ``labels`` into a new 64-bit seed."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master) & SEED_MASK).encode())
    for label in labels:
        h.update(b"\x1f")
        h.update(str(label).encode())
    return int.from_bytes(h.digest(), "little")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & SEED_MASK))
