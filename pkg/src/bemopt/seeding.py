"""Deterministic named random streams.

Every command takes one ``--seed``; all randomness inside is drawn from
named child streams so that adding a consumer never shifts the draws of
another. Stream names are hashed with SHA-256, so the mapping is stable
across Python processes and platforms.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _name_key(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, name: str) -> np.random.Generator:
    """Return the generator for the child stream ``name`` of ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, _name_key(name)])))


def substream(seed: int, name: str, index: int) -> np.random.Generator:
    """Indexed child stream, e.g. one per episode or per generation."""
    return stream(seed, f"{name}[{index}]")
