"""Keyed, counter-based random streams.

Every stochastic component in the package draws from a Philox generator whose
128-bit key is a hash of a structured tuple (e.g. ``("reset", task, seed)``).
Philox is counter-based, so streams are independent of call order, identical
across platforms, and cheap to construct on demand.
"""

from __future__ import annotations

import hashlib

import numpy as np

_SEP = "\x1f"


def stream_key(*parts: object) -> int:
    """Derive a stable 128-bit integer key from a tuple of printable parts."""
    data = _SEP.join(str(p) for p in parts).encode("utf-8")
    digest = hashlib.sha256(data).digest()
    return int.from_bytes(digest[:16], "little")


def stream(*parts: object) -> np.random.Generator:
    """A fresh deterministic generator keyed on `parts`."""
    return np.random.Generator(np.random.Philox(key=stream_key(*parts)))
