"""Counter-based random streams.

Uniform variates are a pure function of ``(seed, label, counter)`` so that
any partition of the work across threads or chunks reproduces the same
numbers.  The generator is Philox4x32-10, vectorized over numpy arrays.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK32 = np.uint64(0xFFFFFFFF)
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_ROUNDS = 10


def _label_word(label: str) -> int:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def philox4x32(counter, key) -> tuple[np.ndarray, ...]:
    """Philox4x32-10 block function.

    Parameters
    ----------
    counter : sequence of four array-likes
        32-bit counter words; broadcast against each other.
    key : sequence of two ints
        32-bit key words.

    Returns
    -------
    tuple of four uint64 arrays holding 32-bit output words.
    """
    c0, c1, c2, c3 = np.broadcast_arrays(
        *(np.asarray(c, dtype=np.uint64) & _MASK32 for c in counter)
    )
    k0, k1 = int(key[0]) & 0xFFFFFFFF, int(key[1]) & 0xFFFFFFFF
    for i in range(_ROUNDS):
        if i:
            k0 = (k0 + _W0) & 0xFFFFFFFF
            k1 = (k1 + _W1) & 0xFFFFFFFF
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> np.uint64(32)) ^ c1 ^ np.uint64(k0),
            p1 & _MASK32,
            (p0 >> np.uint64(32)) ^ c3 ^ np.uint64(k1),
            p0 & _MASK32,
        )
    return c0, c1, c2, c3


def _to_unit(hi: np.ndarray, lo: np.ndarray) -> np.ndarray:
    # 52 random bits -> (k + 0.5) / 2**52, strictly inside (0, 1)
    k = (hi >> np.uint64(6)) * np.uint64(1 << 26) + (lo >> np.uint64(6))
    return (k.astype(np.float64) + 0.5) * 2.0**-52


class CounterRNG:
    """Stateless uniform generator keyed by a master seed and a label.

    >>> rng = CounterRNG(42, "disease")
    >>> u = rng.uniform(np.arange(3), 0, 0, 0)
    >>> bool(np.all((u > 0) & (u < 1)))
    True
    """

    def __init__(self, seed: int, label: str = ""):
        seed = int(seed)
        if seed < 0:
            raise ValueError("seed must be nonnegative")
        self.seed = seed
        self.label = label
        self.key = (
            (seed & 0xFFFFFFFF),
            ((seed >> 32) & 0xFFFFFFFF) ^ _label_word(label),
        )

    def uniform(self, c0, c1, c2, c3) -> np.ndarray:
        """One uniform in (0, 1) per broadcast counter tuple."""
        w0, w1, _, _ = philox4x32((c0, c1, c2, c3), self.key)
        return _to_unit(w0, w1)


def substream(seed: int, *labels: str | int) -> np.random.Generator:
    """Sequential numpy generator derived from ``seed`` and fixed labels.

    Used for PSA parameter blocks: each block gets its own stream, so the
    draws do not depend on the order in which blocks are evaluated.
    """
    words = [int(seed)] + [
        lab if isinstance(lab, (int, np.integer)) else _label_word(str(lab))
        for lab in labels
    ]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))
