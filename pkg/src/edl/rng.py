"""Deterministic random number generation.

Every random decision in this package flows through SplitMix64 so that a run
is reproducible from its integer seed alone, in any language. The algorithm
is fully specified here:

    state_{i+1} = (state_i + GAMMA) mod 2^64,      GAMMA = 0x9E3779B97F4A7C15
    output_i    = mix(state_{i+1})

where mix is the SplitMix64 finalizer

    z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
    z ^= z >> 27;  z *= 0x94D049BB133111EB
    z ^= z >> 31

(all arithmetic mod 2^64). Floats in [0, 1) take the top 53 bits:
random() = (output >> 11) * 2^-53. Integer draws use floor(random() * n).

Independent streams (per episode, per epoch, per purpose) are derived with
derive_seed, which folds a sequence of integer / string labels through the
same mixer. Because the generator is counter-based there is no state to
carry between phases: resuming a run re-derives the exact same streams.
"""

from __future__ import annotations

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF
_GAMMA = 0x9E3779B97F4A7C15
_SEED0 = 0x5851F42D4C957F2D  # fold constant for derive_seed


def _mix(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(*parts) -> int:
    """Fold integer or string labels into a 64-bit stream seed.

    Strings are folded as little-endian 8-byte chunks of their UTF-8 bytes
    followed by the byte length (so "ab" and "ab\\x00" differ).
    """
    h = _SEED0
    for part in parts:
        if isinstance(part, str):
            data = part.encode("utf-8")
            chunks = [
                int.from_bytes(data[i : i + 8], "little")
                for i in range(0, len(data), 8)
            ]
            chunks.append(len(data))
        elif isinstance(part, (int, np.integer)):
            chunks = [int(part) & _MASK]
        else:
            raise TypeError(f"cannot derive seed from {type(part).__name__}")
        for c in chunks:
            h = _mix(((h + _GAMMA) & _MASK) ^ c)
    return h


class SplitMix64:
    """Counter-based 64-bit generator; see the module docstring for the spec."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = int(seed) & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK
        return _mix(self._state)

    def random(self) -> float:
        """Uniform float in [0, 1) with 53-bit resolution."""
        return (self.next_u64() >> 11) * 2.0**-53

    def randrange(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError("randrange needs n >= 1")
        # floor can round up to n when random() is within one ulp of 1.0
        return min(int(self.random() * n), n - 1)

    def uniform_array(self, low: float, high: float, n: int) -> np.ndarray:
        """n uniforms in [low, high), consuming exactly n counter steps.

        Produces the same values as n scalar random() calls.
        """
        idx = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GAMMA)
        z = idx + np.uint64(self._state)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
        self._state = (self._state + n * _GAMMA) & _MASK
        u = (z >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return low + (high - low) * u

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randrange(i + 1)
            items[i], items[j] = items[j], items[i]

    @property
    def state(self) -> int:
        return self._state

    def set_state(self, state: int) -> None:
        self._state = int(state) & _MASK
