"""Counter-based random streams.

All randomness in the library flows through ``numpy.random.Generator``
objects backed by the Philox counter-based bit generator. A stream is
addressed by ``(seed, *stream)``: the same address always yields a
bit-identical draw sequence, and distinct addresses yield independent
streams. This is what lets callers run many sampler invocations in
parallel (one stream per call) without coordinating state.
"""

from __future__ import annotations

import numpy as np

__all__ = ["make_rng", "spawn"]


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Return the generator for stream ``stream`` of root ``seed``.

    Identical ``(seed, *stream)`` arguments produce bit-identical
    generators; differing arguments produce independent ones.
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(stream))
    return np.random.Generator(np.random.Philox(ss))


def spawn(seed: int, n: int, *stream: int) -> list[np.random.Generator]:
    """Return ``n`` independent generators under ``(seed, *stream)``."""
    return [make_rng(seed, *stream, i) for i in range(n)]
