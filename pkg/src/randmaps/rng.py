"""Counter-based random number streams.

Every stochastic quantity in the package is a pure function of
``(master_seed, stream)``: streams are keyed Philox generators, and the k-th
draw of a keyed stream depends only on the key and on k, never on what other
streams drew or on scheduling. Operations carve out disjoint streams by
passing a domain tag plus their own unit indices to :func:`stream`, so two
different operations given the same master seed never share draws.
"""

import numpy as np

_MASK64 = (1 << 64) - 1

# Domain tags. One per call-site family; never reuse across operations.
WORDS = 1
NET = 2
CHAIN_START = 3
GRID_FUNCTIONS = 4
BATCH = 5
SYNTH = 6
AUDIT = 7

# Registry of leading block ids passed under the BATCH tag by
# ``systems.sample_symbol_block`` callers. Each operation owns a distinct
# leading id so that no two operations can replay each other's words:
#   1-4   exponents (point estimates, pair search, contraction fit, sync)
#   5-7   koopman (holder check, basins, law convergence)
#   8-11  limits (S_n collection and synthetic calibration)
#   12+   sweeps
# New callers take the next free id; never renumber an existing one.


def _splitmix64(x):
    """One splitmix64 step; mixes 64-bit state into a well-spread word."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def mix(*parts):
    """Fold integers into one 64-bit key word, order-sensitive."""
    acc = 0
    for p in parts:
        acc = _splitmix64((acc ^ (int(p) & _MASK64)) & _MASK64)
    return acc


def stream(master_seed, *ids):
    """Return a fresh Generator keyed by the master seed and the id tuple."""
    key = np.array([int(master_seed) & _MASK64, mix(*ids)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
