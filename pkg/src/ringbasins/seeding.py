"""Counter-based per-trial random streams.

Trial ``i`` of an experiment with master seed ``s`` draws from the SplitMix64
sequence whose state starts at ``trial_seed(s, i)``.  Value ``k`` of that
sequence is ``mix64(state + (k + 1) * GOLDEN)``, so any slice of any trial can
be generated directly, in vectorized form, without touching other trials.
Results therefore do not depend on chunking or worker count.
"""

from __future__ import annotations

import numpy as np

SEEDING_RULE = "splitmix64-counter-v1"

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_MASK = (1 << 64) - 1


def mix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 output finalizer, applied elementwise to a uint64 array."""
    z = np.array(x, dtype=np.uint64, copy=True)
    z ^= z >> _S30
    z *= _M1
    z ^= z >> _S27
    z *= _M2
    z ^= z >> _S31
    return z


def _as_u64(seed: int | np.ndarray) -> np.ndarray:
    if isinstance(seed, np.ndarray):
        return seed.astype(np.uint64, copy=False)
    return np.array(int(seed) & _MASK, dtype=np.uint64)


def trial_seed(master_seed: int, trial: int | np.ndarray) -> np.ndarray:
    """Per-trial stream state: ``mix64(mix64(master) ^ (trial * GOLDEN))``."""
    with np.errstate(over="ignore"):
        t = np.asarray(trial, dtype=np.uint64) * GOLDEN
        return mix64(mix64(_as_u64(master_seed)) ^ t)


def uniform_stream(seeds: int | np.ndarray, count: int, offset: int = 0) -> np.ndarray:
    """Uniforms in [0, 1) with 53-bit resolution.

    ``seeds`` may be a scalar or an array of stream states; the result has
    shape ``seeds.shape + (count,)``.  ``offset`` skips that many values.
    """
    s = _as_u64(seeds)
    k = np.arange(offset + 1, offset + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        states = s[..., None] + k * GOLDEN
    bits = mix64(states) >> _S11
    return bits.astype(np.float64) * (1.0 / 9007199254740992.0)


def normal_stream(seeds: int | np.ndarray, count: int) -> np.ndarray:
    """Standard normal deviates by Box-Muller on the uniform stream."""
    pairs = (count + 1) // 2
    u = uniform_stream(seeds, 2 * pairs)
    r = np.sqrt(-2.0 * np.log1p(-u[..., 0::2]))  # 1 - u in (0, 1]
    phi = 2.0 * np.pi * u[..., 1::2]
    z = np.empty(u.shape, dtype=np.float64)
    z[..., 0::2] = r * np.cos(phi)
    z[..., 1::2] = r * np.sin(phi)
    return z[..., :count]
