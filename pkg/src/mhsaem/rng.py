"""Counter-based random streams.

Every random number used by a trainer is a pure function of
``(seed, stream, t, i, j)``, so results do not depend on evaluation order
and a run resumed at iteration ``t`` replays exactly.  The hash is
SplitMix64 applied to the chained key.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1

# stream identifiers
INIT_CHAIN = 1
PROPOSAL = 2
ACCEPT = 3
BATCH = 4
CATEGORICAL = 5  # shared by MCSAEM sampling and the optimal MH proposal
INIT_PARAMS = 6


def _mix(x):
    with np.errstate(over="ignore"):
        x = x + _GOLDEN
        x = (x ^ (x >> np.uint64(30))) * _M1
        x = (x ^ (x >> np.uint64(27))) * _M2
        return x ^ (x >> np.uint64(31))


def _mix_int(x):
    """Scalar SplitMix64 finalizer on Python ints (same bits as :func:`_mix`)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class CounterRNG:
    """Stateless uniform generator keyed by a global seed."""

    def __init__(self, seed):
        self.seed = int(seed)
        self._root = _mix(np.array([self.seed & _MASK64], dtype=np.uint64))[0]

    def stream_base(self, stream, t):
        """Hash prefix shared by every (i, j) draw of ``stream`` at iteration ``t``."""
        h = _mix_int(int(self._root) ^ int(stream))
        return np.uint64(_mix_int(h ^ (int(t) & _MASK64)))

    def uniform(self, stream, t, i, j=0):
        """Uniforms in [0, 1) for every entry of ``i`` (array-like of ints)."""
        i = np.asarray(i, dtype=np.int64).astype(np.uint64)
        h = _mix(np.uint64(self._root) ^ np.uint64(stream))
        h = _mix(h ^ np.uint64(int(t) & _MASK64))
        h = _mix(np.full(i.shape, h, dtype=np.uint64) ^ i)
        h = _mix(h ^ np.uint64(int(j) & _MASK64))
        return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)

    def uniform_grid(self, stream, t, i, js):
        """(len(i), len(js)) uniforms; column c equals ``uniform(stream, t, i, js[c])``."""
        i = np.asarray(i, dtype=np.int64).astype(np.uint64)
        js = np.asarray(js, dtype=np.int64).astype(np.uint64)
        h = _mix(np.uint64(self._root) ^ np.uint64(stream))
        h = _mix(h ^ np.uint64(int(t) & _MASK64))
        h = _mix(np.full(i.shape, h, dtype=np.uint64) ^ i)
        h = _mix(h[:, None] ^ js[None, :])
        return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)

    def subset_reference(self, stream, t, N, B):
        """Sorted B-subset of range(N) by Floyd's algorithm.

        Draw j (for j = N-B .. N-1) uses ``uniform(stream, t, j)``.  The
        compiled trainer path reproduces this exactly.
        """
        chosen = set()
        for j in range(N - B, N):
            u = float(self.uniform(stream, t, [j])[0])
            r = min(int(u * (j + 1)), j)
            chosen.add(j if r in chosen else r)
        return np.array(sorted(chosen), dtype=np.int64)

    def generator(self, stream, t):
        """A numpy Generator for bulk draws such as parameter initialization."""
        return np.random.default_rng([self.seed & _MASK64, int(stream), int(t)])


def categorical(probs, u):
    """Inverse-CDF sampling, one draw per row of ``probs`` (0-based)."""
    probs = np.atleast_2d(probs)
    cdf = np.cumsum(probs, axis=1)
    cdf /= cdf[:, -1:]
    z = (cdf <= np.asarray(u)[:, None]).sum(axis=1)
    return np.minimum(z, probs.shape[1] - 1)
