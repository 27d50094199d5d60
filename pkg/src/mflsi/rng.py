"""Counter-based Gaussian noise keyed by (seed, particle id, step, coordinate).

Each draw is a pure function of its key, so results do not depend on particle
order or on how the work is split.  The mixer is SplitMix64's finalizer; the
Gaussian transform is Box-Muller, two normals per pair of 53-bit uniforms.
"""
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(x):
    x = x + _GOLDEN
    x = (x ^ (x >> np.uint64(30))) * _M1
    x = (x ^ (x >> np.uint64(27))) * _M2
    return x ^ (x >> np.uint64(31))


def _uniform53(x):
    # in (0, 1]; never 0 so log is safe
    return ((x >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53


class CounterNoise:
    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF

    def normal(self, ids, step: int, dim: int) -> np.ndarray:
        """Standard normals of shape (len(ids), dim) for the given step."""
        ids = np.asarray(ids, dtype=np.uint64)
        with np.errstate(over="ignore"):
            base = _mix(np.uint64(self.seed) ^ _mix(np.uint64(step)))
            key = _mix(base ^ _mix(ids))[:, None]
            pairs = (dim + 1) // 2
            j = np.arange(2 * pairs, dtype=np.uint64)[None, :]
            bits = _mix(key + j * _GOLDEN)
        u = _uniform53(bits)
        radius = np.sqrt(-2.0 * np.log(u[:, :pairs]))
        angle = 2.0 * np.pi * u[:, pairs:]
        z = np.empty((len(ids), 2 * pairs))
        z[:, 0::2] = radius * np.cos(angle)
        z[:, 1::2] = radius * np.sin(angle)
        return z[:, :dim]
