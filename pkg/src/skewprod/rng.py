"""Counter-based uniform variates.

Every draw is a pure function of ``(seed, stream, time, component)`` so that
payloads at arbitrary times can be filled without sequential state and in
any order. The mixer is the SplitMix64 finaliser applied to a combined key.
"""
import numpy as np

_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)
_TIME_MULT = np.uint64(0xD1B54A32D192ED03)
_COMP_MULT = np.uint64(0x8CB92BA72F3D8DD7)
_STREAM_MULT = np.uint64(0xF1357AEA2E62A9C5)


def _mix(z):
    z = z ^ (z >> np.uint64(30))
    z = z * _C1
    z = z ^ (z >> np.uint64(27))
    z = z * _C2
    return z ^ (z >> np.uint64(31))


def hash64(seed, times, component=0, stream=0):
    """64-bit hash of ``(seed, stream, time, component)``, vectorised over times."""
    with np.errstate(over="ignore"):
        t = np.asarray(times, dtype=np.int64).astype(np.uint64)
        key = _mix(np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF) + _GOLDEN)
        key = key ^ (np.uint64(int(stream) & 0xFFFFFFFFFFFFFFFF) * _STREAM_MULT)
        z = key + t * _TIME_MULT + np.uint64(int(component) & 0xFFFFFFFFFFFFFFFF) * _COMP_MULT
        z = _mix(z + _GOLDEN)
        return _mix(z ^ key)


def uniform01(seed, times, component=0, stream=0):
    """Doubles in [0, 1) built from the top 53 bits of :func:`hash64`."""
    bits = hash64(seed, times, component, stream) >> np.uint64(11)
    return bits.astype(np.float64) * (1.0 / 9007199254740992.0)
