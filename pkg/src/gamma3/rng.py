"""Counter-based random streams (Philox4x32-10).

All randomness in the package derives from one explicit 64-bit seed.  A
draw is addressed by (seed, stream, counter): ``stream`` identifies an
independent logical stream (one per decay, per voxel sample, ...) and
``counter`` advances within the stream.  Because the generator is a pure
function of its address, any number of workers can evaluate disjoint
streams in any order and still produce identical results.

The 32-bit multiplies are decomposed into 16-bit halves so that every
intermediate fits in a signed 64-bit integer; the same source therefore
yields bit-identical output under numba (int64 wraparound never occurs)
and under plain Python (arbitrary-precision ints).

Helpers consume one Philox block (four 32-bit lanes) per call and return
the advanced counter; callers thread the counter through explicitly::

    u, ctr = uniform(seed, stream, ctr)
    g, ctr = gaussian(seed, stream, ctr)
"""

import math

from ._accel import njit

_M0 = 0xD2511F53
_M1 = 0xCD9E8D57
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85

_MASK32 = 0xFFFFFFFF
_INV53 = 1.0 / 9007199254740992.0  # 2**-53

# Stream-id domains keep unrelated uses of the generator on disjoint
# streams: stream = domain * 2**48 + index, index < 2**48.
DOMAIN_DECAY = 1
DOMAIN_SENSITIVITY = 2
DOMAIN_FISHER = 3

_DOMAIN_SHIFT = 1 << 48


def stream_id(domain, index):
    """64-bit stream identifier for draw ``index`` of a usage domain."""
    if index < 0 or index >= _DOMAIN_SHIFT:
        raise ValueError("stream index out of range")
    return domain * _DOMAIN_SHIFT + index


@njit(cache=True)
def _mulhilo32(a, b):
    # 32x32 -> 64 bit product as (hi, lo) halves; intermediates < 2**49.
    t0 = (a & 0xFFFF) * b
    t1 = (a >> 16) * b
    lo_part = t0 + ((t1 & 0xFFFF) << 16)
    lo = lo_part & _MASK32
    hi = (t1 >> 16) + (lo_part >> 32)
    return hi, lo


@njit(cache=True)
def _philox4x32(k0, k1, c0, c1, c2, c3):
    for _ in range(10):
        hi0, lo0 = _mulhilo32(c0, _M0)
        hi1, lo1 = _mulhilo32(c2, _M1)
        c0 = (hi1 ^ c1 ^ k0) & _MASK32
        c1 = lo1
        c2 = (hi0 ^ c3 ^ k1) & _MASK32
        c3 = lo0
        k0 = (k0 + _W0) & _MASK32
        k1 = (k1 + _W1) & _MASK32
    return c0, c1, c2, c3


@njit(cache=True)
def _block(seed, stream, ctr):
    k0 = seed & _MASK32
    k1 = (seed >> 32) & _MASK32
    return _philox4x32(
        k0, k1, ctr & _MASK32, (ctr >> 32) & _MASK32, stream & _MASK32, (stream >> 32) & _MASK32
    )


@njit(cache=True)
def uniform_pair(seed, stream, ctr):
    """Two doubles in [0, 1) from one block."""
    x0, x1, x2, x3 = _block(seed, stream, ctr)
    u1 = ((x0 << 21) + (x1 >> 11)) * _INV53
    u2 = ((x2 << 21) + (x3 >> 11)) * _INV53
    return u1, u2, ctr + 1


@njit(cache=True)
def uniform(seed, stream, ctr):
    """One double in [0, 1)."""
    u1, _, ctr = uniform_pair(seed, stream, ctr)
    return u1, ctr


@njit(cache=True)
def gaussian(seed, stream, ctr):
    """Standard normal deviate (Box-Muller, one block)."""
    u1, u2, ctr = uniform_pair(seed, stream, ctr)
    r = math.sqrt(-2.0 * math.log(1.0 - u1))
    return r * math.cos(2.0 * math.pi * u2), ctr


@njit(cache=True)
def exponential(seed, stream, ctr):
    """Unit-mean exponential deviate."""
    u, ctr = uniform(seed, stream, ctr)
    return -math.log(1.0 - u), ctr


@njit(cache=True)
def isotropic_direction(seed, stream, ctr):
    """Unit vector uniform on the sphere."""
    u1, u2, ctr = uniform_pair(seed, stream, ctr)
    cz = 2.0 * u1 - 1.0
    phi = 2.0 * math.pi * u2
    s = math.sqrt(max(0.0, 1.0 - cz * cz))
    return s * math.cos(phi), s * math.sin(phi), cz, ctr


class RandomStream:
    """Mutable cursor over one counter-based stream.

    Convenience wrapper for Python-level callers; the jitted kernels thread
    (seed, stream, counter) through the module functions directly.
    """

    def __init__(self, seed, stream=0, counter=0):
        self.seed = int(seed)
        self.stream = int(stream)
        self.counter = int(counter)

    def uniform(self):
        u, self.counter = uniform(self.seed, self.stream, self.counter)
        return u

    def gaussian(self):
        g, self.counter = gaussian(self.seed, self.stream, self.counter)
        return g

    def exponential(self):
        e, self.counter = exponential(self.seed, self.stream, self.counter)
        return e
