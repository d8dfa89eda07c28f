"""Hash-based value noise.

Lattice values come from an integer hash of (lattice x, lattice y, seed), so a
sample depends only on its coordinates and the seed, never on the size or
origin of the array being filled.
"""

import numpy as np

_MASK32 = np.uint64(0xFFFFFFFF)


def _fade(t):
    """Quintic fade 6t^5 - 15t^4 + 10t^3."""
    return t * t * t * (t * (t * 6 - 15) + 10)


def _as_u64(a):
    return np.asarray(a, dtype=np.int64).view(np.uint64)


def hash_uniform(ix, iy, seed):
    """Uniform [0, 1) value per integer lattice point."""
    shape = np.broadcast(np.asarray(ix), np.asarray(iy)).shape
    # 1-d arrays keep the uint64 arithmetic wrapping silently
    x = _as_u64(np.broadcast_to(ix, shape).reshape(-1))
    y = _as_u64(np.broadcast_to(iy, shape).reshape(-1))
    s = np.full(x.shape, int(seed) & 0xFFFFFFFF, dtype=np.uint64)
    h = (x * np.uint64(0x27D4EB2D) + y * np.uint64(0x165667B1) + s * np.uint64(0x9E3779B1)) & _MASK32
    h ^= h >> np.uint64(15)
    h = (h * np.uint64(0x85EBCA6B)) & _MASK32
    h ^= h >> np.uint64(13)
    h = (h * np.uint64(0xC2B2AE35)) & _MASK32
    h ^= h >> np.uint64(16)
    return (h.astype(np.float64) / 4294967296.0).reshape(shape)


def value_noise(x, y, seed):
    """Smooth noise in [0, 1] at continuous lattice coordinates x, y."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = _fade(x - x0)
    fy = _fade(y - y0)
    ix = x0.astype(np.int64)
    iy = y0.astype(np.int64)
    v00 = hash_uniform(ix, iy, seed)
    v10 = hash_uniform(ix + 1, iy, seed)
    v01 = hash_uniform(ix, iy + 1, seed)
    v11 = hash_uniform(ix + 1, iy + 1, seed)
    v0 = v00 + fx * (v10 - v00)
    v1 = v01 + fx * (v11 - v01)
    return v0 + fy * (v1 - v0)


def fbm(x, y, seed, octaves=4, persistence=0.5, lacunarity=2.0):
    """Layered value noise normalised back to [0, 1]."""
    total = np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape, dtype=np.float64)
    amplitude = 1.0
    frequency = 1.0
    norm = 0.0
    for octave in range(octaves):
        total += amplitude * value_noise(np.asarray(x) * frequency, np.asarray(y) * frequency,
                                         (int(seed) + 7919 * octave) & 0xFFFFFFFF)
        norm += amplitude
        amplitude *= persistence
        frequency *= lacunarity
    return total / norm


def derive_seed(*parts):
    """Stable 32-bit seed from integer parts."""
    return int(np.random.SeedSequence([int(p) & 0xFFFFFFFFFFFFFFFF for p in parts]).generate_state(1)[0])
