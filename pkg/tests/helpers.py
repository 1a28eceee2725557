"""Finite-difference oracle and small scan factories shared by the tests."""

import numpy as np

from setloc.data import Scan


def central_difference(f, param, index, h=1e-5):
    """(f(x+h) - f(x-h)) / 2h at one coordinate of ``param.data``."""
    old = param.data[index]
    param.data[index] = old + h
    up = f()
    param.data[index] = old - h
    down = f()
    param.data[index] = old
    return (up - down) / (2 * h)


def rel_error(a, b, floor=1e-7):
    """|a - b| relative to the larger magnitude; both below ``floor`` counts as agreement."""
    scale = max(abs(a), abs(b))
    if scale < floor:
        return 0.0
    return abs(a - b) / scale


def sample_coords(shape, k, rng):
    size = int(np.prod(shape))
    flat = rng.choice(size, size=min(k, size), replace=False)
    return [np.unravel_index(i, shape) for i in flat]


def random_scan(rng, n, bssids=None, position=None):
    if bssids is None:
        bssids = [f"aa:bb:cc:00:00:{i:02x}" for i in range(max(n, 1) * 3)]
    chosen = rng.choice(len(bssids), size=n, replace=False)
    dets = [(bssids[i], float(rng.uniform(-95, -35))) for i in chosen]
    pos = position if position is not None else (float(rng.uniform(0, 50)), float(rng.uniform(0, 30)))
    return Scan(dets, pos, 1, "B1")
