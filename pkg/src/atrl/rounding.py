"""Integer counts from fractional sizes, robust to float representation.

``0.15 * 540`` is mathematically 81 but evaluates to 80.999...997 in
binary; a naive ceil would return 81 by luck and a naive floor 80. These
helpers snap to the nearest integer when within ``SNAP_TOL`` first, so
count arithmetic matches the exact rational intent.
"""

from __future__ import annotations

import math

SNAP_TOL = 1e-9


def ceil_count(x: float) -> int:
    r = round(x)
    if abs(x - r) <= SNAP_TOL:
        return int(r)
    return math.ceil(x)


def floor_count(x: float) -> int:
    r = round(x)
    if abs(x - r) <= SNAP_TOL:
        return int(r)
    return math.floor(x)
