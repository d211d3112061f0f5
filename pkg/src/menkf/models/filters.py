"""Centred sixth-order selective filter."""

from __future__ import annotations

import numba
import numpy as np

FILTER_STENCIL = np.array([-1.0, 6.0, -15.0, 20.0, -15.0, 6.0, -1.0]) / 64.0
HALF_WIDTH = 3


@numba.njit(cache=True, nogil=True)
def filter_rows(rows: np.ndarray, strength: float) -> None:
    """Filter every row of a 2D array in place, leaving three points at each end."""
    n = rows.shape[1]
    buf = np.empty(n)
    for r in range(rows.shape[0]):
        v = rows[r]
        for i in range(HALF_WIDTH, n - HALF_WIDTH):
            d = (
                -(v[i - 3] + v[i + 3])
                + 6.0 * (v[i - 2] + v[i + 2])
                - 15.0 * (v[i - 1] + v[i + 1])
                + 20.0 * v[i]
            ) / 64.0
            buf[i] = v[i] - strength * d
        for i in range(HALF_WIDTH, n - HALF_WIDTH):
            v[i] = buf[i]


@numba.njit(cache=True, nogil=True)
def boundary_filter_rows(rows: np.ndarray, strength: float) -> None:
    """Reduced-order centred filters on the two points next to each end, in place.

    Second order on the first interior point and fourth order on the second,
    the usual closure when the sixth-order stencil no longer fits. The end
    points themselves are boundary conditions and stay untouched.
    """
    n = rows.shape[1]
    for r in range(rows.shape[0]):
        v = rows[r]
        a1 = (-v[0] + 2.0 * v[1] - v[2]) / 4.0
        a2 = (v[0] - 4.0 * v[1] + 6.0 * v[2] - 4.0 * v[3] + v[4]) / 16.0
        b1 = (-v[n - 1] + 2.0 * v[n - 2] - v[n - 3]) / 4.0
        b2 = (v[n - 1] - 4.0 * v[n - 2] + 6.0 * v[n - 3] - 4.0 * v[n - 4] + v[n - 5]) / 16.0
        v[1] -= strength * a1
        v[2] -= strength * a2
        v[n - 2] -= strength * b1
        v[n - 3] -= strength * b2


def sixth_order_filter(values: np.ndarray, strength: float = 1.0) -> np.ndarray:
    """Return ``values`` with the sixth-order damping stencil applied to interior points.

    The stencil's symbol is ``sin(k h / 2) ** 6``, so constants and polynomials up
    to degree five pass unchanged and the grid-scale mode is removed at unit strength.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size < 2 * HALF_WIDTH + 1:
        raise ValueError(f"filter needs a 1D array of at least 7 points, got shape {values.shape}")
    if not 0.0 <= strength <= 1.0:
        raise ValueError(f"filter strength must lie in [0, 1], got {strength}")
    out = values.copy().reshape(1, -1)
    filter_rows(out, float(strength))
    return out[0]
