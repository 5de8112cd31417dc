"""Filling strategies that turn a masked window into a complete one.

All functions take ``positions`` (T, 2) and a boolean ``observed`` (T,) and
return a new (T, 2) array; observed rows are copied through untouched.
Time is the step index (uniform 0.4 s spacing), not the frame id.
"""

from __future__ import annotations

from enum import Enum

import numpy as np


class ImputationError(ValueError):
    pass


class ImputationKind(str, Enum):
    LAST = "last"
    ZERO = "zero"
    LINEAR = "linear"


def _check(positions, observed):
    positions = np.asarray(positions, dtype=np.float64)
    observed = np.asarray(observed, dtype=bool)
    if positions.ndim != 2 or observed.shape != (positions.shape[0],):
        raise ImputationError(f"positions {positions.shape} and mask {observed.shape} disagree")
    return positions, observed


def fill_last(positions, observed) -> np.ndarray:
    """Carry the most recent detection forward.

    Steps before the first detection take the first detected position.
    """
    positions, observed = _check(positions, observed)
    idx = np.flatnonzero(observed)
    if idx.size == 0:
        raise ImputationError("cannot fill: no observed step")
    out = positions.copy()
    # index of the latest observed step at or before t
    src = np.maximum.accumulate(np.where(observed, np.arange(len(observed)), -1))
    src[src < 0] = idx[0]
    out[~observed] = positions[src[~observed]]
    return out


def fill_zero(positions, observed, value=(0.0, 0.0)) -> np.ndarray:
    """Replace missing steps by ``value`` (the origin of whatever space
    ``positions`` is expressed in)."""
    positions, observed = _check(positions, observed)
    out = positions.copy()
    out[~observed] = np.asarray(value, dtype=np.float64)
    return out


def fill_linear(positions, observed) -> np.ndarray:
    """Per-axis linear interpolation between flanking detections.

    Trailing gaps are extrapolated along the line through the last two
    detections, leading gaps along the line through the first two. With a
    single detection the fill is constant.
    """
    positions, observed = _check(positions, observed)
    idx = np.flatnonzero(observed)
    if idx.size == 0:
        raise ImputationError("cannot fill: no observed step")
    out = positions.copy()
    if idx.size == len(observed):
        return out
    if idx.size == 1:
        out[~observed] = positions[idx[0]]
        return out
    t = np.arange(len(observed), dtype=np.float64)
    miss = np.flatnonzero(~observed)
    for ax in range(2):
        known = positions[idx, ax]
        vals = np.interp(t[miss], idx.astype(np.float64), known)
        lead = miss < idx[0]
        if lead.any():
            slope = (known[1] - known[0]) / (idx[1] - idx[0])
            vals[lead] = known[0] + slope * (t[miss][lead] - idx[0])
        trail = miss > idx[-1]
        if trail.any():
            slope = (known[-1] - known[-2]) / (idx[-1] - idx[-2])
            vals[trail] = known[-1] + slope * (t[miss][trail] - idx[-1])
        out[miss, ax] = vals
    return out


def impute(kind, positions, observed, zero_value=(0.0, 0.0)) -> np.ndarray:
    kind = ImputationKind(kind)
    if kind is ImputationKind.LAST:
        return fill_last(positions, observed)
    if kind is ImputationKind.ZERO:
        return fill_zero(positions, observed, zero_value)
    return fill_linear(positions, observed)


def impute_batch(kind, positions, observed, zero_value=(0.0, 0.0)) -> np.ndarray:
    """Apply :func:`impute` to every window of an (N, T, 2) batch."""
    kind = ImputationKind(kind)
    if kind is ImputationKind.ZERO:
        out = np.array(positions, dtype=np.float64, copy=True)
        out[~observed] = np.asarray(zero_value, dtype=np.float64)
        return out
    out = np.empty_like(positions, dtype=np.float64)
    for n in range(positions.shape[0]):
        out[n] = impute(kind, positions[n], observed[n])
    return out
