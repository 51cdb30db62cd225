"""Uniform per-dimension discretization of phase space.

A grid is a bounding box plus a single per-axis segment count. States map to
integer multi-indices (one index per dimension) and back to segment centers.
Grids refine by M -> 2M - 1, which keeps every coarse segment boundary on the
fine grid and produces the axis-length chain 2, 3, 5, 9, 17, 33, ...
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Axis-aligned box [lo, hi] split into ``axis_len`` segments per dimension.

    Segments are half-open [lo + i*w, lo + (i+1)*w); the last segment is closed
    at the top so every point of the box encodes. Out-of-box states clamp to
    the boundary segments.
    """

    lo: np.ndarray
    hi: np.ndarray
    axis_len: int

    def __post_init__(self) -> None:
        lo = np.ascontiguousarray(np.asarray(self.lo, dtype=np.float64))
        hi = np.ascontiguousarray(np.asarray(self.hi, dtype=np.float64))
        if lo.ndim != 1 or hi.shape != lo.shape:
            raise ValueError("lo and hi must be 1-D arrays of equal length")
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise ValueError("grid bounds must be finite")
        if not (lo < hi).all():
            bad = int(np.argmin(hi - lo))
            raise ValueError(f"lo must be strictly below hi (dimension {bad})")
        if int(self.axis_len) < 2:
            raise ValueError(f"axis_len must be >= 2, got {self.axis_len}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "axis_len", int(self.axis_len))

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def width(self) -> np.ndarray:
        """Segment width per dimension."""
        return (self.hi - self.lo) / self.axis_len

    def encode(self, states: np.ndarray) -> np.ndarray:
        """Map states (..., d) to integer multi-indices (..., d).

        i_k = floor((x_k - lo_k) / w_k), clamped to [0, axis_len - 1]. Total
        on finite input; rejects non-finite states.
        """
        x = np.asarray(states, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected last axis {self.dim}, got {x.shape[-1]}")
        if not np.isfinite(x).all():
            raise ValueError("cannot encode non-finite states")
        idx = np.floor((x - self.lo) / self.width).astype(np.int64)
        return np.clip(idx, 0, self.axis_len - 1)

    def decode(self, indices: np.ndarray) -> np.ndarray:
        """Map multi-indices (..., d) to segment centers (..., d)."""
        idx = np.asarray(indices)
        if idx.shape[-1] != self.dim:
            raise ValueError(f"expected last axis {self.dim}, got {idx.shape[-1]}")
        if idx.min(initial=0) < 0 or idx.max(initial=0) >= self.axis_len:
            raise ValueError(
                f"index out of range [0, {self.axis_len - 1}]: "
                f"min={idx.min()}, max={idx.max()}"
            )
        return self.lo + (idx + 0.5) * self.width

    def refine(self) -> "GridSpec":
        """Same bounds, axis_len M -> 2M - 1."""
        return GridSpec(self.lo, self.hi, 2 * self.axis_len - 1)

    def to_dict(self) -> dict:
        return {
            "lo": [float(v) for v in self.lo],
            "hi": [float(v) for v in self.hi],
            "axis_len": self.axis_len,
        }

    @staticmethod
    def from_dict(d: dict) -> "GridSpec":
        return GridSpec(np.asarray(d["lo"]), np.asarray(d["hi"]), int(d["axis_len"]))


def fit_bounds(states: np.ndarray, margin: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension envelope of a batch of states, expanded by margin * range.

    ``states`` is any array with the state dimension last (a TrajectorySet's
    ``states`` works directly). Rejects degenerate dimensions where max == min.
    """
    x = np.asarray(states, dtype=np.float64).reshape(-1, np.shape(states)[-1])
    if x.size == 0:
        raise ValueError("cannot fit bounds to empty data")
    if not np.isfinite(x).all():
        raise ValueError("cannot fit bounds to non-finite data")
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    span = hi - lo
    degenerate = np.flatnonzero(span == 0)
    if degenerate.size:
        raise ValueError(
            f"degenerate dimension(s) {degenerate.tolist()}: max equals min, "
            "cannot define a grid there"
        )
    return lo - margin * span, hi + margin * span
