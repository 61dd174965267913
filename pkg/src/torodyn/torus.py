"""Geometry of the flat torus [0,1)^d.

Points are plain numpy arrays of shape (..., d), one coordinate per axis,
stored in the fundamental cube [0,1)^d.  ``wrap`` produces that
representation from arbitrary finite reals; ``centered`` maps it to the
representative in (-1/2, 1/2]^d, which is the natural chart for the
compressing constructions living around the origin.

Regions are small composable predicates (open/closed cubes and balls,
complements, intersections) evaluated on centered representatives.
``measure_superlevel`` estimates the measure of sets of the form
{f >= threshold} from sampled values, with an explicit confidence
half-width in both grid and Monte Carlo mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "wrap",
    "centered",
    "torus_dist",
    "Region",
    "Cube",
    "Ball",
    "Complement",
    "Intersection",
    "region_contains",
    "MeasureEstimate",
    "measure_superlevel",
]


def wrap(x) -> np.ndarray:
    """Reduce raw coordinates mod 1 into [0,1)^d.

    Idempotent; rejects non-finite input.  Guards against the float
    artifact where ``np.mod`` of a tiny negative number rounds up to 1.0.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("wrap: non-finite coordinates")
    out = np.mod(x, 1.0)
    # np.mod(-1e-17, 1.0) == 1.0 exactly; fold that edge back to 0.
    out = np.where(out >= 1.0, out - 1.0, out)
    return out


def centered(p) -> np.ndarray:
    """Representative of a torus point in the centered cube (-1/2, 1/2]^d.

    Inverse of ``wrap`` on its image: wrap(centered(p)) == p.
    """
    c = wrap(p)
    return np.where(c <= 0.5, c, c - 1.0)


def torus_dist(a, b) -> np.ndarray:
    """Euclidean distance on the torus between point batches (..., d)."""
    delta = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % 1.0
    delta = np.minimum(delta, 1.0 - delta)
    return np.sqrt(np.sum(delta * delta, axis=-1))


class Region:
    """Membership predicate on the torus, evaluated in centered coordinates."""

    def contains_centered(self, c: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __invert__(self) -> "Region":
        return Complement(self)

    def __and__(self, other: "Region") -> "Region":
        return Intersection((self, other))


@dataclass(frozen=True)
class Cube(Region):
    """Axis cube Q_L(0) = {x : |x_i| < L/2}; closed variant uses <=."""

    side: float
    closed: bool = False

    def __post_init__(self):
        if not (0.0 < self.side <= 1.0):
            raise ValueError(f"Cube side must be in (0, 1], got {self.side}")

    def contains_centered(self, c):
        m = np.max(np.abs(c), axis=-1)
        return m <= self.side / 2.0 if self.closed else m < self.side / 2.0


@dataclass(frozen=True)
class Ball(Region):
    """Euclidean ball B_r(0); closed variant is the paper's B̄_r."""

    radius: float
    closed: bool = False

    def __post_init__(self):
        if not (0.0 < self.radius < 1.0):
            raise ValueError(f"Ball radius must be in (0, 1), got {self.radius}")

    def contains_centered(self, c):
        r = np.sqrt(np.sum(c * c, axis=-1))
        return r <= self.radius if self.closed else r < self.radius


@dataclass(frozen=True)
class Complement(Region):
    inner: Region

    def contains_centered(self, c):
        return ~self.inner.contains_centered(c)


@dataclass(frozen=True)
class Intersection(Region):
    parts: tuple

    def contains_centered(self, c):
        out = self.parts[0].contains_centered(c)
        for part in self.parts[1:]:
            out = out & part.contains_centered(c)
        return out


def region_contains(region: Region, p) -> np.ndarray:
    """True iff the centered representative of p lies in the region."""
    return region.contains_centered(centered(p))


@dataclass(frozen=True)
class MeasureEstimate:
    """Superlevel-measure estimate with a reported confidence half-width."""

    value: float
    half_width: float
    n_samples: int
    mode: str  # "grid" | "mc"

    @property
    def upper(self) -> float:
        return self.value + self.half_width

    @property
    def lower(self) -> float:
        return max(0.0, self.value - self.half_width)


_MIN_SAMPLES = 1000


def measure_superlevel(samples, threshold: float, *, grid_spacing: float | None = None,
                       dim: int | None = None) -> MeasureEstimate:
    """Estimate |{f >= threshold}| from sampled values of f.

    Grid mode (``grid_spacing`` given): cell-count fraction with the
    conservative boundary-layer half-width dim * grid_spacing.  Monte Carlo
    mode: sample fraction with 99% half-width 2.58 * sqrt(p(1-p)/N).
    """
    vals = np.asarray(samples, dtype=float).ravel()
    if vals.size == 0:
        raise ValueError("measure_superlevel: empty sample set")
    if vals.size < _MIN_SAMPLES:
        raise ValueError(
            f"measure_superlevel: need at least {_MIN_SAMPLES} samples, got {vals.size}")
    if not np.isfinite(threshold):
        raise ValueError("measure_superlevel: threshold must be finite")
    p = float(np.count_nonzero(vals >= threshold)) / vals.size
    if grid_spacing is not None:
        if dim is None:
            raise ValueError("measure_superlevel: grid mode requires dim")
        hw = dim * grid_spacing
        return MeasureEstimate(p, hw, vals.size, "grid")
    hw = 2.58 * np.sqrt(p * (1.0 - p) / vals.size)
    return MeasureEstimate(p, float(hw), vals.size, "mc")
