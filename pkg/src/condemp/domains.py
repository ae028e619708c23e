"""Model domains: intervals and axis-aligned rectangles with a weight e^V.

The state space is either [a, b] or [a, b] x [c, d].  The reference measure
is mu(dx) = e^{V(x)} dx normalized to a probability measure; on rectangles
only V = 0 is supported.  A potential is given as a tabulated smooth function
on its own grid and is interpolated with a cubic spline where needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

DIRICHLET = "dirichlet"
NEUMANN = "neumann"


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class Potential:
    """Tabulated smooth potential V on a 1D grid covering [a, b]."""

    nodes: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if nodes.ndim != 1 or nodes.shape != values.shape:
            raise DomainError("potential grid and values must be 1D arrays of equal length")
        if nodes.size < 4:
            raise DomainError("potential grid too coarse (need at least 4 nodes)")
        if np.any(np.diff(nodes) <= 0):
            raise DomainError("potential grid must be strictly increasing")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)

    def spline(self) -> CubicSpline:
        return CubicSpline(self.nodes, self.values)

    def __call__(self, x):
        return self.spline()(np.asarray(x, dtype=float))

    def derivative(self, x):
        return self.spline()(np.asarray(x, dtype=float), 1)


@dataclass(frozen=True)
class Domain:
    """Interval [a, b] or rectangle [a, b] x [c, d] with boundary condition."""

    kind: str                      # "interval" | "rectangle"
    bounds: tuple                  # (a, b) or (a, b, c, d)
    boundary: str = DIRICHLET      # "dirichlet" | "neumann"
    potential: Potential | None = None

    def __post_init__(self):
        if self.kind not in ("interval", "rectangle"):
            raise DomainError(f"unknown domain kind {self.kind!r}")
        if self.boundary not in (DIRICHLET, NEUMANN):
            raise DomainError(f"unknown boundary condition {self.boundary!r}")
        b = tuple(float(v) for v in self.bounds)
        object.__setattr__(self, "bounds", b)
        if self.kind == "interval":
            if len(b) != 2:
                raise DomainError("interval needs bounds (a, b)")
            if not b[1] > b[0]:
                raise DomainError("interval requires b > a")
        else:
            if len(b) != 4:
                raise DomainError("rectangle needs bounds (a, b, c, d)")
            if not (b[1] > b[0] and b[3] > b[2]):
                raise DomainError("rectangle requires b > a and d > c")
            if self.potential is not None:
                raise DomainError("rectangle supports only zero potential")
        if self.potential is not None:
            lo, hi = self.potential.nodes[0], self.potential.nodes[-1]
            if lo > b[0] + 1e-12 or hi < b[1] - 1e-12:
                raise DomainError("potential grid must cover the whole interval")

    @property
    def dim(self) -> int:
        return 1 if self.kind == "interval" else 2

    @property
    def lengths(self) -> tuple:
        if self.kind == "interval":
            return (self.bounds[1] - self.bounds[0],)
        return (self.bounds[1] - self.bounds[0], self.bounds[3] - self.bounds[2])

    @property
    def diameter(self) -> float:
        if self.kind == "interval":
            return self.lengths[0]
        return float(np.hypot(*self.lengths))

    def potential_values(self, x) -> np.ndarray:
        """V evaluated at 1D nodes x (zero when no potential is set)."""
        x = np.asarray(x, dtype=float)
        if self.potential is None:
            return np.zeros_like(x)
        return self.potential(x)

    def contains_interior(self, point) -> bool:
        p = np.atleast_1d(np.asarray(point, dtype=float))
        if self.kind == "interval":
            return bool(self.bounds[0] < p[0] < self.bounds[1])
        a, b, c, d = self.bounds
        return bool(a < p[0] < b and c < p[1] < d)

    def to_dict(self) -> dict:
        doc = {"kind": self.kind, "bounds": list(self.bounds), "boundary": self.boundary}
        if self.potential is not None:
            doc["potential"] = {
                "nodes": self.potential.nodes.tolist(),
                "values": self.potential.values.tolist(),
            }
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "Domain":
        pot = None
        if doc.get("potential") is not None:
            pot = Potential(np.asarray(doc["potential"]["nodes"], dtype=float),
                            np.asarray(doc["potential"]["values"], dtype=float))
        return cls(kind=doc["kind"], bounds=tuple(doc["bounds"]),
                   boundary=doc.get("boundary", DIRICHLET), potential=pot)


def unit_interval(boundary: str = DIRICHLET, potential: Potential | None = None) -> Domain:
    return Domain(kind="interval", bounds=(0.0, 1.0), boundary=boundary, potential=potential)


def rectangle(a: float, b: float, c: float, d: float, boundary: str = DIRICHLET) -> Domain:
    return Domain(kind="rectangle", bounds=(a, b, c, d), boundary=boundary)
