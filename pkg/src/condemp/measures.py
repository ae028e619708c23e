"""Probability measures on model domains as grid data.

GridMeasure is the workhorse for transport computations: a density sampled
on an ascending node grid, with a monotone C^1 CDF built by integrating the
shape-preserving (PCHIP) interpolant of the density.  Histogram measures get
a piecewise-linear CDF instead, with closed-form quantiles.

InitialDistribution describes a starting law nu: a density against mu, an
interior point mass, or a raw Lebesgue density on its own grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

__all__ = ["MeasureError", "GridMeasure", "InitialDistribution"]


class MeasureError(ValueError):
    pass


@dataclass
class InitialDistribution:
    """Starting law nu with nu(interior) > 0.

    kind: "density_mu"   -- density h w.r.t. mu, as a callable or as values
                            that `density_on` will interpolate if needed;
          "point"        -- interior point mass;
          "grid_density" -- Lebesgue density tabulated on `nodes`.
    """

    kind: str
    point: np.ndarray | float | None = None
    density: object | None = None      # callable or array aligned with nodes
    nodes: np.ndarray | None = None
    name: str = ""

    @classmethod
    def from_mu(cls) -> "InitialDistribution":
        return cls(kind="density_mu", density=lambda x: np.ones(np.shape(x)[0] if np.ndim(x) else 1),
                   name="mu")

    @classmethod
    def from_density_mu(cls, density, name: str = "h*mu") -> "InitialDistribution":
        return cls(kind="density_mu", density=density, name=name)

    @classmethod
    def from_point(cls, x0, name: str = "") -> "InitialDistribution":
        return cls(kind="point", point=np.asarray(x0, dtype=float),
                   name=name or f"delta@{np.asarray(x0, dtype=float)}")

    @classmethod
    def from_grid_density(cls, nodes, values, name: str = "grid") -> "InitialDistribution":
        return cls(kind="grid_density", nodes=np.asarray(nodes, dtype=float),
                   density=np.asarray(values, dtype=float), name=name)

    def label(self) -> str:
        return self.name or self.kind

    def density_on(self, x) -> np.ndarray:
        """Density values at query points (kind-dependent reference measure)."""
        if self.kind == "point":
            raise MeasureError("point mass has no density")
        if callable(self.density):
            x_arr = np.asarray(x, dtype=float)
            n = x_arr.shape[0] if x_arr.ndim else 1
            vals = np.asarray(self.density(x), dtype=float)
            return np.broadcast_to(vals, (n,)).astype(float) if vals.ndim == 0 else vals
        vals = np.asarray(self.density, dtype=float)
        if self.nodes is None:
            return vals        # caller aligned the grid
        x_arr = np.asarray(x, dtype=float)
        if x_arr.ndim != 1:
            raise MeasureError("tabulated densities are 1D only")
        if vals.size == x_arr.size and np.allclose(self.nodes, x_arr):
            return vals
        return PchipInterpolator(self.nodes, vals)(x_arr)


class GridMeasure:
    """A probability measure on an interval given by a sampled density.

    Parameters
    ----------
    nodes : ascending 1D grid (endpoints may be included).
    density : values of the density at the nodes w.r.t. `reference`.
    reference : "lebesgue", "mu", or "mu0"; non-Lebesgue references need
        `reference_lebesgue`, the Lebesgue density of the reference measure
        at the nodes, so everything can be reduced to a Lebesgue density.
    histogram : if True the density is treated as piecewise constant on the
        cells between nodes and the CDF is piecewise linear.
    """

    def __init__(self, nodes, density, reference: str = "lebesgue",
                 reference_lebesgue=None, histogram: bool = False,
                 name: str = ""):
        nodes = np.asarray(nodes, dtype=float)
        density = np.asarray(density, dtype=float)
        if nodes.ndim != 1 or np.any(np.diff(nodes) <= 0):
            raise MeasureError("nodes must be strictly increasing 1D")
        if reference not in ("lebesgue", "mu", "mu0"):
            raise MeasureError(f"unknown reference measure {reference!r}")
        if reference != "lebesgue":
            if reference_lebesgue is None:
                raise MeasureError(f"reference {reference!r} needs its Lebesgue density")
            leb = density * np.asarray(reference_lebesgue, dtype=float)
        else:
            leb = density.copy()
        if np.min(leb) < -1e-12 * max(1.0, float(np.max(np.abs(leb)))):
            raise MeasureError(f"density negative beyond tolerance (min {np.min(leb):.3e})")
        leb = np.maximum(leb, 0.0)

        self.nodes = nodes
        self.reference = reference
        self.density = density
        self.histogram = histogram
        self.name = name
        self.lebesgue_density = leb

        if histogram:
            if leb.size != nodes.size - 1:
                raise MeasureError("histogram needs one density value per cell")
            cell_mass = leb * np.diff(nodes)
            self._cdf_nodes = np.concatenate([[0.0], np.cumsum(cell_mass)])
            self._mass = float(self._cdf_nodes[-1])
        else:
            self._pchip = PchipInterpolator(nodes, leb)
            self._cdf_spline = self._pchip.antiderivative()
            self._cdf_nodes = self._cdf_spline(nodes)
            self._mass = float(self._cdf_nodes[-1])
        if abs(self._mass - 1.0) > 1e-8:
            raise MeasureError(f"total mass {self._mass!r} differs from 1 beyond 1e-8")
        if self._mass <= 0:
            raise MeasureError("measure has no mass")
        # monotonicity guard for corrupt inputs
        if np.any(np.diff(self._cdf_nodes) < -1e-14):
            raise MeasureError("CDF not monotone (corrupt density input)")

    # ---- basic queries ------------------------------------------------

    @property
    def support(self):
        return float(self.nodes[0]), float(self.nodes[-1])

    def mass(self) -> float:
        return self._mass

    def cdf(self, x) -> np.ndarray:
        """Normalized CDF values at x."""
        x = np.asarray(x, dtype=float)
        if self.histogram:
            vals = np.interp(x, self.nodes, self._cdf_nodes)
        else:
            vals = self._cdf_spline(np.clip(x, self.nodes[0], self.nodes[-1]))
        return np.clip(vals / self._mass, 0.0, 1.0)

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.histogram:
            idx = np.clip(np.searchsorted(self.nodes, x, side="right") - 1,
                          0, self.lebesgue_density.size - 1)
            return self.lebesgue_density[idx] / self._mass
        return np.maximum(self._pchip(np.clip(x, self.nodes[0], self.nodes[-1])), 0.0) / self._mass

    def quantile(self, u, newton_iters: int = 60) -> np.ndarray:
        """Inverse CDF.  Smooth measures use Newton with a bisection guard."""
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        a, b = self.support
        if self.histogram:
            F = self._cdf_nodes / self._mass
            # strictly increasing envelope for searchsorted on flat pieces
            j = np.clip(np.searchsorted(F, u, side="left"), 1, F.size - 1)
            F0, F1 = F[j - 1], F[j]
            x0, x1 = self.nodes[j - 1], self.nodes[j]
            frac = np.where(F1 > F0, (u - F0) / np.where(F1 > F0, F1 - F0, 1.0), 0.0)
            return x0 + frac * (x1 - x0)
        table_x = np.linspace(a, b, min(4097, 4 * self.nodes.size + 1))
        table_f = self.cdf(table_x)
        y = np.interp(u, table_f, table_x)
        lo = np.full_like(y, a)
        hi = np.full_like(y, b)
        for _ in range(newton_iters):
            f = self.cdf(y) - u
            lo = np.where(f <= 0, y, lo)
            hi = np.where(f > 0, y, hi)
            d = self.pdf(y)
            step = np.where(d > 1e-300, f / np.maximum(d, 1e-300), 0.0)
            y_new = y - step
            bad = (y_new <= lo) | (y_new >= hi) | (d <= 1e-300)
            y_new = np.where(bad, 0.5 * (lo + hi), y_new)
            if np.max(np.abs(y_new - y)) < 1e-15 * (b - a):
                return np.clip(y_new, a, b)
            y = y_new
        return np.clip(y, a, b)

    # ---- integration and atomization -----------------------------------

    def expectation(self, values) -> float:
        """Integral of a function given by its values at the nodes.

        Smooth measures use composite Simpson against the Lebesgue density;
        histograms use exact cell sums of the piecewise-constant density
        times the nodal average of the integrand.
        """
        v = np.asarray(values, dtype=float)
        if self.histogram:
            mid = 0.5 * (v[:-1] + v[1:]) if v.size == self.nodes.size else v
            return float(np.sum(mid * self.lebesgue_density * np.diff(self.nodes)) / self._mass)
        f = v * self.lebesgue_density
        return float(_simpson(f, self.nodes) / self._mass)

    def atomize(self, n_atoms: int):
        """Equal-width cells reduced to (centroid, mass) atoms.

        Centroids preserve per-cell first moments, so transport distances
        between atomizations track the continuous ones to O(width^2).
        """
        a, b = self.support
        edges = np.linspace(a, b, n_atoms + 1)
        F = self.cdf(edges) * self._mass
        masses = np.maximum(np.diff(F), 0.0)
        # first moments per cell by fine midpoint sums
        refine = 8
        xs = np.linspace(a, b, n_atoms * refine + 1)
        xm = 0.5 * (xs[:-1] + xs[1:])
        pm = self.pdf(xm) * np.diff(xs)
        moment = (xm * pm).reshape(n_atoms, refine).sum(axis=1)
        cell_pm = pm.reshape(n_atoms, refine).sum(axis=1)
        centers = 0.5 * (edges[:-1] + edges[1:])
        good = cell_pm > 1e-300
        centroids = centers.copy()
        centroids[good] = moment[good] / cell_pm[good]
        centroids = np.clip(centroids, edges[:-1], edges[1:])
        total = masses.sum()
        if total <= 0:
            raise MeasureError("atomization produced no mass")
        masses = masses / total
        # negligible atoms destabilize downstream LP scaling
        keep = masses > 1e-14
        masses = masses[keep]
        return centroids[keep], masses / masses.sum()

    # ---- constructors ---------------------------------------------------

    @classmethod
    def normalized(cls, nodes, density, name: str = "") -> "GridMeasure":
        """Construct from a nonnegative shape, normalizing by its own
        interpolated integral so the mass invariant holds exactly."""
        nodes = np.asarray(nodes, dtype=float)
        density = np.maximum(np.asarray(density, dtype=float), 0.0)
        total = float(PchipInterpolator(nodes, density).antiderivative()(nodes[-1]))
        if total <= 0:
            raise MeasureError("density shape has no mass")
        return cls(nodes, density / total, name=name)

    @classmethod
    def from_histogram(cls, edges, masses, name: str = "") -> "GridMeasure":
        edges = np.asarray(edges, dtype=float)
        masses = np.asarray(masses, dtype=float)
        dens = masses / np.diff(edges)
        total = float(np.sum(masses))
        if total <= 0:
            raise MeasureError("histogram has no mass")
        return cls(edges, dens / total, reference="lebesgue", histogram=True, name=name)


def _simpson(f: np.ndarray, x: np.ndarray) -> float:
    from scipy.integrate import simpson
    return float(simpson(f, x=x))
