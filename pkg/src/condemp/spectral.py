"""Eigenbases of -(Delta + grad V . grad) on model domains.

Provides closed-form sine/cosine bases on intervals and rectangles (zero
potential) and a symmetrized finite-difference solver for intervals with a
tabulated potential.  A basis bundles eigenvalues, eigenfunction samples on
an interior Gauss-Legendre quadrature grid, quadrature weights representing
the probability measure mu = e^V dx / Z, and per-mode sup-norm data for the
ground-state ratio phi_m / phi_0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import eigh, eigh_tridiagonal

from .domains import DIRICHLET, NEUMANN, Domain
from .measures import InitialDistribution

__all__ = [
    "BasisError",
    "ProjectionError",
    "SpectralBasis",
    "ModeCoefficients",
    "GrowthReport",
    "build_analytic_basis",
    "solve_sturm_liouville",
    "project",
    "mu_coefficients",
    "sup_norm_growth_report",
    "gauss_legendre",
    "analytic_eigenvalues",
]

ORTHO_TOL = 1e-8


class BasisError(ValueError):
    pass


class ProjectionError(ValueError):
    pass


def gauss_legendre(n: int, a: float, b: float):
    """Gauss-Legendre nodes (strictly interior to (a, b)) and weights."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * (x + 1.0) + a, 0.5 * (b - a) * w


def analytic_eigenvalues(domain: Domain, M: int) -> np.ndarray:
    """Closed-form eigenvalues for the zero-potential bases, ascending."""
    if domain.potential is not None:
        raise BasisError("closed-form eigenvalues require zero potential")
    if domain.kind == "interval":
        L = domain.lengths[0]
        if domain.boundary == DIRICHLET:
            return ((np.arange(M) + 1) * np.pi / L) ** 2
        return (np.arange(M) * np.pi / L) ** 2
    lam, _ = _rectangle_mode_table(domain, M)
    return lam


def _rectangle_mode_table(domain: Domain, M: int):
    """Sorted (eigenvalue, (i, j)) table for tensor-product rectangle modes."""
    Lx, Ly = domain.lengths
    # enough per-axis indices to cover the M smallest tensor eigenvalues
    k = 1
    while (k + 1) ** 2 < 4 * M + 16:
        k += 1
    if domain.boundary == DIRICHLET:
        idx = np.arange(1, k + 1)
    else:
        idx = np.arange(0, k + 1)
    ii, jj = np.meshgrid(idx, idx, indexing="ij")
    lam = (np.pi * ii / Lx) ** 2 + (np.pi * jj / Ly) ** 2
    flat = sorted(zip(lam.ravel(), ii.ravel(), jj.ravel()),
                  key=lambda t: (t[0], t[1], t[2]))
    flat = flat[:M]
    return (np.array([t[0] for t in flat], dtype=float),
            [(int(t[1]), int(t[2])) for t in flat])


@dataclass
class ModeCoefficients:
    """Coefficients <measure, phi_m> for m = 0..M-1 against a fixed basis."""

    values: np.ndarray
    source: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    def __len__(self):
        return self.values.size

    def sum_of_squares(self) -> float:
        return float(np.dot(self.values, self.values))


@dataclass
class SpectralBasis:
    """Eigenpairs plus quadrature for mu, sampled on an interior grid.

    eigenfunctions has one row per mode; ground_ratio holds phi_m / phi_0 on
    the same grid.  weights represent mu (they sum to 1), mu_lebesgue is the
    Lebesgue density of mu at the grid nodes.
    """

    domain: Domain
    eigenvalues: np.ndarray
    grid: np.ndarray                 # (N,) in 1D, (N, 2) in 2D
    weights: np.ndarray
    mu_lebesgue: np.ndarray
    eigenfunctions: np.ndarray       # (M, N)
    sup_norms: np.ndarray
    ratio_sups: np.ndarray
    analytic: bool = True
    mode_indices: list | None = None   # rectangle: per-mode (i, j)
    _splines: dict = field(default_factory=dict, repr=False)

    @property
    def M(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def gaps(self) -> np.ndarray:
        return self.eigenvalues - self.eigenvalues[0]

    @property
    def ground_state(self) -> np.ndarray:
        return self.eigenfunctions[0]

    @property
    def ground_ratio(self) -> np.ndarray:
        return self.eigenfunctions / self.eigenfunctions[0]

    # ---- evaluation -------------------------------------------------

    def eval_modes(self, x, modes=None) -> np.ndarray:
        """Eigenfunction values at arbitrary points, shape (M_sel, len(x))."""
        sel = np.arange(self.M) if modes is None else np.asarray(modes)
        if self.analytic:
            return self._eval_analytic(x, sel)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty((sel.size, x.size))
        for r, m in enumerate(sel):
            out[r] = self._mode_spline(int(m))(x)
        return out

    def eval_ratio(self, x) -> np.ndarray:
        """phi_m / phi_0 at arbitrary points with boundary limits resolved."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.analytic and self.domain.kind == "interval" \
                and self.domain.boundary == DIRICHLET:
            a, b = self.domain.bounds
            L = b - a
            u = (x - a) / L
            k = np.arange(1, self.M + 1)
            out = np.empty((self.M, x.size))
            inner = (u > 0.0) & (u < 1.0)
            s = np.sin(np.pi * u[inner])
            out[:, inner] = np.sin(np.outer(k, np.pi * u[inner])) / s
            out[:, u <= 0.0] = k[:, None]
            out[:, u >= 1.0] = (k * (-1.0) ** (k + 1))[:, None]
            return out
        if self.analytic and self.domain.boundary == NEUMANN:
            return self.eval_modes(x)      # phi_0 = 1
        if self.analytic and self.domain.kind == "rectangle":
            return self._rect_ratio(x)
        phi = self.eval_modes(x)
        return phi / self._ratio_safe_ground(x, phi)

    def eval_ratio_deriv(self, x) -> np.ndarray:
        """Spatial derivative of phi_m / phi_0 (1D only)."""
        if self.domain.kind != "interval":
            raise BasisError("ratio derivative implemented for intervals only")
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.analytic and self.domain.boundary == DIRICHLET:
            a, b = self.domain.bounds
            L = b - a
            u = (x - a) / L
            k = np.arange(1, self.M + 1)
            out = np.zeros((self.M, x.size))
            inner = (u > 0.0) & (u < 1.0)
            ui = u[inner]
            s, c = np.sin(np.pi * ui), np.cos(np.pi * ui)
            ku = np.outer(k, np.pi * ui)
            out[:, inner] = (np.pi / L) * (k[:, None] * np.cos(ku) * s - np.sin(ku) * c) / s**2
            # interior limit at the faces is 0 by symmetry of the ratio
            return out
        if self.analytic and self.domain.boundary == NEUMANN:
            a, b = self.domain.bounds
            L = b - a
            u = (x - a) / L
            k = np.arange(self.M)
            return -np.sqrt(2.0) * (np.pi * k[:, None] / L) * np.sin(np.outer(k, np.pi * u))
        ratio = self.eval_ratio(self.grid)
        out = np.empty((self.M, x.size))
        for m in range(self.M):
            out[m] = CubicSpline(self.grid, ratio[m])(x, 1)
        return out

    def _eval_analytic(self, x, sel):
        dom = self.domain
        if dom.kind == "interval":
            a, b = dom.bounds
            L = b - a
            u = (np.atleast_1d(np.asarray(x, dtype=float)) - a) / L
            if dom.boundary == DIRICHLET:
                k = sel + 1
                return np.sqrt(2.0) * np.sin(np.outer(k, np.pi * u))
            vals = np.sqrt(2.0) * np.cos(np.outer(sel, np.pi * u))
            vals[sel == 0] = 1.0
            return vals
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        a, b, c, d = dom.bounds
        ux = (pts[:, 0] - a) / (b - a)
        uy = (pts[:, 1] - c) / (d - c)
        out = np.empty((sel.size, pts.shape[0]))
        for r, m in enumerate(sel):
            i, j = self.mode_indices[int(m)]
            out[r] = _axis_mode(i, ux, dom.boundary) * _axis_mode(j, uy, dom.boundary)
        return out

    def _rect_ratio(self, x):
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        a, b, c, d = self.domain.bounds
        ux = (pts[:, 0] - a) / (b - a)
        uy = (pts[:, 1] - c) / (d - c)
        out = np.empty((self.M, pts.shape[0]))
        for m in range(self.M):
            i, j = self.mode_indices[m]
            out[m] = _axis_ratio(i, ux) * _axis_ratio(j, uy)
        return out

    def _ratio_safe_ground(self, x, phi):
        g = phi[0].copy()
        tiny = 1e-13 * max(1.0, float(np.max(np.abs(g))))
        g[np.abs(g) < tiny] = tiny
        return g

    def _mode_spline(self, m: int) -> CubicSpline:
        if m not in self._splines:
            self._splines[m] = CubicSpline(self.grid, self.eigenfunctions[m])
        return self._splines[m]

    # ---- quadrature and diagnostics ---------------------------------

    def integrate(self, values) -> float:
        """Integral against mu of a grid-sampled function."""
        return float(np.dot(np.asarray(values), self.weights))

    def integrate_mu0(self, values) -> float:
        """Integral against mu_0 = phi_0^2 mu of a grid-sampled function."""
        return float(np.dot(np.asarray(values) * self.ground_state**2, self.weights))

    def orthonormality_residual(self) -> float:
        G = (self.eigenfunctions * self.weights) @ self.eigenfunctions.T
        return float(np.max(np.abs(G - np.eye(self.M))))

    def weyl_slope(self) -> float:
        """Log-log growth rate of (lambda_m - lambda_0) over m in [M/4, M)."""
        lo = max(1, self.M // 4)
        m = np.arange(lo, self.M)
        gaps = self.gaps[lo:]
        fit = np.polyfit(np.log(m.astype(float)), np.log(gaps), 1)
        return float(fit[0])

    def validate(self):
        if np.any(np.diff(self.eigenvalues) < -1e-9 * max(1.0, self.eigenvalues[-1])):
            raise BasisError("eigenvalues not ascending")
        if self.domain.boundary == DIRICHLET and np.any(self.ground_state <= 0):
            raise BasisError("Dirichlet ground state not positive on the grid")
        res = self.orthonormality_residual()
        if res > ORTHO_TOL:
            raise BasisError(f"orthonormality residual {res:.3e} above {ORTHO_TOL}")
        total = float(np.sum(self.weights))
        if abs(total - 1.0) > 1e-12:
            raise BasisError(f"quadrature mass {total} differs from 1")
        return self

    # ---- serialization ----------------------------------------------

    def to_dict(self) -> dict:
        doc = {
            "schema": "condemp.basis/1",
            "domain": self.domain.to_dict(),
            "eigenvalues": self.eigenvalues.tolist(),
            "grid": self.grid.tolist(),
            "weights": self.weights.tolist(),
            "mu_lebesgue": self.mu_lebesgue.tolist(),
            "eigenfunctions": self.eigenfunctions.tolist(),
            "sup_norms": self.sup_norms.tolist(),
            "ratio_sups": self.ratio_sups.tolist(),
            "analytic": self.analytic,
        }
        if self.mode_indices is not None:
            doc["mode_indices"] = [list(t) for t in self.mode_indices]
        return doc

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, doc: dict) -> "SpectralBasis":
        if doc.get("schema") != "condemp.basis/1":
            raise BasisError(f"unsupported basis document schema {doc.get('schema')!r}")
        basis = cls(
            domain=Domain.from_dict(doc["domain"]),
            eigenvalues=np.asarray(doc["eigenvalues"], dtype=float),
            grid=np.asarray(doc["grid"], dtype=float),
            weights=np.asarray(doc["weights"], dtype=float),
            mu_lebesgue=np.asarray(doc["mu_lebesgue"], dtype=float),
            eigenfunctions=np.asarray(doc["eigenfunctions"], dtype=float),
            sup_norms=np.asarray(doc["sup_norms"], dtype=float),
            ratio_sups=np.asarray(doc["ratio_sups"], dtype=float),
            analytic=bool(doc["analytic"]),
            mode_indices=[tuple(t) for t in doc["mode_indices"]] if "mode_indices" in doc else None,
        )
        return basis.validate()

    @classmethod
    def load(cls, path) -> "SpectralBasis":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _axis_mode(k: int, u: np.ndarray, boundary: str) -> np.ndarray:
    if boundary == DIRICHLET:
        return np.sqrt(2.0) * np.sin(k * np.pi * u)
    if k == 0:
        return np.ones_like(u)
    return np.sqrt(2.0) * np.cos(k * np.pi * u)


def _axis_ratio(k: int, u: np.ndarray) -> np.ndarray:
    """sin(k pi u)/sin(pi u) with its values at the faces filled in."""
    out = np.empty_like(u)
    inner = (u > 0.0) & (u < 1.0)
    out[inner] = np.sin(k * np.pi * u[inner]) / np.sin(np.pi * u[inner])
    out[u <= 0.0] = k
    out[u >= 1.0] = k * (-1.0) ** (k + 1)
    return out


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------

def build_analytic_basis(domain: Domain, M: int, n_quad: int | None = None) -> SpectralBasis:
    """Closed-form basis on an interval or rectangle with zero potential."""
    if M < 1:
        raise BasisError("need at least one mode")
    if domain.potential is not None:
        raise BasisError("analytic basis requires zero potential; use solve_sturm_liouville")
    if domain.kind == "interval":
        a, b = domain.bounds
        L = b - a
        if n_quad is None:
            n_quad = 4 * M + 64
        x, wl = gauss_legendre(n_quad, a, b)
        mu_leb = np.full(n_quad, 1.0 / L)
        w = wl * mu_leb
        w /= w.sum()
        lam = analytic_eigenvalues(domain, M)
        basis = SpectralBasis(
            domain=domain, eigenvalues=lam, grid=x, weights=w, mu_lebesgue=mu_leb,
            eigenfunctions=np.empty((0, 0)), sup_norms=np.empty(0),
            ratio_sups=np.empty(0), analytic=True)
        basis.eigenfunctions = basis._eval_analytic(x, np.arange(M))
        if domain.boundary == DIRICHLET:
            basis.sup_norms = np.full(M, np.sqrt(2.0))
            basis.ratio_sups = np.arange(1, M + 1, dtype=float)
        else:
            basis.sup_norms = np.full(M, np.sqrt(2.0))
            basis.sup_norms[0] = 1.0
            basis.ratio_sups = basis.sup_norms.copy()
        return basis.validate()

    # rectangle
    a, b, c, d = domain.bounds
    lam, indices = _rectangle_mode_table(domain, M)
    kmax = max(max(i, j) for i, j in indices)
    n1 = max(2 * kmax + 24, 32) if n_quad is None else n_quad
    x1, w1 = gauss_legendre(n1, a, b)
    y1, w2 = gauss_legendre(n1, c, d)
    X, Y = np.meshgrid(x1, y1, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    area = (b - a) * (d - c)
    wl = np.outer(w1, w2).ravel()
    mu_leb = np.full(pts.shape[0], 1.0 / area)
    w = wl * mu_leb
    w /= w.sum()
    basis = SpectralBasis(
        domain=domain, eigenvalues=lam, grid=pts, weights=w, mu_lebesgue=mu_leb,
        eigenfunctions=np.empty((0, 0)), sup_norms=np.empty(0),
        ratio_sups=np.empty(0), analytic=True, mode_indices=indices)
    basis.eigenfunctions = basis._eval_analytic(pts, np.arange(M))
    if domain.boundary == DIRICHLET:
        basis.sup_norms = np.full(M, 2.0)
        basis.ratio_sups = np.array([float(i * j) for i, j in indices])
    else:
        basis.sup_norms = np.array([(np.sqrt(2.0) if i else 1.0) * (np.sqrt(2.0) if j else 1.0)
                                    for i, j in indices])
        basis.ratio_sups = basis.sup_norms.copy()
    return basis.validate()


def _sl_eigen_1d(domain: Domain, M: int, n: int):
    """Lowest M eigenpairs of the symmetrized finite-difference operator.

    Dirichlet uses interior nodes a + i h (i = 1..n-1) with zero boundary
    values; Neumann uses cell centers with zero-flux faces.  The generalized
    problem A f = lambda diag(e^V) f is reduced with the diagonal similarity
    D^{1/2}, which keeps the matrix exactly symmetric tridiagonal.
    """
    a, b = domain.bounds
    L = b - a
    h = L / n
    if domain.boundary == DIRICHLET:
        nodes = a + h * np.arange(1, n)
        face_x = a + h * np.arange(n) + 0.5 * h            # a+h/2, ..., b-h/2 (n faces)
        ev_face = np.exp(domain.potential_values(face_x))
        ev_node = np.exp(domain.potential_values(nodes))
        diag = (ev_face[:-1] + ev_face[1:]) / (h * h * ev_node)
        off = -ev_face[1:-1] / (h * h * np.sqrt(ev_node[:-1] * ev_node[1:]))
    else:
        nodes = a + h * (np.arange(n) + 0.5)
        face_x = a + h * np.arange(1, n)                   # interior faces only
        ev_face = np.exp(domain.potential_values(face_x))
        ev_node = np.exp(domain.potential_values(nodes))
        diag = np.zeros(n)
        diag[:-1] += ev_face / ev_node[:-1]
        diag[1:] += ev_face / ev_node[1:]
        diag /= h * h
        off = -ev_face / (h * h * np.sqrt(ev_node[:-1] * ev_node[1:]))
    try:
        lam, vec = eigh_tridiagonal(diag, off, select="i", select_range=(0, M - 1))
    except np.linalg.LinAlgError as exc:   # pragma: no cover - LAPACK failure
        raise BasisError(f"eigen-iteration failed to converge: {exc}") from exc
    f = vec / np.sqrt(ev_node)[:, None]     # undo the similarity
    return lam, nodes, f


def solve_sturm_liouville(domain: Domain, M: int, n_grid: int,
                          richardson: bool = True) -> SpectralBasis:
    """Numeric interval basis for f'' + V' f' = -lambda f in L^2(mu).

    Eigenvalues from the symmetric finite-difference problem at n_grid and
    2 n_grid are Richardson-combined (the h^2 error term cancels);
    eigenfunctions come from the fine grid, are interpolated onto an interior
    Gauss grid and re-orthonormalized against the quadrature inner product.
    """
    if domain.kind != "interval":
        raise BasisError("Sturm-Liouville solver handles intervals only")
    if M < 1:
        raise BasisError("need at least one mode")
    if n_grid < 8 * M:
        raise BasisError(f"n_grid={n_grid} too coarse for M={M} (need n_grid >= 8 M)")
    if domain.potential is not None and domain.potential.nodes.size < 16:
        raise BasisError("potential tabulation too coarse (need >= 16 nodes)")

    lam_c, _, _ = _sl_eigen_1d(domain, M, n_grid)
    lam_f, nodes, f = _sl_eigen_1d(domain, M, 2 * n_grid)
    lam = (4.0 * lam_f - lam_c) / 3.0 if richardson else lam_f
    if domain.boundary == NEUMANN:
        lam[0] = max(lam[0], 0.0) if abs(lam[0]) < 1e-7 else lam[0]
    scale = max(1.0, float(abs(lam[-1])))
    if np.any(np.diff(lam) < -1e-9 * scale):
        raise BasisError("eigenvalue crossing detected beyond tolerance")

    a, b = domain.bounds
    if domain.boundary == DIRICHLET:
        xs = np.concatenate([[a], nodes, [b]])
        fs = np.vstack([np.zeros((1, M)), f, np.zeros((1, M))])
    else:
        xs, fs = nodes, f

    n_quad = 4 * M + 64
    xg, wl = gauss_legendre(n_quad, a, b)
    V = domain.potential_values(xg)
    mu_leb = np.exp(V)
    Z = float(np.dot(wl, mu_leb))
    mu_leb = mu_leb / Z
    w = wl * mu_leb
    w /= w.sum()

    phi = np.empty((M, n_quad))
    for m in range(M):
        phi[m] = CubicSpline(xs, fs[:, m])(xg)

    # exact orthonormality w.r.t. the quadrature inner product
    G = (phi * w) @ phi.T
    evals, evecs = eigh(G)
    if np.any(evals <= 0):
        raise BasisError("Gram matrix of interpolated modes not positive definite")
    G_inv_half = (evecs / np.sqrt(evals)) @ evecs.T
    phi = G_inv_half @ phi

    for m in range(M):
        s = _sign_first_extremum(xg, phi[m]) if m else np.sign(np.sum(phi[0] * w))
        if s < 0:
            phi[m] = -phi[m]
    if domain.boundary == DIRICHLET and np.any(phi[0] <= 0):
        raise BasisError("ground state changed sign after discretization")

    basis = SpectralBasis(
        domain=domain, eigenvalues=lam, grid=xg, weights=w, mu_lebesgue=mu_leb,
        eigenfunctions=phi, sup_norms=np.max(np.abs(phi), axis=1),
        ratio_sups=np.max(np.abs(phi / phi[0]), axis=1), analytic=False)
    return basis.validate()


def _sign_first_extremum(x: np.ndarray, v: np.ndarray) -> float:
    dv = np.diff(v)
    sign_change = np.nonzero(dv[:-1] * dv[1:] < 0)[0]
    if sign_change.size:
        return float(np.sign(v[sign_change[0] + 1]))
    return float(np.sign(v[np.argmax(np.abs(v))]))


# ---------------------------------------------------------------------------
# projections
# ---------------------------------------------------------------------------

def project(measure: InitialDistribution, basis: SpectralBasis) -> ModeCoefficients:
    """Coefficients <measure, phi_m> by quadrature or point evaluation."""
    kind = measure.kind
    if kind == "point":
        x0 = measure.point
        if basis.domain.boundary == DIRICHLET:
            # killed case: a boundary start dies instantly
            if not basis.domain.contains_interior(x0):
                raise ProjectionError(f"point mass at {x0} is not interior to the domain")
        else:
            p = np.atleast_1d(np.asarray(x0, dtype=float))
            bnds = basis.domain.bounds
            inside = bnds[0] <= p[0] <= bnds[1]
            if basis.domain.dim == 2:
                inside = inside and bnds[2] <= p[1] <= bnds[3]
            if not inside:
                raise ProjectionError(f"point mass at {x0} lies outside the domain")
        vals = basis.eval_modes(np.atleast_2d(x0) if basis.domain.dim == 2 else [float(np.atleast_1d(x0)[0])])
        return ModeCoefficients(vals[:, 0], source=measure.label())

    if kind == "density_mu":
        h = measure.density_on(basis.grid)
        _validate_density(h, basis.weights, what="density w.r.t. mu")
        coeffs = basis.eigenfunctions @ (h * basis.weights)
        return ModeCoefficients(coeffs, source=measure.label())

    if kind == "grid_density":
        # raw Lebesgue density tabulated on the measure's own nodes
        h_leb = measure.density_on(basis.grid)
        h = h_leb / basis.mu_lebesgue
        _validate_density(h, basis.weights, what="grid density")
        coeffs = basis.eigenfunctions @ (h * basis.weights)
        return ModeCoefficients(coeffs, source=measure.label())

    raise ProjectionError(f"unknown initial distribution kind {kind!r}")


def _validate_density(h: np.ndarray, weights: np.ndarray, what: str):
    if np.min(h) < -1e-12:
        raise ProjectionError(f"{what} has negative values (min {np.min(h):.3e})")
    mass = float(np.dot(h, weights))
    if abs(mass - 1.0) > 1e-8:
        raise ProjectionError(f"{what} mass {mass} differs from 1 beyond 1e-8")


def mu_coefficients(basis: SpectralBasis) -> ModeCoefficients:
    """Coefficients mu(phi_m) of the reference measure itself."""
    coeffs = basis.eigenfunctions @ basis.weights
    mc = ModeCoefficients(coeffs, source="mu")
    if mc.sum_of_squares() > 1.0 + 1e-8:
        raise ProjectionError(
            f"sum of squared mu-coefficients {mc.sum_of_squares():.12f} exceeds 1")
    return mc


# ---------------------------------------------------------------------------
# growth diagnostics
# ---------------------------------------------------------------------------

@dataclass
class GrowthReport:
    sup_norms: np.ndarray
    ratio_sups: np.ndarray
    sup_exponent: float
    ratio_exponent: float
    ratio_bound_exponent: float
    fitted_constant: float
    violations: list

    def ok(self) -> bool:
        return not self.violations


def sup_norm_growth_report(basis: SpectralBasis) -> GrowthReport:
    """Fit growth exponents of sup|phi_m| and sup|phi_m/phi_0|.

    The ratio sups are checked against C m^{(d+2)/(2d)} with C fitted from
    the data; modes exceeding the fitted envelope by more than 20% are
    flagged.  Implied constants are empirical only.
    """
    if basis.M < 16:
        raise BasisError("growth report needs at least 16 modes")
    d = basis.domain.dim
    m = np.arange(1, basis.M, dtype=float)
    sup = basis.sup_norms[1:]
    rat = basis.ratio_sups[1:]
    lo = max(1, basis.M // 4)
    window = slice(lo - 1, basis.M - 1)
    sup_exp = float(np.polyfit(np.log(m[window]), np.log(sup[window]), 1)[0])
    ratio_exp = float(np.polyfit(np.log(m[window]), np.log(rat[window]), 1)[0])
    bound_exp = (d + 2.0) / (2.0 * d)
    # envelope constants checked leave-one-out on the asymptotic window, so
    # a smooth family never self-certifies but a gross outlier is caught
    r = rat[window] / m[window] ** bound_exp
    order = np.argsort(r)
    top1 = r[order[-1]]
    top2 = r[order[-2]] if r.size > 1 else top1
    bad = []
    for idx in range(r.size):
        ref = top2 if r[idx] == top1 else top1
        if r[idx] > 1.2 * ref:
            bad.append(int(lo + idx))
    return GrowthReport(
        sup_norms=basis.sup_norms.copy(), ratio_sups=basis.ratio_sups.copy(),
        sup_exponent=sup_exp, ratio_exponent=ratio_exp,
        ratio_bound_exponent=bound_exp, fitted_constant=float(top1),
        violations=bad)
