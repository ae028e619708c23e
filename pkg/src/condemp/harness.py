"""Experiment runner: convergence studies, sandwich reports, MC cross-checks.

Configurations are versioned JSON documents with a closed key set; every
emitted row carries its provenance (mode cutoff, tail bound, method tag,
seed).  Reports are deterministic given (config, seed).
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .domains import DIRICHLET, NEUMANN, Domain
from .limits import LimitReport, compute_I, compute_I_neumann
from .measures import GridMeasure, InitialDistribution
from .mc import (PathEnsembleSummary, SimulationConfig, conditional_empirical_w2,
                 simulate)
from .semigroup import (ConditionalDensity, conditional_density,
                        mean_empirical_density, rho_tilde, survival_probability)
from .spectral import (ModeCoefficients, SpectralBasis, build_analytic_basis,
                       mu_coefficients, project, solve_sturm_liouville)
from .transport import (h_minus1_upper_bound, kantorovich_dual_lower,
                        w1_grid_1d, w2_entropic, w2_exact_discrete,
                        w2_quantile_1d)

__all__ = ["ConfigError", "ExperimentConfig", "ConvergenceReport",
           "run_convergence", "run_sandwich", "run_mc_crosscheck",
           "spectral_measure", "mu0_measure", "resolve_nu"]

CONFIG_VERSION = "1"

_ALLOWED_KEYS = {
    "version", "domain", "nu", "times", "modes", "modes_limit", "tol",
    "w2_method", "n_quantiles", "grid_nodes", "sl_grid", "mc", "seed", "out",
}
_ALLOWED_MC_KEYS = {
    "dt", "n_paths", "islands", "resample", "n_bins", "checkpoints",
    "horizon", "slope_times",
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    domain: Domain
    nu_spec: dict
    times: list
    modes: int = 128
    modes_limit: int | None = None
    tol: float = 1e-8
    w2_method: str = "quantile1d"
    n_quantiles: int = 100_000
    grid_nodes: int = 8193
    sl_grid: int | None = None
    mc: dict = field(default_factory=dict)
    seed: int = 20240915
    out: str | None = None

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        unknown = set(doc) - _ALLOWED_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if doc.get("version") != CONFIG_VERSION:
            raise ConfigError(f"unrecognized config version {doc.get('version')!r}; "
                              f"expected {CONFIG_VERSION!r}")
        if "domain" not in doc:
            raise ConfigError("config needs a domain")
        mc = doc.get("mc", {}) or {}
        unknown_mc = set(mc) - _ALLOWED_MC_KEYS
        if unknown_mc:
            raise ConfigError(f"unknown mc keys: {sorted(unknown_mc)}")
        times = [float(t) for t in doc.get("times", [2.0, 4.0, 8.0, 16.0])]
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise ConfigError("time grid must be strictly increasing")
        return cls(
            domain=Domain.from_dict(doc["domain"]),
            nu_spec=doc.get("nu", {"kind": "mu"}),
            times=times,
            modes=int(doc.get("modes", 128)),
            modes_limit=int(doc["modes_limit"]) if "modes_limit" in doc else None,
            tol=float(doc.get("tol", 1e-8)),
            w2_method=str(doc.get("w2_method", "quantile1d")),
            n_quantiles=int(doc.get("n_quantiles", 100_000)),
            grid_nodes=int(doc.get("grid_nodes", 8193)),
            sl_grid=int(doc["sl_grid"]) if "sl_grid" in doc else None,
            mc=mc,
            seed=int(doc.get("seed", 20240915)),
            out=doc.get("out"),
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        if not os.path.exists(path):
            raise ConfigError(f"config file {path} does not exist")
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def build_basis(self) -> SpectralBasis:
        if self.domain.potential is None:
            return build_analytic_basis(self.domain, self.modes)
        n_grid = self.sl_grid or max(8 * self.modes, 2000)
        return solve_sturm_liouville(self.domain, self.modes, n_grid)


def resolve_nu(spec: dict, basis: SpectralBasis) -> InitialDistribution:
    kind = spec.get("kind", "mu")
    if kind == "mu":
        return InitialDistribution.from_mu()
    if kind == "mu0":
        phi0sq = basis.ground_state**2
        return InitialDistribution(kind="density_mu", density=phi0sq.copy(),
                                   nodes=basis.grid.copy(), name="mu0")
    if kind == "point":
        return InitialDistribution.from_point(spec["x"])
    if kind == "density_mu":
        return InitialDistribution(kind="density_mu",
                                   density=np.asarray(spec["values"], dtype=float),
                                   nodes=np.asarray(spec["nodes"], dtype=float),
                                   name=spec.get("name", "density"))
    raise ConfigError(f"unknown nu kind {kind!r}")


# ---------------------------------------------------------------------------
# spectral measures on a fine grid
# ---------------------------------------------------------------------------

def _mu_lebesgue_fine(basis: SpectralBasis, x: np.ndarray) -> np.ndarray:
    dom = basis.domain
    if dom.potential is None:
        return np.full(x.shape, 1.0 / dom.lengths[0])
    V = dom.potential_values(x)
    Vg = dom.potential_values(basis.grid)
    Z = float(np.dot(np.exp(Vg), basis.weights / basis.mu_lebesgue))
    return np.exp(V) / Z


def mu0_measure(basis: SpectralBasis, n_nodes: int = 8193) -> GridMeasure:
    """The limit measure phi_0^2 mu as a grid measure (Lebesgue density)."""
    a, b = basis.domain.bounds[:2]
    x = np.linspace(a, b, n_nodes)
    phi0 = basis.eval_modes(x, modes=[0])[0]
    dens = np.maximum(phi0, 0.0) ** 2 * _mu_lebesgue_fine(basis, x)
    return GridMeasure.normalized(x, dens, name="mu0")


def spectral_measure(cd: ConditionalDensity, basis: SpectralBasis,
                     n_nodes: int = 8193) -> GridMeasure:
    """h_t mu_0 as a grid measure on a uniform fine grid."""
    a, b = basis.domain.bounds[:2]
    x = np.linspace(a, b, n_nodes)
    h = cd.evaluate(x)
    phi0 = basis.eval_modes(x, modes=[0])[0]
    dens = np.maximum(h, 0.0) * phi0**2 * _mu_lebesgue_fine(basis, x)
    return GridMeasure.normalized(x, dens, name=f"mu_t(t={cd.t:g})")


def mean_occupation_measure(nu_c, basis: SpectralBasis, t: float,
                            n_nodes: int = 8193) -> GridMeasure:
    """Reflecting-case time-averaged occupation as a grid measure."""
    a, b = basis.domain.bounds[:2]
    x = np.linspace(a, b, n_nodes)
    h = mean_empirical_density(nu_c, basis, t, x=x)
    dens = np.maximum(h, 0.0) * _mu_lebesgue_fine(basis, x)
    return GridMeasure.normalized(x, dens, name=f"mean_occ(t={t:g})")


def _w2_by_method(method: str, m1: GridMeasure, m2: GridMeasure,
                  n_quantiles: int):
    if method == "quantile1d":
        return w2_quantile_1d(m1, m2, n_quantiles=n_quantiles)
    if method == "exact-discrete":
        x1, a1 = m1.atomize(384)
        x2, a2 = m2.atomize(384)
        return w2_exact_discrete(x1, a1, x2, a2, keep_plan=False)
    if method == "entropic":
        return w2_entropic(m1, m2)
    raise ConfigError(f"unknown w2 method {method!r}")


# ---------------------------------------------------------------------------
# convergence study
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceReport:
    rows: list
    limit: LimitReport
    gap_exponent: float
    gap_coefficient: float
    gap_monotone_tail: bool
    seed: int
    boundary: str

    def to_dict(self) -> dict:
        return {
            "schema": "condemp.convergence/1",
            "rows": self.rows,
            "I": self.limit.I_value,
            "I_tail_bound": self.limit.tail_bound,
            "gap_exponent": self.gap_exponent,
            "gap_coefficient": self.gap_coefficient,
            "gap_monotone_tail": self.gap_monotone_tail,
            "seed": self.seed,
            "boundary": self.boundary,
        }

    def save(self, out_dir, stem: str = "convergence"):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, stem + ".json"), "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
        cols = ["t", "w2", "t2w2sq", "I", "rel_gap", "upper", "lower",
                "method", "w2_error", "tail_bound", "modes", "seed"]
        with open(os.path.join(out_dir, stem + ".csv"), "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols)
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: row.get(k, "") for k in cols})


def _neumann_limit(config: ExperimentConfig, basis: SpectralBasis) -> LimitReport:
    M_I = config.modes_limit or max(config.modes, 2000)
    dom = config.domain
    kind = config.nu_spec.get("kind", "mu")
    if kind == "point" and dom.potential is None:
        from .spectral import analytic_eigenvalues
        lam = analytic_eigenvalues(dom, M_I)
        a, b = dom.bounds
        u = (float(config.nu_spec["x"]) - a) / (b - a)
        m = np.arange(M_I)
        nu_c = np.sqrt(2.0) * np.cos(m * np.pi * u)
        nu_c[0] = 1.0
        return compute_I_neumann(nu_c, lam, tol=max(config.tol, 1e-9))
    nu = resolve_nu(config.nu_spec, basis)
    nu_c = project(nu, basis)
    return compute_I_neumann(nu_c.values, basis.eigenvalues, tol=max(config.tol, 1e-9))


def _dirichlet_limit(config: ExperimentConfig, basis: SpectralBasis,
                     nu_c: ModeCoefficients, mu_c: ModeCoefficients,
                     nu: InitialDistribution) -> LimitReport:
    l2 = None
    if nu.kind == "density_mu":
        h = nu.density_on(basis.grid)
        l2 = float(np.dot(h * h, basis.weights))
    elif nu.kind == "mu" or nu.name == "mu":
        l2 = 1.0
    return compute_I(nu_c.values, mu_c.values, basis.eigenvalues,
                     tol=config.tol, d=basis.domain.dim, nu_l2_bound=l2)


def run_convergence(config: ExperimentConfig) -> ConvergenceReport:
    """t^2 W2(mu_t, limit)^2 against the eigenseries constant, per time."""
    basis = config.build_basis()
    boundary = basis.domain.boundary
    rows = []

    if boundary == NEUMANN:
        limit = _neumann_limit(config, basis)
        nu = resolve_nu(config.nu_spec, basis)
        nu_c = project(nu, basis)
        reference = mu0_measure(basis, config.grid_nodes)   # phi_0 = 1: this is mu
        for t in config.times:
            occ = mean_occupation_measure(nu_c, basis, t, config.grid_nodes)
            res = _w2_by_method(config.w2_method, occ, reference, config.n_quantiles)
            t2w2 = t * t * res.w2_squared
            rows.append({
                "t": t, "w2": res.w2, "t2w2sq": t2w2, "I": limit.I_value,
                "rel_gap": t2w2 / limit.I_value - 1.0 if limit.I_value else np.nan,
                "method": res.method, "w2_error": res.error_estimate,
                "tail_bound": limit.tail_bound, "modes": basis.M,
                "seed": config.seed,
            })
    elif boundary == DIRICHLET:
        nu = resolve_nu(config.nu_spec, basis)
        mu_c = mu_coefficients(basis)
        nu_c = project(nu, basis)
        limit = _dirichlet_limit(config, basis, nu_c, mu_c, nu)
        reference = mu0_measure(basis, config.grid_nodes)
        for t in config.times:
            cd = conditional_density(nu, basis, t, target_tol=config.tol)
            mt = spectral_measure(cd, basis, config.grid_nodes)
            res = _w2_by_method(config.w2_method, mt, reference, config.n_quantiles)
            t2w2 = t * t * res.w2_squared
            rows.append({
                "t": t, "w2": res.w2, "t2w2sq": t2w2, "I": limit.I_value,
                "rel_gap": t2w2 / limit.I_value - 1.0 if limit.I_value else np.nan,
                "method": res.method, "w2_error": res.error_estimate,
                "tail_bound": cd.truncation.tail_estimate, "modes": basis.M,
                "seed": config.seed,
            })
    else:   # pragma: no cover
        raise ConfigError(f"unsupported boundary {boundary!r}")

    gaps = np.array([abs(r["rel_gap"]) for r in rows])
    ts = np.array([r["t"] for r in rows])
    ok = gaps > 0
    if ok.sum() >= 2:
        slope, logc = np.polyfit(np.log(ts[ok]), np.log(gaps[ok]), 1)
        exponent = -float(slope)
        coeff = float(np.exp(logc))
    else:
        exponent, coeff = np.nan, 0.0
    tail3 = gaps[-3:] if gaps.size >= 3 else gaps
    monotone = bool(np.all(np.diff(tail3) <= 1e-12))
    report = ConvergenceReport(rows=rows, limit=limit, gap_exponent=exponent,
                               gap_coefficient=coeff, gap_monotone_tail=monotone,
                               seed=config.seed, boundary=boundary)
    if config.out:
        report.save(config.out)
    return report


# ---------------------------------------------------------------------------
# sandwich report
# ---------------------------------------------------------------------------

def run_sandwich(config: ExperimentConfig, t: float) -> dict:
    """One row: certified lower bound <= W2^2 <= weighted-H^-1 upper bound."""
    basis = config.build_basis()
    if basis.domain.boundary != DIRICHLET:
        raise ConfigError("sandwich reports are for the killed case")
    nu = resolve_nu(config.nu_spec, basis)
    cd = conditional_density(nu, basis, t, target_tol=config.tol)
    mt = spectral_measure(cd, basis, config.grid_nodes)
    m0 = mu0_measure(basis, config.grid_nodes)
    res = w2_quantile_1d(mt, m0, n_quantiles=config.n_quantiles)
    upper = h_minus1_upper_bound(cd, basis)

    mu_c = mu_coefficients(basis)
    nu_c = project(nu, basis)
    rt = rho_tilde(nu_c, mu_c, basis, cd.t_effective or t)
    gaps = basis.gaps.copy()
    gaps[0] = 1.0
    f_coeffs = rt.coeffs / gaps
    f_coeffs[0] = 0.0
    a, b = basis.domain.bounds[:2]
    xs = np.linspace(a, b, 4097)
    f_vals = f_coeffs @ basis.eval_ratio(xs)
    lower = kantorovich_dual_lower(mt, m0, f_vals, f_nodes=xs)

    tol_combined = res.error_estimate + 1e-14 + abs(upper["coefficient_tail"])
    row = {
        "t": t,
        "lower": lower["lower_bound"],
        "w2sq": res.w2_squared,
        "upper": upper["upper_bound"],
        "w2": res.w2,
        "w2_error": res.error_estimate,
        "lower_slack": lower["conjugation_slack"],
        "upper_strip": upper["boundary_strip"],
        "excluded_nodes": upper["excluded_nodes"],
        "ordered": bool(lower["lower_bound"] <= res.w2_squared + tol_combined
                        and res.w2_squared <= upper["upper_bound"] + tol_combined),
        "modes": basis.M,
        "tail_bound": cd.truncation.tail_estimate,
        "seed": config.seed,
    }
    if not row["ordered"]:
        raise RuntimeError(f"sandwich ordering violated beyond tolerances: {row}")
    if config.out:
        os.makedirs(config.out, exist_ok=True)
        with open(os.path.join(config.out, f"sandwich_t{t:g}.json"), "w") as fh:
            json.dump(row, fh, indent=1)
    return row


# ---------------------------------------------------------------------------
# MC cross-check
# ---------------------------------------------------------------------------

def run_mc_crosscheck(config: ExperimentConfig) -> dict:
    """Spectral-vs-MC comparison: survival decay, occupation, two limits."""
    basis = config.build_basis()
    nu = resolve_nu(config.nu_spec, basis)
    mc_cfg = dict(config.mc)
    dt = float(mc_cfg.get("dt", 1e-3))
    n_paths = int(mc_cfg.get("n_paths", 100_000))
    n_bins = int(mc_cfg.get("n_bins", 256))
    islands = int(mc_cfg.get("islands", 24))
    horizon = float(mc_cfg.get("horizon", config.times[0]))
    out: dict = {"seed": config.seed, "dt": dt, "n_paths": n_paths,
                 "horizon": horizon}

    if basis.domain.boundary == NEUMANN:
        sim = simulate(SimulationConfig(
            domain=config.domain, dt=dt, horizon=horizon, n_paths=n_paths,
            seed=config.seed, initial=nu, boundary_rule="reflect",
            n_bins=n_bins))
        nu_c = project(nu, basis)
        ref = mean_occupation_measure(nu_c, basis, horizon, config.grid_nodes)
        occ = sim.occupation_measure()
        out["w1_occupation"] = w1_grid_1d(occ, ref)
        out["histogram_max_se"] = float(np.max(sim.stderr))
        if config.out:
            _dump(out, config.out, "mc_crosscheck.json")
        return out

    # killed case: survival slope on a feasible window
    slope_times = tuple(mc_cfg.get("slope_times", (0.2, 0.4, 0.6, 0.8)))
    slope_sim = simulate(SimulationConfig(
        domain=config.domain, dt=dt, horizon=max(slope_times),
        n_paths=n_paths, seed=config.seed, initial=nu,
        boundary_rule="kill", n_bins=n_bins, checkpoints=slope_times))
    counts = np.array([slope_sim.checkpoint_survival[t] * n_paths
                       for t in slope_times])
    ts = np.array(slope_times)
    good = counts > 0
    wls = np.polyfit(ts[good], np.log(counts[good]), 1, w=np.sqrt(counts[good]))
    out["survival_slope"] = float(wls[0])
    out["lambda0"] = float(basis.eigenvalues[0])
    out["slope_rel_err"] = abs(wls[0] + basis.eigenvalues[0]) / basis.eigenvalues[0]

    # occupation at the requested horizon; branch if direct killing is hopeless
    mu_c = mu_coefficients(basis)
    nu_c = project(nu, basis)
    expected = survival_probability(nu_c, mu_c, basis.eigenvalues, horizon)
    resample = bool(mc_cfg.get("resample", expected * n_paths < 1000))
    occ_sim = simulate(SimulationConfig(
        domain=config.domain, dt=dt, horizon=horizon, n_paths=n_paths,
        seed=config.seed + 1, initial=nu, boundary_rule="kill",
        resample=resample, n_bins=n_bins, islands=islands))
    out["resample"] = resample
    out["expected_survival"] = float(expected)

    cd = conditional_density(nu, basis, horizon, target_tol=config.tol)
    ref = spectral_measure(cd, basis, config.grid_nodes)
    occ = occ_sim.occupation_measure()
    out["w1_occupation"] = w1_grid_1d(occ, ref)
    res, se = conditional_empirical_w2(occ_sim, ref)
    out["w2_occupation"] = res.w2
    out["w2_bootstrap_se"] = se

    # two distinct conditioned limits on the same ensemble
    a, b = basis.domain.bounds[:2]
    x = np.linspace(a, b, config.grid_nodes)
    phi0 = basis.eval_modes(x, modes=[0])[0]
    leb = _mu_lebesgue_fine(basis, x)
    qe_dens = np.maximum(phi0, 0.0) * leb
    quasi_ergodic = GridMeasure.normalized(x, qe_dens, name="phi0*mu/mu(phi0)")
    final = occ_sim.final_measure()
    out["w1_final_vs_quasi_ergodic"] = w1_grid_1d(final, quasi_ergodic)
    out["w1_final_vs_mu0"] = w1_grid_1d(final, mu0_measure(basis, config.grid_nodes))
    out["w1_occupation_vs_quasi_ergodic"] = w1_grid_1d(occ, quasi_ergodic)
    if config.out:
        _dump(out, config.out, "mc_crosscheck.json")
    return out


def _dump(doc: dict, out_dir: str, name: str):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, name), "w") as fh:
        json.dump(doc, fh, indent=1)
