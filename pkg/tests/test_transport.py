import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from condemp import (build_analytic_basis, mu_coefficients, project,
                     unit_interval)
from condemp.measures import GridMeasure, InitialDistribution
from condemp.semigroup import conditional_density, rho_tilde
from condemp.transport import (TransportError, h_minus1_upper_bound,
                               kantorovich_dual_lower, logarithmic_mean,
                               export_plan_csv, w1_grid_1d, w2_entropic,
                               w2_exact_discrete, w2_quantile_1d)

X = np.linspace(0.0, 1.0, 2049)


def uniform():
    return GridMeasure(X, np.ones_like(X))


def mu0_measure(n=8193):
    x = np.linspace(0, 1, n)
    return GridMeasure.normalized(x, 2.0 * np.sin(np.pi * x) ** 2)


def bump(center, width=0.02, n=4097):
    x = np.linspace(0, 1, n)
    d = np.exp(-0.5 * ((x - center) / width) ** 2)
    return GridMeasure.normalized(x, d)


def random_measure(rng, n=2049):
    x = np.linspace(0, 1, n)
    d = 0.3 * np.ones(n)
    for _ in range(3):
        c, s, a = rng.uniform(0.15, 0.85), rng.uniform(0.05, 0.2), rng.uniform(0.3, 1.5)
        d += a * np.exp(-0.5 * ((x - c) / s) ** 2)
    return GridMeasure.normalized(x, d)


# ---------------------------------------------------------------------------
# quantile route
# ---------------------------------------------------------------------------

def test_quantile_identical_measures():
    res = w2_quantile_1d(uniform(), uniform(), n_quantiles=5000)
    assert res.w2 <= 1e-12


def test_quantile_translated_bumps():
    res = w2_quantile_1d(bump(0.25), bump(0.75), n_quantiles=20000)
    assert res.w2 == pytest.approx(0.5, abs=1e-8)


def test_quantile_uniform_vs_ground_limit():
    # independent oracle: dense Riemann sum over the quantile gap
    xf = np.linspace(0.0, 1.0, 1_000_001)
    F = xf - np.sin(2 * np.pi * xf) / (2 * np.pi)    # CDF of 2 sin^2(pi x)
    u = (np.arange(1_000_000) + 0.5) / 1_000_000
    q2 = np.interp(u, F, xf)
    oracle = float(np.mean((u - q2) ** 2))
    res = w2_quantile_1d(uniform(), mu0_measure(), n_quantiles=100_000)
    assert res.w2_squared == pytest.approx(oracle, abs=1e-8)


def test_quantile_rejects_corrupt_cdf():
    gm = uniform()
    gm._cdf_nodes = gm._cdf_nodes.copy()
    gm._cdf_nodes[100] = gm._cdf_nodes[99] - 1e-3    # corrupt the cache
    gm.cdf = lambda x: np.interp(x, gm.nodes, gm._cdf_nodes)
    with pytest.raises(TransportError):
        w2_quantile_1d(gm, uniform())


# ---------------------------------------------------------------------------
# exact discrete route
# ---------------------------------------------------------------------------

def test_exact_identical_atoms():
    x = np.linspace(0.1, 0.9, 32)
    w = np.full(32, 1.0 / 32)
    res = w2_exact_discrete(x, w, x, w)
    assert res.w2 <= 1e-9
    assert np.max(np.abs(res.plan - np.diag(w))) <= 1e-12


def test_exact_two_atom_forced_plan():
    res = w2_exact_discrete([0.0, 1.0], [0.5, 0.5], [0.5], [1.0])
    assert res.w2_squared == pytest.approx(0.25, abs=1e-12)


def test_exact_mass_mismatch_rejected():
    with pytest.raises(TransportError):
        w2_exact_discrete([0.0, 1.0], [0.5, 0.6], [0.5], [1.0])
    with pytest.raises(TransportError):
        w2_exact_discrete(np.linspace(0, 1, 600), np.full(600, 1 / 600),
                          [0.5], [1.0])


def test_exact_matches_quantile_on_occupation():
    basis = build_analytic_basis(unit_interval(), 64)
    cd = conditional_density(InitialDistribution.from_mu(), basis, 2.0)
    from condemp.harness import mu0_measure as m0_of, spectral_measure
    mt = spectral_measure(cd, basis, 4097)
    m0 = m0_of(basis, 4097)
    x1, a1 = mt.atomize(256)
    x2, a2 = m0.atomize(256)
    exact = w2_exact_discrete(x1, a1, x2, a2, keep_plan=False)
    quant = w2_quantile_1d(mt, m0, n_quantiles=50_000)
    spacing = 1.0 / 256
    assert abs(exact.w2 - quant.w2) <= spacing


def test_plan_export(tmp_path):
    res = w2_exact_discrete([0.0, 1.0], [0.5, 0.5], [0.25, 0.75], [0.5, 0.5])
    path = tmp_path / "plan.csv"
    export_plan_csv(res.plan, path)
    rows = path.read_text().splitlines()
    assert rows[0] == "i,j,mass"
    total = sum(float(r.split(",")[2]) for r in rows[1:])
    assert total == pytest.approx(1.0, abs=1e-10)


# ---------------------------------------------------------------------------
# entropic route
# ---------------------------------------------------------------------------

def test_entropic_identical():
    res = w2_entropic(uniform(), uniform(), eps_target=2e-3, atoms=192)
    assert res.w2_squared <= 1e-6


def test_entropic_matches_quantile_1d():
    m1 = bump(0.3, width=0.1, n=2049)
    m2 = bump(0.6, width=0.15, n=2049)
    quant = w2_quantile_1d(m1, m2, n_quantiles=20_000)
    ent = w2_entropic(m1, m2, eps_target=1e-3, atoms=384)
    tight = max(ent.details["dual_gap"], 1e-6)
    assert abs(ent.w2_squared - quant.w2_squared) <= tight
    assert abs(ent.w2_squared - quant.w2_squared) <= ent.error_estimate


def test_entropic_tensorization_rectangle():
    # product measures: squared distance adds over axes
    mx1, my1 = bump(0.3, 0.08, 513), bump(0.5, 0.1, 513)
    mx2, my2 = bump(0.6, 0.1, 513), bump(0.35, 0.09, 513)
    ax, wx = mx1.atomize(24)
    ay, wy = my1.atomize(24)
    bx, vx = mx2.atomize(24)
    by, vy = my2.atomize(24)
    s1 = np.column_stack([np.repeat(ax, ay.size), np.tile(ay, ax.size)])
    w1 = np.outer(wx, wy).ravel()
    s2 = np.column_stack([np.repeat(bx, by.size), np.tile(by, bx.size)])
    w2_ = np.outer(vx, vy).ravel()
    ent = w2_entropic((s1, w1), (s2, w2_), eps_target=2e-3)
    per_axis = (w2_quantile_1d(mx1, mx2, 20000).w2_squared
                + w2_quantile_1d(my1, my2, 20000).w2_squared)
    assert ent.w2_squared == pytest.approx(per_axis, abs=ent.error_estimate + 5e-4)


# ---------------------------------------------------------------------------
# weighted H^-1 upper bound
# ---------------------------------------------------------------------------

def test_upper_bound_zero_for_flat_density():
    basis = build_analytic_basis(unit_interval(), 32)
    out = h_minus1_upper_bound(np.ones(basis.grid.size), basis)
    assert out["upper_bound"] <= 1e-20


def test_upper_bound_single_mode_small_amplitude():
    basis = build_analytic_basis(unit_interval(), 32)
    gap1 = basis.gaps[1]
    for c in (1e-3, 1e-2):
        h = 1.0 + c * basis.ground_ratio[1]
        out = h_minus1_upper_bound(h, basis)
        leading = c * c / gap1
        assert abs(out["upper_bound"] - leading) <= 12.0 * c**3


def test_upper_bound_flags_negative_nodes():
    basis = build_analytic_basis(unit_interval(), 32)
    h = 1.0 + 1.2 * basis.ground_ratio[1]     # dips below zero
    out = h_minus1_upper_bound(h, basis)
    assert out["excluded_nodes"] > 0


# ---------------------------------------------------------------------------
# dual lower bound
# ---------------------------------------------------------------------------

def test_dual_lower_equal_measures_clamps():
    m = mu0_measure(2049)
    x = np.linspace(0, 1, 257)
    out = kantorovich_dual_lower(m, m, 0.05 * np.sin(2 * np.pi * x), f_nodes=x)
    assert out["raw_value"] <= 1e-12
    assert out["lower_bound"] == 0.0


def test_dual_lower_translated_bumps():
    m1 = bump(0.35, width=0.03)
    m2 = bump(0.65, width=0.03)
    x = np.linspace(0, 1, 257)
    out = kantorovich_dual_lower(m1, m2, -0.3 * x, f_nodes=x)
    exact = w2_exact_discrete(*m1.atomize(256), *m2.atomize(256),
                              keep_plan=False)
    assert out["lower_bound"] <= exact.w2_squared + exact.error_estimate
    assert abs(out["lower_bound"] - 0.09) <= 0.05 * 0.09


def test_dual_lower_near_tight_for_occupation():
    basis = build_analytic_basis(unit_interval(), 64)
    nu = InitialDistribution.from_mu()
    cd = conditional_density(nu, basis, 4.0)
    from condemp.harness import mu0_measure as m0_of, spectral_measure
    mt = spectral_measure(cd, basis, 8193)
    m0 = m0_of(basis, 8193)
    quant = w2_quantile_1d(mt, m0, n_quantiles=50_000)
    rt = rho_tilde(project(nu, basis), mu_coefficients(basis), basis, 4.0)
    gaps = basis.gaps.copy()
    gaps[0] = 1.0
    f_coeffs = rt.coeffs / gaps
    xs = np.linspace(0, 1, 4097)
    f_vals = f_coeffs @ basis.eval_ratio(xs)
    out = kantorovich_dual_lower(mt, m0, f_vals, f_nodes=xs)
    assert out["lower_bound"] <= quant.w2_squared * (1 + 1e-6)
    assert out["lower_bound"] >= (1.0 - 0.2) * quant.w2_squared


# ---------------------------------------------------------------------------
# cross-method and metric properties
# ---------------------------------------------------------------------------

def test_metric_axioms(rng):
    ms = [random_measure(rng) for _ in range(3)]
    d = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            d[i, j] = w2_quantile_1d(ms[i], ms[j], n_quantiles=20_000).w2
    assert np.max(np.abs(d - d.T)) <= 1e-9
    assert np.max(np.abs(np.diag(d))) <= 1e-10
    for i in range(3):
        for j in range(3):
            for k in range(3):
                assert d[i, j] <= d[i, k] + d[k, j] + 1e-8


def test_three_method_agreement(rng):
    for _ in range(3):
        m1, m2 = random_measure(rng), random_measure(rng)
        quant = w2_quantile_1d(m1, m2, n_quantiles=20_000)
        x1, a1 = m1.atomize(192)
        x2, a2 = m2.atomize(192)
        exact = w2_exact_discrete(x1, a1, x2, a2, keep_plan=False)
        ent = w2_entropic(m1, m2, eps_target=2e-3, atoms=192)
        tol_xq = quant.error_estimate + exact.error_estimate + 2 * 0.5 / 192
        assert abs(exact.w2_squared - quant.w2_squared) <= tol_xq
        assert abs(ent.w2_squared - quant.w2_squared) <= \
            ent.error_estimate + quant.error_estimate


@settings(max_examples=300, deadline=None)
@given(a=st.floats(1e-8, 1e8), b=st.floats(1e-8, 1e8))
def test_logarithmic_mean_bounds(a, b):
    m = float(logarithmic_mean(a, b))
    assert min(a, b) * (1 - 1e-12) <= m <= max(a, b) * (1 + 1e-12)


def test_logarithmic_mean_diagonal_and_zeros():
    assert float(logarithmic_mean(2.5, 2.5)) == 2.5
    assert float(logarithmic_mean(0.0, 1.0)) == 0.0
    vals = logarithmic_mean(np.array([1.0, 2.0]), np.array([1.0 + 1e-13, 0.5]))
    assert vals[0] == pytest.approx(1.0, rel=1e-12)


def test_gradient_matches_finite_differences():
    basis = build_analytic_basis(unit_interval(), 24)
    x = np.linspace(0.08, 0.92, 301)
    h = 1e-5
    analytic = basis.eval_ratio_deriv(x)
    fd = (basis.eval_ratio(x + h) - basis.eval_ratio(x - h)) / (2 * h)
    assert np.max(np.abs(analytic - fd)) <= 1e-4 * np.max(np.abs(analytic))


def test_w1_distance():
    m1 = uniform()
    m2 = bump(0.5, width=0.05)
    assert w1_grid_1d(m1, m1) <= 1e-12
    oracle = np.trapezoid(np.abs(m1.cdf(X) - m2.cdf(X)), X)
    assert w1_grid_1d(m1, m2) == pytest.approx(oracle, abs=1e-6)
