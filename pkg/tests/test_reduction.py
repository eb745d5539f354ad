import numpy as np
import pytest

from fracpeak import ConfigError, Field, energy, make_reduction_params, project
from fracpeak.gridcore import make_grid
from fracpeak.reduction import (
    ReducedSystem,
    admissibility_report,
    closed_form_dstar,
    exponent_crossing,
    varpi_lower_bound,
    varpi_lower_bounds,
    window_nonempty,
)


# ---------------------------------------------------------------------------
# exponent bookkeeping


def test_exponent_crossing_is_one_third():
    for N in (1, 2, 3, 4, 5):
        for s in np.linspace(max(N / 6.0, 0.01) + 1e-6, min(0.995, N / 2 - 1e-6), 13):
            w = exponent_crossing(N, s)
            assert w == pytest.approx(1.0 / 3.0, abs=1e-14)
            # sign flip around the crossing
            for off, sign in ((0.05, 1.0), (-0.05, -1.0)):
                diff = (N + (w + off) * (N + 4 * s)) - (N + 2 * s + (w + off) * (N - 2 * s))
                assert np.sign(diff) == sign


def test_window_nonempty_over_admissible_lattice():
    for N in (1, 2, 3, 4, 5):
        lo = max(N / 6.0, N / 8.0 + 1e-9)
        for s in np.linspace(lo + 1e-6, N / 2 - 1e-6, 19):
            if not (2 * s < N <= 6 * s and N < 8 * s and s < 1):
                continue
            pmax = (N + 2 * s) / (N - 2 * s)
            for p in np.linspace(1.01, pmax - 1e-6, 5):
                assert window_nonempty(N, s, p)


def test_canonical_lower_bounds():
    b = varpi_lower_bounds(1, 1 / 3, 2.0)
    assert b["coupling"] == pytest.approx(7.0 / 30.0)
    assert b["mass_outside"] == pytest.approx((7 / 3) / 12.0)
    assert varpi_lower_bound(1, 1 / 3, 2.0) == pytest.approx(7.0 / 30.0)


def test_admissibility_discrepancy_is_flagged_not_resolved():
    rep = admissibility_report()
    assert rep["disagree_count"] > 0
    assert rep["rule_used"] == "N <= 6s"
    assert rep["rule_printed"] == "N <= 6"
    # a concrete disagreeing point: allowed by the printed cap, rejected by
    # the rule the estimates need
    N, s = rep["disagree_examples"][0]
    assert 2 * s < N <= 6 and not (N <= 6 * s)


def test_reduction_params_validation(P0):
    rp = make_reduction_params(P0)
    assert 7.0 / 30.0 < rp.varpi < 1.0 / 3.0
    assert rp.kappa == pytest.approx((2 * P0.s + rp.zeta0 * (P0.N - 2 * P0.s)) / 2)
    lo, hi = rp.window(0.04)
    assert lo == pytest.approx(0.04 ** (1 - rp.varpi))
    assert hi == pytest.approx(0.04 ** (1 - rp.mu_exp))
    with pytest.raises(ConfigError, match="varpi"):
        make_reduction_params(P0, varpi=0.1)
    with pytest.raises(ConfigError, match="mu"):
        make_reduction_params(P0, mu_exp=0.2)
    with pytest.raises(ConfigError, match="zeta0"):
        make_reduction_params(P0, zeta0=0.2)


def test_closed_form_minimizer_matches_numerical_and_is_order_free():
    from scipy.optimize import minimize_scalar

    for s, c1, c2 in ((1 / 3, 0.5, 2.4), (0.2, 1.1, 0.7), (0.45, 0.3, 5.0)):
        N = 1
        eps = 0.02

        def f(d):
            return c1 * eps**N * (eps / d) ** (N + 4 * s) - c2 * eps ** (
                2 * N
            ) * d ** -(N - 2 * s)

        d_cf = closed_form_dstar(c1, c2, N, s, eps)
        res = minimize_scalar(f, bounds=(d_cf / 30, min(30 * d_cf, 0.9)), method="bounded")
        assert d_cf == pytest.approx(res.x, rel=1e-5)
        # the eps exponent is two thirds for every order
        assert closed_form_dstar(c1, c2, N, s, 2 * eps) / d_cf == pytest.approx(
            2.0 ** (2.0 / 3.0), rel=1e-12
        )


# ---------------------------------------------------------------------------
# reduced system at one point


@pytest.fixture(scope="module")
def sys25(P0, op16, gs):
    return ReducedSystem(P0.with_eps(0.025), op16, gs, 1.0 - 0.1)


def test_tangent_projection_idempotent(sys25):
    rng = np.random.default_rng(20)
    v = rng.standard_normal(sys25.m)
    once = sys25.proj_E(v)
    np.testing.assert_allclose(sys25.proj_E(once), once, atol=1e-12 * np.max(np.abs(once)))
    assert abs(sys25.inner(once, sys25.Z)) < 1e-10 * sys25.norm(once) * sys25.norm(sys25.Z)


def test_tangent_finite_difference_crosscheck(P0, op16, gs):
    sy = ReducedSystem(P0.with_eps(0.025), op16, gs, 1.0 - 0.1, fd_check=True)
    assert sy.fd_rel_err is not None and sy.fd_rel_err < 0.01
    assert sy.gram > 0


def test_tangent_is_translation_derivative_in_free_limit(P0, gs):
    from fracpeak.groundstate import rescale_derivative

    g = make_grid(8.0, 2048, (-7.0, 7.0))
    from fracpeak import build_domain_operator

    op = build_domain_operator(g, P0)
    P = P0.with_eps(0.1)
    sy = ReducedSystem(P, op, gs, 0.0)
    dxi = rescale_derivative(gs, P, sy.R.xi, g).values[op.interior]
    num = sy.norm(sy.Z - dxi)
    assert num < 0.01 * sy.norm(dxi)


def test_residual_functional_lies_in_tangent_complement(sys25):
    assert abs(sys25.inner(sys25.l, sys25.Z)) < 1e-8 * sys25.l_norm * sys25.norm(sys25.Z)


def test_reduced_operator_symmetric_and_bounded(sys25):
    rng = np.random.default_rng(21)
    w1 = sys25.proj_E(rng.standard_normal(sys25.m))
    w2 = sys25.proj_E(rng.standard_normal(sys25.m))
    a12 = sys25.inner(sys25.apply_A(w1), w2)
    a21 = sys25.inner(sys25.apply_A(w2), w1)
    assert a12 == pytest.approx(a21, rel=1e-8)
    assert np.max(np.abs(sys25.apply_A(np.zeros(sys25.m)))) == 0.0
    norms = []
    for _ in range(5):
        w = sys25.proj_E(rng.standard_normal(sys25.m))
        norms.append(sys25.norm(sys25.apply_A(w)) / sys25.norm(w))
    assert max(norms) < 3.0


def test_coercivity_projection_lifts_floor(sys25):
    co = sys25.coercivity()
    assert co.tau_min > 0
    assert co.unprojected_min < 0.8 * co.tau_min
    assert co.null_mode_overlap > 0.99


def test_corrector_zero_data_fixed_point(sys25):
    corr = sys25.solve_corrector(force_zero_l=True)
    assert corr.norm_eps == 0.0
    assert corr.converged


def test_corrector_converges_and_is_unique(P0, op16, gs, rparams):
    eps = 0.025
    d = 1.02 * eps ** (1 - rparams.varpi)
    sy = ReducedSystem(P0.with_eps(eps), op16, gs, 1.0 - d)
    c0 = sy.solve_corrector()
    assert c0.converged
    assert c0.contraction_factor < 1.0
    assert c0.constraint_ok
    rng = np.random.default_rng(22)
    pert = sy.proj_E(rng.standard_normal(sy.m))
    pert *= 0.05 * eps**0.5 / sy.norm(pert)
    c1 = sy.solve_corrector(start=pert)
    dist = sy.norm(c0.omega.values[sy.ii] - c1.omega.values[sy.ii])
    assert dist < 1e-8 * eps ** (P0.N / 2.0)


def test_energy_functional_basics(P0, op16, gs):
    g = op16.grid
    zero = Field.zero_outside(g, np.zeros(g.n))
    assert energy(P0, op16, zero) == 0.0
    with pytest.warns(UserWarning, match="negative part"):
        energy(P0, op16, Field.zero_outside(g, -np.where(g.mask, 1.0, 0.0)))


def test_energy_positive_and_halving_scale(P0, op16, gs):
    vals = {}
    for eps in (0.05, 0.1):
        P = P0.with_eps(eps)
        R = project(P, op16, gs, 1.0 - eps**0.8)
        vals[eps] = energy(P, op16, R.PU)
    assert vals[0.05] > 0 and vals[0.1] > 0
    assert abs(vals[0.05] / vals[0.1] - 0.5) < 0.1


def test_reduced_energy_with_zero_corrector(P0, op16, gs, sys25):
    from fracpeak.reduction import Corrector, reduced_energy

    P = P0.with_eps(0.025)
    zero = Corrector(
        omega=sys25.as_field(np.zeros(sys25.m)),
        norm_eps=0.0, iterations=0, contraction_factor=0.0,
        constraint_ok=True, converged=True, method="picard", flags={},
    )
    assert reduced_energy(P, op16, sys25.R, zero) == pytest.approx(
        energy(P, op16, sys25.R.PU), rel=1e-14
    )
