import numpy as np
import pytest

from fracpeak import Field, NumericalError, project, tau_boundary, tau_direct
from fracpeak.gridcore import FREE, make_grid
from fracpeak.fracops import bilinear_form, build_domain_operator
from fracpeak.projection import (
    cross_term_tail_ratio,
    eps_prefactor_scan,
    fit_tau_prefactor,
    tau_scaling_fit,
)


@pytest.fixture(scope="module")
def R05(P0, op8, gs):
    return project(P0, op8, gs, 1.0 - 0.35)


def test_deficiency_nonnegative_everywhere(R05, op8):
    assert np.min(R05.eta.values[op8.interior]) >= -1e-12 * np.max(R05.U_scaled.values)
    assert "eta_negative" not in R05.flags


def test_projected_peak_below_profile(R05):
    assert np.all(R05.PU.values <= R05.U_scaled.values + 1e-12)


def test_boundary_energy_positive_and_consistent(R05):
    assert R05.tau_direct > 0
    assert R05.tau_boundary > 0
    rel = abs(R05.tau_direct - R05.tau_boundary) / R05.tau_direct
    assert rel < 0.02
    # the trace-form route is an algebraic rearrangement of the kernel form
    assert R05.tau_green == pytest.approx(R05.tau_boundary, rel=1e-10)


def test_deficiency_norm_identity(R05, P0, op8):
    # weighted norm of the deficiency equals its exterior-trace pairing, up
    # to the interior equation residual, and both sides are positive
    assert R05.eta_norm_sq > 0
    g = op8.grid
    eta = R05.eta
    scale = P0.eps ** (2 * P0.s)
    B = scale * bilinear_form(eta, eta, op8)
    ii = op8.interior
    interior_eq = scale * op8.apply_window(eta.values, ii) + eta.values[ii]
    lhs = B + g.h * float(np.sum(eta.values[ii] ** 2))
    rhs = R05.eta_norm_sq + g.h * float(np.sum(eta.values[ii] * interior_eq))
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_standalone_quadratures_match_stored(R05, P0, op8, gs):
    assert tau_direct(R05, gs) == pytest.approx(R05.tau_direct, rel=1e-12)
    assert tau_boundary(R05, P0, op8) == pytest.approx(R05.tau_boundary, rel=1e-12)


def test_resolution_margin_enforced(P0, op2, gs):
    with pytest.raises(NumericalError, match="resolution margin"):
        project(P0.with_eps(0.01), op2, gs, 0.5)


def test_close_boundary_flagged(P0, op8, gs):
    R = project(P0, op8, gs, 1.0 - 2.5 * P0.eps)
    assert "close_boundary" in R.flags


def test_deficiency_vanishes_in_free_limit(P0, gs):
    # growing the domain toward the whole window sends the deficiency to zero
    maxes = []
    for ab in (6.0, 7.0):
        g = make_grid(8.0, 2048, (-ab, ab))
        op = build_domain_operator(g, P0)
        R = project(P0.with_eps(0.1), op, gs, 0.0)
        maxes.append(R.max_eta)
    assert maxes[1] < maxes[0]
    assert maxes[1] < 5e-4


def test_tau_prefactor_band(P0, op16, gs):
    P = P0.with_eps(0.01)
    fit = tau_scaling_fit(P, op16, gs, np.geomspace(0.1, 0.5, 8))
    t = fit["d"] / P.eps
    c = fit["tau"] / (P.eps * (P.eps / fit["d"]) ** (P0.N + 4 * P0.s))
    assert np.max(c) / np.min(c) < 2.0
    c_hat = fit_tau_prefactor(P, fit)
    assert 0.4 < c_hat < 0.7
    assert np.all(t >= 10.0)


def test_eps_prefactor_guard(P0, op16, gs):
    with pytest.raises(ValueError, match="half-width"):
        eps_prefactor_scan(op16, gs, P0, [0.2], ratio=8.0)


def test_cross_term_scaled_tail_decreases(P0):
    vals = cross_term_tail_ratio(P0, [3.0, 6.0, 12.0, 24.0])
    assert np.all(np.diff(vals) < 0)
    assert np.all(vals > 0)
