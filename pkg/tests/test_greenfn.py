import numpy as np
import pytest

from fracpeak import regular_part, robin_scaling_fit, singular_constant
from fracpeak.greenfn import (
    fit_robin_prefactor,
    interval_robin_reference,
    verify_singular_constant,
)


def test_singular_solution_shape(P0):
    S = singular_constant(P0)
    x = np.array([0.5, 1.0, 2.0])
    v1 = S(x, 0.0)
    assert np.all(v1 > 0)
    # doubling the distance scales by the homogeneity exponent
    assert S(np.array([2.0]), 0.0)[0] / S(np.array([1.0]), 0.0)[0] == pytest.approx(
        2.0 ** (2 * P0.s - P0.N)
    )
    # symmetric in the two arguments
    assert S(np.array([1.3]), 0.2)[0] == pytest.approx(S(np.array([0.2]), 1.3)[0])


def test_singular_constant_mollified_source(P0):
    ratios = verify_singular_constant(P0, widths=(0.3, 0.5, 0.8))
    for r in ratios:
        assert 0.99 <= r <= 1.01


def test_regular_part_nonnegative_and_finite(P0, op8):
    tab = regular_part(P0, op8, 1.0 - 0.1)
    vals = tab.H_field.values[op8.interior]
    assert np.all(np.isfinite(vals))
    assert np.min(vals) > -1e-12


def test_robin_grows_toward_boundary(P0, op8):
    center = regular_part(P0, op8, 0.0)
    near = regular_part(P0, op8, 1.0 - 0.1)
    assert center.robin < near.robin


def test_regular_part_against_interval_reference(P0, op8):
    for d in (0.05, 0.1, 0.2):
        tab = regular_part(P0, op8, 1.0 - d)
        ref = interval_robin_reference(P0, tab.xi)
        assert tab.robin == pytest.approx(ref, rel=0.03)


def test_regular_part_bound_constant_stable(P0, op8):
    cs = []
    for d in (0.05, 0.1, 0.2, 0.4):
        tab = regular_part(P0, op8, 1.0 - d)
        hmax = float(np.max(np.abs(tab.H_field.values[op8.interior])))
        cs.append(hmax * tab.d ** (P0.N - 2 * P0.s))
    assert max(cs) / min(cs) < 2.0


def test_green_function_positive_and_reciprocal(P0, op8):
    S = singular_constant(P0)
    g = op8.grid
    pairs = [(-0.3, 0.4), (0.0, 0.6), (-0.5, -0.1)]
    for xq, xiq in pairs:
        t1 = regular_part(P0, op8, xiq)
        i = g.nearest_index(xq)
        G1 = S(np.array([g.x[i]]), t1.xi)[0] - t1.H_field.values[i]
        t2 = regular_part(P0, op8, g.x[i])
        j = g.nearest_index(t1.xi)
        G2 = S(np.array([g.x[j]]), t2.xi)[0] - t2.H_field.values[j]
        assert G1 > 0 and G2 > 0
        assert G1 == pytest.approx(G2, rel=0.02)
    # positivity at the interior nodes away from the singular cell
    tab = regular_part(P0, op8, 1.0 - 0.3)
    ii = op8.interior
    away = np.abs(g.x[ii] - tab.xi) > 5 * g.h
    Gv = S(g.x[ii][away], tab.xi) - tab.H_field.values[ii][away]
    assert np.min(Gv) > 0


def test_regular_part_smoothness_envelope(P0, op8):
    # discrete second differences stay within the second-order envelope
    g = op8.grid
    cs = []
    for d in (0.1, 0.2, 0.4):
        tab = regular_part(P0, op8, 1.0 - d)
        H = tab.H_field.values[op8.interior]
        d2 = np.abs(np.diff(H, 2)) / g.h**2
        cs.append(float(np.max(d2)) * tab.d ** (P0.N - 2 * P0.s + 2))
    assert max(cs) / min(cs) < 4.0


def test_robin_fit_rejects_bad_input(P0, op8):
    with pytest.raises(ValueError, match="decade"):
        robin_scaling_fit(P0, op8, np.geomspace(0.1, 0.3, 5))
    with pytest.raises(ValueError, match="under-resolved"):
        robin_scaling_fit(P0, op8, np.geomspace(1e-4, 0.3, 5))


def test_robin_prefactor_fit(P0, op8):
    fit = robin_scaling_fit(P0, op8, np.geomspace(0.02, 0.3, 9))
    c = fit_robin_prefactor(fit, P0.s, P0.N)
    # robin ~ c d^{-(N-2s)} with c near the near-boundary limit of the
    # closed-form interval value
    assert 0.3 < c < 0.6


def test_rejects_exterior_location(P0, op8):
    with pytest.raises(ValueError, match="outside"):
        regular_part(P0, op8, 1.5)
