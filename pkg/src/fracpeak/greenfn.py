"""Singular solution, Dirichlet regular part, and the boundary scaling.

The regular part solves the exterior-value problem with the free-space
singular solution as data, using the same domain operator as every other
solve.  Data beyond the window is restored by a transformed quadrature of
the closed-form kernel tail.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gridcore import FREE, Field, Grid, ModelParams, NumericalError, make_grid
from .fracops import (
    NonlocalMatrix,
    apply_line,
    build_domain_operator,
    make_line_plan,
    make_riesz_kernel,
    riesz_apply,
    riesz_constant,
)
from scipy.special import gamma


@dataclass(frozen=True)
class SingularSolution:
    """Free-space kernel a |x - xi|^{2s-N} normalized against the operator."""

    a: float
    s: float
    N: int

    def __call__(self, x: np.ndarray, xi: float) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return self.a * np.abs(x - xi) ** (2.0 * self.s - self.N)


@dataclass(frozen=True)
class GreenTable:
    xi: float
    d: float
    H_field: Field
    robin: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.H_field.values)):
            raise NumericalError("regular part has non-finite interior values")


def singular_constant(P: ModelParams) -> SingularSolution:
    return SingularSolution(a=riesz_constant(P.N, P.s), s=P.s, N=P.N)


def verify_singular_constant(
    P: ModelParams, widths=(0.3, 0.5, 0.8), L: float = 400.0, n: int = 2**16
) -> list[float]:
    """Mollified point-source check: kernel * (operator bump) at the center.

    Each ratio should be 1 up to truncation and quadrature error; values
    outside [0.99, 1.01] indicate a wrong normalization.
    """
    grid = make_grid(L, n, (-1.0, 1.0))
    plan = make_line_plan(grid, P.s, tail_floor=1.0)
    kernel = make_riesz_kernel(grid, P)
    ratios = []
    for w in widths:
        phi = Field(grid, np.exp(-(grid.x**2) / w**2), FREE)
        back = riesz_apply(kernel, apply_line(plan, phi))
        ratios.append(float(back.values[grid.n // 2]))
    return ratios


def _beyond_window_data(op: NonlocalMatrix, S: SingularSolution, xi: float, order: int = 64) -> np.ndarray:
    """Kernel coupling of interior nodes to the singular data beyond the window.

    Substituting y = edge / v maps each half line onto (0, 1]; the integrand
    is smooth there, so fixed Gauss-Legendre is plenty.
    """
    g = op.grid
    ii = op.interior
    xi_nodes = g.x[ii][:, None]
    nodes, weights = np.polynomial.legendre.leggauss(order)
    v = 0.5 * (nodes + 1.0)
    wv = 0.5 * weights
    out = np.zeros(len(ii))
    for edge in (-(g.L), g.L - g.h):
        y = edge / v  # same sign as edge, |y| >= |edge|
        dy = np.abs(edge) / v**2
        kern = np.abs(xi_nodes - y[None, :]) ** (-(1.0 + 2.0 * op.s))
        out += (kern * (S(y, xi) * dy * wv)[None, :]).sum(axis=1)
    return op.C * out


def regular_part(P: ModelParams, op: NonlocalMatrix, xi: float, tail_correction: bool = True) -> GreenTable:
    """Solve the exterior-value problem for the regular part at one location."""
    g = op.grid
    a, b = g.domain
    i_xi = g.nearest_index(xi)
    if not g.mask[i_xi]:
        raise ValueError(f"location {xi} is outside the domain ({a}, {b})")
    xi = float(g.x[i_xi])
    S = singular_constant(P)
    data = np.where(g.mask, 0.0, S(g.x, xi))
    rhs = op.C * op.convolve(data)[op.interior]
    if tail_correction:
        rhs = rhs + _beyond_window_data(op, S, xi)
    Hi = op.solve(rhs)
    values = data.copy()
    values[op.interior] = Hi
    Hf = Field(g, values, FREE)
    robin = float(Hi[np.searchsorted(op.interior, i_xi)])
    d = min(xi - a, b - xi)
    return GreenTable(xi=xi, d=d, H_field=Hf, robin=robin)


def robin_scaling_fit(P: ModelParams, op: NonlocalMatrix, d_list) -> dict:
    """Log-log slope of the boundary value of the regular part against d."""
    d_list = np.asarray(d_list, dtype=float)
    if np.max(d_list) / np.min(d_list) < 10.0:
        raise ValueError("distance list must span at least a decade")
    if np.min(d_list) < 10.0 * op.grid.h:
        raise ValueError(
            f"under-resolved distances: min d = {np.min(d_list):.4g} < 10 h = {10 * op.grid.h:.4g}"
        )
    b = op.grid.domain[1]
    ds, robins = [], []
    for d in d_list:
        tab = regular_part(P, op, b - d)
        ds.append(tab.d)
        robins.append(tab.robin)
    ds = np.array(ds)
    robins = np.array(robins)
    slope, intercept = np.polyfit(np.log(ds), np.log(robins), 1)
    return {
        "slope": float(slope),
        "intercept": float(intercept),
        "d": ds,
        "robin": robins,
    }


def fit_robin_prefactor(table: dict, s: float, N: int = 1) -> float:
    """Geometric-mean prefactor of the near-boundary law robin ~ c d^{-(N-2s)}."""
    d = np.asarray(table["d"])
    r = np.asarray(table["robin"])
    return float(np.exp(np.mean(np.log(r) + (N - 2.0 * s) * np.log(d))))


def interval_robin_reference(P: ModelParams, xi: float) -> float:
    """Closed-form boundary value for an interval, from the classical ball
    Green function of the operator; used as an optional cross-check only."""
    a, b = P.domain
    R = 0.5 * (b - a)
    zeta = (xi - 0.5 * (a + b)) / R
    N, s = P.N, P.s
    kref = gamma(N / 2.0) / (
        4.0**s * np.pi ** (N / 2.0) * gamma(s) ** 2 * (N / 2.0 - s)
    )
    return float(kref * R ** (2.0 * s - N) * (1.0 - zeta**2) ** (2.0 * s - N))
