"""Discretizations of the fractional Laplacian on the window and the domain.

One weight family drives everything: exact kernel moments of the piecewise
linear interpolant (second differences of the double antiderivative of
|r|^{-(1+2s)}), plus a closed-form tail for the part of the line beyond the
window.  The domain operator, the exterior-trace operator and the bilinear
form are all assembled from the same weights, so the discrete Green identity
holds to round-off, not just to quadrature order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, matmul_toeplitz, toeplitz
from scipy.special import gamma

from .gridcore import (
    FREE,
    ZERO_OUTSIDE,
    Field,
    Grid,
    ModelParams,
    angular_frequencies,
    apply_symbol_power,
)


def frac_constant(N: int, s: float) -> float:
    """Normalizing constant of the singular-integral operator.

    The sign is pinned by requiring operator positivity (the printed closed
    form carries gamma(-s) < 0, so the absolute value is taken).
    """
    return 4.0**s * gamma((N + 2.0 * s) / 2.0) / (np.pi ** (N / 2.0) * abs(gamma(-s)))


def riesz_constant(N: int, s: float) -> float:
    """Constant of the inverse kernel c |x|^{2s-N}."""
    return gamma((N - 2.0 * s) / 2.0) / (4.0**s * np.pi ** (N / 2.0) * gamma(s))


# ---------------------------------------------------------------------------
# line multiplier


@dataclass(frozen=True)
class LineMultiplierPlan:
    grid: Grid
    s: float
    symbol: np.ndarray = field(repr=False)
    tail_floor: float = 1e-6


def make_line_plan(grid: Grid, s: float, tail_floor: float = 1e-6) -> LineMultiplierPlan:
    symbol = angular_frequencies(grid) ** (2.0 * s)
    return LineMultiplierPlan(grid=grid, s=s, symbol=symbol, tail_floor=tail_floor)


def apply_line(plan: LineMultiplierPlan, u: Field) -> Field:
    """Apply the operator through its window Fourier symbol.

    Warns when the field does not decay below the configured floor at the
    window edge; the periodic wrap then pollutes the result.
    """
    if not u.grid.same_lattice(plan.grid):
        raise ValueError("grid mismatch")
    v = u.values
    scale = float(np.max(np.abs(v)))
    if scale > 0.0:
        edge = float(max(np.max(np.abs(v[:4])), np.max(np.abs(v[-4:]))))
        if edge > plan.tail_floor * scale:
            warnings.warn(
                f"window-edge tail {edge:.3e} above floor "
                f"{plan.tail_floor * scale:.3e}; periodic wrap may pollute",
                stacklevel=2,
            )
    out = np.fft.irfft(plan.symbol * np.fft.rfft(v), plan.grid.n)
    return Field(u.grid, out, FREE)


# ---------------------------------------------------------------------------
# kernel weight family


def hat_kernel_weights(n: int, h: float, s: float) -> np.ndarray:
    """Exact moments of |r|^{-(1+2s)} against the lattice hat functions.

    G[m] for m >= 1 is the integral of the hat centered at distance m*h
    against the kernel; G[0] is unused (the self pair never enters).  Valid
    for s < 1/2, where the kernel is integrable against the hats.
    """
    if s >= 0.5:
        raise ValueError("hat-moment assembly requires s < 1/2")
    r = h * np.arange(n + 1, dtype=float)
    # Phi2'' = r^{-(1+2s)}
    phi2 = -(r ** (1.0 - 2.0 * s)) / (2.0 * s * (1.0 - 2.0 * s))
    out = np.zeros(n)
    out[1:] = (phi2[2:] - 2.0 * phi2[1:-1] + phi2[:-2])[: n - 1] / h
    return out


def window_tail(grid: Grid, s: float) -> np.ndarray:
    """Closed-form integral of the kernel over the line beyond the window.

    The interpolant support is [x_0, x_{n-1}]; the two extreme nodes sit on
    its edge and get an infinite tail, which no interior evaluation uses.
    """
    lo = grid.x + grid.L
    hi = (grid.L - grid.h) - grid.x
    with np.errstate(divide="ignore"):
        t = (np.abs(lo) ** (-2.0 * s) + np.abs(hi) ** (-2.0 * s)) / (2.0 * s)
    t[0] = np.inf
    t[-1] = np.inf
    return t


def _prefix(G: np.ndarray) -> np.ndarray:
    """pre[k] = sum of G[1..k]; pre[0] = 0."""
    return np.concatenate(([0.0], np.cumsum(G[1:])))


@dataclass
class NonlocalMatrix:
    """Domain operator with exterior-zero data, plus its weight family.

    entries[i, j] acts on interior nodal values; the diagonal carries the
    full-window row sum and the beyond-window tail, so the matrix is strictly
    diagonally dominant with negative off-diagonal entries (an M-matrix:
    positive definite, inverse-positive).
    """

    grid: Grid
    s: float
    C: float
    G: np.ndarray
    tail: np.ndarray
    row_sum: np.ndarray
    entries: np.ndarray

    def __post_init__(self):
        self._chol = None
        self._dense_inv = None
        self._screened: dict[float, tuple] = {}
        self._prefix = _prefix(self.G)

    # -- structure helpers ---------------------------------------------------

    @property
    def interior(self) -> np.ndarray:
        return self.grid.interior

    def convolve(self, values: np.ndarray) -> np.ndarray:
        """(G * values)_i = sum_j G_|i-j| values_j over the window."""
        return matmul_toeplitz((self.G, self.G), values)

    def interior_mass(self) -> np.ndarray:
        """M[i] = sum over interior j of G_|i-j|, for every window node i."""
        pre = self._prefix
        ii = self.interior
        j0, j1 = ii[0], ii[-1]
        i = np.arange(self.grid.n)
        inside = pre[np.abs(i - j0)] + pre[np.abs(j1 - i)]
        left = pre[j1 - i] - pre[np.maximum(j0 - 1 - i, 0)]
        right = pre[i - j0] - pre[np.maximum(i - j1 - 1, 0)]
        out = np.where(i < j0, left, np.where(i > j1, right, inside))
        return out

    # -- operator actions ----------------------------------------------------

    def apply_window(self, values: np.ndarray, rows: np.ndarray) -> np.ndarray:
        """Operator applied to window samples (zero beyond), at given rows.

        Rows near the window edge carry a divergent tail weight and must not
        be requested.
        """
        conv = self.convolve(values)
        return self.C * (
            (self.row_sum[rows] + self.tail[rows]) * values[rows] - conv[rows]
        )

    def apply_interior(self, interior_values: np.ndarray) -> np.ndarray:
        return self.entries @ interior_values

    def cholesky(self):
        if self._chol is None:
            self._chol = cho_factor(self.entries)
        return self._chol

    def solve(self, rhs_interior: np.ndarray) -> np.ndarray:
        return cho_solve(self.cholesky(), rhs_interior)

    def dense_inverse(self) -> np.ndarray:
        if self._dense_inv is None:
            self._dense_inv = cho_solve(self.cholesky(), np.eye(len(self.interior)))
        return self._dense_inv

    def screened(self, eps: float):
        """Cholesky factor of eps^{2s} A + I, cached per eps."""
        key = round(float(eps), 15)
        if key not in self._screened:
            m = len(self.interior)
            mat = eps ** (2.0 * self.s) * self.entries + np.eye(m)
            self._screened[key] = cho_factor(mat)
        return self._screened[key]

    def smallest_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.entries)[0])


def build_domain_operator(grid: Grid, P: ModelParams) -> NonlocalMatrix:
    """Assemble the exterior-zero operator on the interior nodes."""
    ii = grid.interior
    if ii.size == 0:
        raise ValueError("domain mask is empty")
    C = frac_constant(P.N, P.s)
    G = hat_kernel_weights(grid.n, grid.h, P.s)
    tail = window_tail(grid, P.s)
    pre = _prefix(G)
    idx = np.arange(grid.n)
    row_sum = pre[idx] + pre[grid.n - 1 - idx]
    m = len(ii)
    entries = -C * toeplitz(G[:m])
    entries[np.arange(m), np.arange(m)] = C * (row_sum[ii] + tail[ii])
    return NonlocalMatrix(
        grid=grid, s=P.s, C=C, G=G, tail=tail, row_sum=row_sum, entries=entries
    )


# ---------------------------------------------------------------------------
# solves and traces


def solve_screened(op: NonlocalMatrix, P: ModelParams, rhs: Field) -> Field:
    """Solve (eps^{2s} A + I) u = rhs on the interior, u = 0 outside.

    For nonnegative data the output is nonnegative (inverse positivity of
    the M-matrix); a tiny round-off tolerance is asserted.
    """
    g = op.grid
    if not rhs.grid.same_lattice(g):
        raise ValueError("grid mismatch")
    ii = op.interior
    b = rhs.values[ii]
    u = cho_solve(op.screened(P.eps), b)
    scale = float(np.max(np.abs(b))) or 1.0
    if np.all(b >= 0.0) and np.min(u, initial=0.0) < -1e-12 * scale:
        raise AssertionError("maximum principle violated beyond round-off")
    out = np.zeros(g.n)
    out[ii] = u
    return Field(g, out, ZERO_OUTSIDE)


def nonlocal_normal_derivative(u: Field, op: NonlocalMatrix) -> Field:
    """Exterior trace N_s u at window nodes outside the domain.

    N_s u(x_i) = C * sum over interior j of G_|i-j| (u_i - u_j); values at
    interior nodes are set to zero.
    """
    g = op.grid
    if not u.grid.same_lattice(g):
        raise ValueError("grid mismatch")
    v = u.values
    conv_int = op.convolve(np.where(g.mask, v, 0.0))
    out = op.C * (v * op.interior_mass() - conv_int)
    out[g.mask] = 0.0
    return Field(g, out, FREE)


def _pair_sum(op: NonlocalMatrix, maskS, maskT, u, v) -> float:
    """sum over i in S, j in T of G_|i-j| (u_i-u_j)(v_i-v_j)."""
    oS = maskS.astype(float)
    oT = maskT.astype(float)
    t1 = np.sum(u * v * oS * op.convolve(oT))
    t2 = np.sum(oS * u * op.convolve(v * oT))
    t3 = np.sum(oS * v * op.convolve(u * oT))
    t4 = np.sum(u * v * oT * op.convolve(oS))
    return float(t1 - t2 - t3 + t4)


def bilinear_form(u: Field, v: Field, op: NonlocalMatrix) -> float:
    """Discrete form (C/2) over pairs meeting the domain, plus the tail term.

    Pairs with both nodes outside the domain are excluded, matching the
    integration region of the quadratic form for exterior-prescribed data.
    """
    g = op.grid
    mask = g.mask
    allw = np.ones(g.n, dtype=bool)
    pairs = _pair_sum(op, mask, allw, u.values, v.values) - 0.5 * _pair_sum(
        op, mask, mask, u.values, v.values
    )
    tail = float(np.sum(op.tail[mask] * u.values[mask] * v.values[mask]))
    return g.h * op.C * (pairs + tail)


def green_identity_residual(u: Field, v: Field, op: NonlocalMatrix) -> dict:
    """Residual of  B(u, v) = int_D v A u + int_ext v N_s u  (one weight set).

    Returns the three assembled terms and the absolute residual; the identity
    is an algebraic rearrangement, so the residual is round-off level.
    """
    g = op.grid
    ii = op.interior
    ext = ~g.mask
    Du = op.apply_window(u.values, ii)
    Nu = nonlocal_normal_derivative(u, op).values
    interior_term = g.h * float(np.sum(v.values[ii] * Du))
    exterior_term = g.h * float(np.sum(v.values[ext] * Nu[ext]))
    B = bilinear_form(u, v, op)
    residual = abs(B - interior_term - exterior_term)
    gross = g.h * (
        float(np.sum(np.abs(v.values[ii] * Du)))
        + float(np.sum(np.abs(v.values[ext] * Nu[ext])))
    )
    return {
        "bilinear": B,
        "interior": interior_term,
        "exterior": exterior_term,
        "residual": residual,
        "scale": max(abs(B), abs(interior_term), abs(exterior_term), gross, 1e-300),
    }


# ---------------------------------------------------------------------------
# Riesz potential


@dataclass(frozen=True)
class RieszKernel:
    """Inverse-kernel table on a grid: hat moments of c |r|^{2s-N}."""

    s: float
    N: int
    c: float
    weights: np.ndarray = field(repr=False)


def make_riesz_kernel(grid: Grid, P: ModelParams) -> RieszKernel:
    c = riesz_constant(P.N, P.s)
    r = grid.h * np.arange(grid.n + 1, dtype=float)
    # Psi'' = c r^{2s-1}
    psi = c * r ** (2.0 * P.s + 1.0) / ((2.0 * P.s) * (2.0 * P.s + 1.0))
    w = np.zeros(grid.n)
    w[0] = 2.0 * psi[1] / grid.h
    w[1:] = (psi[2:] - 2.0 * psi[1:-1] + psi[:-2])[: grid.n - 1] / grid.h
    return RieszKernel(s=P.s, N=P.N, c=c, weights=w)


def riesz_apply(kernel: RieszKernel, f: Field) -> Field:
    """Convolution with the inverse kernel over the window (linear in f)."""
    out = matmul_toeplitz((kernel.weights, kernel.weights), f.values)
    return Field(f.grid, out, FREE)


# ---------------------------------------------------------------------------
# self test


def operator_selftest(P: ModelParams, L: float = 8.0, seed: int = 1234) -> dict:
    """Consistency slope, eigenvalue floor and Green-identity residuals.

    Self-convergence of the domain operator against its own refinement gives
    the measured order; the eigenvalue floor and identity residuals certify
    positivity and the summation-by-parts structure.
    """
    from .gridcore import make_grid

    rng = np.random.default_rng(seed)
    report: dict = {"s": P.s}

    grids = [make_grid(L, n, P.domain) for n in (1024, 2048, 4096)]
    ops = [build_domain_operator(g, P) for g in grids]
    vals = []
    for g, op in zip(grids, ops):
        u = np.exp(-(g.x**2))
        rows = np.where(np.abs(g.x) < 2.0)[0]
        vals.append((g, op.apply_window(u, rows)))
    diffs = []
    for (g1, d1), (g2, d2) in zip(vals[:-1], vals[1:]):
        diffs.append(float(np.max(np.abs(d1 - d2[::2]))))
    report["self_convergence_errors"] = diffs
    report["self_convergence_order"] = float(np.log2(diffs[0] / diffs[1]))

    op = ops[1]
    report["eigenvalue_floor"] = op.smallest_eigenvalue()

    g = grids[1]
    residuals = []
    for _ in range(20):
        u = Field.zero_outside(g, rng.standard_normal(g.n))
        v = Field(g, rng.standard_normal(g.n) * np.exp(-0.1 * g.x**2), FREE)
        r = green_identity_residual(u, v, op)
        residuals.append(r["residual"] / r["scale"])
    report["green_identity_max_relative_residual"] = float(np.max(residuals))
    return report
