"""Limiting-profile solver, its spectrum, and the limit constants.

The profile solves the scale-one equation on a long line window through the
Fourier symbol.  A Petviashvili warm start feeds a damped inexact Newton
iteration on U - R(U^p), R the screened resolvent; evenness is enforced by
symmetrization each step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator
from scipy.sparse.linalg import LinearOperator, eigsh, gmres

from .gridcore import FREE, Field, Grid, ModelParams, NumericalError, integrate
from .fracops import RieszKernel, make_riesz_kernel, riesz_apply


class ProfileWindowError(NumericalError):
    """Rescaling asked for the profile beyond the solved window."""


@dataclass(frozen=True)
class GroundState:
    """Converged limiting profile with its decay diagnostics."""

    U: Field
    p: float
    s: float
    peak_value: float
    decay_slope: float
    alpha_hat: float
    beta_hat: float
    residual_norm: float
    iterations: int
    interp: object = field(repr=False)
    dinterp: object = field(repr=False)

    @property
    def grid(self) -> Grid:
        return self.U.grid

    def profile(self, r: np.ndarray) -> np.ndarray:
        return self.interp(r)

    def derivative(self, r: np.ndarray) -> np.ndarray:
        return self.dinterp(r)


@dataclass(frozen=True)
class LimitConstants:
    A1: float
    A2: float
    A2_direct: float
    B: float

    def __post_init__(self):
        if not (self.A1 > 0 and self.A2 > 0 and self.B > 0):
            raise NumericalError("limit constants must be positive")


@dataclass(frozen=True)
class RieszProfile:
    """Inverse-kernel image of the squared profile, with its tail exponent."""

    W: Field
    tail_slope: float
    peak_value: float
    interp: object = field(repr=False)

    def profile(self, r: np.ndarray) -> np.ndarray:
        return self.interp(r)


def _mirror(n: int) -> np.ndarray:
    return (-np.arange(n)) % n


def default_tail_window(s: float, L: float) -> tuple[float, float]:
    """Fit window for tail exponents: inside it the subleading correction
    (which relaxes like the -2s power of distance) is below ten percent, and
    the window stays clear of the periodic images near the edge."""
    t0 = max(40.0, 10.0 ** (1.0 / (2.0 * s)))
    return t0, min(10.0 * t0, L / 5.0)


def _symbol(grid: Grid, s: float) -> np.ndarray:
    return (2.0 * np.pi * np.fft.rfftfreq(grid.n, grid.h)) ** (2.0 * s)


def solve_ground_state(
    P: ModelParams,
    grid: Grid,
    init: Field | None = None,
    tol: float = 1e-11,
    max_newton: int = 40,
    tail_fit_window: tuple[float, float] | None = None,
) -> GroundState:
    """Solve the scale-one profile equation to max-norm residual `tol`.

    Raises NumericalError("trivial attractor") when the iteration collapses
    to zero, which happens for zero or too-small initial data.
    """
    s, p = P.s, P.p
    n, h, x = grid.n, grid.h, grid.x
    sym = _symbol(grid, s)
    mir = _mirror(n)

    def lap(u):
        return np.fft.irfft(sym * np.fft.rfft(u), n)

    def resolvent(f):
        return np.fft.irfft(np.fft.rfft(f) / (sym + 1.0), n)

    def residual(u):
        return lap(u) + u - np.clip(u, 0.0, None) ** p

    if init is None:
        bump = (1.0 + x**2) ** (-(P.N + 2.0 * s) / 2.0)
        gain = float(np.max(resolvent(bump**p)))
        U = 1.5 * gain ** (-1.0 / (p - 1.0)) * bump
    else:
        U = init.values.copy()
    ref_peak = float(np.max(np.abs(U)))
    if ref_peak == 0.0:
        raise NumericalError("trivial attractor: zero initial data")

    # Petviashvili warm start: one resolvent application per step.
    iters = 0
    for _ in range(400):
        iters += 1
        up = np.clip(U, 0.0, None)
        num = float(np.sum((lap(U) + U) * U))
        den = float(np.sum(up ** (p + 1.0)))
        if den <= 0.0 or np.max(np.abs(U)) < 1e-3 * ref_peak:
            raise NumericalError("trivial attractor: increase init amplitude")
        U = (num / den) ** (p / (p - 1.0)) * resolvent(up**p)
        U = 0.5 * (U + U[mir])
        if np.max(np.abs(residual(U))) < 1e-6:
            break

    # damped inexact Newton on F(U) = U - R(U^p)
    for _ in range(max_newton):
        iters += 1
        F = U - resolvent(np.clip(U, 0.0, None) ** p)
        nF = float(np.max(np.abs(F)))
        if nF < 0.1 * tol:
            break
        pot = p * np.clip(U, 0.0, None) ** (p - 1.0)
        op = LinearOperator((n, n), matvec=lambda w: w - resolvent(pot * w))
        rtol = min(1e-2, max(1e-12, 0.1 * nF))
        delta, _ = gmres(op, -F, rtol=rtol, maxiter=4, restart=60)
        lam = 1.0
        for _ in range(8):
            cand = U + lam * delta
            cand = 0.5 * (cand + cand[mir])
            if np.max(np.abs(cand - resolvent(np.clip(cand, 0.0, None) ** p))) < nF:
                break
            lam *= 0.5
        U = cand
        if np.max(np.abs(U)) < 1e-3 * ref_peak:
            raise NumericalError("trivial attractor: increase init amplitude")

    res = float(np.max(np.abs(residual(U))))
    if res > tol * 100:
        raise NumericalError(f"profile solve stalled at residual {res:.3e}")

    peak = float(U[n // 2])
    envelope = U * (1.0 + np.abs(x) ** (P.N + 2.0 * s))
    if tail_fit_window is None:
        tail_fit_window = default_tail_window(s, grid.L)
    lo, hi = tail_fit_window
    sel = (x >= lo) & (x <= hi)
    slope = float(np.polyfit(np.log(x[sel]), np.log(U[sel]), 1)[0])

    # full-window C^2 interpolant: even data constrains the slope at the
    # peak, and divided differences of rescaled samples match its derivative
    # to quadratic order in the step
    interp = CubicSpline(x, U, bc_type="natural", extrapolate=False)
    gs = GroundState(
        U=Field(grid, U, FREE),
        p=p,
        s=s,
        peak_value=peak,
        decay_slope=slope,
        alpha_hat=float(np.min(envelope)),
        beta_hat=float(np.max(envelope)),
        residual_norm=res,
        iterations=iters,
        interp=interp,
        dinterp=interp.derivative(),
    )
    _check_profile(gs)
    return gs


def _check_profile(gs: GroundState) -> None:
    U = gs.U.values
    n = gs.grid.n
    if not np.all(U > 0.0):
        raise NumericalError("profile is not strictly positive")
    if float(np.max(np.abs(U - U[_mirror(n)]))) > 1e-10 * gs.peak_value:
        raise NumericalError("profile is not even")
    # the periodic window flattens the extreme tail; test inside 0.9 L
    hi = n // 2 + int(0.45 * n)
    right = U[n // 2 : hi]
    if np.any(np.diff(right) > 1e-10 * gs.peak_value):
        raise NumericalError("profile is not decreasing in |x|")


# ---------------------------------------------------------------------------
# spectrum of the linearization


@dataclass(frozen=True)
class SpectrumResult:
    eigenvalues: np.ndarray
    near_zero: float
    near_zero_count: int
    overlap: float
    negative_count: int
    kernel_residual: float


def nondegeneracy_spectrum(gs: GroundState, k: int = 6, zero_band: float = 1e-4) -> SpectrumResult:
    """Lowest eigenpairs of the linearized operator, and the kernel mode.

    The linearization is the symbol plus identity minus p U^{p-1}; its kernel
    should be spanned by the translation derivative alone.
    """
    grid = gs.grid
    n = grid.n
    sym = _symbol(grid, gs.s)
    U = gs.U.values
    pot = gs.p * np.clip(U, 0.0, None) ** (gs.p - 1.0)

    def mv(w):
        return np.fft.irfft(sym * np.fft.rfft(w), n) + w - pot * w

    dU = np.fft.irfft(1j * 2.0 * np.pi * np.fft.fftfreq(n, grid.h) * np.fft.fft(U), n).real
    op = LinearOperator((n, n), matvec=mv)
    vals, vecs = eigsh(op, k=k, which="SA", v0=dU, maxiter=8000, tol=1e-12)
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]

    j0 = int(np.argmin(np.abs(vals)))
    mode = vecs[:, j0]
    overlap = abs(float(mode @ dU)) / (
        float(np.linalg.norm(mode)) * float(np.linalg.norm(dU))
    )
    kres = float(np.linalg.norm(mv(dU))) / float(np.linalg.norm(dU))
    return SpectrumResult(
        eigenvalues=vals,
        near_zero=float(vals[j0]),
        near_zero_count=int(np.sum(np.abs(vals) < zero_band)),
        overlap=overlap,
        negative_count=int(np.sum(vals < -zero_band)),
        kernel_residual=kres,
    )


# ---------------------------------------------------------------------------
# limit constants and the inverse-kernel profile


def riesz_profile(gs: GroundState, tail_fit_window: tuple[float, float] | None = None) -> RieszProfile:
    grid = gs.grid
    P = ModelParams(N=1, s=gs.s, p=gs.p, eps=1.0, domain=grid.domain)
    kernel = make_riesz_kernel(grid, P)
    W = riesz_apply(kernel, Field(grid, gs.U.values**2, FREE))
    x = grid.x
    if tail_fit_window is None:
        tail_fit_window = default_tail_window(gs.s, grid.L)
    lo, hi = tail_fit_window
    sel = (x >= lo) & (x <= hi)
    slope = float(np.polyfit(np.log(x[sel]), np.log(W.values[sel]), 1)[0])
    if np.any(W.values <= 0.0):
        raise NumericalError("inverse-kernel profile is not positive")
    return RieszProfile(
        W=W,
        tail_slope=slope,
        peak_value=float(W.values[grid.n // 2]),
        interp=CubicSpline(x, W.values, bc_type="natural", extrapolate=False),
    )


def limit_constants(gs: GroundState, wp: RieszProfile, coarse_n: int = 4096, coarse_L: float = 400.0) -> LimitConstants:
    """Quadrature values of the three limit constants.

    The interaction constant is computed twice: against the convolved
    profile, and as a direct double sum on a coarsened lattice with the same
    hat-moment kernel weights.
    """
    grid = gs.grid
    x = grid.x
    U = gs.U.values
    A1 = (0.5 - 1.0 / (gs.p + 1.0)) * float(np.trapezoid(U ** (gs.p + 1.0), x))
    B = float(np.trapezoid(U**2, x))
    A2 = float(np.trapezoid(U**2 * wp.W.values, x))

    from .gridcore import make_grid

    cl = min(coarse_L, grid.L / 2.0)
    cg = make_grid(cl, coarse_n, (-cl / 2, cl / 2))
    P = ModelParams(N=1, s=gs.s, p=gs.p, eps=1.0, domain=cg.domain)
    kernel = make_riesz_kernel(cg, P)
    u2 = gs.profile(cg.x) ** 2
    Wc = riesz_apply(kernel, Field(cg, u2, FREE))
    A2_direct = float(cg.h * np.sum(u2 * Wc.values))
    return LimitConstants(A1=A1, A2=A2, A2_direct=A2_direct, B=B)


# ---------------------------------------------------------------------------
# rescaling onto the domain grid


def _scaled_args(gs: GroundState, P: ModelParams, xi: float, grid: Grid) -> np.ndarray:
    z = (grid.x - xi) / P.eps
    rmax = float(np.max(np.abs(z)))
    Lline = gs.grid.L
    if rmax > Lline:
        need = rmax * P.eps + abs(xi)
        raise ProfileWindowError(
            f"profile window exhausted: need line half-width >= {need:.1f}, have {Lline:.1f}"
        )
    return z


def rescale_to(gs: GroundState, P: ModelParams, xi: float, grid: Grid) -> Field:
    """Sample U((x - xi)/eps) on the window; exterior values are retained."""
    z = _scaled_args(gs, P, xi, grid)
    return Field(grid, gs.profile(z), FREE)


def rescale_derivative(gs: GroundState, P: ModelParams, xi: float, grid: Grid) -> Field:
    """d/dxi of the rescaled profile: -(1/eps) U'((x - xi)/eps)."""
    z = _scaled_args(gs, P, xi, grid)
    return Field(grid, -gs.derivative(z) / P.eps, FREE)
