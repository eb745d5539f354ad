"""Grids, fields, quadrature and the shared model parameters.

Everything downstream works on one uniform lattice covering a large line
window [-L, L); the bounded domain (a, b) sits strictly inside and is
realized as a node mask.  Functions that vanish outside the domain are
stored as fields on the whole window with zeros at exterior nodes, so the
nonlocal operators can read their exterior values directly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

ZERO_OUTSIDE = "zero"
FREE = "free"


class ConfigError(ValueError):
    """Raised when parameters violate a model inequality."""


class NumericalError(RuntimeError):
    """Raised when an iteration or solve fails numerically."""


@dataclass(frozen=True)
class ModelParams:
    """Model parameters (N, s, p, eps) and the domain interval.

    The admissibility inequalities are checked at construction; the error
    message names the violated one.
    """

    N: int
    s: float
    p: float
    eps: float
    domain: tuple[float, float]

    def __post_init__(self):
        N, s, p = self.N, self.s, self.p
        a, b = self.domain
        if not (0.0 < s < 1.0):
            raise ConfigError(f"requires 0 < s < 1, got s={s}")
        if not (2.0 * s < N):
            raise ConfigError(f"requires 2s < N, got N={N}, s={s}")
        if not (N <= 6.0 * s):
            raise ConfigError(f"requires N <= 6s, got N={N}, s={s}")
        if not (N < 8.0 * s):
            raise ConfigError(f"requires N < 8s, got N={N}, s={s}")
        pmax = (N + 2.0 * s) / (N - 2.0 * s)
        if not (1.0 < p < pmax):
            raise ConfigError(f"requires 1 < p < (N+2s)/(N-2s) = {pmax:.6g}, got p={p}")
        if not (self.eps > 0.0):
            raise ConfigError(f"requires eps > 0, got eps={self.eps}")
        if not (b > a):
            raise ConfigError(f"requires b > a, got domain=({a}, {b})")

    def with_eps(self, eps: float) -> "ModelParams":
        return replace(self, eps=eps)


@dataclass(frozen=True)
class Grid:
    """Uniform lattice x_j = -L + j h, j = 0..n-1, with a domain mask."""

    L: float
    n: int
    h: float
    x: np.ndarray
    domain: tuple[float, float]
    mask: np.ndarray = field(repr=False)

    @property
    def interior(self) -> np.ndarray:
        """Indices of nodes strictly inside the domain (contiguous in 1-D)."""
        return np.where(self.mask)[0]

    def nearest_index(self, x0: float) -> int:
        return int(np.argmin(np.abs(self.x - x0)))

    def same_lattice(self, other: "Grid") -> bool:
        return self.L == other.L and self.n == other.n


def make_grid(L: float, n: int, domain: tuple[float, float]) -> Grid:
    """Build the window lattice; the domain must sit strictly inside (-L, L)."""
    if n < 16:
        raise ConfigError(f"requires n >= 16, got n={n}")
    if L <= 0:
        raise ConfigError(f"requires L > 0, got L={L}")
    a, b = domain
    if not (-L < a < b < L):
        raise ConfigError(f"domain ({a}, {b}) exceeds window (-{L}, {L})")
    h = 2.0 * L / n
    x = -L + h * np.arange(n)
    mask = (x > a) & (x < b)
    return Grid(L=float(L), n=int(n), h=h, x=x, domain=(float(a), float(b)), mask=mask)


@dataclass(frozen=True)
class Field:
    """Real samples on a grid, with an exterior rule.

    exterior_rule "zero" means the function vanishes identically outside the
    domain (nodes where mask is False hold exact zeros); "free" means the
    samples are meaningful on the whole window.
    """

    grid: Grid
    values: np.ndarray
    exterior_rule: str = FREE

    def __post_init__(self):
        v = self.values
        if v.shape != (self.grid.n,):
            raise ValueError("field shape does not match grid")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite values")
        if self.exterior_rule == ZERO_OUTSIDE and np.any(v[~self.grid.mask] != 0.0):
            raise ValueError("zero-outside field has nonzero exterior samples")

    @staticmethod
    def zero_outside(grid: Grid, values: np.ndarray) -> "Field":
        v = np.where(grid.mask, values, 0.0)
        return Field(grid, v, ZERO_OUTSIDE)

    def to_csv(self, path) -> None:
        write_csv(path, ["x", "value"], np.column_stack([self.grid.x, self.values]))

    def to_binary(self, path) -> None:
        """Binary dump plus a JSON sidecar with the grid metadata."""
        path = str(path)
        np.save(path if path.endswith(".npy") else path + ".npy", self.values)
        base = path[:-4] if path.endswith(".npy") else path
        meta = {
            "L": self.grid.L,
            "n": self.grid.n,
            "domain": list(self.grid.domain),
            "exterior_rule": self.exterior_rule,
        }
        with open(base + ".json", "w") as fh:
            json.dump(meta, fh, indent=1)


def load_field(path) -> Field:
    path = str(path)
    base = path[:-4] if path.endswith(".npy") else path
    with open(base + ".json") as fh:
        meta = json.load(fh)
    grid = make_grid(meta["L"], meta["n"], tuple(meta["domain"]))
    values = np.load(base + ".npy")
    return Field(grid, values, meta["exterior_rule"])


def integrate(f: Field) -> float:
    """Trapezoid quadrature over the support selected by the exterior rule.

    Zero-outside fields are integrated over the domain only; the two cells
    cut by the endpoints contribute rectangle corrections so that a constant
    integrates to the exact interval length up to O(h^2).
    """
    g = f.grid
    if f.exterior_rule == ZERO_OUTSIDE:
        idx = g.interior
        if idx.size == 0:
            return 0.0
        v = f.values[idx]
        xs = g.x[idx]
        a, b = g.domain
        core = float(np.trapezoid(v, xs)) if idx.size > 1 else 0.0
        return core + float(v[0]) * (xs[0] - a) + float(v[-1]) * (b - xs[-1])
    return float(np.trapezoid(f.values, g.x))


def angular_frequencies(grid: Grid) -> np.ndarray:
    """rfft frequencies of the window lattice, in angular units."""
    return 2.0 * np.pi * np.fft.rfftfreq(grid.n, grid.h)


def apply_symbol_power(grid: Grid, values: np.ndarray, order: float) -> np.ndarray:
    """Apply |rho|^(2*order) through the periodic window transform."""
    sym = angular_frequencies(grid) ** (2.0 * order)
    return np.fft.irfft(sym * np.fft.rfft(values), grid.n)


def eps_inner(u: Field, v: Field, P: ModelParams) -> float:
    """Weighted inner product: integral of eps^{2s} D^{s/2}u D^{s/2}v + u v.

    The fractional half power is applied through the window Fourier symbol,
    so decaying fields are required for a faithful value (periodic images
    otherwise leak in).
    """
    if not u.grid.same_lattice(v.grid):
        raise ValueError("grid mismatch")
    g = u.grid
    hu = apply_symbol_power(g, u.values, P.s / 2.0)
    hv = apply_symbol_power(g, v.values, P.s / 2.0)
    return float(g.h * np.sum(P.eps ** (2.0 * P.s) * hu * hv + u.values * v.values))


def loglog_fit(x, y) -> tuple[float, float]:
    """Least-squares slope and intercept of log y against log x."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    slope, intercept = np.polyfit(lx, ly, 1)
    return float(slope), float(intercept)


def write_csv(path, header, rows) -> None:
    """CSV with a header row and %.12e numeric formatting."""
    arr = np.asarray(rows, dtype=float)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in np.atleast_2d(arr):
            fh.write(",".join(f"{v:.12e}" for v in row) + "\n")
