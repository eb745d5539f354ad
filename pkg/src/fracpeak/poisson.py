"""Nonlocal coupling field: solves, decay envelopes, two-term expansion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gridcore import Field, ModelParams, NumericalError
from .fracops import NonlocalMatrix
from .greenfn import GreenTable
from .groundstate import GroundState, LimitConstants, RieszProfile, rescale_to
from .projection import project


@dataclass(frozen=True)
class PoissonField:
    phi: Field
    source: str
    xi: float | None = None
    eps: float | None = None


@dataclass(frozen=True)
class ExpansionError:
    mu: float
    residual_max: float
    ratio: float
    lead_residual_max: float
    case: str


def solve_phi(op: NonlocalMatrix, f: Field, g: Field, source: str = "fg",
              xi: float | None = None, eps: float | None = None) -> PoissonField:
    """Solve the coupling equation A phi = f g on the domain, zero outside."""
    gd = op.grid
    if not (f.grid.same_lattice(gd) and g.grid.same_lattice(gd)):
        raise ValueError("grid mismatch")
    rhs = (f.values * g.values)[op.interior]
    phi_i = op.solve(rhs)
    scale = float(np.max(np.abs(rhs))) or 1.0
    if np.all(rhs >= 0.0) and float(np.min(phi_i, initial=0.0)) < -1e-12 * scale:
        raise NumericalError("coupling solve violated positivity beyond round-off")
    vals = np.zeros(gd.n)
    vals[op.interior] = phi_i
    return PoissonField(Field.zero_outside(gd, vals), source, xi, eps)


def mu_error_scale(P: ModelParams, eps: float, d: float) -> tuple[float, str]:
    """Error scale of the two-term expansion; the branch splits on N + 4s - 2."""
    N, s = P.N, P.s
    if N + 4.0 * s - 2.0 >= 0.0:
        return eps ** (N + 2.0) * abs(np.log(eps)) / d ** (N - 2.0 * s + 2.0), "log"
    return eps ** (2.0 * N + 4.0 * s) / d ** (N - 2.0 * s + 2.0), "plain"


def phi_decay_check(P: ModelParams, op: NonlocalMatrix, gs: GroundState, xi: float) -> dict:
    """Fit the decay envelope of the coupling field of the squared peak.

    Returns the fitted envelope constants for the squared-profile source and
    for the plain-profile source, plus the peak value against the free-space
    profile prediction.
    """
    g = op.grid
    eps = P.eps
    U_f = rescale_to(gs, P, xi, g)
    ones = Field(g, np.ones(g.n), "free")
    phi2 = solve_phi(op, U_f, U_f, "U^2", xi, eps).phi
    phi1 = solve_phi(op, U_f, ones, "U", xi, eps).phi
    i_xi = g.nearest_index(xi)
    z = np.abs((g.x[op.interior] - g.x[i_xi]) / eps)
    envelope = 1.0 + z ** (P.N - 2.0 * P.s)
    C2 = float(np.max(phi2.values[op.interior] * envelope / eps ** (2.0 * P.s)))
    C1 = float(np.max(phi1.values[op.interior] * envelope / eps ** (2.0 * P.s)))
    return {
        "C_env_squared": C2,
        "C_env_single": C1,
        "phi_at_peak": float(phi2.values[i_xi]),
    }


def phi_expansion_residual(
    P: ModelParams,
    op: NonlocalMatrix,
    gs: GroundState,
    wp: RieszProfile,
    htab: GreenTable,
    consts: LimitConstants,
    xi: float,
) -> ExpansionError:
    """Residual of the two-term expansion of the coupling field.

    The probe set keeps scaled distances within half the boundary distance,
    where the expansion is asserted; the residual is compared against the
    case-split error scale.
    """
    g = op.grid
    eps = P.eps
    i_xi = g.nearest_index(xi)
    xi = float(g.x[i_xi])
    if abs(htab.xi - xi) > 0.5 * g.h:
        raise ValueError("regular-part table was computed at a different location")
    U_f = rescale_to(gs, P, xi, g)
    phi = solve_phi(op, U_f, U_f, "U^2", xi, eps).phi

    ii = op.interior
    z = (g.x[ii] - xi) / eps
    lead = eps ** (2.0 * P.s) * wp.profile(z)
    two = lead - eps**P.N * consts.B * htab.H_field.values[ii]
    probe = np.abs(g.x[ii] - xi) <= 0.5 * htab.d
    resid = float(np.max(np.abs(phi.values[ii][probe] - two[probe])))
    lead_resid = float(np.max(np.abs(phi.values[ii][probe] - lead[probe])))
    mu, case = mu_error_scale(P, eps, htab.d)
    return ExpansionError(
        mu=mu, residual_max=resid, ratio=resid / mu,
        lead_residual_max=lead_resid, case=case,
    )


def interaction_energy(op: NonlocalMatrix, u: Field) -> float:
    """Quadratic interaction integral of a zero-outside field."""
    g = op.grid
    u2 = u.values[op.interior] ** 2
    phi = op.solve(u2)
    return g.h * float(np.sum(phi * u2))


def projected_peak_field(P: ModelParams, op: NonlocalMatrix, gs: GroundState, xi: float) -> Field:
    """Convenience: the projected peak at one location (zero outside)."""
    return project(P, op, gs, xi).PU
