"""Command-line driver: configuration, stages, persistence, reporting.

Stages write their artifacts under the output directory and a manifest
records config, versions, timestamps and file checksums.  Later stages load
earlier artifacts instead of recomputing; a missing prerequisite is a
dependency error (exit code 4).  Config problems exit 2, numerical failures
exit 3.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from . import __version__
from .gridcore import (
    ConfigError,
    Field,
    FREE,
    ModelParams,
    NumericalError,
    make_grid,
    write_csv,
)
from . import fracops, greenfn, groundstate, poisson, projection, reduction


class DependencyError(RuntimeError):
    pass


DEFAULTS = {
    "model": {"N": "1", "s": "0.3333333333333333", "p": "2.0"},
    "domain": {"a": "-1.0", "b": "1.0"},
    "grid": {
        "line_half_width": "6000.0",
        "line_points": "262144",
        "window_half_width": "8.0",
        "operators_points": "2048",
        "green_points": "8192",
        "projection_points": "16384",
        "poisson_points": "16384",
        "reduction_points": "16384",
        "scan_points": "16384",
        "scan_full_points": "4096",
    },
    "schedule": {
        "eps_projection": "0.01",
        "projection_d_min_factor": "3.0",
        "projection_d_max": "0.9",
        "projection_d_points": "12",
        "prefactor_eps": "0.05,0.0707,0.1,0.1414,0.2",
        "prefactor_ratio": "8.0",
        "green_d_min": "0.02",
        "green_d_max": "0.3",
        "green_d_points": "9",
        "poisson_envelope_eps": "0.05,0.1,0.2",
        "poisson_expansion_eps": "0.2,0.1,0.05,0.025",
        "poisson_expansion_dlaw": "0.8",
        "energy_eps": "0.05,0.1,0.2",
        "energy_dlaw": "0.8",
        "reduction_eps": "0.0125,0.01767,0.025",
        "coercivity_d": "0.1",
        "reduce_eps": "0.025",
        "reduce_d": "0.1",
        "scan_eps": "0.01,0.01414,0.02,0.02828,0.04,0.05657,0.08,0.11314,0.16,0.2",
        "scan_full_eps": "0.0125,0.01767,0.025,0.03536",
        "scan_full_spec_eps": "0.05,0.0707,0.1,0.1414,0.2",
        "scan_d_points": "14",
    },
    "reduction": {
        "varpi": "",
        "mu": "0.8",
        "zeta0": "0.34",
        "zeta": "",
        "ball_factor": "2.2",
    },
    "tolerances": {"tau_crosscheck": "0.02", "tail_floor": "1e-6"},
    "output": {"directory": "out", "workers": "1", "seed": "1234"},
}

STAGES = ("ground", "operators", "green", "project", "poisson", "reduce", "scan", "report")


@dataclass
class RunConfig:
    raw: configparser.ConfigParser
    out_dir: str
    workers: int
    seed: int

    def get(self, section: str, key: str) -> str:
        return self.raw.get(section, key)

    def getfloat(self, section: str, key: str) -> float:
        return self.raw.getfloat(section, key)

    def getint(self, section: str, key: str) -> int:
        return self.raw.getint(section, key)

    def getlist(self, section: str, key: str) -> list[float]:
        return [float(t) for t in self.get(section, key).split(",") if t.strip()]

    # -- model objects -------------------------------------------------------

    def model(self, eps: float = 0.1) -> ModelParams:
        return ModelParams(
            N=self.getint("model", "N"),
            s=self.getfloat("model", "s"),
            p=self.getfloat("model", "p"),
            eps=eps,
            domain=(self.getfloat("domain", "a"), self.getfloat("domain", "b")),
        )

    def reduction_params(self) -> reduction.ReductionParams:
        varpi = self.get("reduction", "varpi").strip()
        zeta = self.get("reduction", "zeta").strip()
        return reduction.make_reduction_params(
            self.model(),
            varpi=float(varpi) if varpi else None,
            mu_exp=self.getfloat("reduction", "mu"),
            zeta0=self.getfloat("reduction", "zeta0"),
            zeta=float(zeta) if zeta else None,
        )

    def grid_for(self, stage_key: str):
        L = self.getfloat("grid", "window_half_width")
        n = self.getint("grid", stage_key)
        a = self.getfloat("domain", "a")
        b = self.getfloat("domain", "b")
        return make_grid(L, n, (a, b))

    def validate(self) -> None:
        """Check every scheduled computation against module preconditions."""
        P = self.model()
        self.reduction_params()
        checks = [
            ("scan_points", min(self.getlist("schedule", "scan_eps"))),
            ("projection_points", self.getfloat("schedule", "eps_projection")),
            ("reduction_points", min(self.getlist("schedule", "reduction_eps"))),
            ("scan_full_points", min(self.getlist("schedule", "scan_full_spec_eps"))),
            ("poisson_points", min(self.getlist("schedule", "poisson_expansion_eps"))),
        ]
        for key, eps_min in checks:
            g = self.grid_for(key)
            if eps_min < 10.0 * g.h:
                raise ConfigError(
                    f"requires eps >= 10 h: stage grid '{key}' has h = {g.h:.3e} "
                    f"but schedules eps = {eps_min}"
                )
        Lline = self.getfloat("grid", "line_half_width")
        Lwin = self.getfloat("grid", "window_half_width")
        b = self.getfloat("domain", "b")
        eps_min = min(self.getlist("schedule", "scan_eps"))
        need = (Lwin + abs(b)) / eps_min
        if need > Lline:
            raise ConfigError(
                f"requires line half-width >= (window + |b|)/eps_min = {need:.1f}, "
                f"got {Lline}"
            )
        _ = P  # constructed above; inequalities already enforced


def load_config(path: str | None, overrides: list[str]) -> RunConfig:
    cp = configparser.ConfigParser()
    cp.read_dict(DEFAULTS)
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        cp.read(path)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        section, name = key.split(".", 1)
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section.strip(), name.strip(), value.strip())
    out_dir = os.environ.get("FRACPEAK_OUT") or cp.get("output", "directory")
    return RunConfig(
        raw=cp,
        out_dir=out_dir,
        workers=cp.getint("output", "workers"),
        seed=cp.getint("output", "seed"),
    )


# ---------------------------------------------------------------------------
# manifest and small utilities


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _config_echo(cfg: RunConfig) -> dict:
    return {s: dict(cfg.raw.items(s)) for s in cfg.raw.sections()}


def update_manifest(cfg: RunConfig, stage: str, files: list[str], status: str) -> None:
    path = os.path.join(cfg.out_dir, "manifest.json")
    manifest = {"version": __version__, "config": _config_echo(cfg), "stages": {}, "files": {}}
    if os.path.exists(path):
        with open(path) as fh:
            manifest = json.load(fh)
    manifest["version"] = __version__
    manifest["config"] = _config_echo(cfg)
    manifest["stages"][stage] = {"status": status, "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S")}
    for f in files:
        rel = os.path.relpath(f, cfg.out_dir)
        manifest["files"][rel] = _sha256(f)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def _stage_dir(cfg: RunConfig, stage: str) -> str:
    d = os.path.join(cfg.out_dir, stage)
    os.makedirs(d, exist_ok=True)
    return d


def _dump(path: str, obj) -> str:
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if isinstance(o, (np.bool_,)):
            return bool(o)
        raise TypeError(f"not serializable: {type(o)}")

    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, default=default)
    return path


def _load_json(cfg: RunConfig, stage: str, name: str) -> dict:
    path = os.path.join(cfg.out_dir, stage, name)
    if not os.path.exists(path):
        raise DependencyError(f"missing artifact {stage}/{name}; run `{stage}` first")
    with open(path) as fh:
        return json.load(fh)


def pmap(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# ground-state persistence


def save_ground(cfg: RunConfig, gs: groundstate.GroundState,
                wp: groundstate.RieszProfile, consts: groundstate.LimitConstants,
                spec: groundstate.SpectrumResult) -> list[str]:
    d = _stage_dir(cfg, "ground")
    files = []
    np.save(os.path.join(d, "profile.npy"), gs.U.values)
    np.save(os.path.join(d, "riesz_profile.npy"), wp.W.values)
    files += [os.path.join(d, "profile.npy"), os.path.join(d, "riesz_profile.npy")]
    sub = slice(None, None, max(1, gs.grid.n // 8192))
    write_csv(os.path.join(d, "U.csv"), ["x", "U"],
              np.column_stack([gs.grid.x[sub], gs.U.values[sub]]))
    files.append(os.path.join(d, "U.csv"))
    files.append(_dump(os.path.join(d, "constants.json"), {
        "A1": consts.A1, "A2": consts.A2, "A2_direct": consts.A2_direct, "B": consts.B,
        "peak_value": gs.peak_value, "decay_slope": gs.decay_slope,
        "alpha_hat": gs.alpha_hat, "beta_hat": gs.beta_hat,
        "residual_norm": gs.residual_norm, "W_tail_slope": wp.tail_slope,
        "W_peak": wp.peak_value,
    }))
    files.append(_dump(os.path.join(d, "spectrum.json"), {
        "eigenvalues": spec.eigenvalues, "near_zero": spec.near_zero,
        "near_zero_count": spec.near_zero_count, "overlap": spec.overlap,
        "negative_count": spec.negative_count, "kernel_residual": spec.kernel_residual,
    }))
    files.append(_dump(os.path.join(d, "meta.json"), {
        "L": gs.grid.L, "n": gs.grid.n, "domain": list(gs.grid.domain),
        "p": gs.p, "s": gs.s, "peak_value": gs.peak_value,
        "decay_slope": gs.decay_slope, "alpha_hat": gs.alpha_hat,
        "beta_hat": gs.beta_hat, "residual_norm": gs.residual_norm,
        "iterations": gs.iterations,
    }))
    return files


def load_ground(cfg: RunConfig) -> tuple[groundstate.GroundState, groundstate.RieszProfile,
                                         groundstate.LimitConstants]:
    d = os.path.join(cfg.out_dir, "ground")
    meta_path = os.path.join(d, "meta.json")
    if not os.path.exists(meta_path):
        raise DependencyError("missing artifact ground/meta.json; run `ground` first")
    with open(meta_path) as fh:
        meta = json.load(fh)
    grid = make_grid(meta["L"], meta["n"], tuple(meta["domain"]))
    U = np.load(os.path.join(d, "profile.npy"))
    W = np.load(os.path.join(d, "riesz_profile.npy"))
    interp = CubicSpline(grid.x, U, bc_type="natural", extrapolate=False)
    gs = groundstate.GroundState(
        U=Field(grid, U, FREE), p=meta["p"], s=meta["s"],
        peak_value=meta["peak_value"], decay_slope=meta["decay_slope"],
        alpha_hat=meta["alpha_hat"], beta_hat=meta["beta_hat"],
        residual_norm=meta["residual_norm"], iterations=meta["iterations"],
        interp=interp,
        dinterp=interp.derivative(),
    )
    cj = _load_json(cfg, "ground", "constants.json")
    wp = groundstate.RieszProfile(
        W=Field(grid, W, FREE), tail_slope=cj["W_tail_slope"], peak_value=cj["W_peak"],
        interp=CubicSpline(grid.x, W, bc_type="natural", extrapolate=False),
    )
    consts = groundstate.LimitConstants(
        A1=cj["A1"], A2=cj["A2"], A2_direct=cj["A2_direct"], B=cj["B"]
    )
    return gs, wp, consts


# ---------------------------------------------------------------------------
# stages


def stage_ground(cfg: RunConfig) -> list[str]:
    P = cfg.model()
    grid = make_grid(
        cfg.getfloat("grid", "line_half_width"),
        cfg.getint("grid", "line_points"),
        P.domain,
    )
    gs = groundstate.solve_ground_state(P, grid)
    wp = groundstate.riesz_profile(gs)
    consts = groundstate.limit_constants(gs, wp)
    spec = groundstate.nondegeneracy_spectrum(gs)
    return save_ground(cfg, gs, wp, consts, spec)


def stage_operators(cfg: RunConfig) -> list[str]:
    P = cfg.model()
    report = fracops.operator_selftest(P, L=cfg.getfloat("grid", "window_half_width"),
                                       seed=cfg.seed)
    d = _stage_dir(cfg, "operators")
    return [_dump(os.path.join(d, "selftest.json"), report)]


def stage_green(cfg: RunConfig) -> list[str]:
    P = cfg.model()
    grid = cfg.grid_for("green_points")
    op = fracops.build_domain_operator(grid, P)
    d_list = np.geomspace(
        cfg.getfloat("schedule", "green_d_min"),
        cfg.getfloat("schedule", "green_d_max"),
        cfg.getint("schedule", "green_d_points"),
    )
    fit = greenfn.robin_scaling_fit(P, op, d_list)
    grid2 = make_grid(grid.L, 2 * grid.n, grid.domain)
    op2 = fracops.build_domain_operator(grid2, P)
    fit2 = greenfn.robin_scaling_fit(P, op2, d_list)
    c_robin = greenfn.fit_robin_prefactor(fit, P.s, P.N)
    d = _stage_dir(cfg, "green")
    files = []
    write_csv(os.path.join(d, "robin.csv"), ["d", "robin"],
              np.column_stack([fit["d"], fit["robin"]]))
    files.append(os.path.join(d, "robin.csv"))
    files.append(_dump(os.path.join(d, "green_fit.json"), {
        "slope": fit["slope"], "slope_refined": fit2["slope"],
        "doubling_change": abs(fit2["slope"] - fit["slope"]),
        "intercept": fit["intercept"], "c_robin": c_robin,
        "reference_ratio_center": fit["robin"][-1] / greenfn.interval_robin_reference(
            P, P.domain[1] - fit["d"][-1]),
    }))
    return files


def stage_project(cfg: RunConfig) -> list[str]:
    gs, _, _ = load_ground(cfg)
    eps = cfg.getfloat("schedule", "eps_projection")
    P = cfg.model(eps)
    grid = cfg.grid_for("projection_points")
    op = fracops.build_domain_operator(grid, P)
    d_lo = cfg.getfloat("schedule", "projection_d_min_factor") * eps
    d_hi = cfg.getfloat("schedule", "projection_d_max")
    d_list = np.geomspace(d_lo, d_hi, cfg.getint("schedule", "projection_d_points"))
    tau_fit = projection.tau_scaling_fit(P, op, gs, d_list)
    eta_fit = projection.eta_scaling_fit(P, op, gs, d_list[d_list >= 10 * eps])
    c_tau = projection.fit_tau_prefactor(P, tau_fit)
    pre = projection.eps_prefactor_scan(
        op, gs, P, cfg.getlist("schedule", "prefactor_eps"),
        ratio=cfg.getfloat("schedule", "prefactor_ratio"),
    )
    rows = tau_fit["rows"]
    d = _stage_dir(cfg, "project")
    files = []
    write_csv(os.path.join(d, "tau.csv"),
              ["eps", "d", "tau_direct", "tau_boundary", "max_eta"],
              [[r.eps, r.d, r.tau_direct, r.tau_boundary, r.max_eta] for r in rows])
    files.append(os.path.join(d, "tau.csv"))
    files.append(_dump(os.path.join(d, "fits.json"), {
        "tau_slope": tau_fit["slope"],
        "tau_target": P.N + 4 * P.s,
        "eta_slope": eta_fit["slope"],
        "eta_target": -(P.N + 2 * P.s),
        "c_tau": c_tau,
        "tau_crosscheck_max_rel": float(np.max(np.abs(
            tau_fit["tau"] - tau_fit["tau_boundary"]) / tau_fit["tau"])),
        "prefactor_eps": pre["eps"], "tau_over_epsN": pre["tau_over_epsN"],
        "prefactor_spread": pre["spread"],
    }))
    return files


def stage_poisson(cfg: RunConfig) -> list[str]:
    gs, wp, consts = load_ground(cfg)
    grid = cfg.grid_for("poisson_points")
    P0 = cfg.model()
    op = fracops.build_domain_operator(grid, P0)
    b = P0.domain[1]

    envs = []
    for eps in cfg.getlist("schedule", "poisson_envelope_eps"):
        P = P0.with_eps(eps)
        envs.append({"eps": eps, **poisson.phi_decay_check(P, op, gs, b - 0.5)})

    dlaw = cfg.getfloat("schedule", "poisson_expansion_dlaw")
    expansion = []
    for eps in cfg.getlist("schedule", "poisson_expansion_eps"):
        P = P0.with_eps(eps)
        dd = eps**dlaw
        xi = b - dd
        htab = greenfn.regular_part(P, op, xi)
        err = poisson.phi_expansion_residual(P, op, gs, wp, htab, consts, xi)
        expansion.append({
            "eps": eps, "d": htab.d, "mu": err.mu, "residual": err.residual_max,
            "ratio": err.ratio, "lead_residual": err.lead_residual_max, "case": err.case,
        })

    P = P0.with_eps(0.05)
    U_f = groundstate.rescale_to(gs, P, b - 0.5, grid)
    phi = poisson.solve_phi(op, U_f, U_f, "U^2", b - 0.5, 0.05).phi
    d = _stage_dir(cfg, "poisson")
    files = []
    write_csv(os.path.join(d, "phi_profile.csv"), ["x", "phi"],
              np.column_stack([grid.x[op.interior], phi.values[op.interior]]))
    files.append(os.path.join(d, "phi_profile.csv"))
    files.append(_dump(os.path.join(d, "expansion_report.json"), {
        "envelopes": envs, "expansion": expansion,
        "envelope_spread": float(np.max([e["C_env_squared"] for e in envs])
                                 / np.min([e["C_env_squared"] for e in envs]) - 1.0),
    }))
    return files


def stage_reduce(cfg: RunConfig) -> list[str]:
    gs, wp, consts = load_ground(cfg)
    P0 = cfg.model()
    rp = cfg.reduction_params()
    grid = cfg.grid_for("reduction_points")
    op = fracops.build_domain_operator(grid, P0)
    b = P0.domain[1]

    # energy-expansion sweep on its stated path
    dlaw = cfg.getfloat("schedule", "energy_dlaw")
    sweep = []
    for eps in cfg.getlist("schedule", "energy_eps"):
        P = P0.with_eps(eps)
        R = projection.project(P, op, gs, b - eps**dlaw)
        htab = greenfn.regular_part(P, op, R.xi)
        bd = reduction.energy_expansion_check(P, op, gs, consts, htab, R, rp.zeta0)
        sweep.append({"eps": eps, "d": R.d, "residual": bd.residual,
                      "budget": bd.budget, "ratio": bd.ratio,
                      "term_green": bd.term_green, "term_tau": bd.term_tau})

    # one full-pipeline point inside the corrector's working band
    eps = cfg.getfloat("schedule", "reduce_eps")
    dd = cfg.getfloat("schedule", "reduce_d")
    P = P0.with_eps(eps)
    sys_ = reduction.ReducedSystem(P, op, gs, b - dd, fd_check=True)
    coer = sys_.coercivity()
    corr = sys_.solve_corrector(ball_factor=cfg.getfloat("reduction", "ball_factor"))
    htab = greenfn.regular_part(P, op, sys_.R.xi)
    bd = reduction.energy_expansion_check(P, op, gs, consts, htab, sys_.R, rp.zeta0)
    M = reduction.reduced_energy(P, op, sys_.R, corr)
    d = _stage_dir(cfg, "reduce")
    return [_dump(os.path.join(d, "breakdown.json"), {
        "eps": eps, "xi": sys_.R.xi, "d": sys_.R.d,
        "tau_direct": sys_.R.tau_direct, "tau_boundary": sys_.R.tau_boundary,
        "J_PU": bd.J_PU, "term_A1": bd.term_A1, "term_A2": bd.term_A2,
        "term_green": bd.term_green, "term_tau": bd.term_tau,
        "residual": bd.residual, "budget": bd.budget, "ratio": bd.ratio,
        "coercivity": coer.tau_min, "coercivity_unprojected": coer.unprojected_min,
        "l_norm": sys_.l_norm, "tangent_fd_rel": sys_.fd_rel_err,
        "corrector_norm": corr.norm_eps, "corrector_converged": corr.converged,
        "corrector_method": corr.method, "contraction": corr.contraction_factor,
        "M": M, "kappa": rp.kappa,
        "expansion_sweep": sweep,
    })]


def stage_scan(cfg: RunConfig) -> list[str]:
    gs, wp, consts = load_ground(cfg)
    P0 = cfg.model()
    rp = cfg.reduction_params()
    cj = _load_json(cfg, "project", "fits.json")
    gj = _load_json(cfg, "green", "green_fit.json")
    prefactors = {"c_tau": cj["c_tau"], "c_robin": gj["c_robin"], "fitted_from": "stages"}
    npts = cfg.getint("schedule", "scan_d_points")

    grid = cfg.grid_for("scan_points")
    op = fracops.build_domain_operator(grid, P0)
    cache: dict = {}

    def run_sur(eps):
        return reduction.scan(P0, op, gs, consts, rp, eps, mode="surrogate",
                              npoints=npts, prefactors=prefactors,
                              robin_cache=cache if cfg.workers <= 1 else None)

    scans = pmap(run_sur, cfg.getlist("schedule", "scan_eps"), cfg.workers)
    sur_fit = reduction.concentration_fit(scans, route="surrogate", min_span=8.0)

    gridf = cfg.grid_for("reduction_points")
    opf = fracops.build_domain_operator(gridf, P0)
    full_scans = []
    for eps in cfg.getlist("schedule", "scan_full_eps"):
        full_scans.append(reduction.scan(P0, opf, gs, consts, rp, eps, mode="full",
                                         npoints=npts, prefactors=prefactors))
    try:
        full_fit = reduction.concentration_fit(full_scans, route="full", min_span=2.5)
        full_fit_err = None
    except NumericalError as e:
        full_fit, full_fit_err = None, str(e)

    grids = cfg.grid_for("scan_full_points")
    ops = fracops.build_domain_operator(grids, P0)
    spec_scans, spec_errors = [], []
    for eps in cfg.getlist("schedule", "scan_full_spec_eps"):
        try:
            spec_scans.append(reduction.scan(P0, ops, gs, consts, rp, eps, mode="full",
                                             npoints=npts, prefactors=prefactors))
        except NumericalError as e:
            spec_errors.append({"eps": eps, "error": str(e)})
    try:
        spec_fit = reduction.concentration_fit(spec_scans, route="full", min_span=3.5)
        spec_fit_err = None
    except NumericalError as e:
        spec_fit, spec_fit_err = None, str(e)

    d = _stage_dir(cfg, "scan")
    files = []
    rows = []
    for r in scans + full_scans + spec_scans:
        for j in range(len(r.d_grid)):
            rows.append([
                r.eps, r.d_grid[j], r.m_raw[j],
                r.M_full[j] if r.M_full is not None else np.nan,
                r.tau[j], -0.25 * r.eps**2 * consts.B**2 * r.robin[j],
                1.0 if r.flags[j] else 0.0,
            ])
    write_csv(os.path.join(d, "scan.csv"),
              ["eps", "d", "m_two_term", "M_full", "tau", "green_term", "flagged"], rows)
    files.append(os.path.join(d, "scan.csv"))

    def scan_summary(r):
        return {"eps": r.eps, "d_star": r.d_star, "surrogate_d_star": r.surrogate_d_star,
                "interior": r.interior, "surrogate_interior": r.surrogate_interior,
                "window": list(r.window),
                "flagged_points": int(sum(1 for f in r.flags if f))}

    files.append(_dump(os.path.join(d, "fit.json"), {
        "surrogate": {k: sur_fit[k] for k in ("slope", "intercept", "span")},
        "surrogate_interior_all": bool(np.all([r.surrogate_interior for r in scans])),
        "full_working_range": (None if full_fit is None else
                               {k: full_fit[k] for k in ("slope", "intercept", "span")}),
        "full_working_error": full_fit_err,
        "full_declared_range": (None if spec_fit is None else
                                {k: spec_fit[k] for k in ("slope", "intercept", "span")}),
        "full_declared_error": spec_fit_err,
        "full_declared_point_errors": spec_errors,
        "prefactors": prefactors,
        "scans": [scan_summary(r) for r in scans],
        "full_scans": [scan_summary(r) for r in full_scans],
        "declared_full_scans": [scan_summary(r) for r in spec_scans],
    }))
    return files


def stage_report(cfg: RunConfig) -> list[str]:
    rows = []

    def add(claim, law, measured, target, passed):
        rows.append({"claim": claim, "law": law, "measured": measured,
                     "target": target, "pass": bool(passed)})

    sj = _load_json(cfg, "operators", "selftest.json")
    add("operator self-convergence", "order >= 2-2s",
        sj["self_convergence_order"], ">= %.3f" % (0.9 * (2 - 2 * cfg.model().s)),
        sj["self_convergence_order"] >= 0.9 * (2 - 2 * cfg.model().s))
    add("operator positivity", "smallest eigenvalue > 0",
        sj["eigenvalue_floor"], "> 0", sj["eigenvalue_floor"] > 0)
    add("summation-by-parts identity", "relative residual < 1e-10",
        sj["green_identity_max_relative_residual"], "< 1e-10",
        sj["green_identity_max_relative_residual"] < 1e-10)

    cj = _load_json(cfg, "ground", "constants.json")
    P = cfg.model()
    add("profile residual", "max-norm residual < 1e-9",
        cj["residual_norm"], "< 1e-9", cj["residual_norm"] < 1e-9)
    t = -(P.N + 2 * P.s)
    add("profile tail exponent", "slope = -(N+2s) +- 10%",
        cj["decay_slope"], f"{t:.4f} +- 10%", abs(cj["decay_slope"] - t) < 0.1 * abs(t))
    spj = _load_json(cfg, "ground", "spectrum.json")
    add("kernel of the linearization", "one eigenvalue within 1e-4 of 0",
        spj["near_zero_count"], "== 1", spj["near_zero_count"] == 1)
    add("kernel mode alignment", "overlap with translation mode >= 0.999",
        spj["overlap"], ">= 0.999", spj["overlap"] >= 0.999)

    pj = _load_json(cfg, "project", "fits.json")
    te = -(P.N + 2 * P.s)
    add("deficiency law", "slope of log max eta vs log d = -(N+2s) +- 10%",
        pj["eta_slope"], f"{te:.4f} +- 10%", abs(pj["eta_slope"] - te) < 0.1 * abs(te))
    tt = P.N + 4 * P.s
    add("boundary-energy law", "slope of log tau vs log(eps/d) = N+4s +- 10%",
        pj["tau_slope"], f"{tt:.4f} +- 10%", abs(pj["tau_slope"] - tt) < 0.1 * tt)
    add("boundary-energy cross-check", "two quadratures agree within 2%",
        pj["tau_crosscheck_max_rel"], "< 0.02", pj["tau_crosscheck_max_rel"] < 0.02)
    add("boundary-energy prefactor", "tau/eps^N stable within 15% at fixed d/eps",
        pj["prefactor_spread"], "< 0.15", pj["prefactor_spread"] < 0.15)

    gj = _load_json(cfg, "green", "green_fit.json")
    tg = -(P.N - 2 * P.s)
    add("boundary-value law", "slope of log robin vs log d = -(N-2s) +- 0.05",
        gj["slope"], f"{tg:.4f} +- 0.05", abs(gj["slope"] - tg) < 0.05)
    add("boundary-value grid stability", "doubling changes slope < 0.01",
        gj["doubling_change"], "< 0.01", gj["doubling_change"] < 0.01)

    oj = _load_json(cfg, "poisson", "expansion_report.json")
    add("coupling-field envelope", "envelope constant stable within 20%",
        oj["envelope_spread"], "< 0.20", oj["envelope_spread"] < 0.20)
    ratios = [e["ratio"] for e in oj["expansion"]]
    add("two-term expansion", "residual within error scale (ratio <= 1.5)",
        max(ratios), "<= 1.5", max(ratios) <= 1.5)

    rj = _load_json(cfg, "reduce", "breakdown.json")
    ratios = [abs(e["ratio"]) for e in rj["expansion_sweep"]]
    add("energy-expansion budget", "residual/budget bounded on the sweep",
        max(ratios), "<= 2", max(ratios) <= 2.0)
    signs_ok = all(e["term_green"] < 0 < e["term_tau"] for e in rj["expansion_sweep"])
    add("energy-expansion signs", "attraction negative, boundary cost positive",
        signs_ok, "all", signs_ok)
    add("reduced-operator floor", "coercivity > 0",
        rj["coercivity"], "> 0", rj["coercivity"] > 0)
    add("corrector", "converged with contraction < 1",
        rj["contraction"], "< 1", rj["corrector_converged"] and rj["contraction"] < 1.0)

    fj = _load_json(cfg, "scan", "fit.json")
    add("concentration exponent (surrogate)", "slope of log d* vs log eps = 2/3 +- 0.05",
        fj["surrogate"]["slope"], "0.6667 +- 0.05",
        abs(fj["surrogate"]["slope"] - 2 / 3) < 0.05)
    add("surrogate minimizer interior", "d* strictly inside the window",
        fj["surrogate_interior_all"], "all true", fj["surrogate_interior_all"])
    if fj["full_working_range"] is not None:
        add("concentration exponent (full, working range)",
            "slope of log d* vs log eps",
            fj["full_working_range"]["slope"], "reported", True)
    add("full reduction on declared range", "corrector exists on [0.05, 0.2]",
        fj["full_declared_error"] or "fit computed",
        "see notes", fj["full_declared_error"] is None)

    d = _stage_dir(cfg, "report")
    path = _dump(os.path.join(d, "report.json"), {"rows": rows,
                 "passed": sum(r["pass"] for r in rows), "total": len(rows)})
    width = max(len(r["claim"]) for r in rows)
    for r in rows:
        status = "PASS" if r["pass"] else "FAIL"
        print(f"{status}  {r['claim']:<{width}}  measured={r['measured']}  target={r['target']}")
    print(f"{sum(r['pass'] for r in rows)}/{len(rows)} checks passed")
    return [path]


STAGE_FUNCS = {
    "ground": stage_ground,
    "operators": stage_operators,
    "green": stage_green,
    "project": stage_project,
    "poisson": stage_poisson,
    "reduce": stage_reduce,
    "scan": stage_scan,
    "report": stage_report,
}


def run(subcommand: str, config_path: str | None = None, overrides: list[str] | None = None,
        workers: int | None = None, out_dir: str | None = None) -> int:
    try:
        cfg = load_config(config_path, overrides or [])
        if workers is not None:
            cfg.workers = workers
        if out_dir is not None:
            cfg.out_dir = out_dir
        cfg.validate()
        os.makedirs(cfg.out_dir, exist_ok=True)
        if subcommand not in STAGE_FUNCS:
            raise ConfigError(f"unknown subcommand {subcommand!r}; choose from {STAGES}")
        files = STAGE_FUNCS[subcommand](cfg)
        update_manifest(cfg, subcommand, files, "ok")
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DependencyError as e:
        print(f"dependency error: {e}", file=sys.stderr)
        return 4
    except (NumericalError, AssertionError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="fracpeak",
                                 description="boundary-peak toolkit driver")
    ap.add_argument("subcommand", choices=STAGES)
    ap.add_argument("--config", default=None, help="config file (ini-style sections)")
    ap.add_argument("--set", dest="overrides", action="append", default=[],
                    metavar="SECTION.KEY=VALUE", help="override a config entry")
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--out", default=None, help="output directory")
    args = ap.parse_args(argv)
    return run(args.subcommand, args.config, args.overrides, args.workers, args.out)


if __name__ == "__main__":
    raise SystemExit(main())
