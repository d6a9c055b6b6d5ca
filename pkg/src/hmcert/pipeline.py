"""End-to-end stages: certify -> solve -> sweep.

Each stage returns a report document (plain dicts) plus the objects later
stages need.  Per-point Poisson solves are the expensive step; they run in
a process pool when ``workers > 1`` and are cached on disk by content hash.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from . import tolerances as tol
from .certify import (
    ContractionConstants,
    DriftCertificate,
    MinorizationCertificate,
    RStepCertificate,
    check_function_contraction,
    check_measure_contraction,
    check_r_step_decay,
    fit_drift,
    fit_minorization,
    fit_r_step,
    hm_constants,
    individual_to_uniform,
)
from .errors import AssumptionFailure, CertificationError, NoFeasibleR, ViolatedBound
from .lipschitz import (
    FORMULAS as LIP_FORMULAS,
    LipschitzBounds,
    LipschitzHypotheses,
    empirical_certify,
    extend_to_measures_check,
    fit_hypotheses,
    invariant_measure_check,
    nstep_check,
    relaxed_constants,
    theoretical_constants,
)
from .models import Generated
from .norms import osc_seminorm, sup_norm_beta
from .poisson import (
    R_STEP_K_FORMULA,
    PoissonSolution,
    invariant_measure,
    k_u_constant,
    poisson_direct,
    poisson_r_step,
    poisson_series,
    r_step_k_constant,
)
from .report import FORMULAS, constant, fingerprint
from .statespace import kernel_power

log = logging.getLogger(__name__)

ORACLE_GAP = 1e-6
ROUTES = ("auto", "one-step", "r-step", "individual")


@dataclass
class RunOptions:
    route: str = "auto"
    gamma: float | None = None
    R: float | None = None
    alpha0: float | None = None
    gamma0: float | None = None
    optimize_tuning: bool = False
    r_max: int = 10
    contraction_trials: int = 500
    decay_steps: int = 20
    pairs: str = "auto"
    alpha_dd: float | None = None
    nstep_max: int = 10
    nstep_trials: int = 50
    series_tol: float = 1e-10
    invariant_tol: float = 1e-13
    seed: int = 0
    workers: int = 1
    cache_dir: Path | None = None
    tolerances: dict[str, float] = field(default_factory=dict)


@dataclass
class Certified:
    gen: Generated
    route: str
    beta: float
    drift: DriftCertificate | None = None
    minor: MinorizationCertificate | None = None
    cc: ContractionConstants | None = None
    rcert: RStepCertificate | None = None
    hyp: LipschitzHypotheses | None = None
    bounds: LipschitzBounds | None = None
    checks: dict[str, Any] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def family(self):
        return self.gen.family

    @property
    def V(self):
        return self.gen.V

    @property
    def drift_for_mean(self) -> DriftCertificate:
        """Drift certificate bounding the invariant mean of V."""
        return self.drift if self.rcert is None else self.rcert.drift_r


def _check_doc(rep) -> dict[str, Any]:
    return {"factor": rep.factor, "worst_ratio": rep.worst_ratio, "checks": rep.checks,
            "passed": rep.passed, "witness": rep.witness}


def _lip_doc(rep) -> dict[str, Any]:
    return {"worst_ratio": rep.worst_ratio, "checks": rep.checks, "passed": rep.passed, "witness": rep.witness}


# ---------------------------------------------------------------- certify


def certify(gen: Generated, opts: RunOptions) -> Certified:
    """Fit all assumptions, falling back to the r-step or individual-drift
    route when one-step drift or minorization fails.  If every route fails,
    the first failure is raised with the others attached.
    """
    fam, V = gen.family, gen.V
    if opts.route not in ROUTES:
        raise ValueError(f"unknown route {opts.route!r}; choose from {ROUTES}")
    if opts.route == "individual" and gen.V_family is None:
        raise ValueError("the individual route needs per-theta Lyapunov functions")
    first: AssumptionFailure | None = None
    cert = None
    if opts.route in ("auto", "one-step"):
        try:
            drift = fit_drift(fam, V, opts.gamma)
            minor = fit_minorization(fam, V, drift, opts.R)
            cc = hm_constants(drift, minor, opts.alpha0, opts.gamma0, opts.optimize_tuning, floor_K=True)
            cert = Certified(gen, "one-step", cc.beta, drift=drift, minor=minor, cc=cc)
        except AssumptionFailure as exc:
            if opts.route == "one-step":
                raise
            log.info("one-step route failed (%s); trying relaxed routes", exc)
            first = exc
    if cert is None:
        try:
            if gen.V_family is not None and opts.route != "r-step":
                a, b, c, d = gen.sandwich
                rc = individual_to_uniform(fam, gen.V_family, V, a, b, c, d,
                                           gamma=gen.meta.get("individual_gamma"), R=opts.R,
                                           alpha0=opts.alpha0, gamma0=opts.gamma0)
            else:
                rc = fit_r_step(fam, V, opts.r_max, opts.R, opts.alpha0, opts.gamma0, opts.optimize_tuning)
        except AssumptionFailure as second:
            if first is None:
                raise
            first.details["relaxed_route"] = second.to_dict()
            raise first from None
        cert = Certified(gen, rc.route, rc.beta, rcert=rc)
        if first is not None:
            cert.notes.append(f"one-step route failed: {type(first).__name__}: {first}")

    _contraction_checks(cert, opts)
    if fam.observables is not None and len(fam) >= 2:
        cert.hyp = fit_hypotheses(fam, V, cert.beta, opts.pairs)
        if cert.rcert is None:
            cert.bounds = theoretical_constants(cert.cc, cert.drift, cert.hyp)
        else:
            cert.bounds = relaxed_constants(cert.rcert, cert.hyp, opts.alpha_dd, family=fam, V=V, pairs=opts.pairs)
    elif fam.observables is None:
        cert.notes.append("no observables f_theta: Lipschitz hypotheses skipped")
    else:
        cert.notes.append("single grid point: Lipschitz hypotheses skipped")
    return cert


def _contraction_checks(cert: Certified, opts: RunOptions) -> None:
    fam, V, n = cert.family, cert.V, opts.contraction_trials
    if cert.rcert is None:
        cert.checks["function_contraction"] = _check_doc(check_function_contraction(fam, V, cert.cc, n, opts.seed))
        cert.checks["measure_contraction"] = _check_doc(check_measure_contraction(fam, V, cert.cc, n, opts.seed + 1))
    else:
        rc = cert.rcert
        fam_r = fam if rc.r == 1 else fam.power(rc.r)
        cert.checks["function_contraction_r"] = _check_doc(check_function_contraction(fam_r, V, rc.cc_r, n, opts.seed))
        cert.checks["measure_growth"] = _check_doc(
            check_measure_contraction(fam, V, rc.cc_r, n, opts.seed + 1, factor=rc.alpha_prime))
        worst = check_r_step_decay(fam, V, rc, opts.decay_steps, max(1, n // 5), opts.seed + 2)
        cert.checks["r_step_decay"] = {"steps": opts.decay_steps, "worst_ratio": worst, "passed": worst <= 1 + 1e-9}


def constants_doc(cert: Certified, opts: RunOptions) -> dict[str, Any]:
    out: dict[str, Any] = {}
    if cert.rcert is None:
        d, m, cc = cert.drift, cert.minor, cert.cc
        out["gamma"] = constant(d.gamma, d.provenance["gamma"])
        out["K"] = constant(d.K, d.provenance["K"])
        out["R"] = constant(m.R, m.provenance["R"], "(1 + margin) 2K/(1-gamma) when defaulted")
        out["alpha_bar"] = constant(m.alpha_bar, "fitted", "mass of the componentwise minimum of rows leaving {V <= R}")
        prov = dict(cc.provenance)
        out["alpha0"] = constant(cc.alpha0, prov["alpha0"])
        out["gamma0"] = constant(cc.gamma0, prov["gamma0"])
        for k in ("beta", "alpha", "alpha_minorize", "alpha_drift"):
            out[k] = constant(getattr(cc, k), "derived", FORMULAS[k])
        out["K_u"] = constant(k_u_constant(cc, d), "derived", LIP_FORMULAS["K_u"])
    else:
        rc = cert.rcert
        cc = rc.cc_r
        prov = dict(cc.provenance)
        out["r"] = constant(rc.r, rc.provenance.get("r", "fitted"))
        out["gamma_r"] = constant(rc.gamma_r, rc.provenance.get("gamma_r", rc.drift_r.provenance.get("gamma", "fitted")))
        out["K_r"] = constant(rc.K_r, rc.provenance.get("K_r", rc.drift_r.provenance.get("K", "fitted")))
        out["R"] = constant(rc.minor_r.R, rc.minor_r.provenance["R"])
        out["alpha_bar_r"] = constant(rc.minor_r.alpha_bar, "fitted")
        out["alpha0"] = constant(cc.alpha0, prov["alpha0"])
        out["gamma0"] = constant(cc.gamma0, prov["gamma0"])
        out["beta"] = constant(cc.beta, "derived", FORMULAS["beta"] + " (for P^r)")
        out["alpha_r"] = constant(cc.alpha, "derived", FORMULAS["alpha"] + " (for P^r)")
        out["gamma_1"] = constant(rc.gamma_1, rc.provenance["gamma_1"])
        out["K_1"] = constant(rc.K_1, rc.provenance["K_1"])
        out["alpha_prime"] = constant(rc.alpha_prime, "derived", FORMULAS["alpha_prime"])
        out["C"] = constant(rc.C, "derived", FORMULAS["C"])
        out["alpha"] = constant(rc.alpha, "derived", FORMULAS["alpha_combined"])
        out["K_poisson_r"] = constant(r_step_k_constant(rc), "derived", R_STEP_K_FORMULA)
        if rc.individual is not None:
            out["individual_gamma"] = constant(rc.individual[0], rc.provenance["individual_gamma"])
            out["individual_K"] = constant(rc.individual[1], "fitted")
    if cert.hyp is not None:
        for k in ("L_P", "L_f", "K_f"):
            out[k] = constant(getattr(cert.hyp, k), "fitted", FORMULAS[k])
    if cert.bounds is not None:
        for k, v in cert.bounds.as_dict().items():
            if v is None or k in ("beta", "K_u"):
                continue
            if k == "L_P_r":
                out[k] = constant(v, "fitted", "L_P estimated on P^r")
            elif k == "alpha_doubleprime":
                out[k] = constant(v, "defaulted" if opts.alpha_dd is None else "user-supplied",
                                  "alpha_prime * 1.05 when defaulted")
            else:
                formula = LIP_FORMULAS.get(k)
                if cert.rcert is not None and k in ("L_P_prime", "L_h", "L_u", "L_u1", "L_u2"):
                    formula = f"{formula} evaluated for P^r"
                out[k] = constant(v, "derived", formula)
    return out


def certify_doc(cert: Certified, opts: RunOptions) -> dict[str, Any]:
    doc = {
        "status": "certified",
        "route": cert.route,
        "model": model_summary(cert.gen),
        "constants": constants_doc(cert, opts),
        "checks": cert.checks,
        "notes": list(cert.notes),
        "conventions": {
            "theta_distance": "euclidean",
            "lipschitz_pairs": opts.pairs,
            "drift_selection": "minimum K/(1-gamma) on the feasible frontier, smallest gamma on ties",
            "lipschitz_factor": "L_P' and L_h use the factor 1/(1-alpha)",
        },
        "witnesses": {},
        "tolerances": tol.current(),
    }
    if cert.drift is not None:
        doc["witnesses"]["drift_tightest"] = cert.drift.worst
        doc["witnesses"]["small_set_size"] = len(cert.minor.small_set)
        doc["flags"] = list(cert.cc.flags)
    else:
        doc["witnesses"]["drift_r_tightest"] = cert.rcert.drift_r.worst
        doc["witnesses"]["small_set_size"] = len(cert.rcert.minor_r.small_set)
        doc["flags"] = list(cert.rcert.cc_r.flags)
    if cert.hyp is not None:
        doc["witnesses"]["lipschitz"] = cert.hyp.witnesses
        doc["checks"]["lipschitz_pairs_checked"] = cert.hyp.grid_pairs_checked
    if "self_test" in cert.gen.meta:
        doc["model"]["discretisation_self_test"] = cert.gen.meta["self_test"]
        doc["flags"].extend(cert.gen.meta.get("flags", []))
    if cert.gen.meta.get("individual_gamma") is not None:
        doc["model"]["individual_gamma"] = cert.gen.meta["individual_gamma"]
    return doc


def model_summary(gen: Generated) -> dict[str, Any]:
    fam = gen.family
    return {
        "name": fam.name,
        "states": fam.n_states,
        "grid_points": len(fam),
        "theta_dim": int(fam.theta_grid.shape[1]),
        "grid_hash": fam.grid_hash(),
        "content_hash": fingerprint([fam.theta_grid, list(fam.kernels), gen.V,
                                     list(fam.observables or ())])[:16],
    }


# ---------------------------------------------------------------- solve


def _solve_point(P, f, V, cert_parts, opts_parts):
    route, beta, cc, rcert, drift = cert_parts
    series_tol, invariant_tol, tolerances = opts_parts
    with tol.override(tolerances):
        im = invariant_measure(P, V, beta, invariant_tol, drift=drift)
        out: dict[str, Any] = {"iterations": im.iterations, "mu_star": np.asarray(im.mu_star).tolist()}
        if rcert is None:
            sol = poisson_series(P, f, im, cc, V, series_tol)
            k_u = k_u_constant(cc, drift)
        else:
            sol = poisson_r_step(P, rcert, f, im, V, series_tol)
            k_u = r_step_k_constant(rcert)
            im_r = invariant_measure(np.asarray(kernel_power(P, rcert.r)), V, beta, invariant_tol)
            gap_r = float(np.max(np.abs(np.asarray(im_r) - np.asarray(im))))
            if gap_r > 1e-9:
                raise ViolatedBound(f"invariant measures of P and P^r differ by {gap_r:.3e}")
            out["invariant_gap_r"] = gap_r
        direct = poisson_direct(P, f, im, V, beta)
        gap = sup_norm_beta(np.asarray(sol.u) - np.asarray(direct.u), V, beta)
        if gap > ORACLE_GAP:
            raise ViolatedBound(f"series and direct solutions differ by {gap:.3e}")
        osc_f = osc_seminorm(f, V, beta)
        norm_u = sup_norm_beta(sol.u, V, beta)
        if norm_u > k_u * osc_f + 1e-8:
            raise ViolatedBound(f"||u||_beta = {norm_u:.6g} exceeds K_u |||f|||_beta = {k_u * osc_f:.6g}")
        out.update(
            h=sol.h, u=np.asarray(sol.u).tolist(), truncation_n=sol.truncation_n,
            residual=sol.residual_norm, centering=sol.centering, bound=np.asarray(sol.bound).tolist(),
            min_bound_slack=float(np.min(sol.bound_slack)), oracle_gap=gap, osc_f=osc_f,
            sup_norm_u=norm_u, K_u_times_osc_f=k_u * osc_f, mean_V=im.mean_V,
            flags=direct.diagnostics.get("flags", []),
        )
    return out


def _solve_star(args):
    return _solve_point(*args)


def solve(cert: Certified, opts: RunOptions) -> list[dict[str, Any]]:
    fam = cert.family
    if fam.observables is None:
        raise ValueError("solving needs observables f_theta")
    V = np.asarray(cert.V)
    parts = (cert.route, cert.beta, cert.cc, cert.rcert, cert.drift_for_mean)
    oparts = (opts.series_tol, opts.invariant_tol, dict(opts.tolerances))
    jobs = [(np.asarray(k), np.asarray(f), V, parts, oparts) for k, f in zip(fam.kernels, fam.observables)]

    results: list[dict[str, Any] | None] = [None] * len(jobs)
    keys = [fingerprint(["solve", __version__, job]) for job in jobs]
    pending = []
    for t, key in enumerate(keys):
        hit = _cache_get(opts.cache_dir, key)
        if hit is not None:
            results[t] = hit
        else:
            pending.append(t)
    if pending:
        if opts.workers > 1 and len(pending) > 1:
            with ProcessPoolExecutor(max_workers=opts.workers) as pool:
                fresh = list(pool.map(_solve_star, [jobs[t] for t in pending]))
        else:
            fresh = [_solve_star(jobs[t]) for t in pending]
        for t, res in zip(pending, fresh):
            # round-trip through JSON so cached and fresh results are identical
            res = json.loads(json.dumps(res))
            _cache_put(opts.cache_dir, keys[t], res)
            results[t] = res
    return results  # type: ignore[return-value]


def _cache_get(cache_dir: Path | None, key: str):
    if cache_dir is None:
        return None
    path = Path(cache_dir) / f"solve-{key[:32]}.json"
    if not path.exists():
        return None
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError):
        return None


def _cache_put(cache_dir: Path | None, key: str, value) -> None:
    if cache_dir is None:
        return
    Path(cache_dir).mkdir(parents=True, exist_ok=True)
    path = Path(cache_dir) / f"solve-{key[:32]}.json"
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(value, sort_keys=True))
    tmp.replace(path)


def solve_doc(cert: Certified, results: list[dict[str, Any]]) -> dict[str, Any]:
    per = []
    for t, r in enumerate(results):
        per.append({k: r[k] for k in ("h", "truncation_n", "residual", "centering", "min_bound_slack",
                                      "oracle_gap", "osc_f", "sup_norm_u", "K_u_times_osc_f", "mean_V",
                                      "iterations", "flags")} | {"theta_index": t})
    return {
        "points": per,
        "max_residual": max(r["residual"] for r in results),
        "max_oracle_gap": max(r["oracle_gap"] for r in results),
        "min_bound_slack": min(r["min_bound_slack"] for r in results),
        "stationary_level": cert.drift_for_mean.stationary_level,
        "max_mean_V": max(r["mean_V"] for r in results),
    }


def solution_rows(cert: Certified, results):
    fam = cert.family
    V = np.asarray(cert.V)
    for t, (r, f) in enumerate(zip(results, fam.observables)):
        th = fam.theta_grid[t].tolist()
        for x in range(fam.n_states):
            yield [t, *th, x, V[x], float(np.asarray(f)[x]), r["u"][x], r["bound"][x],
                   r["bound"][x] - abs(r["u"][x]), r["mu_star"][x]]


def solution_header(cert: Certified) -> list[str]:
    k = cert.family.theta_grid.shape[1]
    return ["theta_index", *[f"theta_{i}" for i in range(k)], "state", "V", "f", "u", "bound", "slack", "mu_star"]


# ---------------------------------------------------------------- sweep


def sweep(cert: Certified, results: list[dict[str, Any]], opts: RunOptions):
    if cert.bounds is None:
        raise ValueError("sweep needs Lipschitz hypotheses (observables on at least two grid points)")
    fam, V = cert.family, cert.V
    sols = [PoissonSolution(np.asarray(r["u"]), r["h"], r["truncation_n"], r["residual"], r["centering"], "cached")
            for r in results]
    emp = empirical_certify(fam, cert.bounds, sols, V, pairs="all")
    mus = [np.asarray(r["mu_star"]) for r in results]
    checks: dict[str, Any] = {}
    if cert.rcert is None:
        checks["invariant_measures"] = _lip_doc(
            invariant_measure_check(fam, mus, V, cert.cc, cert.drift, cert.hyp.L_P))
        gen, zm = nstep_check(fam, V, cert.cc, cert.drift, cert.hyp.L_P, opts.nstep_max, opts.nstep_trials,
                              opts.seed + 3, opts.pairs)
        checks["nstep_general"], checks["nstep_zero_mass"] = _lip_doc(gen), _lip_doc(zm)
    else:
        rc = cert.rcert
        checks["invariant_measures"] = _lip_doc(
            invariant_measure_check(fam, mus, V, rc.cc_r, rc.drift_r, cert.bounds.L_P_r))
    pm, sm = extend_to_measures_check(fam, V, cert.beta, cert.hyp.L_P, opts.nstep_trials * 4, opts.seed + 4, opts.pairs)
    checks["kernel_on_measures"], checks["kernel_on_signed_measures"] = _lip_doc(pm), _lip_doc(sm)
    doc = {
        "L_h_used": emp.L_h,
        "L_u_used": emp.L_u,
        "max_ratio_h": emp.max_ratio_h,
        "max_ratio_u": emp.max_ratio_u,
        "max_slope_h": emp.max_slope_h,
        "pairs_checked": len(emp.pairs),
        "passed": emp.passed,
        "checks": checks,
    }
    return doc, emp


def pair_header() -> list[str]:
    return ["i", "j", "dtheta", "dh", "L_h_dtheta", "ratio_h", "du_weighted", "L_u_dtheta", "ratio_u"]


def pair_rows(emp):
    for p in emp.pairs:
        yield [p.i, p.j, p.dtheta, p.dh, emp.L_h * p.dtheta, p.ratio_h, p.du_weighted, emp.L_u * p.dtheta, p.ratio_u]


def failure_doc(exc: CertificationError) -> dict[str, Any]:
    doc = {"status": "failed", "error": exc.to_dict()}
    if isinstance(exc, NoFeasibleR):
        doc["error"]["route"] = "r-step"
    return doc
