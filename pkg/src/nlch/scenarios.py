"""Scenario drivers: each reads a RunConfig and writes its artifacts to one directory."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, initial_fields, initial_state, perturbation, write_snapshot
from .diagnostics import (
    continuous_dependence_check,
    energy_equality_residual,
    fit_dissipation_rate,
    regularity_flags,
    run_with_ledger,
    sup_after,
)
from .dynamics import BlowUpError, ImexStepper, Params, State, integrate, rescaled_viscosity, run_trajectory
from .kernel import certify_H1
from .oracle import oracle_rk4, truncate
from .potential import certify_H2_to_H5, lipschitz_bound_on_range
from .spectral import SpectralSpace

log = logging.getLogger(__name__)

SLOPE_MIN = 0.9
GAP_MAX = 1e-4
MONOTONE_TOL = 0.05
ENERGY_STEP_TOL = 1e-10
MEAN_MU_SLACK = 1e-8


class CertificationError(RuntimeError):
    def __init__(self, msg: str, report: dict | None = None):
        super().__init__(msg)
        self.report = report or {}


class StudyFailed(RuntimeError):
    def __init__(self, msg: str, report: dict | None = None):
        super().__init__(msg)
        self.report = report or {}


def _write_json(path: Path, data: dict):
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _write_table(path: Path, columns: list[str], rows, comment: str | None = None):
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _prepare(out: Path) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run_pool(fn, jobs_args, jobs: int):
    if jobs <= 1 or len(jobs_args) <= 1:
        return [fn(a) for a in jobs_args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, jobs_args))


# -- certification ------------------------------------------------------------


def certify(cfg: RunConfig, out=None) -> dict:
    """Kernel and potential hypotheses with witness constants; writes certification.json."""
    return _certify(cfg, cfg.make_kernel(), cfg.make_potential(), out)[0]


def _certify(cfg: RunConfig, k, pot, out=None):
    h1 = certify_H1(k)
    cert = certify_H2_to_H5(pot, k)
    report = {"passed": bool(h1.passed and cert.passed), "H1": h1.to_dict(), **cert.to_dict(),
              "kernel": k.to_dict(), "potential": pot.to_dict()}
    if out is not None:
        _write_json(_prepare(out) / "certification.json", report)
    return report, cert


# -- simulate -----------------------------------------------------------------


def run_simulate(cfg: RunConfig, out=None, force: bool = False, seed: int | None = None) -> dict:
    """Run one trajectory and write ledger.csv, snapshots/ and summary.json."""
    out = _prepare(cfg.output_dir(out))
    sp = cfg.space()
    p = cfg.make_params()
    k = cfg.make_kernel()
    pot = cfg.make_potential()
    s0 = initial_state(cfg, sp, seed)
    report, cert = _certify(cfg, k, pot, out)
    if not report["passed"]:
        if not force:
            raise CertificationError("hypotheses not certified (use --force to run anyway)", report)
        log.warning("running with uncertified hypotheses (--force)")
    (out / "config.txt").write_text(cfg.dumps())
    if p.scheme == "oracle_rk4":
        return _simulate_oracle(cfg, out, s0, p, k, pot, report, force)

    snap_dir = out / "snapshots"
    snap_dir.mkdir(exist_ok=True)
    status = "ok"
    try:
        res = run_with_ledger(s0, p, k, pot, cert=cert, ledger_stride=cfg.outputs["ledger_stride"],
                              snapshot_stride=cfg.outputs["snapshot_stride"], steady_tol=cfg.outputs["steady_tol"])
    except BlowUpError as exc:
        res, status = exc.partial, "blowup"
        blow = exc
    for step, s in res.snapshots:
        write_snapshot(snap_dir / f"phi_{step:08d}.bin", s.phi, sp, s.t, "phi")
        write_snapshot(snap_dir / f"theta_{step:08d}.bin", s.theta, sp, s.t, "theta")
    led = res.ledger
    led.to_csv(out / "ledger.csv")
    summary = summarize(led, res, p, s0, report, force)
    summary["status"] = status
    _write_json(out / "summary.json", summary)
    if status == "blowup":
        raise blow
    return summary


def summarize(led, res, p: Params, s0: State, report: dict, force: bool) -> dict:
    if len(led) == 0:
        return {"steps": 0}
    fit = fit_dissipation_rate(led) if len(led) > 100 else None
    steady = res.steady
    drift_phi = float(np.max(np.abs(led["mean_phi"] - s0.M0)))
    drift_theta = float(np.max(np.abs(led["mean_theta"] - s0.N0)))
    fixed = bool(np.all(led["phit_Vdual"] == 0.0) and np.ptp(led["theta_V"]) == 0.0)
    violations = int(np.sum(np.abs(led["mean_mu"]) > led["mean_mu_bound"] + MEAN_MU_SLACK))
    return {
        "steps": int(led["step"][-1]),
        "t_final": float(led.t[-1]),
        "E_eps_initial": float(led["E_eps"][0]),
        "E_eps_final": float(led["E_eps"][-1]),
        "E_lyap_final": float(led["E_lyap"][-1]),
        "max_energy_increase": res.max_energy_increase,
        "energy_monotone": bool(res.max_energy_increase <= ENERGY_STEP_TOL),
        "max_residual": energy_equality_residual(led),
        "drift_phi": drift_phi,
        "drift_theta": drift_theta,
        "fixed_point": fixed,
        "steady_state": None if steady is None else {"step": steady.step, "t": steady.t, "energy": steady.energy},
        "dissipation_fit": None if fit is None else fit.to_dict(),
        "mean_mu_violations": violations,
        "regularity_flags": regularity_flags(led, p.t_end),
        "stabilization_alarms": res.alarms,
        "certified": bool(report["passed"]),
        "forced": bool(force and not report["passed"]),
    }


def _simulate_oracle(cfg, out, s0, p, k, pot, report, force) -> dict:
    sp = k.space
    n = min(min(sp.n_modes), 16)
    traj = oracle_rk4(s0, p, k, pot, n, stride=cfg.outputs["ledger_stride"])
    _write_table(out / "oracle.csv", ["t", "energy", "cum_dissipation", "residual"],
                 zip(traj.times, traj.energy, traj.dissipation, traj.residual),
                 f"Galerkin RK4 reference, {n} modes per axis")
    snap_dir = out / "snapshots"
    snap_dir.mkdir(exist_ok=True)
    write_snapshot(snap_dir / "phi_final.bin", traj.to_field(sp), sp, traj.times[-1], "phi")
    write_snapshot(snap_dir / "theta_final.bin", traj.to_field(sp, which="theta"), sp, traj.times[-1], "theta")
    summary = {"status": "ok", "scheme": "oracle_rk4", "n_modes": n, "t_final": float(traj.times[-1]),
               "E_initial": float(traj.energy[0]), "E_final": float(traj.energy[-1]),
               "max_residual": traj.max_residual(), "certified": bool(report["passed"]),
               "forced": bool(force and not report["passed"])}
    _write_json(out / "summary.json", summary)
    return summary


# -- sweep --------------------------------------------------------------------


def _sweep_job(args):
    text, base_dir, out, force, seed = args
    cfg = RunConfig.loads(text, base_dir)
    try:
        summary = run_simulate(cfg, out, force, seed)
    except BlowUpError as exc:
        return {"status": "blowup", "t_last": exc.t_last}
    led_path = Path(out) / "ledger.csv"
    from .diagnostics import EnergyLedger

    led = EnergyLedger.from_csv(led_path)
    p = cfg.make_params()
    summary["sup_theta_V"] = sup_after(led, "theta_V", 0.1 * p.t_end)
    summary["sup_mu_reg"] = sup_after(led, "mu_reg", 0.1 * p.t_end)
    return summary


def run_sweep(cfg: RunConfig, out=None, jobs: int = 1, force: bool = False, seed: int | None = None) -> dict:
    """One simulate run per value of ``study.axis``; aggregates sweep.csv."""
    out = _prepare(cfg.output_dir(out))
    axis, values = cfg.study["axis"], list(cfg.study["values"])
    args = []
    for v in values:
        sub = cfg.replace(scenario="simulate", params={axis: v})
        args.append((sub.dumps(), sub.base_dir, str(out / f"{axis}_{v!r}"), force, seed))
    results = _run_pool(_sweep_job, args, jobs)
    rows = []
    for v, r in zip(values, results):
        fit = r.get("dissipation_fit") or {}
        rows.append([v, r.get("status"), r.get("E_eps_final", np.nan), fit.get("nu3", np.nan),
                     r.get("sup_theta_V", np.nan), r.get("sup_mu_reg", np.nan), r.get("max_residual", np.nan)])
    _write_table(out / "sweep.csv", [axis, "status", "E_eps_final", "nu3_fit", "sup_theta_V", "sup_mu_reg",
                                     "max_residual"], rows, f"sweep over {axis}")
    report = {"axis": axis, "values": values, "runs": results}
    vals = np.asarray(values, dtype=float)
    sup = np.asarray([r.get("sup_theta_V", np.nan) for r in results], dtype=float)
    if axis == "epsilon" and len(vals) >= 2 and np.all(np.isfinite(sup)) and np.all(sup > 0):
        report["theta_V_loglog_slope"] = float(np.polyfit(np.log(vals), np.log(sup), 1)[0])
    _write_json(out / "sweep.json", report)
    return report


# -- singular limit -------------------------------------------------------------


def monotone_trend(gaps, tol: float = MONOTONE_TOL) -> bool:
    """Nonincreasing up to at most one inversion of relative size <= tol."""
    inversions = [(b - a) / a if a > 0 else np.inf for a, b in zip(gaps, gaps[1:]) if b > a]
    return len(inversions) == 0 or (len(inversions) == 1 and inversions[0] <= tol)


def limit_gaps(cfg: RunConfig, epsilons, delta: float, seed: int | None = None) -> dict:
    sp = cfg.space()
    k = cfg.make_kernel()
    pot = cfg.make_potential()
    delta0 = max(cfg.params["delta0"], delta)
    base = cfg.make_params(delta=delta, delta0=delta0)
    phi0, theta0 = initial_fields(cfg, sp, seed)
    s0 = State.initial(sp, phi0, theta0, base)
    beta = rescaled_viscosity(base.alpha, delta)
    speed = 1.0 + delta * delta
    n = base.n_steps
    ch = run_trajectory(s0, base.with_(dt=base.dt / speed, t_end=base.t_end / speed), k, pot, n_steps=n,
                        viscosity=beta, coupled=False)
    gaps = []
    for eps in epsilons:
        tr = run_trajectory(s0, base.with_(epsilon=eps), k, pot, n_steps=n)
        diff = tr.phi - ch.phi
        gaps.append(float(np.max(np.sqrt(np.sum(diff.reshape(len(diff), -1) ** 2, axis=1) * sp.cell_volume))))
    return {"epsilons": list(epsilons), "delta": delta, "alpha": base.alpha, "beta": beta, "gaps": gaps}


def run_limit_study(cfg: RunConfig, out=None, seed: int | None = None) -> dict:
    """gap(eps) between coupled phi and the rescaled isothermal solution; writes limit_study.csv."""
    out = _prepare(cfg.output_dir(out))
    res = limit_gaps(cfg, cfg.study["epsilons"], float(cfg.study["delta"]), seed)
    res["monotone"] = monotone_trend(res["gaps"])
    _write_table(out / "limit_study.csv", ["epsilon", "delta", "beta", "gap"],
                 [[e, res["delta"], res["beta"], g] for e, g in zip(res["epsilons"], res["gaps"])],
                 "gap = max_t ||phi_eps(t) - phi_CH(t / (1 + delta^2))||_L2")
    _write_json(out / "limit_study.json", res)
    if not res["monotone"]:
        raise StudyFailed("gap(eps) is not decreasing as eps decreases", res)
    return res


# -- oracle cross-check -----------------------------------------------------------


def oracle_gaps(sp: SpectralSpace, k, pot, s0: State, p: Params, dts, dt_ref: float, n_modes: int,
                stepper_cls=ImexStepper) -> dict:
    """Endpoint L2 gap between the IMEX scheme at each dt and the RK4 Galerkin reference."""
    ref = oracle_rk4(s0, p.with_(dt=dt_ref), k, pot, n_modes, stride=10**9)
    target = ref.to_field(sp)
    gaps = []
    for dt in dts:
        q = p.with_(dt=dt)
        stepper = stepper_cls(sp, k, pot, q)
        last = None
        for last in integrate(s0, q, k, pot, q.n_steps, stepper):
            pass
        gaps.append(sp.norm(last.phi - target))
    return {"dts": list(dts), "gaps": gaps, "oracle_residual": ref.max_residual()}


def convergence_slopes(dts, gaps) -> list[float]:
    return [float(np.log(g1 / g2) / np.log(d1 / d2)) if g1 > 0 and g2 > 0 else np.inf
            for d1, d2, g1, g2 in zip(dts, dts[1:], gaps, gaps[1:])]


def run_oracle_check(cfg: RunConfig, out=None, n_modes: int | None = None, seed: int | None = None,
                     stepper_cls=ImexStepper) -> dict:
    """IMEX against the Galerkin oracle on an n-mode grid; pass iff slope >= 0.9 and finest gap <= 1e-4.

    The slope is fitted over the dt values above the finest one; the finest
    dt sets the endpoint gap.
    """
    n = int(n_modes or cfg.study["n_modes"])
    if not 2 <= n <= 16:
        raise ConfigError("oracle check needs 2 <= n_modes <= 16")
    full = cfg.space()
    n = min(n, *full.n_modes)
    sp = SpectralSpace(full.dims, full.lengths, (n,) * full.dims)
    k = cfg.make_kernel(sp, validate=False)
    pot = cfg.make_potential()
    p = cfg.make_params(t_end=float(cfg.study["t_end"]))
    phi0, theta0 = initial_fields(cfg, full, seed)
    s0 = State.initial(sp, sp.inverse(truncate(full, phi0, n)), sp.inverse(truncate(full, theta0, n)), p)
    dts = sorted((float(d) for d in cfg.study["dts"]), reverse=True)
    res = oracle_gaps(sp, k, pot, s0, p, dts, float(cfg.study["dt_ref"]), n, stepper_cls)
    gaps = res["gaps"]
    coarse = dts[:-1] if len(dts) > 2 else dts
    cg = gaps[: len(coarse)]
    if all(g <= 1e-14 for g in gaps):
        slope = np.inf
    else:
        slope = float(np.polyfit(np.log(coarse), np.log(np.maximum(cg, 1e-300)), 1)[0])
    res.update({"n_modes": n, "t_end": p.t_end, "slope": slope, "pairwise_slopes": convergence_slopes(dts, gaps),
                "finest_gap": gaps[-1]})
    res["passed"] = bool(slope >= SLOPE_MIN and gaps[-1] <= GAP_MAX)
    o = _prepare(cfg.output_dir(out))
    _write_table(o / "oracle_check.csv", ["dt", "gap"], zip(dts, gaps), f"{n}-mode IMEX vs RK4 Galerkin oracle")
    _write_json(o / "oracle_check.json", res)
    return res


# -- continuous dependence --------------------------------------------------------


def _contdep_job(args):
    text, base_dir, i, seed, keep_curves = args
    cfg = RunConfig.loads(text, base_dir)
    sp = cfg.space()
    k = cfg.make_kernel()
    pot = cfg.make_potential()
    p = cfg.make_params()
    cert = certify_H2_to_H5(pot, k)
    phi0, theta0 = initial_fields(cfg, sp, seed + i)
    rng = np.random.default_rng([seed, i])
    dphi, dtheta = perturbation(cfg, sp, rng, float(cfg.initial_data["perturbation"]))
    s1 = State.initial(sp, phi0, theta0, p)
    s2 = State.initial(sp, phi0 + dphi, theta0 + dtheta, p)
    n = p.n_steps + 1  # the extra state supplies the last forward difference
    r1 = run_trajectory(s1, p, k, pot, n)
    r2 = run_trajectory(s2, p, k, pot, n)
    lo = min(r1.phi.min(), r2.phi.min())
    hi = max(r1.phi.max(), r2.phi.max())
    lip = lipschitz_bound_on_range(pot, lo, hi)
    rep = continuous_dependence_check(r1, r2, p, pot, k, cert.c0, lip)
    d = rep.to_dict()
    d["pair"] = i
    if keep_curves:
        d["curves"] = {"t": rep.t.tolist(), "lhs": rep.lhs.tolist(), "log_rhs": rep.log_rhs.tolist()}
    return d


def run_contdep(cfg: RunConfig, out=None, jobs: int = 1, seed: int | None = None, n_pairs: int | None = None) -> dict:
    """Continuous-dependence inequality on random equal-mean perturbed pairs."""
    out = _prepare(cfg.output_dir(out))
    k = cfg.make_kernel()
    cert = certify_H2_to_H5(cfg.make_potential(), k)
    if not cert.H2.feasible:
        raise CertificationError("continuous dependence needs F'' + a >= c0 > 0", cert.to_dict())
    seed = cfg.initial_data["seed"] if seed is None else seed
    n_pairs = int(n_pairs or cfg.study["n_pairs"])
    text = cfg.dumps()
    results = _run_pool(_contdep_job, [(text, cfg.base_dir, i, seed, i == 0) for i in range(n_pairs)], jobs)
    curves = results[0].pop("curves")
    _write_table(out / "contdep_curves.csv", ["t", "lhs", "log_rhs"],
                 zip(curves["t"], curves["lhs"], curves["log_rhs"]), "pair 0: LHS(t) and log RHS(t)")
    _write_table(out / "contdep.csv", ["pair", "passed", "min_log_margin", "earliest_violation", "nu1", "nu2"],
                 [[r["pair"], r["passed"], r["min_log_margin"], r["earliest_violation"], r["nu1"], r["nu2"]]
                  for r in results])
    report = {"pairs": results, "violations": sum(not r["passed"] for r in results),
              "passed": all(r["passed"] for r in results)}
    _write_json(out / "contdep.json", report)
    if not report["passed"]:
        raise StudyFailed(f"{report['violations']} of {n_pairs} pairs violate the continuous-dependence bound", report)
    return report
