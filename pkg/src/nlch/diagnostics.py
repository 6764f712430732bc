"""Energies, dissipation budgets and the per-run ledger.

All time integrals use the trapezoid rule on the recorded steps; the
discrete phi_t is the scheme's forward difference, so the energy-equality
residual measures scheme consistency and shrinks with dt.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial

from .dynamics import BlowUpError, ImexStepper, Params, State, SteadyStateDetector, Trajectory, integrate
from .kernel import Kernel
from .potential import Certification, Potential, poly_min
from .spectral import SpectralSpace

LEDGER_COLUMNS = (
    ("step", "1", "time step index"),
    ("t", "time", "simulation time"),
    ("E_eps", "energy", "free energy with thermal part"),
    ("E_lyap", "energy", "Lyapunov functional (xi, C_F in header)"),
    ("residual", "energy", "E_eps(t) + int dissipation - E_eps(0)"),
    ("grad_mu_sq", "energy/time", "||grad mu||^2"),
    ("alpha_phit_sq", "energy/time", "alpha ||phi_t||^2"),
    ("grad_theta_sq", "energy/time", "||grad theta||^2"),
    ("cum_grad_mu", "energy", "trapezoid integral of ||grad mu||^2"),
    ("cum_alpha_phit", "energy", "trapezoid integral of alpha ||phi_t||^2"),
    ("cum_grad_theta", "energy", "trapezoid integral of ||grad theta||^2"),
    ("cum_dissipation", "energy", "sum of the three integrals"),
    ("phit_Vdual", "1/time", "||phi_t||_V'"),
    ("theta_V", "1", "||theta||_V"),
    ("mu_reg", "1", "alpha ||Lap mu||^2 + ||mu||_V^2"),
    ("vnorm_sq", "1", "||phi||^2 + alpha ||phi||_V^2 + eps ||theta||_V^2"),
    ("mean_phi", "1", "<phi>"),
    ("mean_theta", "1", "<theta>"),
    ("mean_mu", "1", "<mu>"),
    ("mean_mu_bound", "1", "bound on |<mu>| from certified constants"),
    ("S", "1", "stabilisation constant in use"),
)
COLUMN_NAMES = tuple(c[0] for c in LEDGER_COLUMNS)


# -- energies ---------------------------------------------------------------


def nonlocal_energy(phi, k: Kernel) -> float:
    """(1/4) int int J (phi(x) - phi(y))^2 = (1/2)||sqrt(a) phi||^2 - (1/2)(J*phi, phi)."""
    sp = k.space
    return 0.5 * sp.inner(k.a_field * phi, phi) - 0.5 * sp.inner(k.convolve(phi), phi)


def energy_eps(s: State, p: Params, k: Kernel, pot: Potential) -> float:
    sp = k.space
    return nonlocal_energy(s.phi, k) + sp.integrate(pot.F(s.phi)) + 0.5 * p.epsilon * sp.inner(s.theta, s.theta)


def lyapunov_offset(pot: Potential, k: Kernel) -> float:
    """C_F making the Lyapunov functional non-negative.

    With c1 = c_J/2 and c2 = -min(F - c1 s^2): 2(F(phi),1) - (J*phi, phi_hat)
    >= (2 c1 - c_J)||phi||^2 - 2 c2 |Omega| >= -2 c2 |Omega|.
    """
    discrete_l1 = float(np.sum(np.abs(k.samples)) * k.space.cell_volume)
    c1 = 0.5 * max(k.c_J, k.c_J_full, discrete_l1)
    m, _ = poly_min(pot.F - Polynomial([0.0, 0.0, c1]))
    return max(0.0, -2.0 * m * k.space.volume)


class LyapunovError(ValueError):
    pass


def lyapunov_E(s: State, p: Params, k: Kernel, pot: Potential, xi: float = 0.1, C_F: float | None = None) -> float:
    """xi||phi^||_V'^2 + xi alpha||phi^||^2 + ||sqrt(a)phi||^2 + eps||theta^||^2 + 2(F(phi),1) - (J*phi, phi^) + C_F."""
    if not 0 < xi < 1:
        raise ValueError("xi must lie in (0, 1)")
    sp = k.space
    if C_F is None:
        C_F = lyapunov_offset(pot, k)
    M0 = s.M0 if np.isfinite(s.M0) else sp.mean(s.phi)
    N0 = s.N0 if np.isfinite(s.N0) else sp.mean(s.theta)
    ph = s.phi - M0
    th = s.theta - N0
    ch = sp.transform(ph)
    E = (
        xi * sp.coeff_norm_sq(ch, "Vdual")
        + xi * p.alpha * sp.coeff_norm_sq(ch)
        + sp.inner(k.a_field * s.phi, s.phi)
        + p.epsilon * sp.inner(th, th)
        + 2.0 * sp.integrate(pot.F(s.phi))
        - sp.inner(k.convolve(s.phi), ph)
        + C_F
    )
    if E < 0:
        raise LyapunovError(f"Lyapunov functional negative ({E:.4g}); C_F = {C_F:.4g} is too small")
    return float(E)


def mean_mu_bound(phi, phit, theta, p: Params, k: Kernel, pot: Potential, c3: float, c4: float) -> float:
    """Right-hand side of the <mu> estimate assembled from certified constants."""
    sp = k.space
    vol = sp.volume
    rv = np.sqrt(vol)
    return (
        2.0 * k.c_J / rv * sp.norm(phi)
        + c3 / vol * sp.integrate(np.abs(pot.F(phi)))
        + c4 * vol
        + p.alpha / rv * sp.norm(phit)
        + p.delta0 / rv * sp.norm(theta)
    )


# -- ledger -----------------------------------------------------------------


def _jsonable(o):
    return o.tolist() if hasattr(o, "tolist") else float(o)


@dataclass
class EnergyLedger:
    rows: np.ndarray
    header: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.rows[:, COLUMN_NAMES.index(name)]

    @property
    def t(self) -> np.ndarray:
        return self["t"]

    def decimate(self, stride: int) -> "EnergyLedger":
        idx = np.arange(0, len(self), stride)
        return EnergyLedger(self.rows[idx], dict(self.header))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write("# nlch energy ledger\n")
        buf.write("# header: " + json.dumps(self.header, sort_keys=True, default=_jsonable) + "\n")
        for i, (name, unit, desc) in enumerate(LEDGER_COLUMNS):
            buf.write(f"# column {i}: {name} [{unit}] {desc}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMN_NAMES)
        for row in self.rows:
            w.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "EnergyLedger":
        header, rows = {}, []
        with open(path) as fh:
            for line in fh:
                if line.startswith("# header: "):
                    header = json.loads(line[len("# header: "):])
                elif line.startswith("#") or line.startswith("step,"):
                    continue
                elif line.strip():
                    rows.append([float(v) for v in line.split(",")])
        arr = np.asarray(rows, dtype=float).reshape(-1, len(COLUMN_NAMES))
        return cls(arr, header)


class LedgerRecorder:
    """Accumulates ledger rows from consecutive states of one run."""

    def __init__(self, p: Params, k: Kernel, pot: Potential, cert: Certification | None = None,
                 xi: float = 0.1, stride: int = 1):
        self.p, self.k, self.pot, self.xi, self.stride = p, k, pot, xi, stride
        self.sp: SpectralSpace = k.space
        self.C_F = lyapunov_offset(pot, k)
        if cert is None:
            from .potential import certify_H2_to_H5

            cert = certify_H2_to_H5(pot, k)
        self.c3 = cert.fcons31.constants["c3"]
        self.c4 = cert.fcons31.constants["c4"]
        self.rows = []
        self.cum = np.zeros(3)
        self.prev_integrands = None
        self.E0 = None
        self.E_prev = None
        self.max_energy_increase = 0.0
        self.lyapunov_ok = True

    def header(self) -> dict:
        return {"xi": self.xi, "C_F": self.C_F, "fcons_c3": self.c3, "fcons_c4": self.c4,
                "params": self.p.to_dict(), "kernel": self.k.to_dict(), "potential": self.pot.to_dict(),
                "space": self.sp.to_dict()}

    def record(self, step: int, cur: State, nxt: State, S: float, final: bool = False) -> np.ndarray:
        """Row for ``cur``; ``nxt`` supplies the forward-difference phi_t."""
        sp, p, k, pot = self.sp, self.p, self.k, self.pot
        lam, inv_lam = sp.eigenvalues, sp.inverse_eigenvalues
        h, vol = sp.cell_volume, sp.volume
        rvol = np.sqrt(vol)
        phi, theta = cur.phi, cur.theta
        phit = (nxt.phi - phi) / p.dt
        Jphi = k.convolve(phi)
        Fphi = pot.F(phi)
        r = k.a_field * phi - Jphi + pot.dF(phi) - p.delta * theta
        mu_hat = sp.transform(r) / (1.0 + p.alpha * lam)
        ph_hat = sp.transform(phi)
        th_hat = sp.transform(theta)
        pt_hat = sp.transform(phit)
        ph2, th2, pt2, mu2 = ph_hat**2, th_hat**2, pt_hat**2, mu_hat**2
        grad_mu = float(np.sum(lam * mu2))
        alpha_pt = p.alpha * float(np.sum(pt2))
        grad_th = float(np.sum(lam * th2))
        integrands = np.array([grad_mu, alpha_pt, grad_th])
        if self.prev_integrands is not None:
            self.cum = self.cum + 0.5 * p.dt * (self.prev_integrands + integrands)
        self.prev_integrands = integrands

        a_phi2 = h * float(np.sum(k.a_field * phi * phi))
        Jphi_phi = h * float(np.sum(Jphi * phi))
        intF = h * float(np.sum(Fphi))
        th_sq = float(np.sum(th2))
        E = 0.5 * a_phi2 - 0.5 * Jphi_phi + intF + 0.5 * p.epsilon * th_sq
        if self.E0 is None:
            self.E0 = E
        if self.E_prev is not None:
            self.max_energy_increase = max(self.max_energy_increase, E - self.E_prev)
        self.E_prev = E

        # hatted quantities drop the constant mode
        M0 = ph_hat.flat[0] / rvol
        hat_vdual = float(np.sum(inv_lam * ph2))
        hat_l2 = float(np.sum(ph2) - ph2.flat[0])
        hat_th = th_sq - float(th2.flat[0])
        Jphi_hatphi = Jphi_phi - M0 * h * float(np.sum(Jphi))
        EL = (self.xi * hat_vdual + self.xi * p.alpha * hat_l2 + a_phi2 + p.epsilon * hat_th
              + 2.0 * intF - Jphi_hatphi + self.C_F)
        if EL < 0:
            self.lyapunov_ok = False

        cum_total = float(self.cum.sum())
        th_V = float(np.sum(lam * th2) + th2.flat[0] / vol)
        bound = (2.0 * k.c_J / rvol * np.sqrt(float(np.sum(ph2)))
                 + self.c3 / vol * h * float(np.sum(np.abs(Fphi)))
                 + self.c4 * vol
                 + p.alpha / rvol * np.sqrt(float(np.sum(pt2)))
                 + p.delta0 / rvol * np.sqrt(th_sq))
        row = np.array([
            step, cur.t, E, EL, E + cum_total - self.E0,
            grad_mu, alpha_pt, grad_th, *self.cum, cum_total,
            np.sqrt(float(np.sum(inv_lam * pt2) + pt2.flat[0] / vol)),
            np.sqrt(th_V),
            p.alpha * float(np.sum(lam * lam * mu2)) + float(np.sum(lam * mu2) + mu2.flat[0] / vol),
            float(np.sum(ph2)) + p.alpha * float(np.sum(lam * ph2) + ph2.flat[0] / vol) + p.epsilon * th_V,
            M0, th_hat.flat[0] / rvol, mu_hat.flat[0] / rvol,
            bound,
            S,
        ])
        if step % self.stride == 0 or final:
            self.rows.append(row)
        return row

    def ledger(self) -> EnergyLedger:
        return EnergyLedger(np.asarray(self.rows, dtype=float).reshape(-1, len(COLUMN_NAMES)), self.header())


@dataclass
class RunResult:
    ledger: EnergyLedger
    final: State
    steady: object
    alarms: int
    max_energy_increase: float
    snapshots: list


def run_with_ledger(s0: State, p: Params, k: Kernel, pot: Potential, n_steps: int | None = None,
                    cert: Certification | None = None, xi: float = 0.1, ledger_stride: int = 1,
                    snapshot_stride: int | None = None, steady_tol: float | None = None,
                    stop_at_steady: bool = False) -> RunResult:
    """Integrate with the IMEX scheme, recording a ledger row per step.

    One extra step beyond ``n_steps`` is taken (and discarded) so the final
    row has a forward-difference phi_t like every other row.  On blow-up the
    partial result is attached to the exception as ``partial``.
    """
    n_steps = p.n_steps if n_steps is None else n_steps
    stepper = ImexStepper(k.space, k, pot, p)
    rec = LedgerRecorder(p, k, pot, cert, xi, ledger_stride)
    det = SteadyStateDetector(k.space, p.dt, steady_tol) if steady_tol else None
    snaps = []
    prev = prev_prev = last = None

    def result():
        return RunResult(rec.ledger(), last, det.found if det else None, stepper.alarms,
                         rec.max_energy_increase, snaps)

    try:
        for n, s in enumerate(integrate(s0, p, k, pot, n_steps + 1, stepper)):
            if prev is not None:
                step = n - 1
                rec.record(step, prev, s, stepper.S, final=step == n_steps)
                if snapshot_stride and (step % snapshot_stride == 0 or step == n_steps):
                    snaps.append((step, prev))
                last = prev
                if det is not None and prev_prev is not None and det.found is None:
                    det.update(step, prev_prev, prev)
                    if det.found is not None:
                        det.found.energy = energy_eps(prev, p, k, pot)
                        if stop_at_steady:
                            break
                prev_prev = prev
            prev = s
    except BlowUpError as exc:
        exc.partial = result()
        raise
    return result()


def energy_equality_residual(ledger: EnergyLedger) -> float:
    """max_t |E_eps(t) + int_0^t dissipation - E_eps(0)| over the ledger."""
    return float(np.max(np.abs(ledger["residual"])))


# -- dissipation and absorbing behaviour ---------------------------------------


@dataclass
class DissipationFit:
    conclusive: bool
    nu3: float
    E_plateau: float
    E0: float
    window: tuple
    invariant: bool
    entry_time: float
    entry_bound: float
    gronwall_ok: bool
    max_gronwall_excess: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def find_plateau(E: np.ndarray, lag: int = 100, rtol: float = 1e-8) -> int | None:
    """First index where |E[i] - E[i - lag]| <= rtol |E[i]| (and stays so to the end)."""
    if len(E) <= lag:
        return None
    change = np.abs(E[lag:] - E[:-lag]) <= rtol * np.maximum(np.abs(E[lag:]), 1e-300)
    if not change[-1]:
        return None
    bad = np.flatnonzero(~change)
    start = 0 if bad.size == 0 else bad[-1] + 1
    return int(start + lag)


def fit_dissipation_rate(ledger: EnergyLedger, column: str = "E_lyap", lag: int = 100, rtol: float = 1e-8,
                         floor: float = 1e-4, invariance_rtol: float = 1e-6) -> DissipationFit:
    """Fit E(t) - E_plateau ~ C exp(-nu3 t) over the transient.

    The transient window runs from t = 0 while E - E_plateau exceeds
    ``floor`` times its initial value.  Positive invariance is checked at
    the level E_plateau (1 + invariance_rtol); the entry time is measured
    for the level 2 E_plateau and compared with (1/nu3) ln(E(0)/E_plateau).
    """
    t = ledger.t
    E = ledger[column]
    dt = float(t[1] - t[0]) if len(t) > 1 else 0.0
    i_plat = find_plateau(E, lag, rtol)
    E0 = float(E[0])
    if i_plat is None:
        return DissipationFit(False, np.nan, np.nan, E0, (), False, np.nan, np.nan, False, np.nan)
    Ep = float(np.mean(E[i_plat:]))
    excess = E - Ep
    if excess[0] <= 0 or abs(excess[0]) <= invariance_rtol * abs(Ep):
        # already at the plateau: empty transient
        inv = bool(np.all(E <= Ep * (1 + invariance_rtol) + 1e-14))
        return DissipationFit(True, np.inf, Ep, E0, (), inv, 0.0, 0.0, True, 0.0)
    thresh = floor * excess[0]
    below = np.flatnonzero(excess <= thresh)
    end = int(below[0]) if below.size else i_plat
    end = max(end, 2)
    sel = excess[:end] > 0
    tt, yy = t[:end][sel], np.log(excess[:end][sel])
    slope, icpt = np.polyfit(tt, yy, 1)
    nu3 = float(-slope)

    level = Ep * (1 + invariance_rtol) if Ep > 0 else Ep + invariance_rtol
    inside = E <= level
    first = np.flatnonzero(inside)
    invariant = bool(first.size and np.all(inside[first[0]:]))

    hit = np.flatnonzero(E <= 2.0 * Ep)
    entry = float(t[hit[0]]) if hit.size else np.inf
    bound = max(np.log(E0 / Ep) / nu3, 0.0) + 10 * dt if nu3 > 0 and Ep > 0 else np.nan

    window = t <= t[end - 1]
    envelope = np.exp(-nu3 * t[window]) * (E0 - Ep) + Ep
    excess_rel = (E[window] - envelope) / np.abs(E[window])
    max_excess = float(np.max(excess_rel))
    return DissipationFit(True, nu3, Ep, E0, (float(t[0]), float(t[end - 1])), invariant, entry, float(bound),
                          bool(max_excess <= 0.05), max_excess)


# -- continuous dependence ---------------------------------------------------


def nu_bar_1(c0: float, c_J: float, d_J: float, alpha: float, epsilon: float, delta0: float) -> float:
    """Growth rate in the continuous-dependence estimate."""
    mid = (2.0 * c0 * (c0 / alpha - 1.0) + d_J**2 + 2.0 * c_J**2 / alpha + 1.0) / alpha
    return max(1.0, mid, delta0**2 / epsilon)


def nu_bar_2(C_F: float, volume: float, delta0: float) -> float:
    return max(C_F, volume, 0.5 * delta0 * volume, 1.0)


@dataclass
class ContDepReport:
    passed: bool
    nu1: float
    nu2: float
    C_F: float
    t: np.ndarray
    lhs: np.ndarray
    log_rhs: np.ndarray
    earliest_violation: float | None
    min_log_margin: float

    def to_dict(self) -> dict:
        return {"passed": self.passed, "nu1": self.nu1, "nu2": self.nu2, "C_F": self.C_F,
                "earliest_violation": self.earliest_violation, "min_log_margin": self.min_log_margin,
                "final_lhs": float(self.lhs[-1]), "final_log_rhs": float(self.log_rhs[-1])}


def continuous_dependence_check(run1: Trajectory, run2: Trajectory, p: Params, pot: Potential, k: Kernel,
                                c0: float, lipschitz: float, rtol: float = 1e-12) -> ContDepReport:
    """LHS(t) <= RHS(t) at every recorded time, compared in log space (RHS grows like exp(nu1 t))."""
    sp = k.space
    if run1.phi.shape != run2.phi.shape or run1.dt != run2.dt:
        raise ValueError("runs must share grid and time step")
    nu1 = nu_bar_1(c0, k.c_J, k.d_J, p.alpha, p.epsilon, p.delta0)
    nu2 = nu_bar_2(lipschitz, sp.volume, p.delta0)
    dt = run1.dt
    dphi = run1.phi - run2.phi
    dth = run1.theta - run2.theta
    n = len(run1) - 1  # last state only supplies the forward difference
    hnorm = np.empty(n)
    integrand = np.empty(n)
    for i in range(n):
        ch = sp.transform(dphi[i])
        tch = sp.transform(dth[i])
        hnorm[i] = sp.coeff_norm_sq(ch, "Vdual") + p.alpha * sp.coeff_norm_sq(ch) + p.epsilon * sp.coeff_norm_sq(tch)
        dt_hat = sp.transform((dphi[i + 1] - dphi[i]) / dt)
        integrand[i] = (2.0 * sp.coeff_norm_sq(dt_hat, "Vdual") + p.alpha * sp.coeff_norm_sq(dt_hat)
                        + 2.0 * sp.coeff_norm_sq(tch, "V"))
    cum = np.concatenate([[0.0], np.cumsum(0.5 * dt * (integrand[1:] + integrand[:-1]))])
    lhs = hnorm + cum
    t = run1.times[:n] - run1.times[0]
    dM = abs(sp.mean(run1.phi[0]) - sp.mean(run2.phi[0]))
    dN = abs(sp.mean(run1.theta[0]) - sp.mean(run2.theta[0]))
    base = hnorm[0] + 2.0 * nu2 / nu1 * (dM + dN) ** 2
    with np.errstate(divide="ignore"):
        log_rhs = nu1 * t + np.log(base) if base > 0 else np.full(n, -np.inf)
        log_lhs = np.log(np.maximum(lhs, 0.0))
    slack = np.log1p(rtol)
    ok = (lhs <= 0) | (log_lhs <= log_rhs + slack)
    bad = np.flatnonzero(~ok)
    with np.errstate(invalid="ignore"):
        margin = log_rhs - log_lhs
    finite = np.isfinite(margin)
    return ContDepReport(bool(ok.all()), nu1, nu2, lipschitz, t, lhs, log_rhs,
                         float(t[bad[0]]) if bad.size else None,
                         float(np.min(margin[finite])) if finite.any() else np.inf)


# -- regularity monitors ------------------------------------------------------


MONITORS = ("theta_V", "mu_reg", "phit_Vdual", "alpha_phit_sq", "vnorm_sq")


def regularity_monitors(s: State, p: Params, k: Kernel, pot: Potential, phit) -> dict:
    """Norms whose boundedness the regularity estimates assert, for one state."""
    sp = k.space
    lam = sp.eigenvalues
    r = k.nonlocal_diffusion(s.phi) + pot.dF(s.phi) - p.delta * s.theta
    mu_hat = sp.transform(r) / (1.0 + p.alpha * lam)
    th_hat = sp.transform(s.theta)
    pt_hat = sp.transform(phit)
    return {
        "theta_V": float(np.sqrt(sp.coeff_norm_sq(th_hat, "V"))),
        "mu_reg": p.alpha * sp.coeff_norm_sq(mu_hat, "H2seminorm") + sp.coeff_norm_sq(mu_hat, "V"),
        "phit_Vdual": float(np.sqrt(sp.coeff_norm_sq(pt_hat, "Vdual"))),
        "alpha_phit_sq": p.alpha * sp.coeff_norm_sq(pt_hat),
        "vnorm_sq": sp.inner(s.phi, s.phi) + p.alpha * sp.norm(s.phi, "V") ** 2 + p.epsilon * sp.coeff_norm_sq(th_hat, "V"),
    }


def regularity_flags(ledger: EnergyLedger, t_end: float | None = None, factor: float = 10.0,
                     floor: float = 1e-12) -> dict:
    """Monitors whose sup after 0.1 t_end exceeds ``factor`` times their value there."""
    t = ledger.t
    t_end = float(t[-1]) if t_end is None else t_end
    i0 = int(np.searchsorted(t, 0.1 * t_end))
    i0 = min(i0, len(t) - 1)
    flags = {}
    for name in MONITORS:
        v = ledger[name]
        ref = max(abs(v[i0]), floor)
        flags[name] = bool(np.max(np.abs(v[i0:])) > factor * ref)
    return flags


def sup_after(ledger: EnergyLedger, column: str, tau: float) -> float:
    m = ledger.t >= tau
    return float(np.max(ledger[column][m]))
