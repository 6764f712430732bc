"""Polynomial potentials and certification of the structural hypotheses.

Every hypothesis on ``F`` reduces to a bound on a polynomial (or, for the
growth condition with fractional exponent, a polynomial-dominated
function).  Global minima over the real line are found exactly from the
real roots of the derivative, so the certifier never relies on a
numerical search over an unbounded set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from numpy.polynomial import Polynomial
from scipy import optimize


class PotentialError(ValueError):
    pass


def real_roots(P: Polynomial, tol: float = 1e-9) -> np.ndarray:
    """Real roots of ``P``, Newton-polished."""
    if P.degree() < 1:
        return np.empty(0)
    r = P.roots()
    r = np.real(r[np.abs(np.imag(r)) <= tol * (1.0 + np.abs(r))])
    dP = P.deriv()
    for _ in range(3):
        d = dP(r)
        ok = d != 0
        r[ok] = r[ok] - P(r[ok]) / d[ok]
    return np.unique(r)


def poly_min(P: Polynomial) -> tuple[float, float]:
    """Global minimum of ``P`` over the reals and a minimiser; -inf if unbounded."""
    P = P.trim()
    deg = P.degree()
    if deg == 0:
        return float(P.coef[0]), 0.0
    lead = P.coef[-1]
    if deg % 2 == 1 or lead < 0:
        return -np.inf, np.nan
    crit = real_roots(P.deriv())
    if crit.size == 0:
        crit = np.zeros(1)
    vals = P(crit)
    i = int(np.argmin(vals))
    return float(vals[i]), float(crit[i])


def poly_max_abs_on(P: Polynomial, lo: float, hi: float) -> float:
    """max |P| over [lo, hi] from endpoints and interior critical points."""
    pts = [lo, hi]
    if P.degree() >= 2:
        pts += [r for r in real_roots(P.deriv()) if lo <= r <= hi]
    return float(np.max(np.abs(P(np.asarray(pts, dtype=float)))))


class Potential:
    """F(s) = amplitude * sum_i coefficients[i] s^i (even degree >= 4, positive lead)."""

    def __init__(self, coefficients, amplitude: float = 1.0):
        coef = np.asarray(coefficients, dtype=float)
        with np.errstate(over="ignore"):
            scaled = coef * float(amplitude)
        if coef.ndim != 1 or not np.all(np.isfinite(scaled)):
            raise PotentialError("potential must be given as a finite coefficient list")
        P = Polynomial(scaled).trim()
        deg = P.degree()
        if deg < 4 or deg % 2 or P.coef[-1] <= 0:
            raise PotentialError(
                f"unsupported potential: need even degree >= 4 with positive leading coefficient (got degree {deg})"
            )
        self.coefficients = tuple(float(c) for c in coef)
        self.amplitude = float(amplitude)
        self.F = P
        self.dF = P.deriv()
        self.d2F = P.deriv(2)

    @classmethod
    def double_well(cls, amplitude: float = 1.0) -> "Potential":
        """(1 - s^2)^2."""
        return cls([1.0, 0.0, -2.0, 0.0, 1.0], amplitude)

    @property
    def degree(self) -> int:
        return self.F.degree()

    def __call__(self, s):
        return self.F(s)

    def eval(self, s, order: int = 0):
        return (self.F, self.dF, self.d2F)[order](s)

    def convex_split(self, a_star: float) -> Polynomial:
        """G = F + (a*/2) s^2, so that F = G - (a*/2) s^2."""
        return self.F + Polynomial([0.0, 0.0, 0.5 * a_star])

    def to_dict(self) -> dict:
        return {"coefficients": list(self.coefficients), "amplitude": self.amplitude}

    def __repr__(self):
        return f"Potential(coefficients={list(self.coefficients)}, amplitude={self.amplitude})"


@dataclass
class Hypothesis:
    name: str
    feasible: bool
    constants: dict = field(default_factory=dict)
    detail: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "feasible": self.feasible, "constants": dict(self.constants), "detail": self.detail}


@dataclass
class Certification:
    H2: Hypothesis
    H3: Hypothesis
    H4: Hypothesis
    H5: Hypothesis
    fcons31: Hypothesis
    h4_verdicts: dict
    min_d2F: float
    a0: float
    a_star: float

    @property
    def passed(self) -> bool:
        return all(h.feasible for h in (self.H2, self.H3, self.H4, self.H5))

    @property
    def c0(self) -> float:
        return self.H2.constants["c0"]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "min_d2F": self.min_d2F,
            "a0": self.a0,
            "a_star": self.a_star,
            **{h.name: h.to_dict() for h in (self.H2, self.H3, self.H4, self.H5, self.fcons31)},
            "H4_verdicts": {str(p): v for p, v in self.h4_verdicts.items()},
        }


def _growth_constants(pot: Potential, p: float, eta: float = 0.1) -> tuple[float, float, float]:
    """Constants with |F'(s)|^p <= c3 |F(s)| + c4 on the whole line; returns (c3, c4, R).

    Outside [-R, R] the leading terms dominate with relative slack ``eta``
    and the inequality holds with c4 = 0; inside, the worst case of
    |F'|^p - c3|F| is located by dense sampling plus bounded refinement.
    """
    F, dF = pot.F, pot.dF
    d, d1 = F.degree(), dF.degree()
    lead, lead1 = F.coef[-1], abs(dF.coef[-1])
    if d1 * p < d - 1e-12:
        c3 = 1.0
    else:
        c3 = 2.0 * lead1**p / lead
    R = max(1.0, np.sum(np.abs(F.coef[:-1])) / (eta * lead), np.sum(np.abs(dF.coef[:-1])) / (eta * lead1))
    gap = d - d1 * p
    if gap > 1e-12:
        R = max(R, (((1 + eta) * lead1) ** p / ((1 - eta) * c3 * lead)) ** (1.0 / gap))

    def g(s):
        return np.abs(dF(s)) ** p - c3 * np.abs(F(s))

    s = np.linspace(-R, R, 40001)
    vals = g(s)
    step = s[1] - s[0]
    best = float(vals.max())
    for i in np.argsort(vals)[-8:]:
        res = optimize.minimize_scalar(lambda x: -g(x), bounds=(s[i] - step, s[i] + step), method="bounded",
                                       options={"xatol": 1e-12})
        best = max(best, float(-res.fun))
    c4 = max(0.0, best) * (1 + 1e-9) + 1e-12
    return float(c3), float(c4), float(R)


def h4_exponent_grid(max_denominator: int = 12) -> list[Fraction]:
    ps = {Fraction(n, d) for d in range(1, max_denominator + 1) for n in range(d + 1, 2 * d + 1)}
    return sorted(p for p in ps if Fraction(6, 5) < p <= 2)


def check_h4(pot: Potential, p) -> Hypothesis:
    """Feasibility of |F'|^p <= c3|F| + c4 for one exponent."""
    p = Fraction(p)
    d, d1 = pot.degree, pot.degree - 1
    if d1 * p > d:
        return Hypothesis("H4", False, {"p": float(p)},
                          f"infeasible: deg(F')*p = {float(d1 * p):g} > deg(F) = {d}, "
                          "|F'(s)|^p/|F(s)| is unbounded as |s| -> inf")
    c3, c4, R = _growth_constants(pot, float(p))
    return Hypothesis("H4", True, {"p": float(p), "c3": c3, "c4": c4}, f"verified on [-{R:.3g}, {R:.3g}] plus leading terms")


def certify_H2_to_H5(pot: Potential, k, c1: float | None = None) -> Certification:
    """Witness constants (or infeasibility) for each hypothesis against kernel ``k``."""
    if not isinstance(pot, Potential):
        raise PotentialError("only polynomial potentials are supported")
    a0, a_star = k.a0, k.a_star
    min_d2F, s_min = poly_min(pot.d2F)

    # H2: F'' + inf a >= c0 > 0
    c0 = min_d2F + a0
    if c0 > 0:
        h2 = Hypothesis("H2", True, {"c0": c0, "argmin": s_min})
    else:
        bad = real_roots(pot.d2F + Polynomial([a0]))
        span = f"[{bad.min():.6g}, {bad.max():.6g}]" if bad.size else f"near s = {s_min:.6g}"
        h2 = Hypothesis("H2", False, {"c0": c0, "argmin": s_min}, f"F'' + a0 <= 0 on {span}")

    # H3: F(s) >= c1 s^2 - c2 with c1 > ||J||_L1 / 2
    if c1 is None:
        c1 = 1.0 if k.c_J_full < 2.0 else 0.5 * k.c_J_full + 1.0
    m, _ = poly_min(pot.F - Polynomial([0.0, 0.0, c1]))
    consts = {"c1": float(c1), "c2": float(-m), "c1_vs_cJ": float(c1) > 0.5 * k.c_J,
              "c1_vs_cJ_full": float(c1) > 0.5 * k.c_J_full}
    h3_ok = np.isfinite(m) and consts["c1_vs_cJ_full"]
    detail = "" if h3_ok else ("c1 must exceed c_J/2 = %.6g" % (0.5 * k.c_J_full))
    h3 = Hypothesis("H3", bool(h3_ok), consts, detail)

    # H4: scan the admissible exponents, keep the largest feasible one
    verdicts = {}
    h4 = Hypothesis("H4", False, {}, "no exponent in (6/5, 2] is feasible")
    for p in h4_exponent_grid():
        if (pot.degree - 1) * p > pot.degree:
            verdicts[p] = False
            continue
        res = check_h4(pot, p)
        verdicts[p] = res.feasible
        if res.feasible:
            h4 = res

    # H5: F'' + inf a >= c5 |s|^{2q} - c6 with 2q = deg F - 2
    two_q = pot.degree - 2
    lead2 = pot.d2F.coef[-1]
    mono = Polynomial([0.0] * two_q + [1.0])
    m5, _ = poly_min(pot.d2F + Polynomial([a0]) - lead2 * mono)
    c5 = lead2
    if not np.isfinite(m5):
        c5 = 0.5 * lead2
        m5, _ = poly_min(pot.d2F + Polynomial([a0]) - c5 * mono)
    h5 = Hypothesis("H5", bool(np.isfinite(m5)), {"q": two_q / 2.0, "c5": float(c5), "c6": float(max(0.0, -m5))})

    c3, c4, _ = _growth_constants(pot, 1.0)
    fc = Hypothesis("Fcons-3.1", True, {"c3": c3, "c4": c4}, "|F'| <= c3|F| + c4")
    return Certification(h2, h3, h4, h5, fc, verdicts, min_d2F, a0, a_star)


def lipschitz_bound_on_range(pot: Potential, lo: float, hi: float) -> float:
    """Lipschitz constant of F' on [lo, hi], i.e. max |F''| there."""
    if lo > hi:
        raise PotentialError("empty range")
    return poly_max_abs_on(pot.d2F, float(lo), float(hi))
