"""Time stepping for the viscous non-isothermal nonlocal Cahn-Hilliard system

    phi_t = Lap mu,   mu = a phi - J*phi + F'(phi) + alpha phi_t - delta theta,
    eps theta_t - Lap theta = -delta phi_t,        Neumann data on both.

The stabilised IMEX step treats the viscous term, the Laplacians and a
constant stabilisation ``S`` implicitly, the nonlocal and potential terms
explicitly, and updates theta after phi (Gauss-Seidel) with the fresh
increment.  Every implicit solve is diagonal in the cosine basis and the
constant mode is never touched, so <phi> and <theta> are conserved exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .kernel import Kernel
from .potential import Potential, lipschitz_bound_on_range
from .spectral import SpectralSpace

log = logging.getLogger(__name__)

SCHEMES = ("imex_stabilized", "oracle_rk4")
S_REFRESH = 100
S_MARGIN = 0.5


class BlowUpError(FloatingPointError):
    """Non-finite values appeared; ``t_last`` is the last time with a valid state."""

    def __init__(self, t_last: float, msg: str = ""):
        super().__init__(msg or f"solution blew up after t = {t_last:.6g}")
        self.t_last = t_last


class ParamsError(ValueError):
    pass


@dataclass(frozen=True)
class Params:
    alpha: float = 0.1
    epsilon: float = 0.1
    delta: float = 0.1
    delta0: float = 0.1
    dt: float = 1e-3
    t_end: float = 1.0
    stabilization: float | None = None  # None: max|F''| on the running range of phi
    scheme: str = "imex_stabilized"
    mean_cap: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 0 < self.alpha <= 1:
            raise ParamsError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0 < self.epsilon <= 1:
            raise ParamsError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if self.delta0 <= 0:
            raise ParamsError(f"delta0 must be positive, got {self.delta0}")
        if not 0 <= self.delta <= self.delta0:
            raise ParamsError(f"delta must lie in [0, delta0], got {self.delta} with delta0 = {self.delta0}")
        if self.dt <= 0 or self.t_end < 0:
            raise ParamsError("dt must be positive and t_end non-negative")
        if self.stabilization is not None and self.stabilization < 0:
            raise ParamsError("stabilization must be non-negative")
        if self.scheme not in SCHEMES:
            raise ParamsError(f"unknown scheme {self.scheme!r}")
        if self.mean_cap < 0:
            raise ParamsError("mean_cap must be non-negative")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def with_(self, **kw) -> "Params":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class State:
    t: float
    phi: np.ndarray
    theta: np.ndarray
    M0: float
    N0: float
    mu: np.ndarray | None = None

    @classmethod
    def initial(cls, sp: SpectralSpace, phi, theta, params: Params | None = None) -> "State":
        phi = np.array(sp._check(phi), dtype=float)
        theta = np.array(sp._check(theta), dtype=float)
        M0, N0 = sp.mean(phi), sp.mean(theta)
        if params is not None and max(abs(M0), abs(N0)) > params.mean_cap:
            raise ParamsError(f"initial means ({M0:.4g}, {N0:.4g}) exceed the phase-space cap m = {params.mean_cap}")
        return cls(0.0, phi, theta, M0, N0)


@dataclass
class ChemicalPotential:
    mu: np.ndarray
    rho: np.ndarray
    mu_hat: np.ndarray = field(repr=False)

    @property
    def mean(self) -> float:
        return float(self.mu.mean())


def recover_mu(state: State, p: Params, k: Kernel, pot: Potential) -> ChemicalPotential:
    """Solve mu - alpha Lap mu = a phi - J*phi + F'(phi) - delta theta with Neumann data."""
    sp = k.space
    rho = k.a_field * state.phi + pot.dF(state.phi)
    r = rho - k.convolve(state.phi) - p.delta * state.theta
    mu_hat = sp.transform(r) / (1.0 + p.alpha * sp.eigenvalues)
    return ChemicalPotential(sp.inverse(mu_hat), rho, mu_hat)


class ImexStepper:
    """Stabilised IMEX stepping in coefficient space.

    ``viscosity`` overrides ``alpha`` and ``coupled=False`` drops theta,
    which together give the isothermal viscous equation.
    """

    def __init__(self, sp: SpectralSpace, k: Kernel, pot: Potential, p: Params,
                 viscosity: float | None = None, coupled: bool = True):
        self.sp, self.k, self.pot, self.p = sp, k, pot, p
        self.alpha = p.alpha if viscosity is None else float(viscosity)
        self.delta = p.delta if coupled else 0.0
        self.coupled = coupled
        self.lam = sp.eigenvalues
        self.theta_den = p.epsilon + p.dt * self.lam
        self.S = p.stabilization
        self.auto_S = p.stabilization is None
        self.range = (-np.inf, np.inf)
        self.alarms = 0
        self.n = 0
        self._den = None
        self.last_nonlinear_hat = None

    def refresh_stabilization(self, phi: np.ndarray):
        lo, hi = float(phi.min()) - S_MARGIN, float(phi.max()) + S_MARGIN
        self.range = (lo, hi)
        if self.auto_S:
            self.S = lipschitz_bound_on_range(self.pot, lo, hi)
        self._den = 1.0 + self.p.dt * self.lam * self.S + self.alpha * self.lam

    def step_hat(self, phi_hat, theta_hat, phi=None):
        """Advance coefficients by one step; returns (phi_hat, theta_hat, phi)."""
        sp, k, dt = self.sp, self.k, self.p.dt
        if phi is None:
            phi = sp.inverse(phi_hat)
        if self._den is None or (self.auto_S and self.n % S_REFRESH == 0):
            self.refresh_stabilization(phi)
        elif phi.min() < self.range[0] or phi.max() > self.range[1]:
            self.alarms += 1
            log.info("phi left the stabilisation range %s at step %d", self.range, self.n)
            self.refresh_stabilization(phi)
        with np.errstate(over="ignore", invalid="ignore"):  # non-finite results raise BlowUpError below
            nonlin = k.nonlocal_diffusion(phi) + self.pot.dF(phi)
            N_hat = sp.transform(nonlin)
        self.last_nonlinear_hat = N_hat
        rhs = N_hat - self.delta * theta_hat if self.coupled else N_hat
        dphi = -dt * self.lam * rhs / self._den
        dphi.flat[0] = 0.0
        new_phi_hat = phi_hat + dphi
        if self.coupled:
            new_theta_hat = (self.p.epsilon * theta_hat - self.delta * dphi) / self.theta_den
            new_theta_hat.flat[0] = theta_hat.flat[0]
        else:
            new_theta_hat = theta_hat
        with np.errstate(over="ignore", invalid="ignore"):
            new_phi = sp.inverse(new_phi_hat)
        self.n += 1
        if not (np.all(np.isfinite(new_phi)) and np.all(np.isfinite(new_theta_hat))):
            raise BlowUpError(self.n * dt - dt)
        return new_phi_hat, new_theta_hat, new_phi

    def step(self, s: State) -> State:
        sp = self.sp
        if _is_constant(s):
            if self._den is None:
                self.refresh_stabilization(s.phi)
            self.n += 1
            return State(s.t + self.p.dt, s.phi.copy(), s.theta.copy(), s.M0, s.N0)
        ph, th, phi = self.step_hat(sp.transform(s.phi), sp.transform(s.theta), s.phi)
        theta = sp.inverse(th) if self.coupled else s.theta
        return State(s.t + self.p.dt, phi, theta, s.M0, s.N0)


def _is_constant(s: State) -> bool:
    # every k != 0 forcing term vanishes identically, so the exact update is the identity;
    # skipping the transforms keeps the state bit-for-bit instead of to roundoff
    return bool(np.ptp(s.phi) == 0 and np.ptp(s.theta) == 0)


def step_imex(s: State, p: Params, k: Kernel, pot: Potential) -> State:
    """One stabilised IMEX step of the coupled system."""
    return ImexStepper(k.space, k, pot, p).step(s)


def rescaled_viscosity(alpha: float, delta: float) -> float:
    """Viscosity of the isothermal limit after speeding time up by 1 + delta^2."""
    return alpha / (1.0 + delta * delta)


def rescaled_viscous_ch_step(s: State, beta: float, p: Params, k: Kernel, pot: Potential) -> State:
    """One IMEX step of phi_t = Lap(a phi - J*phi + F'(phi) + beta phi_t)."""
    return ImexStepper(k.space, k, pot, p, viscosity=beta, coupled=False).step(s)


@dataclass
class Trajectory:
    """States at ``times``; ``phi``/``theta`` are stacked along axis 0."""

    times: np.ndarray
    phi: np.ndarray
    theta: np.ndarray
    dt: float
    alarms: int = 0

    def __len__(self):
        return len(self.times)

    def state(self, i: int, M0: float = np.nan, N0: float = np.nan) -> State:
        return State(float(self.times[i]), self.phi[i], self.theta[i], M0, N0)


def integrate(s0: State, p: Params, k: Kernel, pot: Potential, n_steps: int | None = None,
              stepper: ImexStepper | None = None):
    """Yield the initial state and then every subsequent state."""
    sp = k.space
    stepper = stepper or ImexStepper(sp, k, pot, p)
    n_steps = p.n_steps if n_steps is None else n_steps
    ph, th, phi = sp.transform(s0.phi), sp.transform(s0.theta), s0.phi
    theta = s0.theta
    yield State(s0.t, phi, theta, s0.M0, s0.N0)
    if _is_constant(s0):
        if stepper._den is None:
            stepper.refresh_stabilization(phi)
        for n in range(1, n_steps + 1):
            stepper.n += 1
            yield State(s0.t + n * p.dt, phi, theta, s0.M0, s0.N0)
        return
    for n in range(1, n_steps + 1):
        ph, th, phi = stepper.step_hat(ph, th, phi)
        if stepper.coupled:
            theta = sp.inverse(th)
        yield State(s0.t + n * p.dt, phi, theta, s0.M0, s0.N0)


def run_trajectory(s0: State, p: Params, k: Kernel, pot: Potential, n_steps: int | None = None,
                   stride: int = 1, viscosity: float | None = None, coupled: bool = True) -> Trajectory:
    stepper = ImexStepper(k.space, k, pot, p, viscosity=viscosity, coupled=coupled)
    times, phis, thetas = [], [], []
    for n, s in enumerate(integrate(s0, p, k, pot, n_steps, stepper)):
        if n % stride == 0:
            times.append(s.t)
            phis.append(s.phi)
            thetas.append(s.theta)
    return Trajectory(np.asarray(times), np.asarray(phis), np.asarray(thetas), p.dt * stride, stepper.alarms)


@dataclass
class SteadyState:
    step: int
    t: float
    phi: np.ndarray
    theta: np.ndarray
    energy: float | None = None


class SteadyStateDetector:
    """Counts consecutive steps with ||dphi||/dt + ||dtheta||/dt below ``tol``."""

    def __init__(self, sp: SpectralSpace, dt: float, tol: float, window: int = 50):
        self.sp, self.dt, self.tol, self.window = sp, dt, tol, window
        self.count = 0
        self.found: SteadyState | None = None

    def update(self, step: int, prev: State, cur: State) -> bool:
        if self.found is not None:
            return True
        rate = (self.sp.norm(cur.phi - prev.phi) + self.sp.norm(cur.theta - prev.theta)) / self.dt
        self.count = self.count + 1 if rate < self.tol else 0
        if self.count >= self.window:
            self.found = SteadyState(step, cur.t, cur.phi.copy(), cur.theta.copy())
            return True
        return False


def detect_steady_state(traj: Trajectory, sp: SpectralSpace, tol: float, window: int = 50,
                        energy_fn=None) -> SteadyState | None:
    """First step closing ``window`` consecutive near-stationary steps, or None."""
    if len(traj) <= 10:
        raise ValueError("trajectory must be longer than 10 steps")
    det = SteadyStateDetector(sp, traj.dt, tol, window)
    for n in range(1, len(traj)):
        if det.update(n, traj.state(n - 1), traj.state(n)):
            found = det.found
            if energy_fn is not None:
                found.energy = float(energy_fn(found.phi, found.theta))
            return found
    return None
