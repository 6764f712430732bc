"""Dense Galerkin-ODE reference integrator.

Coefficients a_k (phi) and b_k (theta) on the first ``n`` cosine modes per
axis obey

    (1 + alpha lam_k) a_k' = -lam_k (P[F'(phi)]_k + (K a)_k - delta b_k)
    eps b_k' = -lam_k b_k - delta a_k'

where ``P`` is the L2 projection computed by midpoint quadrature on a
3/2-refined grid and ``K`` is the Galerkin matrix of f -> a f - J*f.
Classical RK4 advances (a, b) together with the running dissipation
integral, so the energy balance is checked at the integrator's order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import BlowUpError, Params, State
from .kernel import Kernel
from .potential import Potential
from .spectral import SpectralSpace

MAX_MODES = 16


def _basis_1d(n: int, m: int, L: float) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint nodes of an m-point grid and the (m, n) matrix of psi_k values."""
    x = (np.arange(m) + 0.5) * L / m
    k = np.arange(n)
    B = np.sqrt(2.0 / L) * np.cos(np.outer(x, k) * np.pi / L)
    B[:, 0] = np.sqrt(1.0 / L)
    return x, B


class GalerkinSystem:
    """Right-hand side of the truncated coefficient ODE."""

    def __init__(self, k: Kernel, pot: Potential, p: Params, n_modes: int):
        sp = k.space
        if n_modes > MAX_MODES:
            raise ValueError(f"oracle truncation must be <= {MAX_MODES} modes per axis, got {n_modes}")
        if any(n_modes > N for N in sp.n_modes):
            raise ValueError("oracle truncation exceeds the kernel grid resolution")
        self.k, self.pot, self.p, self.n = k, pot, p, n_modes
        self.dims = sp.dims
        self.m = int(np.ceil(1.5 * n_modes))
        self.B = [_basis_1d(n_modes, self.m, L)[1] for L in sp.lengths]
        self.w = float(np.prod([L / self.m for L in sp.lengths]))
        lam1 = [(np.arange(n_modes) * np.pi / L) ** 2 for L in sp.lengths]
        self.lam = lam1[0] if self.dims == 1 else lam1[0][:, None] + lam1[1][None, :]
        self.K = self._galerkin_matrix()
        self.volume = sp.volume

    def _galerkin_matrix(self) -> np.ndarray:
        """Symmetrised matrix of (psi_k, a psi_l - J*psi_l) computed on the kernel grid."""
        sp, n = self.k.space, self.n
        shape = (n,) * self.dims
        size = n**self.dims
        K = np.empty((size, size))
        for col in range(size):
            idx = np.unravel_index(col, shape)
            c = np.zeros(sp.shape)
            c[idx] = 1.0
            out = sp.transform(self.k.nonlocal_diffusion(sp.inverse(c)))
            K[:, col] = out[tuple(slice(0, n) for _ in range(self.dims))].ravel()
        return 0.5 * (K + K.T)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dims

    def synth(self, a: np.ndarray) -> np.ndarray:
        """Values of sum_k a_k psi_k on the refined quadrature grid."""
        if self.dims == 1:
            return self.B[0] @ a
        return self.B[0] @ a @ self.B[1].T

    def project(self, f: np.ndarray) -> np.ndarray:
        if self.dims == 1:
            return self.w * (self.B[0].T @ f)
        return self.w * (self.B[0].T @ f @ self.B[1])

    def Ka(self, a: np.ndarray) -> np.ndarray:
        return (self.K @ a.ravel()).reshape(a.shape)

    def energy(self, a: np.ndarray, b: np.ndarray) -> float:
        """Nonlocal quadratic form plus quadrature of F plus (eps/2)|b|^2."""
        return float(0.5 * np.sum(a * self.Ka(a)) + self.w * np.sum(self.pot.F(self.synth(a)))
                     + 0.5 * self.p.epsilon * np.sum(b * b))

    def rhs(self, a, b):
        """(a', b', dissipation rate)."""
        p, lam = self.p, self.lam
        g = self.project(self.pot.dF(self.synth(a))) + self.Ka(a) - p.delta * b
        da = -lam * g / (1.0 + p.alpha * lam)
        db = (-lam * b - p.delta * da) / p.epsilon
        mu = g + p.alpha * da
        diss = float(np.sum(lam * mu * mu) + p.alpha * np.sum(da * da) + np.sum(lam * b * b))
        return da, db, diss

    def stiffness(self) -> float:
        """Largest linear decay rate, used to warn about RK4 step-size limits."""
        lam = self.lam.max()
        nl = np.max(np.abs(np.linalg.eigvalsh(self.K)))
        return max(lam / self.p.epsilon, lam * nl / (1.0 + self.p.alpha * lam))


@dataclass
class OracleTrajectory:
    times: np.ndarray
    a: np.ndarray
    b: np.ndarray
    energy: np.ndarray
    dissipation: np.ndarray
    dt: float
    system: GalerkinSystem

    def __len__(self):
        return len(self.times)

    @property
    def residual(self) -> np.ndarray:
        """E(t) + int_0^t dissipation - E(0)."""
        return self.energy + self.dissipation - self.energy[0]

    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residual)))

    def to_field(self, sp: SpectralSpace, i: int = -1, which: str = "phi") -> np.ndarray:
        """Grid values on ``sp`` of the i-th recorded phi (or theta)."""
        coef = (self.a if which == "phi" else self.b)[i]
        c = np.zeros(sp.shape)
        c[tuple(slice(0, self.system.n) for _ in range(sp.dims))] = coef
        return sp.inverse(c)


def truncate(sp: SpectralSpace, f: np.ndarray, n: int) -> np.ndarray:
    return sp.transform(f)[tuple(slice(0, n) for _ in range(sp.dims))].copy()


def oracle_rk4(s0: State, p: Params, k: Kernel, pot: Potential, n_modes_truncated: int = 8,
               n_steps: int | None = None, stride: int = 1) -> OracleTrajectory:
    """Integrate the Galerkin system with classical RK4 from the projection of ``s0``."""
    sys = GalerkinSystem(k, pot, p, n_modes_truncated)
    n_steps = p.n_steps if n_steps is None else n_steps
    dt = p.dt
    if dt * sys.stiffness() > 2.78:
        raise BlowUpError(s0.t, f"dt = {dt:g} exceeds the RK4 stability limit {2.78 / sys.stiffness():.3g}; "
                                "use a smaller dt")
    a = truncate(k.space, s0.phi, sys.n)
    b = truncate(k.space, s0.theta, sys.n)
    D = 0.0
    times, As, Bs, Es, Ds = [s0.t], [a], [b], [sys.energy(a, b)], [0.0]
    for n in range(1, n_steps + 1):
        k1a, k1b, k1d = sys.rhs(a, b)
        k2a, k2b, k2d = sys.rhs(a + 0.5 * dt * k1a, b + 0.5 * dt * k1b)
        k3a, k3b, k3d = sys.rhs(a + 0.5 * dt * k2a, b + 0.5 * dt * k2b)
        k4a, k4b, k4d = sys.rhs(a + dt * k3a, b + dt * k3b)
        a = a + dt / 6.0 * (k1a + 2 * k2a + 2 * k3a + k4a)
        b = b + dt / 6.0 * (k1b + 2 * k2b + 2 * k3b + k4b)
        D = D + dt / 6.0 * (k1d + 2 * k2d + 2 * k3d + k4d)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise BlowUpError(s0.t + (n - 1) * dt, "oracle overflow; the system is stiff, use a smaller dt")
        if n % stride == 0 or n == n_steps:
            times.append(s0.t + n * dt)
            As.append(a)
            Bs.append(b)
            Es.append(sys.energy(a, b))
            Ds.append(D)
    return OracleTrajectory(np.asarray(times), np.asarray(As), np.asarray(Bs), np.asarray(Es), np.asarray(Ds),
                            dt * stride, sys)
