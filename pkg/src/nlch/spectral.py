"""Neumann cosine spectral space on a 1D interval or a 2D box.

Fields are plain ``numpy`` arrays sampled on the cell-midpoint grid.  The
transform maps a field to its coefficients in the L2(Omega)-orthonormal
eigenbasis of the Neumann Laplacian::

    psi_0 = 1/sqrt(|Omega|),   psi_k(x) = sqrt(2/L) cos(k pi x / L)   (1D)

with tensor products in 2D.  On midpoint nodes this is the orthonormal
DCT-II scaled by ``sqrt(cell volume)``, so Parseval and the mode-0 mean
extraction hold exactly in floating point arithmetic (up to rounding).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import fft

NORM_KINDS = ("L2", "V", "Vdual", "H2seminorm")


class SpectralError(ValueError):
    """Raised for shape mismatches and operator domain violations."""


class MeanNotZeroError(SpectralError):
    """Input to the inverse Neumann Laplacian is not in V0'."""


@dataclass(frozen=True)
class SpectralSpace:
    """Box ``prod_i [0, lengths[i]]`` with ``n_modes`` cosine modes per axis."""

    dims: int
    lengths: tuple[float, ...]
    n_modes: tuple[int, ...]

    def __post_init__(self):
        if self.dims not in (1, 2):
            raise SpectralError(f"dims must be 1 or 2, got {self.dims}")
        lengths = tuple(float(v) for v in np.broadcast_to(self.lengths, (self.dims,)))
        n_modes = tuple(int(v) for v in np.broadcast_to(self.n_modes, (self.dims,)))
        if any(v <= 0 for v in lengths):
            raise SpectralError(f"lengths must be positive, got {lengths}")
        if any(n < 2 for n in n_modes):
            raise SpectralError(f"need at least 2 modes per axis, got {n_modes}")
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "n_modes", n_modes)

    @classmethod
    def unit(cls, dims: int = 1, n_modes: int = 33) -> "SpectralSpace":
        return cls(dims, (1.0,) * dims, (n_modes,) * dims)

    # -- geometry ---------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.n_modes

    @cached_property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.n_modes))

    @cached_property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @cached_property
    def _sqrt_cell(self) -> float:
        return float(np.sqrt(self.cell_volume))

    @cached_property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @cached_property
    def nodes(self) -> tuple[np.ndarray, ...]:
        return tuple((np.arange(n) + 0.5) * h for n, h in zip(self.n_modes, self.spacing))

    @cached_property
    def grid(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.nodes, indexing="ij"))

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        return tuple(np.arange(n) * np.pi / L for n, L in zip(self.n_modes, self.lengths))

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        """Neumann-Laplacian eigenvalue of every tensor mode, shaped like a field."""
        lam = np.zeros(self.shape)
        for axis, k in enumerate(self.wavenumbers):
            shape = [1] * self.dims
            shape[axis] = -1
            lam = lam + (k**2).reshape(shape)
        lam.setflags(write=False)
        return lam

    @property
    def first_nonzero_eigenvalue(self) -> float:
        return float(min((np.pi / L) ** 2 for L in self.lengths))

    @property
    def lambda_Omega(self) -> float:
        """Poincare-Wirtinger constant: ||f - <f>|| <= sqrt(lambda_Omega) ||grad f||."""
        return 1.0 / self.first_nonzero_eigenvalue

    # -- transforms -------------------------------------------------------

    def _check(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape != self.shape:
            raise SpectralError(f"field shape {f.shape} does not match space {self.shape}")
        return f

    def transform(self, f) -> np.ndarray:
        """Coefficients of ``f`` in the orthonormal cosine eigenbasis."""
        f = self._check(f)
        return fft.dctn(f, type=2, norm="ortho") * self._sqrt_cell

    def inverse(self, coeffs) -> np.ndarray:
        coeffs = self._check(coeffs)
        return fft.idctn(coeffs / self._sqrt_cell, type=2, norm="ortho")

    def basis_function(self, *k: int) -> np.ndarray:
        """Grid samples of the eigenfunction with multi-index ``k``."""
        if len(k) != self.dims:
            raise SpectralError(f"need {self.dims} indices, got {k}")
        out = np.ones(())
        for x, ki, L in zip(self.grid, k, self.lengths):
            norm = np.sqrt(1.0 / L) if ki == 0 else np.sqrt(2.0 / L)
            out = out * norm * np.cos(ki * np.pi * x / L)
        return out

    def constant(self, value: float) -> np.ndarray:
        return np.full(self.shape, float(value))

    # -- integrals and norms ----------------------------------------------

    def mean(self, f) -> float:
        """Average over Omega, read off the mode-0 coefficient."""
        c0 = self.transform(f).flat[0]
        return float(c0 / np.sqrt(self.volume))

    def integrate(self, f) -> float:
        return float(np.sum(self._check(f)) * self.cell_volume)

    def inner(self, f, g) -> float:
        return float(np.sum(self._check(f) * self._check(g)) * self.cell_volume)

    def apply_AN(self, f) -> np.ndarray:
        """-Laplacian with homogeneous Neumann data, applied mode-wise."""
        return self.inverse(self.eigenvalues * self.transform(f))

    def solve_inverse_AN(self, f, tol: float = 1e-10) -> np.ndarray:
        """Unique zero-mean ``g`` with ``A_N g = f``; ``f`` must have zero mean."""
        c = self.transform(f)
        scale = max(1.0, float(np.max(np.abs(f))))
        mean = c.flat[0] / np.sqrt(self.volume)
        if abs(mean) > tol * scale:
            raise MeanNotZeroError(f"input mean {mean:.3e} is not zero; subtract it first")
        return self.inverse(self.inverse_eigenvalues * c)

    @cached_property
    def inverse_eigenvalues(self) -> np.ndarray:
        """1/lambda_k with the constant mode mapped to zero."""
        lam = self.eigenvalues
        inv = np.zeros_like(lam)
        inv[lam > 0] = 1.0 / lam[lam > 0]
        inv.setflags(write=False)
        return inv

    def coeff_norm_sq(self, c, kind: str = "L2") -> float:
        """Squared norm from spectral coefficients ``c``."""
        c = np.asarray(c)
        c2 = c * c
        if kind == "L2":
            return float(np.sum(c2))
        mean_sq = float(c2.flat[0] / self.volume)
        if kind == "V":
            return float(np.sum(self.eigenvalues * c2)) + mean_sq
        if kind == "Vdual":
            return float(np.sum(self.inverse_eigenvalues * c2)) + mean_sq
        if kind == "H2seminorm":
            return float(np.sum(self.eigenvalues**2 * c2))
        if kind == "grad":
            return float(np.sum(self.eigenvalues * c2))
        raise SpectralError(f"unknown norm kind {kind!r}; expected one of {NORM_KINDS}")

    def norm(self, f, kind: str = "L2") -> float:
        """L2, V (H1 with mean), Vdual (H^-1 with mean) or H2 seminorm of ``f``."""
        return float(np.sqrt(self.coeff_norm_sq(self.transform(f), kind)))

    def grad_norm(self, f) -> float:
        return float(np.sqrt(self.coeff_norm_sq(self.transform(f), "grad")))

    # -- configuration round trip -----------------------------------------

    def to_dict(self) -> dict:
        return {"dims": self.dims, "lengths": list(self.lengths), "n_modes": list(self.n_modes)}
