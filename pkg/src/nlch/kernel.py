"""Even interaction kernels and the convolution truncated to Omega.

The discrete operator is the midpoint quadrature of

    (J*f)(x_i) = int_Omega J(x_i - y) f(y) dy  ~  h^d sum_j J(x_i - x_j) f_j,

i.e. a Toeplitz product with the kernel sampled on the difference grid
``(i - j) h``.  It is evaluated as a zero-padded linear FFT convolution, so
nothing wraps around the box.  ``a = J*1`` goes through the same code path,
which keeps ``a phi - J*phi`` exactly zero on constants.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft, integrate

from .spectral import SpectralSpace

FAMILIES = ("gaussian", "mollifier", "table")
REFINE = 4
SYMMETRY_TOL = 1e-12


class KernelError(ValueError):
    pass


def _mollifier_mass(dims: int) -> float:
    """Integral of exp(-1/(1-|x|^2)) over the unit ball in R^dims."""
    bump = lambda r: np.exp(-1.0 / (1.0 - r * r)) if r < 1.0 else 0.0  # noqa: E731
    if dims == 1:
        return 2.0 * integrate.quad(bump, 0.0, 1.0, epsabs=1e-14, epsrel=1e-13)[0]
    return 2.0 * np.pi * integrate.quad(lambda r: r * bump(r), 0.0, 1.0, epsabs=1e-14, epsrel=1e-13)[0]


def _profile(family: str, params: dict, dims: int):
    """Return (J, |grad J|, support radius) as vectorised callables of the offset."""
    amp = float(params.get("amplitude", 1.0))
    if family == "gaussian":
        sigma = float(params["sigma"])
        if sigma <= 0:
            raise KernelError("gaussian width must be positive")
        c = amp / (2.0 * np.pi * sigma**2) ** (dims / 2.0)

        def J(*x):
            r2 = sum(xi * xi for xi in x)
            return c * np.exp(-r2 / (2.0 * sigma**2))

        def gradJ(*x):
            r = np.sqrt(sum(xi * xi for xi in x))
            return r / sigma**2 * J(*x)

        return J, gradJ, 10.0 * sigma
    if family == "mollifier":
        radius = float(params["radius"])
        if radius <= 0:
            raise KernelError("mollifier radius must be positive")
        c = amp / (_mollifier_mass(dims) * radius**dims)

        def J(*x):
            s = sum(xi * xi for xi in x) / radius**2
            out = np.zeros(np.shape(s))
            inside = s < 1.0
            out[inside] = c * np.exp(-1.0 / (1.0 - s[inside]))
            return out

        def gradJ(*x):
            s = sum(xi * xi for xi in x) / radius**2
            out = np.zeros(np.shape(s))
            inside = s < 1.0
            si = s[inside]
            out[inside] = c * np.exp(-1.0 / (1.0 - si)) * 2.0 * np.sqrt(si) / (radius * (1.0 - si) ** 2)
            return out

        return J, gradJ, radius
    raise KernelError(f"no analytic profile for family {family!r}")


def _box_quadrature(func, lo, hi, step, dims):
    """Midpoint rule of ``func`` over the box [lo, hi]^dims with cells of width ~step."""
    n = max(1, int(np.ceil((hi - lo) / step)))
    h = (hi - lo) / n
    pts = lo + (np.arange(n) + 0.5) * h
    if dims == 1:
        return float(np.sum(func(pts)) * h)
    total = 0.0
    for x in pts:  # row at a time keeps memory flat
        total += float(np.sum(func(np.full_like(pts, x), pts)))
    return total * h * h


@dataclass(frozen=True, eq=False)
class Kernel:
    """Sampled even kernel plus the constants that enter the estimates.

    ``c_J``/``d_J`` integrate |J| and |grad J| over the difference set
    Omega - Omega (what every truncated-convolution estimate sees);
    ``c_J_full``/``d_J_full`` integrate over the whole support.
    """

    family: str
    params: dict
    space: SpectralSpace
    samples: np.ndarray  # J on the difference grid, shape (2N-1,)*dims
    a_field: np.ndarray
    a_refined: np.ndarray
    c_J: float
    c_J_full: float
    d_J: float
    d_J_full: float
    a0: float
    a_star: float
    symmetry_residual: float
    _spectrum: np.ndarray = field(repr=False)
    _pad: tuple = field(repr=False)

    @property
    def amplitude(self) -> float:
        return float(self.params.get("amplitude", 1.0))

    def convolve(self, f) -> np.ndarray:
        """(J*f)(x_i) over Omega only; zero padded, no periodic wrap."""
        f = self.space._check(f)
        N = self.space.shape
        full = fft.irfftn(fft.rfftn(f, self._pad) * self._spectrum, self._pad)
        sl = tuple(slice(n - 1, 2 * n - 1) for n in N)
        return full[sl] * self.space.cell_volume

    def nonlocal_diffusion(self, f) -> np.ndarray:
        """a f - J*f, the nonlocal replacement of -Laplacian."""
        return self.a_field * f - self.convolve(f)

    def to_dict(self) -> dict:
        return {"family": self.family, "params": dict(self.params)}


def _difference_grid(sp: SpectralSpace):
    axes = [np.arange(-(n - 1), n) * h for n, h in zip(sp.n_modes, sp.spacing)]
    return np.meshgrid(*axes, indexing="ij")


def _finish(family, params, sp, samples, a_refined, cj, cj_full, dj, dj_full) -> Kernel:
    N = sp.shape
    pad = tuple(fft.next_fast_len(3 * n - 2, real=True) for n in N)
    spectrum = fft.rfftn(samples, pad)
    flipped = samples[(slice(None, None, -1),) * sp.dims]
    sym = float(np.max(np.abs(samples - flipped)))
    k = Kernel(
        family=family, params=dict(params), space=sp, samples=samples,
        a_field=np.empty(N), a_refined=np.empty(N),
        c_J=cj, c_J_full=cj_full, d_J=dj, d_J_full=dj_full,
        a0=0.0, a_star=0.0, symmetry_residual=sym,
        _spectrum=spectrum, _pad=pad,
    )
    a = k.convolve(np.ones(N))
    a_ref = a if a_refined is None else a_refined
    object.__setattr__(k, "a_field", a)
    object.__setattr__(k, "a_refined", a_ref)
    # conservative over both quadratures
    object.__setattr__(k, "a0", float(min(a.min(), a_ref.min())))
    object.__setattr__(k, "a_star", float(max(a.max(), a_ref.max())))
    a.setflags(write=False)
    samples.setflags(write=False)
    return k


def build_kernel(family: str, params: dict, sp: SpectralSpace, validate: bool = True) -> Kernel:
    """Sample ``J`` on ``sp``'s difference grid and derive a, c_J, d_J, a0, a*.

    ``params`` holds ``amplitude`` plus ``sigma`` (gaussian), ``radius``
    (mollifier) or ``offsets``/``values`` (table).  With ``validate`` an
    under-resolved kernel or a non-positive ``a`` raises ``KernelError``.
    """
    if family not in FAMILIES:
        raise KernelError(f"unknown kernel family {family!r}")
    if family == "table":
        return _build_table(params, sp, validate)

    hmax = max(sp.spacing)
    width = 4.0 * float(params["sigma"]) if family == "gaussian" else 2.0 * float(params.get("radius", 0))
    if validate and width < 8.0 * hmax * (1 - 1e-12):
        raise KernelError(f"{family} kernel under-resolved: width {width:.4g} spans fewer than 8 cells of {hmax:.4g}")
    J, gradJ, support = _profile(family, params, sp.dims)
    samples = np.ascontiguousarray(J(*_difference_grid(sp)))

    fine = min(sp.spacing) / REFINE
    L = max(sp.lengths)
    absJ = lambda *x: np.abs(J(*x))  # noqa: E731
    cj = _box_quadrature(absJ, -L, L, fine, sp.dims) if sp.dims == 1 else _diff_box(absJ, sp, fine)
    dj = _box_quadrature(gradJ, -L, L, fine, sp.dims) if sp.dims == 1 else _diff_box(gradJ, sp, fine)
    cj_full = _box_quadrature(absJ, -support, support, fine, sp.dims)
    dj_full = _box_quadrature(gradJ, -support, support, fine, sp.dims)
    a_ref = _refined_a(J, sp)
    k = _finish(family, params, sp, samples, a_ref, cj, cj_full, dj, dj_full)
    if validate and k.a0 <= 0:
        raise KernelError(f"a(x) = J*1 is not strictly positive (min {k.a0:.3e}); (H1) fails")
    return k


def _diff_box(func, sp: SpectralSpace, step: float) -> float:
    """Midpoint rule over Omega - Omega = prod [-L_i, L_i] in 2D."""
    (Lx, Ly) = sp.lengths
    nx, ny = int(np.ceil(2 * Lx / step)), int(np.ceil(2 * Ly / step))
    hx, hy = 2 * Lx / nx, 2 * Ly / ny
    ys = -Ly + (np.arange(ny) + 0.5) * hy
    total = 0.0
    for x in -Lx + (np.arange(nx) + 0.5) * hx:
        total += float(np.sum(func(np.full_like(ys, x), ys)))
    return total * hx * hy


def _refined_a(J, sp: SpectralSpace) -> np.ndarray:
    """a(x_i) by the midpoint rule on a REFINE-times finer grid of Omega."""
    fine = [(np.arange(REFINE * n) + 0.5) * (L / (REFINE * n)) for n, L in zip(sp.n_modes, sp.lengths)]
    w = np.prod([L / (REFINE * n) for n, L in zip(sp.n_modes, sp.lengths)])
    if sp.dims == 1:
        x = sp.nodes[0]
        return np.sum(J(x[:, None] - fine[0][None, :]), axis=1) * w
    out = np.empty(sp.shape)
    dy = sp.nodes[1][:, None, None] - fine[1][None, None, :]
    for i, xi in enumerate(sp.nodes[0]):
        dx = (xi - fine[0])[None, :, None]
        out[i] = np.sum(J(dx, dy), axis=(1, 2)) * w
    return out


def _build_table(params: dict, sp: SpectralSpace, validate: bool) -> Kernel:
    offsets = np.atleast_2d(np.asarray(params["offsets"], dtype=float))
    if offsets.shape[0] == 1 and sp.dims == 1 and offsets.shape[1] != 1:
        offsets = offsets.T
    values = np.asarray(params["values"], dtype=float) * float(params.get("amplitude", 1.0))
    if offsets.shape != (values.size, sp.dims):
        raise KernelError("table offsets must have one column per dimension and one row per value")
    h = np.asarray(sp.spacing)
    idx = offsets / h
    if not np.allclose(idx, np.round(idx), atol=1e-9):
        raise KernelError("table offsets must lie on the difference grid (multiples of the grid spacing)")
    idx = np.round(idx).astype(int)
    N = np.asarray(sp.n_modes)
    samples = np.zeros(tuple(2 * N - 1))
    keep = np.all(np.abs(idx) <= N - 1, axis=1)
    samples[tuple((idx[keep] + N - 1).T)] = values[keep]

    cell = sp.cell_volume
    cj = float(np.sum(np.abs(samples)) * cell)
    cj_full = float(np.sum(np.abs(values)) * cell)
    grad = _spectral_gradient_magnitude(samples, sp.spacing)
    dj = float(np.sum(grad) * cell)
    k = _finish("table", params, sp, samples, None, cj, cj_full, dj, dj)
    if validate and k.a0 <= 0:
        raise KernelError(f"a(x) = J*1 is not strictly positive (min {k.a0:.3e}); (H1) fails")
    return k


def _spectral_gradient_magnitude(samples: np.ndarray, spacing) -> np.ndarray:
    """|grad J| by FFT differentiation of the zero-extended table."""
    pad = tuple(2 * n for n in samples.shape)
    spec = fft.fftn(samples, pad)
    sq = np.zeros(pad)
    for axis, (n, h) in enumerate(zip(pad, spacing)):
        k = 2j * np.pi * fft.fftfreq(n, d=h)
        shape = [1] * len(pad)
        shape[axis] = -1
        d = np.real(fft.ifftn(spec * k.reshape(shape)))
        sq += d * d
    return np.sqrt(sq)[tuple(slice(0, n) for n in samples.shape)]


@dataclass
class H1Report:
    passed: bool
    a0: float
    a_star: float
    c_J: float
    c_J_full: float
    d_J: float
    d_J_full: float
    worst_point: tuple
    symmetry_residual: float
    reasons: list

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def certify_H1(k: Kernel) -> H1Report:
    """Check evenness of the samples and strict positivity of a = J*1."""
    reasons = []
    if k.symmetry_residual > SYMMETRY_TOL:
        reasons.append(f"J(-x) != J(x): residual {k.symmetry_residual:.3e}")
    if not np.all(k.a_field > 0) or k.a0 <= 0:
        reasons.append(f"a(x) not strictly positive: min {k.a0:.3e}")
    worst = np.unravel_index(int(np.argmin(k.a_field)), k.a_field.shape)
    point = tuple(float(k.space.nodes[ax][i]) for ax, i in enumerate(worst))
    return H1Report(
        passed=not reasons, a0=k.a0, a_star=k.a_star, c_J=k.c_J, c_J_full=k.c_J_full,
        d_J=k.d_J, d_J_full=k.d_J_full, worst_point=point,
        symmetry_residual=k.symmetry_residual, reasons=reasons,
    )


def load_kernel_table(path) -> dict:
    """Read a CSV with offset columns followed by a value column."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                continue  # header line
    arr = np.asarray(rows, dtype=float)
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise KernelError(f"{path}: expected at least two numeric columns")
    return {"offsets": arr[:, :-1], "values": arr[:, -1]}


def save_kernel_table(path, offsets, values) -> None:
    offsets = np.atleast_2d(np.asarray(offsets, dtype=float))
    if offsets.shape[0] == 1 and offsets.shape[1] == len(values) and len(values) != 1:
        offsets = offsets.T
    dims = offsets.shape[1]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"][:dims] + ["value"])
        for off, v in zip(offsets, values):
            w.writerow([repr(float(o)) for o in off] + [repr(float(v))])
