"""Momentum-space torus: uniform grids, dispersion laws, spectral differentiation.

All momenta live on the d-dimensional torus [-pi, pi)^d sampled by a uniform
tensor grid with an even number of points per axis.  Differentiation and
off-grid interpolation are Fourier-spectral throughout, so they are exact for
trigonometric polynomials of degree below n/2 per axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap_torus(k):
    """Reduce momenta componentwise into the fundamental domain [-pi, pi)."""
    return (np.asarray(k) + np.pi) % TWO_PI - np.pi


def fourier_modes(n: int) -> np.ndarray:
    """Integer mode numbers in FFT order: 0, 1, ..., n/2-1, -n/2, ..., -1."""
    return np.fft.fftfreq(n, d=1.0 / n).astype(np.int64)


@dataclass(frozen=True)
class MomentumGrid:
    """Uniform tensor grid on the momentum torus.

    Attributes
    ----------
    dim : int
        Number of torus dimensions.
    n_per_axis : int
        Grid points per axis; must be even so the grid maps onto itself
        under k -> -k.
    """

    dim: int
    n_per_axis: int
    axis_points: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, dim: int, n_per_axis: int) -> "MomentumGrid":
        if dim < 1:
            raise ValueError(f"dimension must be >= 1, got {dim}")
        if n_per_axis < 2 or n_per_axis % 2 != 0:
            raise ValueError(f"n_per_axis must be even and >= 2, got {n_per_axis}")
        # computed as (2 pi / n) * (j - n/2) so that axis[j] == -axis[n-j]
        # exactly in floating point (the grid maps onto itself under k -> -k)
        axis = (TWO_PI / n_per_axis) * (np.arange(n_per_axis) - n_per_axis // 2)
        return cls(dim=dim, n_per_axis=n_per_axis, axis_points=axis)

    @property
    def size(self) -> int:
        return self.n_per_axis**self.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_per_axis,) * self.dim

    @property
    def weight(self) -> float:
        """Quadrature weight per grid point, (2 pi / n)^d."""
        return (TWO_PI / self.n_per_axis) ** self.dim

    def points(self) -> np.ndarray:
        """All grid points as an (size, dim) array, axis 0 fastest-varying last."""
        mesh = np.meshgrid(*([self.axis_points] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def integrate(self, f: np.ndarray):
        """Torus integral of a grid function (trapezoid = rectangle rule)."""
        return self.weight * np.asarray(f).reshape(-1).sum(axis=0)


@dataclass(frozen=True)
class DispersionLaw:
    """Band function on the torus.

    kind "cosine": eps(k) = sum_a amplitude[a] * (1 - cos k_a), the
    nearest-neighbor band.  kind "tabulated": values given on a specific grid;
    queries off that grid raise, since no interpolation rule is attached.
    """

    kind: str
    dim: int
    amplitudes: tuple[float, ...] = ()
    table: np.ndarray | None = field(default=None, repr=False)
    table_grid: MomentumGrid | None = field(default=None, repr=False)

    @classmethod
    def cosine(cls, dim: int, amplitudes=None) -> "DispersionLaw":
        if amplitudes is None:
            amplitudes = (2.0,) * dim
        amplitudes = tuple(float(a) for a in amplitudes)
        if len(amplitudes) != dim:
            raise ValueError("need one amplitude per axis")
        return cls(kind="cosine", dim=dim, amplitudes=amplitudes)

    @classmethod
    def tabulated(cls, grid: MomentumGrid, values: np.ndarray) -> "DispersionLaw":
        values = np.asarray(values, dtype=float).reshape(grid.shape)
        sym = values[tuple(np.roll(v[::-1], 1) for v in np.indices(grid.shape))]
        if not np.allclose(values, sym, atol=1e-12):
            raise ValueError("tabulated dispersion must satisfy eps(k) = eps(-k)")
        return cls(kind="tabulated", dim=grid.dim, table=values, table_grid=grid)

    def energy(self, k) -> np.ndarray:
        """eps(k) for k of shape (..., dim) (or (...,) when dim == 1)."""
        k = self._as_points(k)
        if self.kind == "cosine":
            amps = np.asarray(self.amplitudes)
            return (amps * (1.0 - np.cos(k))).sum(axis=-1)
        return self._table_lookup(k)

    def group_velocity(self, k) -> np.ndarray:
        """grad eps(k), shape (..., dim)."""
        k = self._as_points(k)
        if self.kind == "cosine":
            return np.asarray(self.amplitudes) * np.sin(k)
        raise NotImplementedError(
            "group velocity of a tabulated law: use spectral_derivative on its table"
        )

    def energy_grid(self, grid: MomentumGrid) -> np.ndarray:
        """Energies at all grid points, flattened to (grid.size,)."""
        if self.kind == "tabulated":
            if self.table_grid is None or grid.shape != self.table_grid.shape:
                raise ValueError("tabulated law queried on a different grid")
            return self.table.reshape(-1)
        return self.energy(grid.points())

    def velocity_grid(self, grid: MomentumGrid) -> np.ndarray:
        """Group velocities at all grid points, shape (grid.size, dim)."""
        if self.kind == "tabulated":
            comps = [
                spectral_derivative(grid, self.table.reshape(-1), axis=a)
                for a in range(grid.dim)
            ]
            return np.stack(comps, axis=-1)
        return self.group_velocity(grid.points())

    def _as_points(self, k) -> np.ndarray:
        k = np.asarray(k, dtype=float)
        if self.dim == 1 and (k.ndim == 0 or k.shape[-1] != 1):
            k = k[..., None]
        if k.shape[-1] != self.dim:
            raise ValueError(f"momentum needs {self.dim} components, got shape {k.shape}")
        return k

    def _table_lookup(self, k: np.ndarray) -> np.ndarray:
        grid = self.table_grid
        idx = (np.asarray(k) + np.pi) / TWO_PI * grid.n_per_axis
        near = np.rint(idx)
        if not np.allclose(idx, near, atol=1e-9):
            raise ValueError(
                "tabulated dispersion queried off its grid; interpolation not supported"
            )
        flat = np.zeros(k.shape[:-1], dtype=np.int64)
        for a in range(grid.dim):
            flat = flat * grid.n_per_axis + (near[..., a].astype(np.int64) % grid.n_per_axis)
        return self.table.reshape(-1)[flat]


def spectral_derivative(grid: MomentumGrid, f: np.ndarray, axis: int) -> np.ndarray:
    """Fourier-spectral partial derivative of a grid function along one axis.

    The Nyquist mode is zeroed (the standard symmetric convention for even n),
    so the derivative of any real trigonometric polynomial of degree < n/2 is
    exact and the derivative of a constant is identically zero.
    """
    f = np.asarray(f)
    if not np.all(np.isfinite(f)):
        raise ValueError("spectral_derivative: input contains non-finite entries")
    if not 0 <= axis < grid.dim:
        raise ValueError(f"axis {axis} out of range for dim {grid.dim}")
    shape = grid.shape
    g = f.reshape(shape)
    m = fourier_modes(grid.n_per_axis).astype(float)
    m[grid.n_per_axis // 2] = 0.0
    gh = np.fft.fft(g, axis=axis)
    sl = [None] * g.ndim
    sl[axis] = slice(None)
    out = np.fft.ifft(1j * m[tuple(sl)] * gh, axis=axis)
    out = out.real if np.isrealobj(f) else out
    return out.reshape(f.shape)


def diff_matrix(n: int) -> np.ndarray:
    """Dense 1-d Fourier differentiation matrix (Trefethen's cotangent form)."""
    j = np.arange(n)
    dj = j[:, None] - j[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        D = 0.5 * (-1.0) ** dj / np.tan(dj * np.pi / n)
    np.fill_diagonal(D, 0.0)
    return D


def diff_matrices(grid: MomentumGrid) -> list[np.ndarray]:
    """Dense differentiation matrices on the flattened grid, one per axis."""
    n = grid.n_per_axis
    D1 = diff_matrix(n)
    eye = np.eye(n)
    mats = []
    for a in range(grid.dim):
        M = np.array([[1.0]])
        for b in range(grid.dim):
            M = np.kron(M, D1 if b == a else eye)
        mats.append(M)
    return mats


def trig_coefficients(grid: MomentumGrid, f: np.ndarray) -> np.ndarray:
    """Fourier coefficients c_m with f(k) = sum_m c_m exp(i m.k), m in FFT order.

    The grid starts at -pi, so the raw DFT coefficients pick up a (-1)^|m|
    phase; it is applied here once so callers can evaluate at arbitrary k.
    """
    g = np.asarray(f).reshape(grid.shape)
    c = np.fft.fftn(g) / grid.size
    m = fourier_modes(grid.n_per_axis)
    for a in range(grid.dim):
        sl = [None] * grid.dim
        sl[a] = slice(None)
        c = c * np.exp(1j * m * np.pi)[tuple(sl)]
    return c


def trig_eval(grid: MomentumGrid, coeffs: np.ndarray, k) -> np.ndarray:
    """Evaluate a 1-d trigonometric interpolant at arbitrary points.

    The Nyquist mode is evaluated as cos(m k) so that real grid data produce a
    real interpolant.  Grid-to-grid resampling in any dimension goes through
    trig_shift instead.
    """
    if grid.dim != 1:
        raise NotImplementedError("trig_eval supports dim=1; use trig_shift on grids")
    k = np.asarray(k, dtype=float)
    m = fourier_modes(grid.n_per_axis)
    n = grid.n_per_axis
    ph = np.exp(1j * np.multiply.outer(k, m))
    ph[..., n // 2] = np.cos(k * m[n // 2])
    return (ph @ coeffs.reshape(-1)).real


def trig_shift(grid: MomentumGrid, f: np.ndarray, shift) -> np.ndarray:
    """Sample f(k - shift) on the grid via FFT phase factors (trig interpolation)."""
    shift = np.atleast_1d(np.asarray(shift, dtype=float))
    g = np.asarray(f).reshape(grid.shape)
    n = grid.n_per_axis
    m = fourier_modes(n)
    gh = np.fft.fftn(g)
    for a in range(grid.dim):
        ph = np.exp(-1j * m * shift[a])
        ph[n // 2] = np.cos(m[n // 2] * shift[a])
        sl = [None] * grid.dim
        sl[a] = slice(None)
        gh = gh * ph[tuple(sl)]
    out = np.fft.ifftn(gh)
    out = out.real if np.isrealobj(f) else out
    return out.reshape(np.asarray(f).shape)


def check_assumption_a(law: DispersionLaw, grid: MomentumGrid, n_random: int | None = None,
                       seed: int = 20210314, threshold: float = 1e-10):
    """Scan directions v for max_k |v . grad eps(k)| and flag flat ones.

    Coordinate directions plus 2*dim + 10 fixed random unit vectors are
    scanned; returns (ok, worst_direction, worst_max).
    """
    if n_random is None:
        n_random = 2 * grid.dim + 10
    vel = law.velocity_grid(grid)
    rng = np.random.default_rng(seed)
    dirs = [np.eye(grid.dim)[a] for a in range(grid.dim)]
    extra = rng.normal(size=(n_random, grid.dim))
    dirs += list(extra / np.linalg.norm(extra, axis=1, keepdims=True))
    worst_max = np.inf
    worst_dir = None
    for v in dirs:
        m = np.abs(vel @ v).max()
        if m < worst_max:
            worst_max = m
            worst_dir = v
    return bool(worst_max > threshold), worst_dir, float(worst_max)
