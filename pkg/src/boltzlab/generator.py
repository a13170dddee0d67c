"""Discretized Boltzmann generator M = i kappa . grad(eps) - chi . grad + G + L.

The gain kernel integrates the rate r(k', k) against the density at k', the
loss is multiplication by the escape rate R(k) = Int dk' r(k, k'); uniform
quadrature weights make probability conservation (zero column sums of G + L
and of the drift) exact by construction, and pointwise detailed balance of
the rates makes the Gibbs density exactly stationary at chi = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lattice import DispersionLaw, MomentumGrid, diff_matrices
from .reservoir import SpectralDensity


class DegenerateRatesError(RuntimeError):
    """Escape rates vanish somewhere; the jump process is not well posed."""


class AssemblyError(RuntimeError):
    """Generator invariants violated beyond tolerance during assembly."""


@dataclass(frozen=True)
class JumpRateTable:
    """Jump rates r(k_i, k_j) = psi(eps_j - eps_i) on the grid, plus escapes."""

    grid: MomentumGrid
    law: DispersionLaw
    beta: float
    rates: np.ndarray = field(repr=False)     # (N, N), rates[i, j] = r(k_i -> k_j)
    escape: np.ndarray = field(repr=False)    # (N,),  R(k_i) = w * sum_j rates[i, j]
    energies: np.ndarray = field(repr=False)  # (N,)

    def detailed_balance_residual(self) -> float:
        """Max relative violation of r_ij exp(-beta eps_i) = r_ji exp(-beta eps_j)."""
        g = np.exp(-self.beta * self.energies)
        flux = self.rates * g[:, None]
        scale = max(np.abs(flux).max(), 1e-300)
        return float(np.abs(flux - flux.T).max() / scale)


def build_rates(law: DispersionLaw, grid: MomentumGrid, sd: SpectralDensity) -> JumpRateTable:
    """Evaluate the rate kernel on all grid pairs and the escape vector."""
    eps = law.energy_grid(grid)
    de = eps[None, :] - eps[:, None]
    rates = sd(de)
    if not np.all(np.isfinite(rates)):
        raise AssemblyError("rate table contains non-finite entries")
    if rates.min() < 0:
        raise AssemblyError("rate table contains negative entries")
    escape = grid.weight * rates.sum(axis=1)
    table = JumpRateTable(grid=grid, law=law, beta=sd.beta, rates=rates,
                          escape=escape, energies=eps)
    resid = table.detailed_balance_residual()
    if resid > 1e-12:
        raise AssemblyError(f"detailed balance violated at {resid:.2e}")
    return table


def min_escape_rate(table: JumpRateTable) -> float:
    """a0 = min_i R(k_i); must be strictly positive."""
    a0 = float(table.escape.min())
    if a0 <= 1e-14:
        raise DegenerateRatesError(f"minimum escape rate {a0:.2e} is degenerate")
    return a0


def build_gain(table: JumpRateTable) -> np.ndarray:
    """Gain matrix G[i, j] = w * r(k_j, k_i) (scattering into k_i from k_j)."""
    return table.grid.weight * table.rates.T.copy()


def build_loss(table: JumpRateTable) -> np.ndarray:
    """Loss matrix, diagonal -R(k_i)."""
    return np.diag(-table.escape)


def build_drift(grid: MomentumGrid, chi) -> np.ndarray:
    """Drift matrix -sum_a chi_a D_a with D_a the spectral differentiation matrices."""
    chi = np.atleast_1d(np.asarray(chi, dtype=float))
    if chi.shape != (grid.dim,):
        raise ValueError(f"chi needs {grid.dim} components")
    out = np.zeros((grid.size, grid.size))
    if np.all(chi == 0.0):
        return out
    for a, Da in enumerate(diff_matrices(grid)):
        if chi[a] != 0.0:
            out -= chi[a] * Da
    return out


def build_advection(law: DispersionLaw, grid: MomentumGrid, kappa) -> np.ndarray:
    """Advection diagonal i kappa . grad(eps)(k_i); kappa may be complex."""
    kappa = np.atleast_1d(np.asarray(kappa))
    if kappa.shape != (grid.dim,):
        raise ValueError(f"kappa needs {grid.dim} components")
    vel = law.velocity_grid(grid)
    return np.diag(1j * (vel @ kappa))


@dataclass(frozen=True)
class GeneratorMatrix:
    """Dense assembled generator with its configuration metadata."""

    grid: MomentumGrid
    law: DispersionLaw
    beta: float
    kappa: np.ndarray
    chi: np.ndarray
    matrix: np.ndarray = field(repr=False)
    a0: float = 0.0
    has_advection: bool = True
    has_drift: bool = True

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.matrix)

    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix, ord=np.inf))


def assemble_generator(law: DispersionLaw, grid: MomentumGrid, sd: SpectralDensity,
                       kappa=None, chi=None, table: JumpRateTable | None = None) -> GeneratorMatrix:
    """Assemble M^{kappa,chi} and validate its structural invariants.

    Validations: column sums of the kappa-independent part vanish (probability
    conservation), off-diagonal entries of G + L are nonnegative, and the
    escape floor a0 is positive.
    """
    kappa = np.zeros(grid.dim) if kappa is None else np.atleast_1d(np.asarray(kappa))
    chi = np.zeros(grid.dim) if chi is None else np.atleast_1d(np.asarray(chi, dtype=float))
    if table is None:
        table = build_rates(law, grid, sd)
    a0 = min_escape_rate(table)
    G = build_gain(table)
    L = build_loss(table)
    conservative = G + L + build_drift(grid, chi)
    scale = np.abs(conservative).max()
    colsum = np.abs(conservative.sum(axis=0)).max()
    if colsum > 1e-10 * scale:
        raise AssemblyError(
            f"conservation violated: max column sum {colsum:.2e} vs scale {scale:.2e}"
        )
    offdiag = G + L - np.diag(np.diag(G + L))
    if offdiag.min() < 0:
        raise AssemblyError("negative off-diagonal entry in G + L")
    M = conservative.astype(complex) + build_advection(law, grid, kappa) \
        if np.any(kappa != 0) else conservative
    return GeneratorMatrix(grid=grid, law=law, beta=sd.beta, kappa=kappa, chi=chi,
                           matrix=M, a0=a0, has_advection=bool(np.any(kappa != 0)),
                           has_drift=bool(np.any(chi != 0)))


@dataclass(frozen=True)
class KineticModel:
    """One lattice + reservoir configuration with its rate table, shared downstream."""

    law: DispersionLaw
    grid: MomentumGrid
    sd: SpectralDensity
    table: JumpRateTable

    @classmethod
    def build(cls, law: DispersionLaw, grid: MomentumGrid, sd: SpectralDensity) -> "KineticModel":
        return cls(law=law, grid=grid, sd=sd, table=build_rates(law, grid, sd))

    @property
    def beta(self) -> float:
        return self.sd.beta

    def generator(self, kappa=None, chi=None) -> GeneratorMatrix:
        return assemble_generator(self.law, self.grid, self.sd, kappa=kappa, chi=chi,
                                  table=self.table)

    def gibbs(self) -> np.ndarray:
        """Normalized Gibbs density exp(-beta eps)/Z on the grid."""
        g = np.exp(-self.beta * self.table.energies)
        return g / (self.grid.weight * g.sum())
