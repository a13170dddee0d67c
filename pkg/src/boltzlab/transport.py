"""Steady states, spectra, eigenvalue branch, velocity, diffusion, Einstein relation.

Transport coefficients are extracted three independent ways and must agree:

* eigenvalue perturbation: the branch u(kappa, chi) of the generator through
  u(0) = 0 carries v = Im grad_kappa u and D = -(1/2) Hess_kappa u;
* reduced-resolvent (Rayleigh-Schroedinger) solves, which express the same
  Hessian through linear systems with the kappa = 0 generator;
* Green-Kubo integration of the velocity autocorrelation function (chi = 0).

The mobility d v / d chi at chi = 0 then has to equal beta D(0) (Einstein
relation), which ties the drive response to equilibrium fluctuations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .generator import GeneratorMatrix, KineticModel


class DegenerateSteadyStateError(RuntimeError):
    """A second eigenvalue sits numerically on top of zero."""


class PositivityError(RuntimeError):
    """Computed steady state has a meaningfully negative component."""


class GeneratorSignError(RuntimeError):
    """Spectrum leaked into the right half plane."""


class BranchAmbiguityError(RuntimeError):
    """Zero or several eigenvalue candidates inside the tracking disk."""

    def __init__(self, msg, candidates=()):
        super().__init__(msg)
        self.candidates = tuple(candidates)


class InconsistencyError(RuntimeError):
    """Two independent routes to the same quantity disagree beyond tolerance."""


@dataclass(frozen=True)
class StationaryState:
    chi: np.ndarray
    zeta: np.ndarray = field(repr=False)
    gap: float | None
    residual: float


@dataclass(frozen=True)
class TransportCoefficients:
    chi: np.ndarray
    v: np.ndarray
    D: np.ndarray
    gap: float | None
    a0: float
    method: dict = field(default_factory=dict)
    u_samples: tuple = ()


@dataclass(frozen=True)
class EinsteinReport:
    mobility: np.ndarray
    diffusion: np.ndarray
    beta: float
    rel_err: float
    delta_chi: float
    passed: bool


def _bordered_solve(M: np.ndarray, weight: float, rhs: np.ndarray, seed: np.ndarray):
    """Solve M y = rhs subject to <1, y> = 0 on the complement of the null pair.

    The (n+1) x (n+1) bordered system [[M, seed], [w 1^T, 0]] is regular when
    zero is a simple eigenvalue with right vector ~ seed and left vector 1.
    """
    n = M.shape[0]
    dtype = np.result_type(M.dtype, rhs.dtype)
    A = np.zeros((n + 1, n + 1), dtype=dtype)
    A[:n, :n] = M
    A[:n, n] = seed
    A[n, :n] = weight
    b = np.zeros(n + 1, dtype=dtype)
    b[:n] = rhs
    sol = np.linalg.solve(A, b)
    return sol[:n], sol[n]


def stationary_state(gen: GeneratorMatrix, need_gap: bool = True,
                     residual_tol: float = 1e-10) -> StationaryState:
    """Null vector of M^{0,chi} by inverse iteration with shift zero, Gibbs-seeded.

    The result is normalized to <1, zeta> = 1, checked strictly positive, and
    its residual ||M zeta|| must stay below residual_tol * ||M||.
    """
    if gen.has_advection:
        raise ValueError("stationary_state needs the kappa = 0 generator")
    M = gen.matrix
    n = M.shape[0]
    w = gen.grid.weight
    scale = gen.norm()
    g = np.exp(-gen.beta * gen.law.energy_grid(gen.grid))
    x = g / (w * g.sum())
    shift = 1e-13 * scale
    lu = sla.lu_factor(M - shift * np.eye(n))
    best = None
    for _ in range(6):
        x = sla.lu_solve(lu, x)
        x /= w * x.sum()
        resid = float(np.linalg.norm(M @ x) / max(scale, 1e-300))
        if best is None or resid < best[1]:
            best = (x.copy(), resid)
        if resid < 1e-15:
            break
    zeta, resid = best
    if resid > residual_tol:
        raise RuntimeError(f"stationary state residual {resid:.2e} above {residual_tol:.0e}")
    if zeta.min() < -1e-12:
        raise PositivityError(f"steady state has component {zeta.min():.2e} < -1e-12")
    gap = None
    if need_gap:
        ev = np.linalg.eigvals(M)
        ev_sorted = ev[np.argsort(np.abs(ev))]
        if len(ev_sorted) > 1 and abs(ev_sorted[1]) < 1e-10 * max(scale, 1.0):
            raise DegenerateSteadyStateError(
                f"second eigenvalue {ev_sorted[1]:.3e} within 1e-10 of zero"
            )
        gap = float(-ev_sorted[1:].real.max())
    return StationaryState(chi=gen.chi, zeta=zeta, gap=gap, residual=resid)


def full_spectrum(gen: GeneratorMatrix) -> np.ndarray:
    """All eigenvalues of the dense generator, with sign sanity enforced.

    Raises GeneratorSignError if any eigenvalue has real part above 1e-8
    (relative to the matrix scale).
    """
    ev = np.linalg.eigvals(gen.matrix)
    if ev.real.max() > 1e-8 * max(gen.norm(), 1.0):
        raise GeneratorSignError(f"eigenvalue with Re = {ev.real.max():.3e} > 0")
    return ev[np.argsort(-ev.real)]


def spectral_gap(gen: GeneratorMatrix) -> float:
    """Distance from the imaginary axis to the nonzero spectrum of M^{0,chi}."""
    ev = full_spectrum(gen)
    ev = ev[np.argsort(np.abs(ev))]
    return float(-ev[1:].real.max())


def symmetrize(gen: GeneratorMatrix) -> np.ndarray:
    """Conjugate by exp(beta eps / 2): detailed balance makes the chi = 0 result symmetric."""
    eps = gen.law.energy_grid(gen.grid)
    half = 0.5 * gen.beta * eps
    return np.exp(half)[:, None] * gen.matrix * np.exp(-half)[None, :]


def _polish_eigenpair(M: np.ndarray, u: complex, v: np.ndarray, iters: int = 2):
    """Refine an eigenpair by shifted inverse iteration with a two-sided Rayleigh quotient."""
    n = M.shape[0]
    y = np.ones(n, dtype=complex)
    for _ in range(iters):
        shift = u + 1e-12 * (1.0 + abs(u))
        try:
            lu = sla.lu_factor(M - shift * np.eye(n))
            v = sla.lu_solve(lu, v)
            v /= np.linalg.norm(v)
            y = sla.lu_solve(lu, y, trans=2)
            y /= np.linalg.norm(y)
        except np.linalg.LinAlgError:
            break
        denom = y.conj() @ v
        if abs(denom) < 1e-12:
            break
        u = complex((y.conj() @ (M @ v)) / denom)
    return u, v


def eigenvalue_branch(model: KineticModel, chi, kappa, gap: float | None = None,
                      center: complex = 0.0) -> complex:
    """Eigenvalue u(kappa, chi) continued from u(0, chi) = 0.

    The candidate must be the unique eigenvalue inside the disk of radius
    gap/2 around the continuation center; zero or several candidates raise
    BranchAmbiguityError with the offenders attached.
    """
    gen = model.generator(kappa=kappa, chi=chi)
    if gap is None:
        gap = spectral_gap(model.generator(chi=chi))
    M = gen.matrix.astype(complex)
    ev, V = np.linalg.eig(M)
    inside = np.nonzero(np.abs(ev - center) < 0.5 * gap)[0]
    if len(inside) != 1:
        raise BranchAmbiguityError(
            f"{len(inside)} eigenvalue candidates in the disk of radius {0.5 * gap:.3g} "
            f"around {center:.3g}", candidates=ev[inside],
        )
    i = inside[0]
    u, _ = _polish_eigenpair(M, complex(ev[i]), V[:, i].copy())
    return u


def _branch_derivative(model: KineticModel, chi, axis: int, gap: float,
                       step: float = 1e-3) -> complex:
    """Richardson-extrapolated central d u / d kappa_axis at kappa = 0."""
    d = model.grid.dim

    def u_at(h):
        kap = np.zeros(d)
        kap[axis] = h
        return eigenvalue_branch(model, chi, kap, gap=gap)

    d1 = (u_at(step) - u_at(-step)) / (2 * step)
    d2 = (u_at(step / 2) - u_at(-step / 2)) / step
    return (4.0 * d2 - d1) / 3.0


def velocity(model: KineticModel, state: StationaryState, check_branch: bool = True,
             step: float = 1e-3, check_tol: float = 1e-4) -> np.ndarray:
    """Drift velocity v = <grad eps, zeta>, cross-checked against the u-branch slope.

    The branch route evaluates Im d u / d kappa by Richardson central
    differences; disagreement beyond check_tol raises InconsistencyError.
    """
    vel = model.law.velocity_grid(model.grid)
    v = model.grid.weight * (vel * state.zeta[:, None]).sum(axis=0)
    if check_branch:
        gap = state.gap if state.gap is not None else spectral_gap(model.generator(chi=state.chi))
        for a in range(model.grid.dim):
            du = _branch_derivative(model, state.chi, a, gap, step=step)
            if abs(du.imag - v[a]) > check_tol:
                raise InconsistencyError(
                    f"velocity axis {a}: stationary average {v[a]:.3e} vs branch slope "
                    f"{du.imag:.3e} disagree beyond {check_tol:.0e}"
                )
    return v


def _reduced_solves(model: KineticModel, state: StationaryState):
    """Solve M^{0,chi} y_a = Pbar(grad_a eps * zeta) for every axis, <1, y_a> = 0."""
    gen = model.generator(chi=state.chi)
    M = gen.matrix
    w = model.grid.weight
    vel = model.law.velocity_grid(model.grid)
    v = w * (vel * state.zeta[:, None]).sum(axis=0)
    ys = []
    scale = gen.norm()
    for a in range(model.grid.dim):
        rhs = (vel[:, a] - v[a]) * state.zeta
        y, _ = _bordered_solve(M, w, rhs, state.zeta)
        resid = np.linalg.norm(M @ y - rhs) / max(scale, 1e-300)
        if resid > 1e-9:
            raise RuntimeError(f"reduced-resolvent solve residual {resid:.2e} > 1e-9")
        ys.append(y)
    return np.stack(ys, axis=1), vel, v


def diffusion_rs(model: KineticModel, state: StationaryState) -> np.ndarray:
    """Diffusion tensor from the reduced-resolvent (second-order perturbation) route.

    D_ij = -(1/2) (<1, grad_i eps y_j> + <1, grad_j eps y_i>) with
    M^{0,chi} y_j = Pbar(grad_j eps zeta).
    """
    ys, vel, _ = _reduced_solves(model, state)
    w = model.grid.weight
    c = w * np.einsum("ka,kb->ab", vel, ys)
    return -0.5 * (c + c.T)


def diffusion_fd(model: KineticModel, chi, step: float = 1e-3, gap: float | None = None,
                 imag_tol: float = 1e-8) -> np.ndarray:
    """Diffusion tensor as -(1/2) of the Richardson-extrapolated kappa-Hessian of u."""
    chi = np.atleast_1d(np.asarray(chi, dtype=float))
    d = model.grid.dim
    if gap is None:
        gap = spectral_gap(model.generator(chi=chi))

    def u_at(kap):
        return eigenvalue_branch(model, chi, np.asarray(kap, dtype=float), gap=gap)

    def hess(h):
        H = np.zeros((d, d), dtype=complex)
        u0 = u_at(np.zeros(d))
        for a in range(d):
            e = np.zeros(d)
            e[a] = h
            H[a, a] = (u_at(e) - 2 * u0 + u_at(-e)) / h**2
            for b in range(a + 1, d):
                eb = np.zeros(d)
                eb[b] = h
                H[a, b] = (u_at(e + eb) - u_at(e - eb) - u_at(-e + eb) + u_at(-e - eb)) / (4 * h**2)
                H[b, a] = H[a, b]
        return H

    H = (4.0 * hess(step / 2) - hess(step)) / 3.0
    D = -0.5 * H
    D = 0.5 * (D + D.T)
    if np.abs(D.imag).max() > imag_tol:
        raise InconsistencyError(
            f"diffusion Hessian has imaginary part {np.abs(D.imag).max():.2e} > {imag_tol:.0e}"
        )
    return D.real


@dataclass(frozen=True)
class GreenKuboResult:
    D_resolvent: np.ndarray
    D_quadrature: np.ndarray
    C0: np.ndarray
    horizon: float


def green_kubo(model: KineticModel, state: StationaryState, horizon: float | None = None,
               n_steps: int = 2000) -> GreenKuboResult:
    """Time-integrated velocity autocorrelation at chi = 0, two ways.

    The closed form integrates exp(t M) on the complement of the null space
    exactly, reproducing the reduced-resolvent tensor; the explicit route
    quadratures C_ij(t) = <1, grad_i eps exp(tM) Pbar(grad_j eps zeta)> by
    Simpson up to the horizon (default 10/gap) plus an exponential tail
    estimate fitted to the last decade.
    """
    if np.any(state.chi != 0.0):
        raise ValueError("green_kubo is defined at chi = 0")
    ys, vel, _ = _reduced_solves(model, state)
    w = model.grid.weight
    c = w * np.einsum("ka,kb->ab", vel, ys)
    D_res = -0.5 * (c + c.T)

    gen = model.generator(chi=state.chi)
    gap = state.gap if state.gap is not None else spectral_gap(gen)
    if horizon is None:
        horizon = 10.0 / gap
    ev, V = np.linalg.eig(gen.matrix.astype(complex))
    Vinv = np.linalg.inv(V)
    d = model.grid.dim
    v_mean = w * (vel * state.zeta[:, None]).sum(axis=0)
    g = (vel - v_mean) * state.zeta[:, None]      # Pbar(grad eps zeta) per axis
    coeff = Vinv @ g                              # (N, d)
    left = w * (vel.T @ V)                        # (d, N)
    ts = np.linspace(0.0, horizon, 2 * (n_steps // 2) + 1)
    C = np.empty((len(ts), d, d))
    for i, t in enumerate(ts):
        C[i] = (left @ (np.exp(ev * t)[:, None] * coeff)).real
    h = ts[1] - ts[0]
    wts = np.ones(len(ts))
    wts[1:-1:2], wts[2:-1:2] = 4.0, 2.0
    D_quad = (h / 3.0) * np.einsum("t,tab->ab", wts, C)
    # exponential tail estimate from the last decade of |C|
    i0 = int(0.8 * (len(ts) - 1))
    c_ref = np.linalg.norm(C[i0]), np.linalg.norm(C[-1])
    if c_ref[1] > 0 and c_ref[0] > c_ref[1]:
        rate = np.log(c_ref[0] / c_ref[1]) / (ts[-1] - ts[i0])
        D_quad = D_quad + C[-1] / rate
    return GreenKuboResult(D_resolvent=D_res, D_quadrature=D_quad, C0=C[0], horizon=horizon)


def einstein_check(model: KineticModel, delta_chi: float = 1e-3,
                   tolerance: float = 1e-4) -> EinsteinReport:
    """Compare the mobility tensor d v / d chi at chi = 0 against beta D(0).

    Mobility via central differences over stationary states at +-delta_chi
    per axis; D(0) from the reduced-resolvent route.
    """
    d = model.grid.dim
    beta = model.beta
    mob = np.zeros((d, d))
    vel = model.law.velocity_grid(model.grid)
    w = model.grid.weight
    for a in range(d):
        chi = np.zeros(d)
        chi[a] = delta_chi
        zp = stationary_state(model.generator(chi=chi), need_gap=False).zeta
        zm = stationary_state(model.generator(chi=-chi), need_gap=False).zeta
        vp = w * (vel * zp[:, None]).sum(axis=0)
        vm = w * (vel * zm[:, None]).sum(axis=0)
        mob[a] = (vp - vm) / (2.0 * delta_chi)
    state0 = stationary_state(model.generator(chi=np.zeros(d)), need_gap=False)
    D0 = diffusion_rs(model, state0)
    rel = float(np.linalg.norm(mob - beta * D0) / np.linalg.norm(beta * D0))
    return EinsteinReport(mobility=mob, diffusion=D0, beta=beta, rel_err=rel,
                          delta_chi=delta_chi, passed=bool(rel < tolerance))


@dataclass(frozen=True)
class LargeFieldRow:
    chi: float
    v: float
    D: float
    chi_v: float
    chi_D: float
    gap: float


def large_field_scan(model: KineticModel, chi_values) -> tuple[list[LargeFieldRow], list[str]]:
    """Scan v(chi), D(chi) over a list of strong drives (d = 1 only).

    Returns the table plus a list of warnings for points where the branch or
    steady-state solve failed (partial table instead of an exception).
    """
    if model.grid.dim != 1:
        raise ValueError("large_field_scan is a d = 1 diagnostic")
    rows, warnings = [], []
    for chi in chi_values:
        try:
            gen = model.generator(chi=[float(chi)])
            state = stationary_state(gen)
            v = float(velocity(model, state, check_branch=False)[0])
            D = float(diffusion_rs(model, state)[0, 0])
            rows.append(LargeFieldRow(chi=float(chi), v=v, D=D, chi_v=chi * v,
                                      chi_D=chi * D, gap=state.gap))
        except (RuntimeError, np.linalg.LinAlgError) as exc:
            warnings.append(f"chi={chi}: {exc}")
    return rows, warnings


def transport_summary(model: KineticModel, chi, kappa_probe: float = 0.25) -> TransportCoefficients:
    """Bundle v, D, gap, a0 and a few u-branch samples for one drive setting."""
    chi = np.atleast_1d(np.asarray(chi, dtype=float))
    gen = model.generator(chi=chi)
    state = stationary_state(gen)
    v = velocity(model, state)
    D = diffusion_rs(model, state)
    d = model.grid.dim
    samples = []
    for a in range(d):
        kap = np.zeros(d)
        kap[a] = kappa_probe
        u = eigenvalue_branch(model, chi, kap, gap=state.gap)
        samples.append((tuple(kap), u))
    return TransportCoefficients(chi=chi, v=v, D=D, gap=state.gap, a0=gen.a0,
                                 method={"v": "stationary+branch", "D": "reduced-resolvent"},
                                 u_samples=tuple(samples))
