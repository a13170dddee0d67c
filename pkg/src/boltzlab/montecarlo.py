"""Piecewise-deterministic jump process: thinning simulation and estimators.

Between collisions the momentum drifts linearly in the drive and the position
integrates the group velocity along the drift line (closed form for cosine
bands).  Collisions are sampled by thinning: candidate events arrive at the
constant dominating rate R_max and are accepted with probability
R(k(t))/R_max, where the escape rate along the drift line is evaluated
directly as the quadrature sum w * sum_j psi(eps_j - eps(k)) -- the exact
normalizer of the grid jump distribution, so the simulated chain is the same
Markov process the dense generator discretizes.  At chi = 0 the state never
leaves the grid and the kernel uses precomputed rate tables verbatim.

Reproducibility contract: every trajectory consumes an independent PCG64
stream derived from (master seed, trajectory index) via SeedSequence
spawn keys; estimates are bitwise reproducible for a fixed configuration,
independent of the thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .generator import KineticModel
from .transport import stationary_state


@njit(cache=True, nogil=True)
def _psi_scalar(om, beta, d_res, sphere, amp2, inv_w2):
    a = abs(om)
    if a == 0.0:
        if d_res == 2:
            return sphere * amp2 / beta
        return 0.0
    rho = sphere * a ** (d_res - 1) * amp2 * np.exp(-a * a * inv_w2)
    if om > 0.0:
        return rho / np.expm1(beta * a)
    return rho / (-np.expm1(-beta * a))


@njit(cache=True, nogil=True)
def _energy(k, amps):
    e = 0.0
    for a in range(k.shape[0]):
        e += amps[a] * (1.0 - np.cos(k[a]))
    return e


@njit(cache=True, nogil=True)
def _simulate(u, k0, k0_idx, kgrid, eps_grid, escape_grid, jump_cdf, weight,
              beta, d_res, sphere, amp2, inv_w2, amps, chi, horizon, rmax,
              burn_frac, hist, naxis,
              x_out, njump_out, ncand_out, status_out,
              record, rec_times, rec_idx, rec_count):
    """Simulate a batch of trajectories; see module docstring for the scheme.

    status: 1 ok, 0 uniform buffer exhausted, 2 record buffer exhausted.
    """
    n_traj = u.shape[0]
    n_states = kgrid.shape[0]
    d = kgrid.shape[1]
    t_burn = burn_frac * horizon
    drift_free = True
    for a in range(d):
        if chi[a] != 0.0:
            drift_free = False
    for itr in range(n_traj):
        status_out[itr] = 1
        pos = 0
        idx = k0_idx[itr]
        k = np.empty(d)
        for a in range(d):
            k[a] = k0[itr, a]
        x = np.zeros(d)
        t = 0.0
        nj = 0
        nc = 0
        nrec = 0
        while True:
            if pos + 3 > u.shape[1]:
                status_out[itr] = 0
                break
            if rmax > 0.0:
                dt = -np.log(u[itr, pos]) / rmax
                pos += 1
            else:
                dt = horizon - t + 1.0
            alive = True
            seg = dt
            if t + dt >= horizon:
                seg = horizon - t
                alive = False
            # time-weighted occupancy, nearest-node cells, burn-in respected
            t1 = t + seg
            lo = t if t > t_burn else t_burn
            if t1 > lo:
                tm = 0.5 * (lo + t1) - t
                cell = 0
                for a in range(d):
                    km = k[a] + chi[a] * tm
                    km = (km + np.pi) % (2.0 * np.pi) - np.pi
                    ca = int(np.floor((km + np.pi) / (2.0 * np.pi) * naxis + 0.5)) % naxis
                    cell = cell * naxis + ca
                hist[cell] += t1 - lo
            # drift: position closed form per axis, then momentum advance
            for a in range(d):
                if chi[a] != 0.0:
                    x[a] += (amps[a] / chi[a]) * (np.cos(k[a]) - np.cos(k[a] + chi[a] * seg))
                    k[a] = k[a] + chi[a] * seg
                    k[a] = (k[a] + np.pi) % (2.0 * np.pi) - np.pi
                else:
                    x[a] += amps[a] * np.sin(k[a]) * seg
            if not drift_free:
                idx = -1
            t = t1
            if not alive:
                break
            nc += 1
            if idx >= 0:
                R = escape_grid[idx]
            else:
                e = _energy(k, amps)
                R = 0.0
                for j in range(n_states):
                    R += _psi_scalar(eps_grid[j] - e, beta, d_res, sphere, amp2, inv_w2)
                R *= weight
            if R > rmax:
                R = rmax
            if u[itr, pos] * rmax <= R:
                pos += 1
                u3 = u[itr, pos]
                pos += 1
                if idx >= 0:
                    # binary search in the precomputed row CDF
                    lo_j, hi_j = 0, n_states - 1
                    target = u3
                    while lo_j < hi_j:
                        mid = (lo_j + hi_j) // 2
                        if jump_cdf[idx, mid] < target:
                            lo_j = mid + 1
                        else:
                            hi_j = mid
                    jsel = lo_j
                else:
                    target = u3 * R / weight
                    acc = 0.0
                    jsel = n_states - 1
                    for j in range(n_states):
                        acc += _psi_scalar(eps_grid[j] - e, beta, d_res, sphere, amp2, inv_w2)
                        if acc >= target:
                            jsel = j
                            break
                for a in range(d):
                    k[a] = kgrid[jsel, a]
                idx = jsel
                nj += 1
                if record == 1:
                    if nrec >= rec_times.shape[1]:
                        status_out[itr] = 2
                        break
                    rec_times[itr, nrec] = t
                    rec_idx[itr, nrec] = jsel
                    nrec += 1
            else:
                pos += 1
        for a in range(d):
            x_out[itr, a] = x[a]
        njump_out[itr] = nj
        ncand_out[itr] = nc
        rec_count[itr] = nrec


@dataclass(frozen=True)
class Trajectory:
    seed: int
    horizon: float
    chi: np.ndarray
    k0: np.ndarray
    jump_times: np.ndarray
    momenta: np.ndarray          # momentum after each jump, (n_jumps, d)
    x_final: np.ndarray
    n_candidates: int


@dataclass(frozen=True)
class McEstimate:
    n_traj: int
    horizon: float
    chi: np.ndarray
    master_seed: int
    v_hat: np.ndarray
    v_stderr: np.ndarray
    D_hat: np.ndarray
    D_stderr: np.ndarray
    histogram: np.ndarray = field(repr=False)
    acceptance_fraction: float
    mean_jumps: float
    n_batches: int
    batch_v: np.ndarray = field(repr=False, default=None)
    batch_D: np.ndarray = field(repr=False, default=None)


class _Engine:
    """Shared precomputation for the kernel: tables, dominating rate, seeds."""

    def __init__(self, model: KineticModel, chi, initial_density: np.ndarray | None = None):
        if model.law.kind != "cosine":
            raise NotImplementedError("the trajectory kernel supports cosine dispersion laws")
        ff = model.sd.spec.form_factor
        self.model = model
        self.chi = np.atleast_1d(np.asarray(chi, dtype=float))
        self.kgrid = model.grid.points()
        self.eps_grid = model.table.energies
        self.escape_grid = model.table.escape
        rowsum = np.maximum(model.table.rates.sum(axis=1), 1e-300)
        self.jump_cdf = np.cumsum(model.table.rates, axis=1) / rowsum[:, None]
        self.weight = model.grid.weight
        self.beta = model.beta
        self.d_res = model.sd.spec.d_res
        self.sphere = {2: 2.0 * np.pi, 3: 4.0 * np.pi}[self.d_res]
        self.amp2 = ff.amplitude**2
        self.inv_w2 = 1.0 / ff.width**2
        self.amps = np.asarray(model.law.amplitudes, dtype=float)
        if np.any(self.chi != 0.0):
            emax = float(self.eps_grid.max())
            efine = np.linspace(0.0, emax, 8193)
            de = self.eps_grid[None, :] - efine[:, None]
            rfine = self.weight * model.sd(de).sum(axis=1)
            self.rmax = float(max(rfine.max(), self.escape_grid.max()) * (1.0 + 1e-9))
        else:
            self.rmax = float(self.escape_grid.max() * (1.0 + 1e-12))
        self._init_density = initial_density
        self._init_cdf = None

    @property
    def init_cdf(self) -> np.ndarray:
        # lazy: the default (stationary) start needs a steady-state solve,
        # which is unavailable for degenerate configurations like zero coupling
        if self._init_cdf is None:
            dens = self._init_density
            if dens is None:
                dens = stationary_state(self.model.generator(chi=self.chi),
                                        need_gap=False).zeta
            pcell = np.maximum(dens * self.weight, 0.0)
            self._init_cdf = np.cumsum(pcell / pcell.sum())
        return self._init_cdf

    def buffer_len(self, horizon: float) -> int:
        mean = self.rmax * horizon
        return int(3.0 * (mean + 6.0 * np.sqrt(mean + 1.0)) + 256)

    def draw_start(self, rng) -> int:
        return int(np.searchsorted(self.init_cdf, rng.random()))


def _traj_rng(master_seed: int, index: int):
    return np.random.default_rng(np.random.SeedSequence(entropy=master_seed,
                                                        spawn_key=(index,)))


def simulate_trajectory(model: KineticModel, chi, horizon: float, seed: int,
                        k0=None, initial_density: np.ndarray | None = None) -> Trajectory:
    """Simulate one trajectory with a full jump record.

    The starting momentum is drawn from initial_density (stationary by
    default) unless k0 is given explicitly.  Deterministic in (seed, config).
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    eng = _Engine(model, chi, initial_density=initial_density)
    rec_cap = max(64, int(4 * eng.rmax * horizon + 6 * np.sqrt(eng.rmax * horizon + 1.0)))
    buf_len = eng.buffer_len(horizon)
    while True:
        # replay the trajectory's stream from scratch on every retry so the
        # realized path is independent of the buffer sizes
        rng = _traj_rng(seed, 0)
        if k0 is None:
            idx0 = eng.draw_start(rng)
            k0v = eng.kgrid[idx0]
        else:
            k0v = np.atleast_1d(np.asarray(k0, dtype=float))
            on_grid = np.isclose(k0v, eng.kgrid, atol=1e-12).all(axis=1).nonzero()[0]
            idx0 = int(on_grid[0]) if len(on_grid) else -1
        buf = rng.random(buf_len)
        out = _run_batch(eng, buf[None, :], np.asarray([k0v]), np.asarray([idx0]),
                         horizon, burn_frac=0.0, record=True, rec_cap=rec_cap)
        if out["status"][0] == 1:
            break
        if out["status"][0] == 0:
            buf_len *= 2
        else:
            rec_cap *= 2
    nrec = out["rec_count"][0]
    jt = out["rec_times"][0, :nrec].copy()
    momenta = eng.kgrid[out["rec_idx"][0, :nrec]]
    return Trajectory(seed=seed, horizon=horizon, chi=eng.chi, k0=k0v,
                      jump_times=jt, momenta=momenta, x_final=out["x"][0].copy(),
                      n_candidates=int(out["ncand"][0]))


def _run_batch(eng: _Engine, u, k0s, k0_idx, horizon, burn_frac, record=False, rec_cap=1):
    m = u.shape[0]
    d = eng.kgrid.shape[1]
    hist = np.zeros(eng.model.grid.size)
    x = np.empty((m, d))
    njump = np.empty(m, np.int64)
    ncand = np.empty(m, np.int64)
    status = np.empty(m, np.int64)
    rec_times = np.empty((m, rec_cap) if record else (1, 1))
    rec_idx = np.empty((m, rec_cap) if record else (1, 1), np.int64)
    rec_count = np.zeros(m, np.int64)
    _simulate(u, k0s, k0_idx.astype(np.int64), eng.kgrid, eng.eps_grid,
              eng.escape_grid, eng.jump_cdf, eng.weight, eng.beta, eng.d_res,
              eng.sphere, eng.amp2, eng.inv_w2, eng.amps, eng.chi, horizon,
              eng.rmax, burn_frac, hist, eng.model.grid.n_per_axis,
              x, njump, ncand, status,
              1 if record else 0, rec_times, rec_idx, rec_count)
    return {"x": x, "njump": njump, "ncand": ncand, "status": status,
            "hist": hist, "rec_times": rec_times, "rec_idx": rec_idx,
            "rec_count": rec_count}


def ensemble_run(model: KineticModel, chi, n_traj: int, horizon: float,
                 master_seed: int, burn_frac: float = 0.2, n_batches: int = 16,
                 chunk: int = 500, threads: int | None = None,
                 initial_density: np.ndarray | None = None) -> McEstimate:
    """Run an ensemble and estimate drift velocity and diffusion tensor.

    v_hat = mean(x(tau))/tau and D_hat = Cov(x(tau) - v_hat tau)/(2 tau);
    standard errors by batch means over n_batches batches.  Trajectories start
    from the stationary momentum law unless initial_density overrides it.
    """
    if n_traj < 100:
        raise ValueError("ensemble_run needs n_traj >= 100")
    if n_batches < 2:
        raise ValueError("need at least 2 batches for standard errors")
    if threads is None:
        threads = int(os.environ.get("BOLTZLAB_THREADS", "1"))
    eng = _Engine(model, chi, initial_density=initial_density)
    d = eng.kgrid.shape[1]
    buf_len = eng.buffer_len(horizon)

    def prepare(c0, c1):
        m = c1 - c0
        u = np.empty((m, buf_len))
        k0s = np.empty((m, d))
        k0i = np.empty(m, np.int64)
        for i in range(m):
            rng = _traj_rng(master_seed, c0 + i)
            j = eng.draw_start(rng)
            k0i[i] = j
            k0s[i] = eng.kgrid[j]
            u[i] = rng.random(buf_len)
        return u, k0s, k0i

    ranges = [(c0, min(c0 + chunk, n_traj)) for c0 in range(0, n_traj, chunk)]

    def work(rg):
        c0, c1 = rg
        u, k0s, k0i = prepare(c0, c1)
        return _run_batch(eng, u, k0s, k0i, horizon, burn_frac)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(work, ranges))
    else:
        outs = [work(rg) for rg in ranges]
    for out in outs:
        if not np.all(out["status"] == 1):
            raise RuntimeError("random-number buffer exhausted; raise the chunk buffer")
    xs = np.concatenate([o["x"] for o in outs], axis=0)
    njump = np.concatenate([o["njump"] for o in outs])
    ncand = np.concatenate([o["ncand"] for o in outs])
    hist = np.zeros(eng.model.grid.size)
    for o in outs:
        hist += o["hist"]
    hist /= hist.sum()

    v_hat = xs.mean(axis=0) / horizon
    centered = xs - v_hat * horizon
    D_hat = (centered.T @ centered) / (len(xs) - 1) / (2.0 * horizon)
    bidx = (np.arange(n_traj) * n_batches) // n_traj
    bv = np.empty((n_batches, d))
    bD = np.empty((n_batches, d, d))
    for b in range(n_batches):
        xb = xs[bidx == b]
        bv[b] = xb.mean(axis=0) / horizon
        cb = xb - xb.mean(axis=0)
        bD[b] = (cb.T @ cb) / (len(xb) - 1) / (2.0 * horizon)
    v_se = bv.std(axis=0, ddof=1) / np.sqrt(n_batches)
    D_se = bD.std(axis=0, ddof=1) / np.sqrt(n_batches)
    return McEstimate(n_traj=n_traj, horizon=horizon, chi=eng.chi,
                      master_seed=master_seed, v_hat=v_hat, v_stderr=v_se,
                      D_hat=D_hat, D_stderr=D_se, histogram=hist,
                      acceptance_fraction=float(njump.sum() / max(ncand.sum(), 1)),
                      mean_jumps=float(njump.mean()), n_batches=n_batches,
                      batch_v=bv, batch_D=bD)


def momentum_histogram(estimate: McEstimate) -> np.ndarray:
    """Time-weighted momentum occupancy per grid cell (sums to one)."""
    return estimate.histogram


def tv_distance(histogram: np.ndarray, density: np.ndarray, weight: float) -> float:
    """Total-variation distance between a cell histogram and a grid density."""
    ref = np.maximum(density * weight, 0.0)
    ref = ref / ref.sum()
    return float(0.5 * np.abs(histogram - ref).sum())
