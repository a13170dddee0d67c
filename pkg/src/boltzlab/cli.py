"""Command-line interface: config in, CSV + JSON artifacts out.

Every command writes `<command>.csv` (header row, '.' decimals, '\\n' line
endings, 17 significant digits so numeric columns round-trip losslessly) and
`<command>.json` with the key scalars, the config fingerprint, and the wall
time.  Outputs are written atomically (temp file + rename).  Exit codes:
0 success, 1 numerical-validation failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time

import numpy as np

from . import fiberlimit, montecarlo, reservoir, semigroup, transport
from .config import ConfigError, RunConfig, parse_config
from .generator import KineticModel
from .lattice import DispersionLaw, MomentumGrid
from .reservoir import (FormFactor, OracleUnavailableError, ReservoirSpec,
                        SpectralDensity, check_detailed_balance)

COMMANDS = ("rates", "spectral-density", "ness", "spectrum", "evolve", "transport",
            "einstein", "greenkubo", "large-field", "mc", "kinetic-limit", "validate")


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _atomic_write(path: str, payload: str):
    d = os.path.dirname(path) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-boltzlab-")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: str, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(x) for x in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def write_json(path: str, payload: dict) -> None:
    _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def build_model(cfg: RunConfig) -> KineticModel:
    law = DispersionLaw.cosine(cfg.d_lat, cfg.amplitudes)
    grid = MomentumGrid.build(cfg.d_lat, cfg.n_per_axis)
    spec = ReservoirSpec(beta=cfg.beta, d_res=cfg.d_res,
                         form_factor=FormFactor(amplitude=cfg.ff_amplitude,
                                                width=cfg.ff_width))
    return KineticModel.build(law, grid, SpectralDensity(spec))


def cmd_rates(cfg: RunConfig, model: KineticModel):
    t = model.table
    rows = []
    n = model.grid.size
    for i in range(n):
        for j in range(n):
            rows.append([i, j, t.rates[i, j]])
    scal = {"a0": float(t.escape.min()),
            "detailed_balance_residual": t.detailed_balance_residual()}
    return ["i", "j", "rate"], rows, scal


def cmd_spectral_density(cfg: RunConfig, model: KineticModel):
    spec = model.sd.spec
    om = np.linspace(-5.0 * max(1.0, 1.0 / cfg.beta), 5.0 * max(1.0, 1.0 / cfg.beta), 401)
    psi = reservoir.spectral_density_analytic(spec, om)
    header = ["omega", "psi_analytic"]
    cols = [om, psi]
    scal = {"detailed_balance_max_violation":
            check_detailed_balance(spec, np.linspace(-5, 5, 201)).max_rel_violation}
    try:
        psi_num = reservoir.spectral_density_numeric(spec, om[::8])
        scal["fourier_oracle_max_rel_err"] = float(
            np.max(np.abs(psi_num - psi[::8]) / np.maximum(np.abs(psi[::8]), 1e-30)))
    except OracleUnavailableError as exc:
        scal["fourier_oracle"] = f"unavailable: {exc}"
    rows = [list(r) for r in zip(*cols)]
    return header, rows, scal


def cmd_ness(cfg: RunConfig, model: KineticModel):
    state = transport.stationary_state(model.generator(chi=cfg.chi))
    pts = model.grid.points()
    header = [f"k{a}" for a in range(cfg.d_lat)] + ["zeta"]
    rows = [list(pts[i]) + [state.zeta[i]] for i in range(model.grid.size)]
    scal = {"gap": state.gap, "residual": state.residual,
            "min_zeta": float(state.zeta.min())}
    return header, rows, scal


def cmd_spectrum(cfg: RunConfig, model: KineticModel):
    gen = model.generator(chi=cfg.chi)
    ev = transport.full_spectrum(gen)
    rows = [[e.real, e.imag] for e in ev]
    ev_by_mag = ev[np.argsort(np.abs(ev))]
    scal = {"a0": gen.a0, "gap": float(-ev_by_mag[1:].real.max()),
            "max_re_nonzero": float(ev_by_mag[1:].real.max())}
    return ["re", "im"], rows, scal


def cmd_evolve(cfg: RunConfig, model: KineticModel):
    gen = model.generator(chi=cfg.chi)
    state = transport.stationary_state(gen)
    w = model.grid.weight
    f0 = np.full(model.grid.size, 1.0 / (2.0 * np.pi) ** cfg.d_lat)
    times = np.linspace(0.0, cfg.evolve_t_max, cfg.evolve_n_times)
    res = semigroup.evolve(gen, times, f0)
    rows = []
    for i, t in enumerate(times):
        dist = float(np.sqrt(w * ((res.states[i].real - state.zeta) ** 2).sum()))
        rows.append([t, res.mass[i], dist])
    scal = {"method": res.method, "gap": state.gap,
            "mass_drift": float(np.abs(res.mass - res.mass[0]).max())}
    try:
        fit = semigroup.relaxation_rate(gen, f0, state.zeta, state.gap)
        if not fit.declined:
            scal["relaxation_rate"] = fit.rate
            scal["relaxation_vs_gap_rel"] = abs(fit.rate - state.gap) / state.gap
    except semigroup.FitUnreliableError as exc:
        scal["relaxation_rate"] = f"fit unreliable: {exc}"
    return ["t", "mass", "dist_to_steady_state"], rows, scal


def _triu(D):
    d = D.shape[0]
    return [D[a, b] for a in range(d) for b in range(a, d)]


def cmd_transport(cfg: RunConfig, model: KineticModel):
    tc = transport.transport_summary(model, cfg.chi, kappa_probe=cfg.kappa_probe)
    header = ([f"chi{a}" for a in range(cfg.d_lat)]
              + [f"v{a}" for a in range(cfg.d_lat)]
              + [f"D{a}{b}" for a in range(cfg.d_lat) for b in range(a, cfg.d_lat)]
              + ["gap", "a0"])
    rows = [list(tc.chi) + list(tc.v) + _triu(tc.D) + [tc.gap, tc.a0]]
    scal = {"v": list(map(float, tc.v)), "D": [float(x) for x in _triu(tc.D)],
            "gap": tc.gap, "a0": tc.a0,
            "u_samples": [[list(k), u.real, u.imag] for k, u in tc.u_samples]}
    return header, rows, scal


def cmd_einstein(cfg: RunConfig, model: KineticModel):
    rep = transport.einstein_check(model, delta_chi=cfg.delta_chi)
    d = cfg.d_lat
    header = (["delta_chi"] + [f"mobility{a}{b}" for a in range(d) for b in range(d)]
              + [f"betaD{a}{b}" for a in range(d) for b in range(d)] + ["rel_err"])
    rows = [[rep.delta_chi] + list(rep.mobility.ravel())
            + list((rep.beta * rep.diffusion).ravel()) + [rep.rel_err]]
    scal = {"einstein_rel_err": rep.rel_err, "passed": rep.passed,
            "delta_chi": rep.delta_chi}
    return header, rows, scal, (0 if rep.passed else 1)


def cmd_greenkubo(cfg: RunConfig, model: KineticModel):
    state = transport.stationary_state(model.generator(chi=[0.0] * cfg.d_lat))
    gk = transport.green_kubo(model, state)
    D_rs = transport.diffusion_rs(model, state)
    header = ["which"] + [f"D{a}{b}" for a in range(cfg.d_lat) for b in range(a, cfg.d_lat)]
    rows = [[0] + _triu(gk.D_resolvent), [1] + _triu(gk.D_quadrature), [2] + _triu(D_rs)]
    agree = float(np.linalg.norm(gk.D_quadrature - gk.D_resolvent)
                  / np.linalg.norm(gk.D_resolvent))
    scal = {"D_resolvent": [float(x) for x in _triu(gk.D_resolvent)],
            "D_quadrature": [float(x) for x in _triu(gk.D_quadrature)],
            "quadrature_vs_resolvent_rel": agree, "horizon": gk.horizon,
            "C0_trace": float(np.trace(gk.C0))}
    return header, rows, scal


def cmd_large_field(cfg: RunConfig, model: KineticModel):
    rows_lf, warnings = transport.large_field_scan(model, cfg.chi_scan)
    header = ["chi", "v", "D", "chi_v", "chi_D", "gap"]
    rows = [[r.chi, r.v, r.D, r.chi_v, r.chi_D, r.gap] for r in rows_lf]
    scal = {"warnings": warnings}
    if len(rows_lf) >= 2:
        scal["v_ratio_last"] = rows_lf[-1].v / rows_lf[-2].v
        scal["chi_v_variation_last"] = abs(rows_lf[-1].chi_v - rows_lf[-2].chi_v) \
            / abs(rows_lf[-2].chi_v)
    return header, rows, scal


def cmd_mc(cfg: RunConfig, model: KineticModel):
    est = montecarlo.ensemble_run(model, cfg.chi, cfg.n_traj, cfg.horizon,
                                  cfg.master_seed, burn_frac=cfg.burn_frac)
    d = cfg.d_lat
    header = (["batch"] + [f"v{a}" for a in range(d)]
              + [f"D{a}{b}" for a in range(d) for b in range(a, d)])
    rows = [[b] + list(est.batch_v[b]) + _triu(est.batch_D[b])
            for b in range(est.n_batches)]
    scal = {"v_hat": list(map(float, est.v_hat)),
            "v_stderr": list(map(float, est.v_stderr)),
            "D_hat": [float(x) for x in _triu(est.D_hat)],
            "D_stderr": [float(x) for x in _triu(np.atleast_2d(est.D_stderr))],
            "acceptance_fraction": est.acceptance_fraction,
            "mean_jumps": est.mean_jumps, "n_traj": est.n_traj,
            "master_seed": est.master_seed}
    return header, rows, scal


def cmd_kinetic_limit(cfg: RunConfig, model: KineticModel):
    kappa = cfg.kappa_list[0] if cfg.kappa_list else 0.5
    chi = cfg.chi[0]
    table = fiberlimit.kinetic_limit_error(model, cfg.lambda_list, kappa, chi)
    header = ["lambda", "error", "delta_m_norm", "error_free_only"]
    rows = [[r.lam, r.error, r.delta_norm, r.error_free_only] for r in table.rows]
    scal = {"monotone": table.monotone, "kappa": table.kappa, "chi": table.chi,
            "distance_to_plain_generator": table.distance_to_plain}
    return header, rows, scal


def cmd_validate(cfg: RunConfig, model: KineticModel):
    spec = model.sd.spec
    db = check_detailed_balance(spec, np.linspace(-5.0, 5.0, 201))
    gen0 = model.generator(chi=[0.0] * cfg.d_lat)
    gibbs = model.gibbs()
    gibbs_resid = float(np.linalg.norm(gen0.matrix @ gibbs) / gen0.norm())
    state = transport.stationary_state(gen0)
    genc = model.generator(chi=cfg.chi)
    colsum = float(np.abs(genc.matrix.sum(axis=0)).max() / genc.norm())
    checks = {
        "detailed_balance_residual": (db.max_rel_violation, db.max_rel_violation < 1e-10),
        "a0": (gen0.a0, gen0.a0 > 0),
        "gap": (state.gap, state.gap > 0),
        "gibbs_residual": (gibbs_resid, gibbs_resid < 1e-10),
        "conservation_colsum": (colsum, colsum < 1e-10),
    }
    rows = [[name, val, int(ok)] for name, (val, ok) in checks.items()]
    scal = {name: val for name, (val, ok) in checks.items()}
    scal["all_passed"] = all(ok for _, ok in checks.values())
    for name, (val, ok) in checks.items():
        print(f"{name} = {val:.6g} [{'ok' if ok else 'FAIL'}]")
    code = 0 if scal["all_passed"] else 1
    return ["check", "value", "ok"], rows, scal, code


_DISPATCH = {
    "rates": cmd_rates,
    "spectral-density": cmd_spectral_density,
    "ness": cmd_ness,
    "spectrum": cmd_spectrum,
    "evolve": cmd_evolve,
    "transport": cmd_transport,
    "einstein": cmd_einstein,
    "greenkubo": cmd_greenkubo,
    "large-field": cmd_large_field,
    "mc": cmd_mc,
    "kinetic-limit": cmd_kinetic_limit,
    "validate": cmd_validate,
}


def dispatch(command: str, cfg: RunConfig, out_dir: str | None = None) -> int:
    """Run one command, write its CSV and JSON artifacts, return the exit code."""
    out_dir = out_dir or cfg.out_dir
    t0 = time.perf_counter()
    model = build_model(cfg)
    result = _DISPATCH[command](cfg, model)
    if len(result) == 3:
        header, rows, scal = result
        code = 0
    else:
        header, rows, scal, code = result
    wall = time.perf_counter() - t0
    stem = os.path.join(out_dir, command.replace("-", "_"))
    write_csv(stem + ".csv", header, rows)
    payload = {"command": command, "fingerprint": cfg.fingerprint(),
               "wall_time_s": wall, "exit_code": code, **scal}
    write_json(stem + ".json", payload)
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="boltzlab",
        description="driven-lattice linear Boltzmann laboratory")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("-c", "--config", help="config file (flat [section] key=value)")
    parser.add_argument("-o", "--out-dir", help="output directory (default from config)")
    args = parser.parse_args(argv)
    try:
        text = ""
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        cfg = parse_config(text)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return dispatch(args.command, cfg, out_dir=args.out_dir)
    except (RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"numerical validation failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
