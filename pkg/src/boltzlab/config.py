"""Run configuration: flat-section key-value documents, validation, fingerprints.

The accepted format is a plain UTF-8 text document of `[section]` headers and
`key = value` lines; `#` starts a comment.  Unknown sections or keys, values
out of range, and duplicate keys are all hard errors carrying line (and
column) positions, so a bad config never silently degrades a run.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields

import numpy as np


class ConfigError(ValueError):
    """Configuration document rejected; carries the offending location."""

    def __init__(self, msg, line=None, col=None):
        loc = f" (line {line}" + (f", col {col}" if col is not None else "") + ")" \
            if line is not None else ""
        super().__init__(msg + loc)
        self.line = line
        self.col = col


@dataclass
class RunConfig:
    # lattice
    d_lat: int = 1
    n_per_axis: int = 64
    amplitudes: tuple[float, ...] = ()
    # reservoir
    beta: float = 1.0
    d_res: int = 3
    ff_amplitude: float = 1.0
    ff_width: float = 1.0
    # drive
    chi: tuple[float, ...] = ()
    # probes
    kappa_list: tuple[float, ...] = (0.25,)
    lambda_list: tuple[float, ...] = (0.2, 0.1, 0.05, 0.025)
    z_re: float = 0.0
    z_im: float = 0.0
    kappa_probe: float = 0.5
    # monte carlo
    n_traj: int = 20000
    horizon: float = 200.0
    master_seed: int = 20260810
    burn_frac: float = 0.2
    # evolution
    evolve_t_max: float = 2.0
    evolve_n_times: int = 21
    # einstein / large field
    delta_chi: float = 1e-3
    chi_scan: tuple[float, ...] = (20.0, 40.0, 80.0, 160.0)
    # output
    out_format: str = "csv"
    out_dir: str = "."

    def __post_init__(self):
        if not self.amplitudes:
            self.amplitudes = (2.0,) * self.d_lat
        if not self.chi:
            self.chi = (0.0,) * self.d_lat
        self.validate()

    def validate(self):
        if self.d_lat < 1 or self.d_lat > 3:
            raise ConfigError(f"d_lat must be 1..3, got {self.d_lat}")
        if self.n_per_axis < 2 or self.n_per_axis % 2:
            raise ConfigError(f"n_per_axis must be even and >= 2, got {self.n_per_axis}")
        if not (self.beta > 0 and np.isfinite(self.beta)):
            raise ConfigError(f"beta must be positive and finite, got {self.beta}")
        if self.d_res not in (2, 3):
            raise ConfigError(f"d_res must be 2 or 3, got {self.d_res}")
        if self.ff_width <= 0:
            raise ConfigError(f"form factor width must be positive, got {self.ff_width}")
        if len(self.amplitudes) != self.d_lat:
            raise ConfigError("amplitudes must list one value per lattice axis")
        if len(self.chi) != self.d_lat:
            raise ConfigError("chi must list one component per lattice axis")
        if self.n_traj < 100:
            raise ConfigError(f"n_traj must be >= 100, got {self.n_traj}")
        if self.horizon <= 0:
            raise ConfigError(f"horizon must be positive, got {self.horizon}")
        if not 0.0 <= self.burn_frac < 1.0:
            raise ConfigError(f"burn_frac must be in [0, 1), got {self.burn_frac}")
        if self.delta_chi <= 0:
            raise ConfigError(f"delta_chi must be positive, got {self.delta_chi}")
        if self.out_format not in ("csv", "json"):
            raise ConfigError(f"output format must be csv or json, got {self.out_format!r}")

    def fingerprint(self) -> str:
        """Stable hash of the canonicalized fields, embedded in every output."""
        parts = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(float(x)) if isinstance(x, float) else repr(x) for x in v)
            parts.append(f"{f.name}={v!r}")
        blob = ";".join(parts).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# section -> key -> (config attribute, parser)
def _float_tuple(s):
    return tuple(float(x) for x in s.replace(",", " ").split())


_SCHEMA = {
    "lattice": {
        "d_lat": ("d_lat", int),
        "n_per_axis": ("n_per_axis", int),
        "amplitudes": ("amplitudes", _float_tuple),
    },
    "reservoir": {
        "beta": ("beta", float),
        "d_res": ("d_res", int),
        "amplitude": ("ff_amplitude", float),
        "width": ("ff_width", float),
    },
    "drive": {
        "chi": ("chi", _float_tuple),
    },
    "probes": {
        "kappa": ("kappa_list", _float_tuple),
        "lambda": ("lambda_list", _float_tuple),
        "z_re": ("z_re", float),
        "z_im": ("z_im", float),
        "kappa_probe": ("kappa_probe", float),
    },
    "mc": {
        "n_traj": ("n_traj", int),
        "horizon": ("horizon", float),
        "seed": ("master_seed", int),
        "burn_frac": ("burn_frac", float),
    },
    "evolve": {
        "t_max": ("evolve_t_max", float),
        "n_times": ("evolve_n_times", int),
    },
    "einstein": {
        "delta_chi": ("delta_chi", float),
    },
    "large_field": {
        "chi_scan": ("chi_scan", _float_tuple),
    },
    "output": {
        "format": ("out_format", str),
        "dir": ("out_dir", str),
    },
}


def parse_config(text: str) -> RunConfig:
    """Parse and validate a config document; empty input yields pure defaults."""
    values: dict[str, object] = {}
    seen: dict[tuple[str, str], int] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        stripped = line.strip()
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError("unterminated section header", line=lineno,
                                  col=len(line))
            section = stripped[1:-1].strip()
            if section not in _SCHEMA:
                raise ConfigError(f"unknown section [{section}]", line=lineno,
                                  col=line.index("[") + 1)
            continue
        if "=" not in stripped:
            raise ConfigError("expected 'key = value'", line=lineno, col=1)
        if section is None:
            raise ConfigError("key outside any [section]", line=lineno, col=1)
        key, _, val = stripped.partition("=")
        key = key.strip()
        val = val.strip()
        col = line.index(key) + 1
        if key not in _SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", line=lineno, col=col)
        if (section, key) in seen:
            raise ConfigError(
                f"duplicate key {key!r} in [{section}]: first at line "
                f"{seen[(section, key)]}, again at line {lineno}", line=lineno, col=col)
        seen[(section, key)] = lineno
        attr, parser = _SCHEMA[section][key]
        try:
            values[attr] = parser(val)
        except ConfigError:
            raise
        except Exception:
            raise ConfigError(f"cannot parse value {val!r} for {section}.{key}",
                              line=lineno, col=col) from None
    try:
        return RunConfig(**values)
    except ConfigError:
        raise
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
