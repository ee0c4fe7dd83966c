"""Flat ``section.key = value`` pipeline configuration."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from typing import Optional

from .dmrg import DmrgConfig
from .hamiltonian import SymmetrySector

__all__ = ["ConfigError", "PipelineConfig", "load_config", "parse_config", "DEFAULT_EPS_LIST"]

DEFAULT_EPS_LIST = (10 ** -1.0, 10 ** -1.5, 10 ** -2.0, 10 ** -2.5)
STRATEGIES = ("rz_only", "hybrid")


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    hamiltonian: Optional[str] = None
    out_dir: str = "out"
    db_cache: Optional[str] = None
    dmrg: DmrgConfig = field(default_factory=DmrgConfig)
    n_states: int = 1
    init_chi: int = 16
    require_convergence: bool = True
    sector: SymmetrySector = field(default_factory=lambda: SymmetrySector(0, 0))
    target_state: int = 0
    target_chi: int = 16
    max_layers: int = 5
    rel_tol: float = 1e-4
    chi_env: Optional[int] = None
    max_sweeps: int = 200
    eps_list: tuple = DEFAULT_EPS_LIST
    strategies: tuple = STRATEGIES
    t_budget: int = 14
    angle_tol: float = 1e-10
    reverse_chis: tuple = ()
    chi_small: tuple = ()
    chi_large: tuple = ()
    seed: int = 0

    def validate(self) -> "PipelineConfig":
        if not self.eps_list or any(not 0 < e < 1 for e in self.eps_list):
            raise ConfigError("synth.eps_list values must lie in (0, 1)")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ConfigError(f"unknown synth strategy {s!r}")
        if self.max_layers < 1:
            raise ConfigError("compile.max_layers must be >= 1")
        if self.n_states < 1 or not 0 <= self.target_state < self.n_states:
            raise ConfigError("dmrg.n_states must be >= 1 and compile.target_state below it")
        if not 0 <= self.t_budget <= 14:
            raise ConfigError("synth.t_budget must lie in [0, 14]")
        return self


def _tuple(conv):
    def parse(text):
        return tuple(conv(x) for x in text.replace(",", " ").split())
    return parse


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text: str):
    return None if text.strip().lower() in ("", "none", "auto") else int(text)


def _eps(text: str) -> float:
    # allow "10^-1.5" alongside plain floats
    t = text.strip()
    if t.startswith("10^"):
        return 10 ** float(t[3:])
    return float(t)


_KEYS = {
    "paths.hamiltonian": ("hamiltonian", str),
    "paths.out_dir": ("out_dir", str),
    "paths.db_cache": ("db_cache", str),
    "dmrg.n_states": ("n_states", int),
    "dmrg.init_chi": ("init_chi", int),
    "dmrg.require_convergence": ("require_convergence", _bool),
    "sector.n_protons": ("n_protons", int),
    "sector.n_neutrons": ("n_neutrons", int),
    "compile.target_state": ("target_state", int),
    "compile.target_chi": ("target_chi", int),
    "compile.max_layers": ("max_layers", int),
    "compile.rel_tol": ("rel_tol", float),
    "compile.chi_env": ("chi_env", _opt_int),
    "compile.max_sweeps": ("max_sweeps", int),
    "synth.eps_list": ("eps_list", _tuple(_eps)),
    "synth.strategy": ("strategies", lambda t: STRATEGIES if t.strip() == "both" else _tuple(str)(t.lower())),
    "synth.t_budget": ("t_budget", int),
    "synth.angle_tol": ("angle_tol", float),
    "extrapolate.reverse_chis": ("reverse_chis", _tuple(int)),
    "extrapolate.chi_small": ("chi_small", _tuple(int)),
    "extrapolate.chi_large": ("chi_large", _tuple(int)),
    "seed": ("seed", int),
}
_DMRG_FIELDS = {f.name: f.type for f in dataclasses.fields(DmrgConfig)}
_PATH_KEYS = ("hamiltonian", "out_dir", "db_cache")


def parse_config(text: str, base_dir: str = ".") -> PipelineConfig:
    """Parse config text; relative paths are resolved against ``base_dir``."""
    values: dict = {}
    dmrg: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            if key.startswith("dmrg.") and key[5:] in _DMRG_FIELDS:
                name = key[5:]
                conv = float if _DMRG_FIELDS[name] in ("float", float) else int
                dmrg[name] = conv(val)
            elif key in _KEYS:
                name, conv = _KEYS[key]
                values[name] = conv(val)
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    for name in _PATH_KEYS:
        if values.get(name) and not os.path.isabs(values[name]):
            values[name] = os.path.normpath(os.path.join(base_dir, values[name]))
    sector = SymmetrySector(values.pop("n_protons", 0), values.pop("n_neutrons", 0))
    seed = values.get("seed", 0)
    dmrg.setdefault("seed", seed)
    try:
        cfg = PipelineConfig(dmrg=DmrgConfig(**dmrg), sector=sector, **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def load_config(path: str) -> PipelineConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    return parse_config(text, os.path.dirname(os.path.abspath(path)))
