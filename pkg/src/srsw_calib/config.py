"""Scenario configuration: strict INI-style files, environment overrides,
and validation that reports every violation at once.

Any key can be overridden through the environment as
``SRSW_<SECTION>__<KEY>`` (upper case), e.g. ``SRSW_RUN__DT_FINE=45``.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, fields, replace

from .coarsen import Kernel, kernel_c4, kernel_c8
from .errors import ConfigError
from .grid import GridSpec, PhysicalParams

ENV_PREFIX = "SRSW_"


@dataclass(frozen=True)
class ScenarioConfig:
    """Flat view of the [section] key = value configuration.

    Defaults reproduce the desk-scale analogue of the full experiment:
    the same domain on a four-times-coarser fine grid with the time step
    scaled to match.
    """

    # [grid]
    nx: int = 556
    ny: int = 80
    lx: float = 27787.5e3
    ly: float = 3975.0e3
    # [physics]
    g: float = 9.81
    f0: float = 1.0e-4
    beta: float = 2.0e-11
    h_mean: float = 1000.0
    d: float = 100.0
    r: float = 0.0
    # [run]
    dt_fine: float = 90.0
    burn_in_steps: int = 1000
    truth_steps: int = 1120
    snapshot_stride: int = 1
    scheme: str = "leapfrog"
    ra_filter: float = 0.01
    initial_amplitude: float = 100.0
    # [coarsening]
    c: int = 4
    kernel: str = "auto"
    # [calibration]
    alpha_decorr: float = 0.2
    delta_steps: int = 1
    n_xi: float = 0.9
    # [ensemble]
    n_p: int = 50
    n_steps: int = 70
    master_seed: int = 12345
    dt_coarse: float = 0.0   # 0 selects c * dt_fine
    n_workers: int = 1
    # [outputs]
    directory: str = "srsw_out"
    formats: str = "csv"

    def fine_grid(self) -> GridSpec:
        return GridSpec(Lx=self.lx, Ly=self.ly, Nx=self.nx, Ny=self.ny)

    def coarse_grid(self) -> GridSpec:
        return self.fine_grid().coarsened(self.c)

    def physical_params(self) -> PhysicalParams:
        return PhysicalParams(
            g=self.g, f0=self.f0, beta=self.beta,
            H_mean=self.h_mean, D=self.d, r=self.r,
        )

    def coarsening_kernel(self) -> Kernel:
        if self.kernel == "c4":
            return kernel_c4()
        if self.kernel == "c8":
            return kernel_c8()
        return kernel_c4() if self.c == 4 else kernel_c8()

    def effective_dt_coarse(self) -> float:
        return self.dt_coarse if self.dt_coarse > 0.0 else self.c * self.dt_fine

    def format_list(self) -> list[str]:
        return [f.strip() for f in self.formats.split(",") if f.strip()]


SCHEMA = {
    "grid": {"nx": int, "ny": int, "lx": float, "ly": float},
    "physics": {
        "g": float, "f0": float, "beta": float,
        "h_mean": float, "d": float, "r": float,
    },
    "run": {
        "dt_fine": float, "burn_in_steps": int, "truth_steps": int,
        "snapshot_stride": int, "scheme": str, "ra_filter": float,
        "initial_amplitude": float,
    },
    "coarsening": {"c": int, "kernel": str},
    "calibration": {"alpha_decorr": float, "delta_steps": int, "n_xi": float},
    "ensemble": {
        "n_p": int, "n_steps": int, "master_seed": int,
        "dt_coarse": float, "n_workers": int,
    },
    "outputs": {"directory": str, "formats": str},
}

PAPER_SCALE = {"nx": 2224, "ny": 320, "dt_fine": 22.5}


def _coerce(section, key, raw, target, errors):
    try:
        if target is int:
            return int(raw)
        if target is float:
            return float(raw)
        return str(raw)
    except ValueError:
        errors.append(
            f"[{section}] {key} = {raw!r} is not a valid {target.__name__}"
        )
        return None


def _read_file(path, errors) -> dict:
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";")
    )
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        errors.append(f"cannot read config file {path}: {exc}")
        return {}
    except configparser.Error as exc:
        errors.append(f"malformed config file {path}: {exc}")
        return {}
    values = {}
    for section in parser.sections():
        if section not in SCHEMA:
            errors.append(f"unknown section [{section}]")
            continue
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                errors.append(f"unknown key {key!r} in section [{section}]")
                continue
            val = _coerce(section, key, raw, SCHEMA[section][key], errors)
            if val is not None:
                values[key] = val
    return values


def _env_overrides(errors) -> dict:
    values = {}
    for section, keys in SCHEMA.items():
        for key, target in keys.items():
            name = f"{ENV_PREFIX}{section.upper()}__{key.upper()}"
            if name in os.environ:
                val = _coerce(section, key, os.environ[name], target, errors)
                if val is not None:
                    values[key] = val
    return values


def _validate(cfg: ScenarioConfig, errors):
    if cfg.nx < 4 or cfg.ny < 4:
        errors.append(f"grid must be at least 4x4, got {cfg.nx}x{cfg.ny}")
    if cfg.lx <= 0 or cfg.ly <= 0:
        errors.append("domain lengths must be positive")
    if cfg.g <= 0:
        errors.append(f"g must be positive, got {cfg.g}")
    if cfg.h_mean <= 0:
        errors.append(f"h_mean must be positive, got {cfg.h_mean}")
    if cfg.d < 0 or cfg.r < 0:
        errors.append("dissipation coefficients d, r must be non-negative")
    if cfg.dt_fine <= 0:
        errors.append(f"dt_fine must be positive, got {cfg.dt_fine}")
    if cfg.burn_in_steps < 0 or cfg.truth_steps < 0:
        errors.append("step counts must be non-negative")
    if cfg.snapshot_stride < 1:
        errors.append(f"snapshot_stride must be at least 1, got {cfg.snapshot_stride}")
    if cfg.scheme not in ("leapfrog", "rk4"):
        errors.append(f"scheme must be leapfrog or rk4, got {cfg.scheme!r}")
    if cfg.ra_filter < 0:
        errors.append("ra_filter must be non-negative")
    if cfg.initial_amplitude <= 0:
        errors.append("initial_amplitude must be positive")
    if cfg.c < 1 or cfg.nx % cfg.c or cfg.ny % cfg.c:
        errors.append(
            f"coarsening factor c = {cfg.c} must divide the grid dimensions "
            f"({cfg.nx}, {cfg.ny})"
        )
    if cfg.kernel not in ("auto", "c4", "c8"):
        errors.append(f"kernel must be auto, c4, or c8, got {cfg.kernel!r}")
    elif cfg.kernel == "auto" and cfg.c not in (4, 8):
        errors.append(
            f"kernel = auto needs c in (4, 8); set an explicit kernel for c = {cfg.c}"
        )
    if not 0.0 < cfg.alpha_decorr < 1.0:
        errors.append(f"alpha_decorr must lie in (0, 1), got {cfg.alpha_decorr}")
    if cfg.delta_steps < 0:
        errors.append(
            f"delta_steps must be non-negative (0 selects the decorrelation "
            f"lag), got {cfg.delta_steps}"
        )
    if not 0.0 < cfg.n_xi <= 1.0:
        errors.append(f"n_xi must lie in (0, 1], got {cfg.n_xi}")
    if cfg.n_p < 1:
        errors.append(f"n_p must be at least 1, got {cfg.n_p}")
    if cfg.n_steps < 0:
        errors.append("n_steps must be non-negative")
    if cfg.master_seed < 0:
        errors.append("master_seed must be non-negative")
    if cfg.dt_coarse < 0:
        errors.append("dt_coarse must be non-negative (0 selects c * dt_fine)")
    if cfg.n_workers < 1:
        errors.append("n_workers must be at least 1")
    bad = set(cfg.format_list()) - {"csv", "pgm"}
    if bad:
        errors.append(f"unknown output formats: {sorted(bad)}")


def load_config(
    path=None,
    overrides: dict | None = None,
    paper_scale: bool = False,
    use_env: bool = True,
) -> ScenarioConfig:
    """Assemble the effective configuration.

    Precedence, lowest to highest: defaults, --paper-scale preset, config
    file, environment variables, explicit overrides (command-line flags).
    All violations are collected and reported together.
    """
    errors: list[str] = []
    values: dict = {}
    if paper_scale:
        values.update(PAPER_SCALE)
    if path is not None:
        values.update(_read_file(path, errors))
    if use_env:
        values.update(_env_overrides(errors))
    if overrides:
        values.update(overrides)
    known = {f.name for f in fields(ScenarioConfig)}
    values = {k: v for k, v in values.items() if k in known}
    cfg = replace(ScenarioConfig(), **values)
    _validate(cfg, errors)
    if errors:
        raise ConfigError(errors)
    return cfg


def config_items(cfg: ScenarioConfig):
    """(section, key, value) triples in schema order, for manifests."""
    for section, keys in SCHEMA.items():
        for key in keys:
            yield section, key, getattr(cfg, key)
