"""Run configuration: YAML parsing, validation, canonical hashing, presets.

A run document has up to six top-level sections::

    model:             # exactly one of the two blocks, or empty for defaults
      langevin: {omega1: ..., bath: {modes_per_bath: ..., cutoff: ...}, ...}
      raw: {omega2_g: [[...]], ..., beta: ...}
    grid:    {t_max: ..., steps: ...}
    sweep:   {phi: {start, stop, points}, eta: {...}, beta: {...} | temperature_k: {...}}
    scan:    {dg_min: ..., dg_max: ..., points: ...}
    output:  {directory: ..., format: csv}
    figure:  figN                      # opaque tag echoed into the sidecar

All physical quantities are atomic units; the one exception is the
``temperature_k`` sweep axis, which is converted to inverse temperatures
internally.  Unknown keys are rejected by name.  The resolved document
(defaults filled in, overrides applied) is what gets hashed and echoed, so a
given hash pins the output bytes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources

import numpy as np
import yaml

from .constants import beta_from_kelvin
from .errors import ParseError, ValidationError
from .model import BathConfig, LangevinSpec, QuadraticVibronic
from .dynamics import TimeGrid

__all__ = [
    "AxisSpec",
    "RunConfig",
    "parse_config",
    "load_config",
    "load_document",
    "resolve_config",
    "preset_text",
    "list_presets",
]

_LANGEVIN_KEYS = (
    "omega1", "omega2", "gamma", "theta", "phi", "eta",
    "d_mag", "w_mag", "delta_g", "v", "beta",
)
_RAW_KEYS = ("omega2_g", "omega2_e", "lambda_g", "lambda_e", "e_g", "e_e", "v", "w", "beta")
_TOP_KEYS = ("model", "grid", "sweep", "scan", "output", "figure")


def _require_mapping(obj, where: str) -> dict:
    if obj is None:
        return {}
    if not isinstance(obj, dict):
        raise ParseError(f"section '{where}' must be a mapping")
    return obj


def _reject_unknown(raw: dict, allowed, where: str) -> None:
    for key in raw:
        if key not in allowed:
            raise ParseError(f"unknown key '{where}.{key}'" if where else f"unknown key '{key}'")


def _number(raw: dict, key: str, default, where: str):
    val = raw.get(key, default)
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ParseError(f"'{where}.{key}' must be a number, got {val!r}")
    return val


@dataclass(frozen=True)
class AxisSpec:
    """Inclusive linspace description of one sweep axis."""

    start: float
    stop: float
    points: int

    def __post_init__(self) -> None:
        if int(self.points) != self.points or self.points < 1:
            raise ValidationError(f"axis points must be a count >= 1, got {self.points}")
        object.__setattr__(self, "points", int(self.points))

    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.points)


def _axis(raw, where: str) -> AxisSpec:
    raw = _require_mapping(raw, where)
    _reject_unknown(raw, ("start", "stop", "points"), where)
    for key in ("start", "stop", "points"):
        if key not in raw:
            raise ParseError(f"'{where}' needs '{key}'")
    return AxisSpec(
        float(_number(raw, "start", None, where)),
        float(_number(raw, "stop", None, where)),
        _number(raw, "points", None, where),
    )


@dataclass(frozen=True)
class RunConfig:
    """A fully resolved run: model + grid + optional sweep/scan + output.

    ``echo`` is the canonical resolved document (defaults filled) from which
    ``config_hash`` is derived; identical hashes imply identical compute
    inputs and therefore identical output tables.
    """

    model: LangevinSpec | QuadraticVibronic
    beta: float
    grid: TimeGrid
    phi_axis: np.ndarray | None
    eta_axis: np.ndarray | None
    beta_axis: np.ndarray | None
    scan_dg: np.ndarray | None
    outdir: str | None
    fmt: str
    figure: str | None
    echo: dict

    @property
    def is_langevin(self) -> bool:
        return isinstance(self.model, LangevinSpec)

    @property
    def config_hash(self) -> str:
        payload = json.dumps(self.echo, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()[:12]

    def require_langevin(self, why: str) -> LangevinSpec:
        if not self.is_langevin:
            raise ValidationError(f"{why} requires a 'langevin' model block")
        return self.model


def _parse_langevin(raw: dict) -> tuple[LangevinSpec, dict]:
    _reject_unknown(raw, _LANGEVIN_KEYS + ("bath",), "model.langevin")
    bath_raw = _require_mapping(raw.get("bath"), "model.langevin.bath")
    _reject_unknown(bath_raw, ("modes_per_bath", "cutoff"), "model.langevin.bath")
    kwargs = {}
    for key in _LANGEVIN_KEYS:
        if key in raw:
            kwargs[key] = _number(raw, key, None, "model.langevin")
    bath_kwargs = {
        key: _number(bath_raw, key, None, "model.langevin.bath") for key in bath_raw
    }
    spec = LangevinSpec(bath=BathConfig(**bath_kwargs), **kwargs)
    echo = {name: getattr(spec, name) for name in _LANGEVIN_KEYS if name != "v"}
    echo["v"] = spec.v.real if spec.v.imag == 0.0 else [spec.v.real, spec.v.imag]
    echo["bath"] = {
        "modes_per_bath": int(spec.bath.modes_per_bath),
        "cutoff": spec.bath.cutoff,
    }
    return spec, {"langevin": echo}


def _matrix(raw: dict, key: str, where: str) -> list:
    if key not in raw:
        raise ParseError(f"'{where}' needs '{key}'")
    return raw[key]


def _parse_raw_model(raw: dict) -> tuple[QuadraticVibronic, float, dict]:
    _reject_unknown(raw, _RAW_KEYS, "model.raw")
    beta = float(_number(raw, "beta", 1000.0, "model.raw"))
    try:
        model = QuadraticVibronic(
            omega2_g=np.asarray(_matrix(raw, "omega2_g", "model.raw"), dtype=float),
            omega2_e=np.asarray(_matrix(raw, "omega2_e", "model.raw"), dtype=float),
            lambda_g=np.asarray(_matrix(raw, "lambda_g", "model.raw"), dtype=float),
            lambda_e=np.asarray(_matrix(raw, "lambda_e", "model.raw"), dtype=float),
            e_g=float(_number(raw, "e_g", 0.0, "model.raw")),
            e_e=float(_number(raw, "e_e", 0.0, "model.raw")),
            v=complex(_number(raw, "v", 1e-4, "model.raw")),
            w=np.asarray(_matrix(raw, "w", "model.raw"), dtype=float),
        )
    except (TypeError, ValueError) as err:
        raise ValidationError(f"model.raw: {err}") from None
    echo = {
        "omega2_g": np.asarray(model.omega2_g).tolist(),
        "omega2_e": np.asarray(model.omega2_e).tolist(),
        "lambda_g": np.asarray(model.lambda_g).tolist(),
        "lambda_e": np.asarray(model.lambda_e).tolist(),
        "e_g": model.e_g,
        "e_e": model.e_e,
        "v": model.v.real if model.v.imag == 0.0 else [model.v.real, model.v.imag],
        "w": np.asarray(model.w).tolist(),
        "beta": beta,
    }
    return model, beta, {"raw": echo}


def resolve_config(doc: dict | None) -> RunConfig:
    """Validate a raw document and fill defaults; see the module docstring."""
    doc = _require_mapping(doc, "(document root)")
    _reject_unknown(doc, _TOP_KEYS, "")

    model_raw = _require_mapping(doc.get("model"), "model")
    _reject_unknown(model_raw, ("langevin", "raw"), "model")
    if "langevin" in model_raw and "raw" in model_raw:
        raise ValidationError("model must contain exactly one of 'langevin' or 'raw'")
    if "raw" in model_raw:
        model, beta, model_echo = _parse_raw_model(
            _require_mapping(model_raw["raw"], "model.raw")
        )
    else:
        model, model_echo = _parse_langevin(
            _require_mapping(model_raw.get("langevin"), "model.langevin")
        )
        beta = model.beta

    grid_raw = _require_mapping(doc.get("grid"), "grid")
    _reject_unknown(grid_raw, ("t_max", "steps"), "grid")
    grid = TimeGrid(
        float(_number(grid_raw, "t_max", 25000.0, "grid")),
        _number(grid_raw, "steps", 1000, "grid"),
    )

    sweep_raw = _require_mapping(doc.get("sweep"), "sweep")
    _reject_unknown(sweep_raw, ("phi", "eta", "beta", "temperature_k"), "sweep")
    if "beta" in sweep_raw and "temperature_k" in sweep_raw:
        raise ValidationError("sweep may set 'beta' or 'temperature_k', not both")
    sweep_echo = {}
    phi_axis = eta_axis = beta_axis = None
    if "phi" in sweep_raw:
        ax = _axis(sweep_raw["phi"], "sweep.phi")
        phi_axis, sweep_echo["phi"] = ax.values(), vars(ax).copy()
    if "eta" in sweep_raw:
        ax = _axis(sweep_raw["eta"], "sweep.eta")
        eta_axis, sweep_echo["eta"] = ax.values(), vars(ax).copy()
    if "beta" in sweep_raw:
        ax = _axis(sweep_raw["beta"], "sweep.beta")
        beta_axis, sweep_echo["beta"] = ax.values(), vars(ax).copy()
        if np.any(beta_axis <= 0.0):
            raise ValidationError("sweep.beta values must be positive")
    if "temperature_k" in sweep_raw:
        ax = _axis(sweep_raw["temperature_k"], "sweep.temperature_k")
        if ax.start <= 0.0 or ax.stop <= 0.0:
            raise ValidationError("sweep.temperature_k values must be positive")
        beta_axis = np.array([beta_from_kelvin(t) for t in ax.values()])
        sweep_echo["temperature_k"] = vars(ax).copy()

    scan_raw = _require_mapping(doc.get("scan"), "scan")
    _reject_unknown(scan_raw, ("dg_min", "dg_max", "points"), "scan")
    dg_min = float(_number(scan_raw, "dg_min", -0.04, "scan"))
    dg_max = float(_number(scan_raw, "dg_max", 0.0, "scan"))
    points = _number(scan_raw, "points", 40, "scan")
    if int(points) != points or points < 1:
        raise ValidationError(f"scan.points must be a count >= 1, got {points}")
    if not dg_min <= dg_max:
        raise ValidationError(f"scan needs dg_min <= dg_max, got [{dg_min}, {dg_max}]")
    scan_dg = np.linspace(dg_min, dg_max, int(points))
    scan_echo = {"dg_min": dg_min, "dg_max": dg_max, "points": int(points)}

    out_raw = _require_mapping(doc.get("output"), "output")
    _reject_unknown(out_raw, ("directory", "format"), "output")
    outdir = out_raw.get("directory")
    if outdir is not None and not isinstance(outdir, str):
        raise ParseError("'output.directory' must be a string")
    fmt = out_raw.get("format", "csv")
    if fmt != "csv":
        raise ValidationError(f"unsupported output format {fmt!r} (only 'csv')")

    figure = doc.get("figure")
    if figure is not None and not isinstance(figure, str):
        raise ParseError("'figure' must be a string tag")

    echo = {
        "model": model_echo,
        "grid": {"t_max": grid.t_max, "steps": grid.steps},
        "sweep": sweep_echo,
        "scan": scan_echo,
        "output": {"directory": outdir, "format": fmt},
        "figure": figure,
    }
    return RunConfig(
        model=model, beta=beta, grid=grid,
        phi_axis=phi_axis, eta_axis=eta_axis, beta_axis=beta_axis,
        scan_dg=scan_dg, outdir=outdir, fmt=fmt, figure=figure, echo=echo,
    )


def load_document(text: str) -> dict:
    """YAML text -> raw document mapping (no resolution yet)."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        where = f" at line {mark.line + 1}" if mark is not None else ""
        raise ParseError(f"invalid YAML{where}: {err}") from None
    return _require_mapping(doc, "(document root)")


def parse_config(text: str) -> RunConfig:
    """Parse and resolve one YAML run document."""
    return resolve_config(load_document(text))


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as err:
        raise ParseError(f"cannot read config: {err}") from None
    return parse_config(text)


def list_presets() -> list[str]:
    root = resources.files("spinet").joinpath("presets")
    return sorted(
        entry.name[: -len(".yaml")]
        for entry in root.iterdir()
        if entry.name.endswith(".yaml")
    )


def preset_text(name: str) -> str:
    """Source text of a shipped preset, by bare name."""
    entry = resources.files("spinet").joinpath("presets", f"{name}.yaml")
    if not entry.is_file():
        known = ", ".join(list_presets()) or "(none)"
        raise ParseError(f"unknown preset '{name}'; available: {known}")
    return entry.read_text(encoding="utf-8")
