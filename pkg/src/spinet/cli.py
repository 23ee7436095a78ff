"""Command-line driver.

Every subcommand reads one run document (a YAML file path, or ``--preset
NAME`` for a shipped preset), computes, and writes exactly two files::

    <outdir>/<run-id>.csv        # the result table, 17-significant-digit floats
    <outdir>/<run-id>.meta.json  # run id, config hash, resolved config echo

``run-id`` is ``<command>-<12-hex config hash>``, so identical configurations
land on identical file names with identical bytes; nothing in the output
depends on clocks, hostnames, or thread count.

Exit codes: 0 success, 2 a well-formed computation failed numerically or
physically, 3 the configuration itself was invalid.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    RunConfig,
    list_presets,
    load_document,
    preset_text,
    resolve_config,
)
from .constants import kelvin_from_beta
from .correlators import eq_correlation, neq_correlation
from .dynamics import (
    TimeGrid,
    eq_rate,
    eq_rate_curve,
    neq_population,
    parabolic_peak_location,
    polarization_run,
    sweep,
    temp_sweep,
)
from .errors import ConfigError, ParseError, PhysicsError, ValidationError
from .model import (
    DuschinskiiSystem,
    assemble_langevin,
    reduce_to_normal_modes,
)
from .numerics import DiagonalSpectrum
from .oracle import (
    FockSpec,
    build_operators,
    exact_eq_correlation,
    exact_neq_correlation,
    exact_populations,
    fgr_state_sum,
)

__all__ = ["main", "ResultRecord"]


# ---------------------------------------------------------------------------
# result serialization


def _fmt_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return format(value, ".17g")
    return str(value)


@dataclasses.dataclass(frozen=True)
class ResultRecord:
    """One run's deliverable: the table plus its identifying metadata."""

    run_id: str
    command: str
    config_hash: str
    config: dict
    columns: list
    rows: list
    extra: dict

    def write(self, outdir: Path) -> tuple[Path, Path]:
        outdir.mkdir(parents=True, exist_ok=True)
        csv_path = outdir / f"{self.run_id}.csv"
        meta_path = outdir / f"{self.run_id}.meta.json"
        with open(csv_path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(self.columns)
            for row in self.rows:
                writer.writerow([_fmt_cell(cell) for cell in row])
        meta = {
            "run_id": self.run_id,
            "command": self.command,
            "config_hash": self.config_hash,
            "config": self.config,
            **self.extra,
        }
        with open(meta_path, "w", encoding="utf-8") as handle:
            json.dump(meta, handle, sort_keys=True, indent=2)
            handle.write("\n")
        return csv_path, meta_path


def _record(cfg: RunConfig, command: str, columns, rows, extra=None) -> ResultRecord:
    return ResultRecord(
        run_id=f"{command}-{cfg.config_hash}",
        command=command,
        config_hash=cfg.config_hash,
        config=cfg.echo,
        columns=list(columns),
        rows=rows,
        extra=dict(extra or {}),
    )


# ---------------------------------------------------------------------------
# argument plumbing


class _Parser(argparse.ArgumentParser):
    """argparse maps usage errors to exit 2; here that slot means a physics
    failure, so remap them to the configuration-failure code."""

    def error(self, message):
        self.exit(3, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="spinet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"spinet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text, needs_config=True):
        p = sub.add_parser(name, help=help_text)
        if needs_config:
            p.add_argument("config", nargs="?", help="YAML run document")
            p.add_argument("--preset", help="name of a shipped preset (see --list)")
            p.add_argument("--list", action="store_true", help="list shipped presets and exit")
            p.add_argument("--t-max", type=float, help="override grid.t_max")
            p.add_argument("--steps", type=int, help="override grid.steps")
        p.add_argument("--outdir", help="output directory (else config, else $SPINET_OUTDIR)")
        p.add_argument("--threads", type=int, help="worker threads (else $SPINET_THREADS)")
        return p

    add("eq-rate", "equilibrium golden-rule transfer rate of the configured model")
    marcus = add("marcus-curve", "equilibrium rate vs driving force, with and without the coupling phase")
    marcus.add_argument("--dg-min", type=float, help="override scan.dg_min")
    marcus.add_argument("--dg-max", type=float, help="override scan.dg_max")
    marcus.add_argument("--points", type=int, help="override scan.points")
    add("neq-population", "ground-state population after photoexcitation (single spin channel)")
    add("polarization", "paired spin-channel populations and polarization trace")
    swp = add("sweep", "polarization surface over (phi, eta)")
    swp.add_argument("--sweep-points", type=int, help="override every sweep axis point count")
    tsw = add("temp-sweep", "polarization surface over (phi, temperature)")
    tsw.add_argument("--sweep-points", type=int, help="override every sweep axis point count")
    add("converge-bath", "discretization gates: more bath modes, higher cutoff, finer grid")
    add("oracle-check", "run the exact-diagonalization cross-check battery", needs_config=False)
    return parser


def _sub_mapping(doc: dict, key: str) -> dict:
    if doc.get(key) is None:
        doc[key] = {}
    if not isinstance(doc[key], dict):
        raise ParseError(f"section '{key}' must be a mapping")
    return doc[key]


def _resolve(args) -> RunConfig:
    """Load the document named by the arguments, apply overrides, resolve."""
    if args.config and args.preset:
        raise ValidationError("give a config path or --preset, not both")
    if args.preset:
        doc = load_document(preset_text(args.preset))
    elif args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as handle:
                text = handle.read()
        except OSError as err:
            raise ParseError(f"cannot read config: {err}") from None
        doc = load_document(text)
    else:
        raise ValidationError("a config path or --preset is required")

    if getattr(args, "t_max", None) is not None:
        _sub_mapping(doc, "grid")["t_max"] = args.t_max
    if getattr(args, "steps", None) is not None:
        _sub_mapping(doc, "grid")["steps"] = args.steps
    for flag, key in (("dg_min", "dg_min"), ("dg_max", "dg_max"), ("points", "points")):
        if getattr(args, flag, None) is not None:
            _sub_mapping(doc, "scan")[key] = getattr(args, flag)
    if getattr(args, "sweep_points", None) is not None:
        sweep_doc = _sub_mapping(doc, "sweep")
        for axis in ("phi", "eta", "beta", "temperature_k"):
            if isinstance(sweep_doc.get(axis), dict):
                sweep_doc[axis]["points"] = args.sweep_points
    return resolve_config(doc)


def _threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        env = os.environ.get("SPINET_THREADS")
        if env is None:
            return 1
        try:
            n = int(env)
        except ValueError:
            raise ValidationError(f"SPINET_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise ValidationError(f"thread count must be >= 1, got {n}")
    return n


def _outdir(args, cfg: RunConfig | None) -> Path:
    if args.outdir:
        return Path(args.outdir)
    if cfg is not None and cfg.outdir:
        return Path(cfg.outdir)
    return Path(os.environ.get("SPINET_OUTDIR", "runs"))


def _system(cfg: RunConfig) -> DuschinskiiSystem:
    if cfg.is_langevin:
        return reduce_to_normal_modes(assemble_langevin(cfg.model))
    return reduce_to_normal_modes(cfg.model)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_eq_rate(cfg: RunConfig, args) -> ResultRecord:
    system = _system(cfg)
    rate = eq_rate(system, cfg.beta, cfg.grid)
    return _record(
        cfg, "eq-rate",
        ["beta", "delta_g", "rate"],
        [[cfg.beta, float(system.delta_g), rate]],
        {"headline": {"rate": rate}},
    )


def _cmd_marcus_curve(cfg: RunConfig, args) -> ResultRecord:
    system = _system(cfg)
    bare = system.with_soc(0.0)
    dgs = cfg.scan_dg
    err_w, err_0 = [], []
    rates_w = eq_rate_curve(system, cfg.beta, dgs, cfg.grid, on_error="record", errors=err_w)
    rates_0 = eq_rate_curve(bare, cfg.beta, dgs, cfg.grid, on_error="record", errors=err_0)
    notes = {}
    for k, msg in err_w:
        notes[k] = f"rate: {msg}"
    for k, msg in err_0:
        notes[k] = (notes[k] + "; " if k in notes else "") + f"rate_w0: {msg}"
    rows = [
        [float(dg), float(rw), float(r0), notes.get(k)]
        for k, (dg, rw, r0) in enumerate(zip(dgs, rates_w, rates_0))
    ]
    extra: dict = {"scan_errors": [[k, notes[k]] for k in sorted(notes)]}
    if np.all(np.isfinite(rates_w)) and np.all(rates_w > 0) and np.all(
        np.isfinite(rates_0)
    ) and np.all(rates_0 > 0) and len(dgs) >= 3:
        try:
            peak_w = parabolic_peak_location(dgs, np.log(rates_w))
            peak_0 = parabolic_peak_location(dgs, np.log(rates_0))
            extra["headline"] = {
                "peak_dg": peak_w,
                "peak_dg_w0": peak_0,
                "peak_shift": peak_0 - peak_w,
            }
        except (ValidationError, PhysicsError):
            pass
    return _record(cfg, "marcus-curve", ["delta_g", "rate", "rate_w0", "error"], rows, extra)


def _cmd_neq_population(cfg: RunConfig, args) -> ResultRecord:
    system = _system(cfg)
    trace = neq_population(system, cfg.beta, cfg.grid)
    rows = [[float(t), float(p)] for t, p in zip(trace.times, trace.values)]
    return _record(
        cfg, "neq-population", ["t", "p_g"], rows,
        {"headline": {"final_population": trace.final_value}},
    )


def _cmd_polarization(cfg: RunConfig, args) -> ResultRecord:
    spec = cfg.require_langevin("polarization")
    res = polarization_run(spec, cfg.grid)
    rows = [
        [float(t), float(u), float(d), float(c), float(p)]
        for t, u, d, c, p in zip(
            res.up.times, res.up.values, res.down.values, res.chi, res.pg
        )
    ]
    return _record(
        cfg, "polarization", ["t", "p_up", "p_down", "chi", "pg"], rows,
        {"headline": {"chi": res.headline_chi, "pg": res.headline_pg}},
    )


def _surface_rows(surf, extra_column=None):
    """Long-form rows (axis values, surfaces, per-cell error message)."""
    errors = {(i, j): msg for i, j, msg in surf.metadata.get("cell_errors", [])}
    rows = []
    for i, a in enumerate(surf.phi_axis):
        for j, b in enumerate(surf.eta_axis):
            row = [float(a), float(b)]
            if extra_column is not None:
                row.append(float(extra_column[j]))
            rows.append(
                row + [
                    float(surf.chi_surface[i, j]),
                    float(surf.pg_surface[i, j]),
                    errors.get((i, j)),
                ]
            )
    return rows


def _cmd_sweep(cfg: RunConfig, args) -> ResultRecord:
    spec = cfg.require_langevin("sweep")
    if cfg.phi_axis is None or cfg.eta_axis is None:
        raise ValidationError("sweep needs 'sweep.phi' and 'sweep.eta' axes")
    surf = sweep(spec, cfg.phi_axis, cfg.eta_axis, cfg.grid, threads=_threads(args))
    rows = _surface_rows(surf)
    extra = {
        "n_missing": surf.n_missing,
        "cell_errors": surf.metadata.get("cell_errors", []),
        "zero_isolines": [line.tolist() for line in surf.zero_isolines()],
    }
    return _record(cfg, "sweep", ["phi", "eta", "chi", "pg", "error"], rows, extra)


def _cmd_temp_sweep(cfg: RunConfig, args) -> ResultRecord:
    spec = cfg.require_langevin("temp-sweep")
    if cfg.phi_axis is None or cfg.beta_axis is None:
        raise ValidationError(
            "temp-sweep needs 'sweep.phi' and a 'sweep.beta' or 'sweep.temperature_k' axis"
        )
    surf = temp_sweep(spec, cfg.phi_axis, cfg.beta_axis, cfg.grid, threads=_threads(args))
    kelvin = np.array([kelvin_from_beta(b) for b in surf.eta_axis])
    rows = _surface_rows(surf, extra_column=kelvin)
    extra = {
        "n_missing": surf.n_missing,
        "cell_errors": surf.metadata.get("cell_errors", []),
        "zero_isolines": [line.tolist() for line in surf.zero_isolines()],
    }
    return _record(
        cfg, "temp-sweep",
        ["phi", "beta", "temperature_k", "chi", "pg", "error"], rows, extra,
    )


def _cmd_converge_bath(cfg: RunConfig, args) -> ResultRecord:
    spec = cfg.require_langevin("converge-bath")
    grid = cfg.grid
    base = polarization_run(spec, grid).headline_pg
    bath = spec.bath
    variants = [
        ("double_bath_modes",
         dataclasses.replace(spec, bath=dataclasses.replace(bath, modes_per_bath=2 * bath.modes_per_bath)),
         grid),
        ("double_cutoff_fixed_density",
         dataclasses.replace(spec, bath=dataclasses.replace(
             bath, modes_per_bath=2 * bath.modes_per_bath, cutoff=2.0 * bath.cutoff)),
         grid),
        ("halve_dt", spec, TimeGrid(grid.t_max, 2 * grid.steps)),
    ]
    rows = []
    worst = 0.0
    for name, vspec, vgrid in variants:
        varied = polarization_run(vspec, vgrid).headline_pg
        rel = abs(varied - base) / abs(base) if base != 0.0 else math.inf
        worst = max(worst, rel)
        rows.append([name, base, varied, rel, "yes" if rel < 0.02 else "no"])
    return _record(
        cfg, "converge-bath",
        ["gate", "base_pg", "varied_pg", "rel_change", "within_2pct"],
        rows, {"headline": {"max_rel_change": worst}},
    )


# ---------------------------------------------------------------------------
# oracle battery


def _battery() -> list[tuple[str, float, float, str]]:
    """(name, measured, budget, direction) for each cross-check; direction
    "<" means measured must stay under budget, ">" means it must exceed it
    (used where the wrong variant must be *detectably* wrong)."""
    checks = []

    trivial = DuschinskiiSystem(
        DiagonalSpectrum([0.8, 1.2]), DiagonalSpectrum([0.8, 1.2]),
        np.eye(2), np.zeros(2), np.zeros(2), 1e-3, 0.0,
    )
    vals = exact_eq_correlation(FockSpec(trivial, 16), np.array([0.5, 3.1, 12.0]), 2.0)
    checks.append(
        ("trivial-correlation-identity", float(np.max(np.abs(vals - 1.0))), 1e-12, "<")
    )

    c, s = np.cos(0.5), np.sin(0.5)
    two = DuschinskiiSystem(
        DiagonalSpectrum([1.0, 1.5]), DiagonalSpectrum([0.9, 1.1]),
        [[c, -s], [s, c]], [0.4, -0.3], [0.3, 0.2], 1e-3, -0.2,
    )
    spec2 = FockSpec(two, 28)
    ops2 = build_operators(spec2)
    exact = exact_eq_correlation(spec2, 1.3, 1.7, ops=ops2)
    closed = eq_correlation(two, 1.3, 1.7)
    checks.append(
        ("equilibrium-closed-form", abs(closed - exact) / abs(exact), 1e-6, "<")
    )

    exact = exact_neq_correlation(spec2, 2.1, 0.8, 1.7, ops=ops2)
    rot = neq_correlation(two, 2.1, 0.8, 1.7, form="rotated")
    bare = neq_correlation(two, 2.1, 0.8, 1.7, form="bare")
    checks.append(
        ("thermal-block-rotated-form", abs(rot - exact) / abs(exact), 1e-4, "<")
    )
    checks.append(
        ("thermal-block-bare-form-detected", abs(bare - exact) / abs(exact), 1e-4, ">")
    )

    flipped = two.with_soc(-1.0)
    exact_m = exact_neq_correlation(FockSpec(flipped, 28), 2.1, 0.8, 1.7)
    rel_p = abs(neq_correlation(two, 2.1, 0.8, 1.7) - exact) / abs(exact)
    rel_m = abs(neq_correlation(flipped, 2.1, 0.8, 1.7) - exact_m) / abs(exact_m)
    checks.append(("spin-channel-pair", max(rel_p, rel_m), 1e-9, "<"))

    omega = 2.0e-4
    d_eff = 884.0 * math.cos(math.pi / 4)
    one = DuschinskiiSystem(
        DiagonalSpectrum([omega]), DiagonalSpectrum([omega]),
        [[1.0]], [-d_eff], [0.05], 1e-5, -0.01,
    )
    grid = TimeGrid(10000.0, 200)
    exact_trace = exact_populations(FockSpec(one, 270), 1e-5, -0.01, grid, 1000.0)
    pert = neq_population(one, 1000.0, grid)
    rel = abs(pert.final_value - exact_trace.final_value) / exact_trace.final_value
    checks.append(("driving-phase-sign", rel, 0.03, "<"))

    strong = dataclasses.replace(one, v=1e-4)
    spec1 = FockSpec(strong, 280)
    k_sum = fgr_state_sum(spec1, 1e-4, -0.01, 1000.0)
    k_time = eq_rate(strong, 1000.0, TimeGrid(25000.0, 1000))
    checks.append(("state-sum-vs-time-domain", abs(k_sum - k_time) / k_time, 0.15, "<"))
    return checks


def _cmd_oracle_check(args) -> int:
    checks = _battery()
    rows = []
    all_pass = True
    for name, measured, budget, direction in checks:
        ok = measured < budget if direction == "<" else measured > budget
        all_pass &= ok
        rows.append([name, measured, budget, direction, "PASS" if ok else "FAIL"])
    payload = json.dumps([row[0] for row in rows], sort_keys=True)
    battery_hash = hashlib.sha256(payload.encode()).hexdigest()[:12]
    record = ResultRecord(
        run_id=f"oracle-check-{battery_hash}",
        command="oracle-check",
        config_hash=battery_hash,
        config={"battery": [row[0] for row in rows]},
        columns=["check", "measured", "budget", "direction", "status"],
        rows=rows,
        extra={"all_pass": bool(all_pass)},
    )
    csv_path, _ = record.write(_outdir(args, None))
    for row in rows:
        print(f"{row[4]:4s}  {row[0]:38s} measured={_fmt_cell(row[1])} budget={row[2]:g}")
    print(f"wrote {csv_path}")
    return 0 if all_pass else 2


_COMMANDS = {
    "eq-rate": _cmd_eq_rate,
    "marcus-curve": _cmd_marcus_curve,
    "neq-population": _cmd_neq_population,
    "polarization": _cmd_polarization,
    "sweep": _cmd_sweep,
    "temp-sweep": _cmd_temp_sweep,
    "converge-bath": _cmd_converge_bath,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "oracle-check":
            return _cmd_oracle_check(args)
        if getattr(args, "list", False):
            for name in list_presets():
                print(name)
            return 0
        cfg = _resolve(args)
        record = _COMMANDS[args.command](cfg, args)
        csv_path, meta_path = record.write(_outdir(args, cfg))
        print(f"wrote {csv_path}")
        print(f"wrote {meta_path}")
        return 0
    except ConfigError as err:
        print(f"spinet: config error: {err}", file=sys.stderr)
        return 3
    except PhysicsError as err:
        print(f"spinet: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
