"""End-to-end checks for the command-line driver and the YAML run documents.

Every run here goes through ``spinet.cli.main`` with an explicit ``--outdir``
under pytest's tmp_path, so nothing touches the working tree.  The slow
physics is covered elsewhere; these tests use coarse grids and care about
the I/O contract: exit codes, file naming, byte determinism, and full-
precision round-trips of the CSV cells.
"""

import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from spinet import cli
from spinet.config import list_presets, parse_config, preset_text
from spinet.constants import beta_from_kelvin, kelvin_from_beta
from spinet.dynamics import eq_rate, polarization_run
from spinet.errors import ParseError, ValidationError
from spinet.model import LangevinSpec, reduce_to_normal_modes


def run_cli(*argv):
    """Invoke the CLI in-process; normalize argparse's SystemExit to an int."""
    try:
        return cli.main(list(argv))
    except SystemExit as exc:
        return int(exc.code or 0)


def write_doc(tmp_path, text, name="run.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def read_run(outdir, command):
    """Return (csv_path, header, rows, meta) for the single run in outdir."""
    paths = sorted(Path(outdir).glob(f"{command}-*.csv"))
    assert len(paths) == 1, f"expected one {command} CSV, found {paths}"
    with open(paths[0], newline="") as handle:
        table = list(csv.reader(handle))
    meta = json.loads(paths[0].with_suffix(".meta.json").read_text())
    return paths[0], table[0], table[1:], meta


SWEEP_DOC = """\
model:
  langevin:
    phi: 0.4
    eta: 1.1
    v: 1.0e-4
    bath: {modes_per_bath: 2, cutoff: 4.0e-3}
grid: {t_max: 2000.0, steps: 32}
sweep:
  phi: {start: -0.6, stop: 0.9, points: 2}
  eta: {start: 0.3, stop: 5.2, points: 2}
"""

# same model, no sweep section: used by polarization / neq-population
TRACE_DOC = """\
model:
  langevin:
    phi: 0.4
    eta: 1.1
    v: 1.0e-4
    bath: {modes_per_bath: 2, cutoff: 4.0e-3}
grid: {t_max: 2000.0, steps: 32}
"""

TEMP_DOC = """\
model:
  langevin:
    phi: 0.4
    eta: 1.1
    v: 1.0e-4
    bath: {modes_per_bath: 2, cutoff: 4.0e-3}
grid: {t_max: 2000.0, steps: 32}
sweep:
  phi: {start: 0.0, stop: 0.0, points: 1}
  temperature_k: {start: 200.0, stop: 400.0, points: 2}
"""

# one displaced mode at the reference frequency; the surfaces put the rate
# peak at delta_g = -lambda^2 / (2 omega^2) ~= -0.0156
MARCUS_RAW_DOC = """\
model:
  raw:
    omega2_g: [[4.0e-8]]
    omega2_e: [[4.0e-8]]
    lambda_g: [3.536e-5]
    lambda_e: [0.0]
    e_g: 0.0
    e_e: 0.0
    v: 1.0e-4
    w: [0.05]
    beta: 200.0
grid: {t_max: 2500.0, steps: 250}
scan: {dg_min: -0.025, dg_max: -0.007, points: 7}
"""

# identical surfaces, no displacement: P grows like t^2 forever, so the
# rate-window consistency check must reject the fit
FLAT_RAW_DOC = """\
model:
  raw:
    omega2_g: [[1.0e-6]]
    omega2_e: [[1.0e-6]]
    lambda_g: [0.0]
    lambda_e: [0.0]
    e_g: 0.0
    e_e: 0.0
    v: 1.0e-4
    w: [0.0]
    beta: 5.0
grid: {t_max: 2000.0, steps: 64}
"""

BREAKDOWN_SWEEP_DOC = SWEEP_DOC.replace("v: 1.0e-4", "v: 0.05")


class TestConfig:
    def test_empty_document_gives_reference_model(self):
        cfg = parse_config("")
        assert cfg.is_langevin
        assert cfg.model == LangevinSpec()
        assert cfg.beta == 1000.0
        assert cfg.grid.t_max == 25000.0 and cfg.grid.steps == 1000
        assert len(cfg.scan_dg) == 40
        assert cfg.scan_dg[0] == -0.04 and cfg.scan_dg[-1] == 0.0

    def test_unknown_key_is_named_with_its_path(self):
        with pytest.raises(ParseError, match="model.langevin.omega3"):
            parse_config("model: {langevin: {omega3: 1.0}}")

    def test_negative_beta_rejected(self):
        with pytest.raises(ValidationError, match="beta must be positive"):
            parse_config("model: {langevin: {beta: -1.0}}")

    def test_both_model_blocks_rejected(self):
        doc = (
            "model:\n"
            "  langevin: {}\n"
            "  raw: {omega2_g: [[1.0]], omega2_e: [[1.0]], lambda_g: [0.0],\n"
            "        lambda_e: [0.0], e_g: 0.0, e_e: 0.0, v: 1.0e-4, w: [0.0]}\n"
        )
        with pytest.raises(ValidationError, match="exactly one"):
            parse_config(doc)

    def test_yaml_syntax_error_reports_line(self):
        with pytest.raises(ParseError, match="line 1"):
            parse_config("foo: [unclosed")

    def test_temperature_axis_converts_to_beta(self):
        cfg = parse_config(TEMP_DOC)
        expect = [beta_from_kelvin(200.0), beta_from_kelvin(400.0)]
        assert np.array_equal(cfg.beta_axis, expect)

    def test_beta_and_temperature_axes_conflict(self):
        doc = TEMP_DOC + "  beta: {start: 100.0, stop: 200.0, points: 2}\n"
        with pytest.raises(ValidationError):
            parse_config(doc)

    def test_scan_bounds_ordered(self):
        with pytest.raises(ValidationError):
            parse_config("scan: {dg_min: 0.0, dg_max: -0.01}")


class TestPresets:
    def test_every_preset_resolves(self):
        names = list_presets()
        assert len(names) == 17
        assert names == sorted(names)
        for name in names:
            cfg = parse_config(preset_text(name))
            assert cfg.figure in {"fig3", "fig4", "fig6", "fig7"}, name
            assert cfg.is_langevin, name

    def test_unknown_preset_lists_available(self):
        with pytest.raises(ParseError, match="no-such-preset"):
            preset_text("no-such-preset")


class TestArtifacts:
    def test_reruns_are_byte_identical(self, tmp_path):
        doc = write_doc(tmp_path, SWEEP_DOC)
        assert run_cli("sweep", doc, "--outdir", str(tmp_path / "a")) == 0
        assert run_cli("sweep", doc, "--outdir", str(tmp_path / "b")) == 0
        csv_a, _, _, _ = read_run(tmp_path / "a", "sweep")
        csv_b, _, _, _ = read_run(tmp_path / "b", "sweep")
        assert csv_a.name == csv_b.name
        assert csv_a.read_bytes() == csv_b.read_bytes()
        meta_a = csv_a.with_suffix(".meta.json").read_bytes()
        meta_b = csv_b.with_suffix(".meta.json").read_bytes()
        assert meta_a == meta_b

    def test_thread_count_does_not_change_bytes(self, tmp_path):
        doc = write_doc(tmp_path, SWEEP_DOC)
        assert run_cli("sweep", doc, "--outdir", str(tmp_path / "a"), "--threads", "1") == 0
        assert run_cli("sweep", doc, "--outdir", str(tmp_path / "b"), "--threads", "3") == 0
        csv_a, _, _, _ = read_run(tmp_path / "a", "sweep")
        csv_b, _, _, _ = read_run(tmp_path / "b", "sweep")
        assert csv_a.read_bytes() == csv_b.read_bytes()

    def test_csv_round_trips_doubles_exactly(self, tmp_path):
        doc = write_doc(tmp_path, TRACE_DOC)
        assert run_cli("polarization", doc, "--outdir", str(tmp_path / "out")) == 0
        csv_path, header, rows, _ = read_run(tmp_path / "out", "polarization")
        assert header == ["t", "p_up", "p_down", "chi", "pg"]
        assert b"\r" not in csv_path.read_bytes()

        cfg = parse_config(TRACE_DOC)
        res = polarization_run(cfg.model, cfg.grid)
        assert len(rows) == len(res.up.times)
        for k, row in enumerate(rows):
            assert float(row[0]) == res.up.times[k]
            assert float(row[1]) == res.up.values[k]
            assert float(row[2]) == res.down.values[k]
            assert float(row[3]) == res.chi[k]
            assert float(row[4]) == res.pg[k]

    def test_meta_names_the_run(self, tmp_path):
        doc = write_doc(tmp_path, TRACE_DOC)
        assert run_cli("polarization", doc, "--outdir", str(tmp_path / "out")) == 0
        csv_path, _, rows, meta = read_run(tmp_path / "out", "polarization")
        assert meta["command"] == "polarization"
        assert meta["run_id"] == f"polarization-{meta['config_hash']}"
        assert csv_path.stem == meta["run_id"]
        assert meta["config"]["grid"] == {"t_max": 2000.0, "steps": 32}
        assert meta["headline"]["chi"] == float(rows[-1][3])
        assert meta["headline"]["pg"] == float(rows[-1][4])

    def test_failed_cells_leave_empty_csv_cells(self, tmp_path):
        doc = write_doc(tmp_path, BREAKDOWN_SWEEP_DOC)
        assert run_cli("sweep", doc, "--outdir", str(tmp_path / "out")) == 0
        _, header, rows, meta = read_run(tmp_path / "out", "sweep")
        assert header == ["phi", "eta", "chi", "pg", "error"]
        assert len(rows) == 4
        for row in rows:
            assert row[2] == "" and row[3] == ""
            assert row[4].startswith("PerturbationBreakdown")
        assert meta["n_missing"] == 4
        assert meta["zero_isolines"] == []
        assert len(meta["cell_errors"]) == 4

    def test_override_flags_change_the_run_id(self, tmp_path):
        doc = write_doc(tmp_path, TRACE_DOC)
        assert run_cli("neq-population", doc, "--outdir", str(tmp_path / "a")) == 0
        assert run_cli(
            "neq-population", doc, "--steps", "40", "--outdir", str(tmp_path / "b")
        ) == 0
        csv_a, _, _, meta_a = read_run(tmp_path / "a", "neq-population")
        csv_b, _, _, meta_b = read_run(tmp_path / "b", "neq-population")
        assert csv_a.name != csv_b.name
        assert meta_a["config_hash"] != meta_b["config_hash"]
        assert meta_b["config"]["grid"]["steps"] == 40


class TestExitCodes:
    def test_missing_config_file(self, tmp_path, capsys):
        code = run_cli("eq-rate", str(tmp_path / "absent.yaml"), "--outdir", str(tmp_path))
        assert code == 3
        assert "config error" in capsys.readouterr().err

    def test_unknown_preset(self, tmp_path):
        assert run_cli("eq-rate", "--preset", "nope", "--outdir", str(tmp_path)) == 3

    def test_config_and_preset_together(self, tmp_path):
        doc = write_doc(tmp_path, TRACE_DOC)
        code = run_cli("eq-rate", doc, "--preset", "fig3-marcus-phi0", "--outdir", str(tmp_path))
        assert code == 3

    def test_no_config_at_all(self, tmp_path):
        assert run_cli("eq-rate", "--outdir", str(tmp_path)) == 3

    def test_unknown_subcommand(self):
        assert run_cli("frobnicate") == 3

    def test_unknown_flag(self, tmp_path):
        doc = write_doc(tmp_path, TRACE_DOC)
        assert run_cli("eq-rate", doc, "--nonsense") == 3

    def test_version_exits_zero(self, capsys):
        assert run_cli("--version") == 0
        assert capsys.readouterr().out.startswith("spinet ")

    def test_unconverged_rate_exits_two(self, tmp_path, capsys):
        doc = write_doc(tmp_path, FLAT_RAW_DOC)
        assert run_cli("eq-rate", doc, "--outdir", str(tmp_path)) == 2
        assert "NonconvergedRate" in capsys.readouterr().err

    def test_polarization_rejects_raw_model(self, tmp_path):
        doc = write_doc(tmp_path, MARCUS_RAW_DOC)
        assert run_cli("polarization", doc, "--outdir", str(tmp_path)) == 3

    def test_sweep_without_axes(self, tmp_path):
        doc = write_doc(tmp_path, TRACE_DOC)
        assert run_cli("sweep", doc, "--outdir", str(tmp_path)) == 3

    def test_zero_threads_rejected(self, tmp_path):
        doc = write_doc(tmp_path, SWEEP_DOC)
        assert run_cli("sweep", doc, "--outdir", str(tmp_path), "--threads", "0") == 3

    def test_bad_threads_env_rejected(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SPINET_THREADS", "many")
        doc = write_doc(tmp_path, SWEEP_DOC)
        assert run_cli("sweep", doc, "--outdir", str(tmp_path)) == 3


class TestCommands:
    def test_eq_rate_matches_library_call(self, tmp_path):
        doc = write_doc(tmp_path, MARCUS_RAW_DOC)
        assert run_cli("eq-rate", doc, "--outdir", str(tmp_path / "out")) == 0
        _, header, rows, meta = read_run(tmp_path / "out", "eq-rate")
        assert header == ["beta", "delta_g", "rate"]
        assert len(rows) == 1

        cfg = parse_config(MARCUS_RAW_DOC)
        system = reduce_to_normal_modes(cfg.model)
        assert float(rows[0][0]) == 200.0
        assert float(rows[0][1]) == system.delta_g
        # default energy offsets put the minimum gap at minus the
        # reorganization energy of the displaced surface
        assert math.isclose(system.delta_g, -3.536e-5**2 / (2 * 4.0e-8), rel_tol=1e-12)
        expected = eq_rate(system, cfg.beta, cfg.grid)
        assert float(rows[0][2]) == expected
        assert meta["headline"]["rate"] == expected

    def test_marcus_curve_reports_phase_shift(self, tmp_path):
        doc = write_doc(tmp_path, MARCUS_RAW_DOC)
        assert run_cli("marcus-curve", doc, "--outdir", str(tmp_path / "out")) == 0
        _, header, rows, meta = read_run(tmp_path / "out", "marcus-curve")
        assert header == ["delta_g", "rate", "rate_w0", "error"]
        assert len(rows) == 7
        for row in rows:
            assert float(row[1]) > 0 and float(row[2]) > 0
            assert row[3] == ""
        assert meta["scan_errors"] == []
        head = meta["headline"]
        # the complex coupling phase shifts the rate peak by about W^2/2
        assert head["peak_dg"] < head["peak_dg_w0"]
        assert 0.0008 < head["peak_shift"] < 0.0018

    def test_neq_population_trace(self, tmp_path):
        doc = write_doc(tmp_path, TRACE_DOC)
        assert run_cli("neq-population", doc, "--outdir", str(tmp_path / "out")) == 0
        _, header, rows, meta = read_run(tmp_path / "out", "neq-population")
        assert header == ["t", "p_g"]
        assert len(rows) == 33
        assert float(rows[0][0]) == 0.0 and float(rows[0][1]) == 0.0
        assert meta["headline"]["final_population"] == float(rows[-1][1])

    def test_temp_sweep_reports_kelvin(self, tmp_path):
        doc = write_doc(tmp_path, TEMP_DOC)
        assert run_cli("temp-sweep", doc, "--outdir", str(tmp_path / "out")) == 0
        _, header, rows, meta = read_run(tmp_path / "out", "temp-sweep")
        assert header == ["phi", "beta", "temperature_k", "chi", "pg", "error"]
        assert len(rows) == 2
        for row, kelvin in zip(rows, (200.0, 400.0)):
            assert float(row[1]) == beta_from_kelvin(kelvin)
            assert abs(float(row[2]) - kelvin) < 1e-9 * kelvin
            assert row[5] == ""
        assert meta["n_missing"] == 0

    def test_converge_bath_gate_table(self, tmp_path):
        doc = write_doc(tmp_path, TRACE_DOC)
        assert run_cli("converge-bath", doc, "--outdir", str(tmp_path / "out")) == 0
        _, header, rows, meta = read_run(tmp_path / "out", "converge-bath")
        assert header == ["gate", "base_pg", "varied_pg", "rel_change", "within_2pct"]
        gates = [row[0] for row in rows]
        assert gates == ["double_bath_modes", "double_cutoff_fixed_density", "halve_dt"]
        rels = [float(row[3]) for row in rows]
        for row, rel in zip(rows, rels):
            assert math.isfinite(rel) and rel >= 0
            assert row[4] == ("yes" if rel < 0.02 else "no")
        assert meta["headline"]["max_rel_change"] == max(rels)

    def test_preset_with_override_flags(self, tmp_path):
        assert run_cli(
            "sweep", "--preset", "fig4-theta45-dg-0.01",
            "--sweep-points", "2", "--t-max", "2000", "--steps", "32",
            "--outdir", str(tmp_path / "out"),
        ) == 0
        _, _, rows, meta = read_run(tmp_path / "out", "sweep")
        assert len(rows) == 4
        assert meta["config"]["figure"] == "fig4"
        assert meta["config"]["grid"] == {"t_max": 2000.0, "steps": 32}
        assert meta["n_missing"] == 0

    def test_oracle_check_battery_passes(self, tmp_path, capsys):
        assert run_cli("oracle-check", "--outdir", str(tmp_path / "out")) == 0
        out = capsys.readouterr().out
        _, header, rows, meta = read_run(tmp_path / "out", "oracle-check")
        assert header == ["check", "measured", "budget", "direction", "status"]
        assert len(rows) == 7
        for row in rows:
            assert row[4] == "PASS"
            assert f"PASS  {row[0]}" in out
        assert meta["all_pass"] is True

    def test_list_presets_prints_names(self, capsys):
        assert run_cli("eq-rate", "--list") == 0
        printed = capsys.readouterr().out.split()
        assert printed == list_presets()


class TestEnvironment:
    def test_outdir_env_used_when_no_flag(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        monkeypatch.setenv("SPINET_OUTDIR", str(tmp_path / "envdir"))
        doc = write_doc(tmp_path, TRACE_DOC)
        assert run_cli("neq-population", doc) == 0
        assert len(list((tmp_path / "envdir").glob("*.csv"))) == 1

    def test_outdir_flag_beats_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SPINET_OUTDIR", str(tmp_path / "envdir"))
        doc = write_doc(tmp_path, TRACE_DOC)
        assert run_cli("neq-population", doc, "--outdir", str(tmp_path / "flagdir")) == 0
        assert not (tmp_path / "envdir").exists()
        assert len(list((tmp_path / "flagdir").glob("*.csv"))) == 1

    def test_config_outdir_beats_env(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        monkeypatch.setenv("SPINET_OUTDIR", str(tmp_path / "envdir"))
        doc = write_doc(tmp_path, TRACE_DOC + "output: {directory: from-config}\n")
        assert run_cli("neq-population", doc) == 0
        assert not (tmp_path / "envdir").exists()
        assert len(list((tmp_path / "from-config").glob("*.csv"))) == 1

    def test_threads_env_accepted(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SPINET_THREADS", "2")
        doc = write_doc(tmp_path, SWEEP_DOC)
        assert run_cli("sweep", doc, "--outdir", str(tmp_path / "env")) == 0
        monkeypatch.delenv("SPINET_THREADS")
        assert run_cli("sweep", doc, "--outdir", str(tmp_path / "plain")) == 0
        csv_a, _, _, _ = read_run(tmp_path / "env", "sweep")
        csv_b, _, _, _ = read_run(tmp_path / "plain", "sweep")
        assert csv_a.read_bytes() == csv_b.read_bytes()

    def test_module_entry_point(self):
        proc = subprocess.run(
            [sys.executable, "-m", "spinet.cli", "--version"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert proc.stdout.startswith("spinet ")
