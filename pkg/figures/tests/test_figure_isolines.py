"""End-to-end: preset-generated artifacts render, and the heatmap's drawn
zero contour tracks the solver's own isoline output to within a grid cell.

These tests exercise the real `spinet` CLI at coarse resolution, so they
need the solver package installed; everything flows through the CSV +
sidecar interface, never through solver imports.
"""

import shutil
import subprocess

import numpy as np
import pytest

from spinet_figures.data import load_meta, load_table, pivot_surface
from spinet_figures.recipes import resolve_inputs
from spinet_figures import load_recipe, render

FAST_GRID = ["--t-max", "2000", "--steps", "64", "--threads", "1"]


def run_preset(subcommand, preset, outdir, extra=()):
    assert shutil.which("spinet"), "solver CLI must be installed"
    argv = ["spinet", subcommand, "--preset", preset, "--outdir", str(outdir)]
    argv += FAST_GRID + list(extra)
    proc = subprocess.run(argv, capture_output=True, text=True)
    assert proc.returncode == 0, f"{' '.join(argv)}\n{proc.stderr}"
    return outdir


@pytest.fixture(scope="module")
def sweep_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    return run_preset("sweep", "fig4-theta45-dg-0.01", out, ["--sweep-points", "6"])


@pytest.fixture(scope="module")
def marcus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("marcus")
    return run_preset("marcus-curve", "fig3-marcus-phi45", out, ["--points", "7"])


@pytest.fixture(scope="module")
def traces_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("traces")
    run_preset("polarization", "fig6-trace-phi0-eta0", out / "eta0")
    run_preset("polarization", "fig6-trace-phi0-eta90", out / "eta90")
    return out


@pytest.fixture(scope="module")
def temp_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("tempmap")
    return run_preset("temp-sweep", "fig7-tempmap-theta45", out, ["--sweep-points", "6"])


def test_curve_recipe_renders(marcus_dir):
    assert render("fig3", data_dir=marcus_dir).path.exists()


def test_sweep_recipes_render(sweep_dir):
    for name in ("fig4", "fig5", "fig9"):
        assert render(name, data_dir=sweep_dir).path.exists()


def test_trace_pair_recipe_renders(traces_dir):
    assert render("fig6", data_dir=traces_dir).path.exists()


def test_temp_map_recipe_renders(temp_dir):
    assert render("fig7", data_dir=temp_dir).path.exists()


def test_heatmap_isolines_match_cli_output(sweep_dir):
    recipe = load_recipe("fig4")
    (csv_path,) = resolve_inputs(recipe, sweep_dir)
    meta = load_meta(csv_path)
    cli_lines = [np.asarray(line) for line in meta["zero_isolines"]]
    assert cli_lines, "expected zero crossings in the polarization surface"
    drawn = render(recipe, data_dir=sweep_dir).isolines
    assert drawn, "overlay missing despite zero crossings"

    cli_points = np.concatenate(cli_lines)
    drawn_points = np.concatenate(drawn)
    # tolerance: one grid cell on each axis, from the swept axes themselves
    x_axis, y_axis, _ = pivot_surface(load_table(csv_path), "phi", "eta", "chi")
    cell = np.array([np.diff(x_axis).max(), np.diff(y_axis).max()])

    def within_one_cell(points, reference):
        for p in points:
            gaps = np.abs(reference - p)
            if not np.any((gaps[:, 0] <= cell[0] * 1.001) & (gaps[:, 1] <= cell[1] * 1.001)):
                return False
        return True

    assert within_one_cell(drawn_points, cli_points), "drawn contour strays from CLI isolines"
    assert within_one_cell(cli_points, drawn_points), "CLI isolines not covered by the drawing"
