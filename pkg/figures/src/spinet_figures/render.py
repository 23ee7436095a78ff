"""Turn a recipe plus CSV artifacts into an image file.

Rendering is a pure function of the input bytes and the recipe: no clock,
no network, fixed figure geometry, and the Agg canvas only.  Heatmaps can
overlay the zero level of the mapped surface; the polylines actually drawn
are returned so callers can compare them with the solver's own contour
output.
"""

import dataclasses
from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure
from matplotlib.path import Path as MplPath

from spinet_figures.data import load_table, pivot_surface
from spinet_figures.errors import EmptyData
from spinet_figures.recipes import FigureRecipe, load_recipe, resolve_inputs


@dataclasses.dataclass(frozen=True)
class RenderResult:
    path: Path
    isolines: list | None = None


def render(recipe, data_dir=".", out=None) -> RenderResult:
    """Render *recipe* (a FigureRecipe, file path, or shipped name)."""
    if not isinstance(recipe, FigureRecipe):
        recipe = load_recipe(recipe)
    tables = [load_table(p) for p in resolve_inputs(recipe, data_dir)]
    fig = Figure(figsize=(6.4, 6.4) if recipe.kind == "trace-pair" else (6.4, 4.8), dpi=120)
    FigureCanvasAgg(fig)
    if recipe.kind == "curve":
        isolines = _draw_curve(fig, recipe, tables[0])
    elif recipe.kind in ("heatmap", "temp-map"):
        isolines = _draw_map(fig, recipe, tables[0])
    else:
        isolines = _draw_trace_pair(fig, recipe, tables)
    out_path = Path(out) if out is not None else Path(data_dir) / recipe.out
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path)
    return RenderResult(out_path, isolines)


def _decorate(ax, recipe, x_name, y_name):
    ax.set_xlabel(recipe.x_label if recipe.x_label is not None else x_name)
    ax.set_ylabel(recipe.y_label if recipe.y_label is not None else y_name)
    if recipe.title:
        ax.set_title(recipe.title)
    if recipe.x_range:
        ax.set_xlim(*recipe.x_range)
    if recipe.y_range:
        ax.set_ylim(*recipe.y_range)


def _numeric_columns(table, skip):
    out = []
    for name in table.columns:
        if name in skip:
            continue
        if not np.all(np.isnan(table.numbers(name))):
            out.append(name)
    return out


def _draw_curve(fig, recipe, table):
    ax = fig.add_subplot()
    x_name = recipe.x or table.columns[0]
    xs = table.numbers(x_name)
    y_names = list(recipe.ys) or _numeric_columns(table, {x_name, "error"})
    if not y_names:
        raise EmptyData(table.path, "no numeric columns to plot")
    labels = list(recipe.labels) or y_names
    drew = False
    for name, label in zip(y_names, labels):
        ys = table.numbers(name)
        keep = ~(np.isnan(xs) | np.isnan(ys))
        if keep.any():
            ax.plot(xs[keep], ys[keep], label=label)
            drew = True
    if not drew:
        raise EmptyData(table.path, "all candidate curves are empty")
    if recipe.log_y:
        ax.set_yscale("log")
    if len(y_names) > 1:
        ax.legend()
    _decorate(ax, recipe, x_name, ", ".join(y_names))
    return None


def _draw_map(fig, recipe, table):
    x_name = recipe.x or "phi"
    y_name = recipe.y or ("temperature_k" if recipe.kind == "temp-map" else "eta")
    value = recipe.value or "chi"
    x_axis, y_axis, field = pivot_surface(table, x_name, y_name, value)
    shown = np.abs(field) if recipe.abs_value else field
    ax = fig.add_subplot()
    if recipe.abs_value or not (np.nanmin(shown) < 0.0 < np.nanmax(shown)):
        mesh = ax.pcolormesh(x_axis, y_axis, shown.T, shading="nearest")
    else:
        span = np.nanmax(np.abs(shown))
        mesh = ax.pcolormesh(
            x_axis, y_axis, shown.T, shading="nearest", cmap="RdBu_r", vmin=-span, vmax=span
        )
    fig.colorbar(mesh, ax=ax, label=value)
    isolines = None
    if recipe.isolines:
        contours = ax.contour(
            x_axis, y_axis, field.T, levels=[0.0], colors="black", linewidths=1.0
        )
        isolines = _contour_polylines(contours)
    _decorate(ax, recipe, x_name, y_name)
    return isolines


def _draw_trace_pair(fig, recipe, tables):
    top_ax, bottom_ax = fig.subplots(2, 1, sharex=True)
    labels = list(recipe.labels) or [t.path.stem for t in tables]
    for table, label, style in zip(tables, labels, ("-", "--")):
        ts = table.numbers("t")
        top_ax.plot(ts, table.numbers(recipe.top), style, label=label)
        bottom_ax.plot(ts, table.numbers(recipe.bottom), style, label=label)
    top_ax.set_ylabel(recipe.top)
    top_ax.legend()
    bottom_ax.set_ylabel(recipe.bottom)
    _decorate(bottom_ax, recipe, "t", recipe.bottom)
    if recipe.title:
        top_ax.set_title(recipe.title)
        bottom_ax.set_title("")
    return None


def _contour_polylines(contours):
    """The drawn zero-level contour as a list of (k, 2) vertex arrays."""
    lines = []
    for path in contours.get_paths():
        verts = np.asarray(path.vertices)
        codes = path.codes
        if codes is None:
            if len(verts) > 1:
                lines.append(verts)
            continue
        start = None
        for k, code in enumerate(codes):
            if code == MplPath.MOVETO:
                if start is not None and k - start > 1:
                    lines.append(verts[start:k])
                start = k
            elif code == MplPath.CLOSEPOLY:
                if start is not None and k - start > 1:
                    lines.append(verts[start:k])
                start = None
        if start is not None and len(verts) - start > 1:
            lines.append(verts[start:])
    return lines
