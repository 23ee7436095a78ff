"""Time-domain quadrature: populations, rates, polarization, sweeps.

Second-order (golden-rule) populations are double time integrals of the
correlation functions from :mod:`spinet.correlators`:

* equilibrium:    P_g(t) = 2|V|^2 Re int_0^t dt' int_0^{t'} dtau e^{-i dG tau} C(tau)
* nonequilibrium: P_g(t) = |V|^2 int_0^t dt' int_0^t dt'' e^{-i dG (t'-t'')} C(t', t'')

Both are evaluated with uniform cumulative trapezoid rules so one correlation
grid yields the whole population trace.  The correlation function itself does
not depend on dG, so Marcus-style driving-force scans reuse a single grid.

Spin polarization compares the +W and -W runs of the same system; both
channels share every matrix factorization through the ``soc_signs`` batch
interface of the correlator evaluator.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .correlators import eq_correlation_grid, neq_correlation_grids
from .errors import (
    NonconvergedRate,
    PerturbationBreakdown,
    PhysicsError,
    ValidationError,
)
from .model import LangevinSpec, assemble_langevin, reduce_to_normal_modes

__all__ = [
    "TimeGrid",
    "PopulationTrace",
    "PolarizationResult",
    "SweepSurface",
    "eq_population",
    "eq_rate",
    "eq_rate_curve",
    "neq_population",
    "polarization_run",
    "sweep",
    "temp_sweep",
    "marcus_rate",
    "parabolic_peak_location",
    "zero_isolines",
]

#: Populations above this value void the second-order treatment.
_BREAKDOWN_LEVEL = 0.5


@dataclass(frozen=True)
class TimeGrid:
    """Uniform quadrature grid on [0, t_max] with ``steps`` intervals."""

    t_max: float
    steps: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.t_max) and self.t_max > 0.0):
            raise ValidationError(f"t_max must be positive and finite, got {self.t_max}")
        if int(self.steps) != self.steps or self.steps < 16:
            raise ValidationError(f"need at least 16 steps, got {self.steps}")
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def dt(self) -> float:
        return self.t_max / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.steps + 1)

    def check_resolution(self, max_frequency: float) -> None:
        """Reject grids too coarse for the fastest mode (dt*omega_max <= 0.5)."""
        if max_frequency > 0.0 and self.dt * max_frequency > 0.5:
            raise ValidationError(
                f"dt={self.dt:g} under-resolves omega_max={max_frequency:g} "
                f"(dt*omega = {self.dt * max_frequency:g} > 0.5)"
            )


@dataclass(frozen=True)
class PopulationTrace:
    """Ground-state population P(t) on a uniform grid; P(0) = 0."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.ndim != 1 or times.shape != values.shape:
            raise ValidationError("times and values must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
            raise ValidationError("population trace contains non-finite entries")
        if abs(values[0]) > 1e-12:
            raise ValidationError(f"P(0) must vanish, got {values[0]:g}")
        if np.any(values < -1e-9):
            raise ValidationError(f"negative population {values.min():g} beyond tolerance")
        if np.any(values > 1.0 + 1e-6):
            raise ValidationError(f"population {values.max():g} exceeds 1")
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def final_value(self) -> float:
        return float(self.values[-1])


@dataclass(frozen=True)
class PolarizationResult:
    """Paired +W/-W populations with chi = (P+ - P-)/(P+ + P-)."""

    up: PopulationTrace
    down: PopulationTrace
    chi: np.ndarray
    pg: np.ndarray

    def __post_init__(self) -> None:
        if self.up.times.shape != self.down.times.shape:
            raise ValidationError("up/down traces live on different grids")
        chi = np.asarray(self.chi, dtype=float)
        pg = np.asarray(self.pg, dtype=float)
        if np.any(np.abs(chi) > 1.0 + 1e-9):
            raise ValidationError("polarization outside [-1, 1]")
        chi.setflags(write=False)
        pg.setflags(write=False)
        object.__setattr__(self, "chi", chi)
        object.__setattr__(self, "pg", pg)

    @property
    def headline_chi(self) -> float:
        """chi at the final grid time (the reporting convention)."""
        return float(self.chi[-1])

    @property
    def headline_pg(self) -> float:
        return float(self.pg[-1])


@dataclass(frozen=True)
class SweepSurface:
    """chi and population surfaces over a 2-D parameter grid.

    ``chi_surface[i, j]`` belongs to ``(phi_axis[i], eta_axis[j])``.  For
    temperature sweeps the second axis holds inverse temperatures and
    ``eta_label`` says so.  Failed cells are NaN, never an abort.
    """

    phi_axis: np.ndarray
    eta_axis: np.ndarray
    chi_surface: np.ndarray
    pg_surface: np.ndarray
    metadata: dict
    eta_label: str = "eta"

    def __post_init__(self) -> None:
        phi = np.asarray(self.phi_axis, dtype=float)
        eta = np.asarray(self.eta_axis, dtype=float)
        chi = np.asarray(self.chi_surface, dtype=float)
        pg = np.asarray(self.pg_surface, dtype=float)
        if chi.shape != (phi.size, eta.size) or pg.shape != chi.shape:
            raise ValidationError("surface shapes do not match the axes")
        for arr in (phi, eta, chi, pg):
            arr.setflags(write=False)
        object.__setattr__(self, "phi_axis", phi)
        object.__setattr__(self, "eta_axis", eta)
        object.__setattr__(self, "chi_surface", chi)
        object.__setattr__(self, "pg_surface", pg)

    @property
    def n_missing(self) -> int:
        return int(np.count_nonzero(~np.isfinite(self.chi_surface)))

    def zero_isolines(self) -> list[np.ndarray]:
        return zero_isolines(self.phi_axis, self.eta_axis, self.chi_surface)


# ---------------------------------------------------------------------------
# equilibrium populations and rates


def _eq_trace_from_corr(times: np.ndarray, corr: np.ndarray, delta_g: float,
                        v: complex) -> np.ndarray:
    """2|V|^2 Re of the nested trapezoid of e^{-i dG tau} C(tau)."""
    dt = times[1] - times[0]
    f = np.exp(-1j * delta_g * times) * corr
    inner = cumulative_trapezoid(f, dx=dt, initial=0.0)
    outer = cumulative_trapezoid(inner, dx=dt, initial=0.0)
    return 2.0 * abs(v) ** 2 * outer.real


def eq_population(sys, beta: float, grid: TimeGrid) -> PopulationTrace:
    """Equilibrium golden-rule ground-state population on *grid*."""
    grid.check_resolution(sys.max_frequency)
    times = grid.times
    corr = eq_correlation_grid(sys, times, beta).values
    p = _eq_trace_from_corr(times, corr, sys.delta_g, sys.v)
    if np.any(p > _BREAKDOWN_LEVEL):
        raise PerturbationBreakdown(
            f"P_g reaches {p.max():.3g}; second-order treatment invalid beyond "
            f"{_BREAKDOWN_LEVEL}"
        )
    return PopulationTrace(times, p)


def _window_slope(times: np.ndarray, values: np.ndarray, lo: float, hi: float) -> float:
    """Least-squares slope of values(t) over the fractional window [lo, hi]."""
    t0, t1 = times[-1] * lo, times[-1] * hi
    sel = (times >= t0) & (times <= t1)
    if np.count_nonzero(sel) < 2:
        raise ValidationError("rate window contains fewer than two samples")
    return float(np.polyfit(times[sel], values[sel], 1)[0])


def _rate_from_trace(trace: PopulationTrace) -> float:
    """Slope over the final 20%, with a two-window agreement check."""
    s_final = _window_slope(trace.times, trace.values, 0.8, 1.0)
    s_prev = _window_slope(trace.times, trace.values, 0.6, 0.8)
    scale = max(abs(s_final), abs(s_prev))
    if scale > 0.0 and abs(s_final - s_prev) > 0.05 * scale:
        raise NonconvergedRate(
            f"window slopes disagree: {s_prev:.6g} vs {s_final:.6g} "
            f"({abs(s_final - s_prev) / scale:.1%})"
        )
    return max(s_final, 0.0)


def eq_rate(sys, beta: float, grid: TimeGrid | None = None) -> float:
    """Asymptotic growth rate of the equilibrium population (a.u.)."""
    if grid is None:
        grid = TimeGrid(25000.0, 1000)
    return _rate_from_trace(eq_population(sys, beta, grid))


def eq_rate_curve(sys, beta: float, delta_g_values, grid: TimeGrid | None = None,
                  on_error: str = "raise", errors: list | None = None) -> np.ndarray:
    """Rates across a driving-force scan, reusing one correlation grid.

    C(tau) does not depend on dG, so the scan costs one correlator evaluation
    plus a cheap re-phasing per dG value.  With ``on_error="record"``,
    per-point physics failures leave NaN entries instead of aborting the scan
    (the messages land in the optional ``errors`` list passed by keyword).
    """
    return _eq_rate_scan(sys, beta, delta_g_values, grid, on_error, errors)


def _eq_rate_scan(sys, beta, delta_g_values, grid, on_error, errors) -> np.ndarray:
    if on_error not in ("raise", "record"):
        raise ValidationError(f"on_error must be 'raise' or 'record', got {on_error!r}")
    if grid is None:
        grid = TimeGrid(25000.0, 1000)
    grid.check_resolution(sys.max_frequency)
    times = grid.times
    corr = eq_correlation_grid(sys, times, beta).values
    delta_g_values = np.atleast_1d(np.asarray(list(delta_g_values), dtype=float))
    rates = np.empty(len(delta_g_values))
    for k, dg in enumerate(delta_g_values):
        try:
            p = _eq_trace_from_corr(times, corr, float(dg), sys.v)
            if np.any(p > _BREAKDOWN_LEVEL):
                raise PerturbationBreakdown(f"P_g reaches {p.max():.3g} at dG={dg:g}")
            rates[k] = _rate_from_trace(PopulationTrace(times, p))
        except PhysicsError as err:
            if on_error == "raise":
                raise
            rates[k] = math.nan
            if errors is not None:
                errors.append((k, f"{type(err).__name__}: {err}"))
    return rates


# ---------------------------------------------------------------------------
# nonequilibrium populations


def _cumulative_square_trapezoid(f: np.ndarray) -> np.ndarray:
    """Trapezoid weights over growing squares [0,k]x[0,k] of a sampled field.

    Returns T with T[k] = sum of trapezoid-weighted f over the square; the
    separable trapezoid weight is 1 in the interior, 1/2 on edges, 1/4 on
    corners.  Everything comes from cumulative sums, so the full trace costs
    O(m^2) like a single pass over f.
    """
    full = np.cumsum(np.cumsum(f, axis=0), axis=1)
    diag_full = np.diagonal(full)
    row0 = np.cumsum(f[0, :])
    col0 = np.cumsum(f[:, 0])
    rows = np.diagonal(np.cumsum(f, axis=1))   # sum_j<=k f[k, j]
    cols = np.diagonal(np.cumsum(f, axis=0))   # sum_i<=k f[i, k]
    corners = f[0, 0] + f[0, :].copy() + f[:, 0] + np.diagonal(f)
    return diag_full - 0.5 * (row0 + col0 + rows + cols) + 0.25 * corners


# Correlation rows in the population quadrature may stop once |C| has fallen
# this far below the row peak; the discarded cells are below roundoff in the
# double integral, and rows that never decay are computed in full.
_TAIL_FLOOR = 1e-16


def _neq_traces(sys, beta: float, grid: TimeGrid, soc_signs) -> list[PopulationTrace]:
    """Population traces for each SOC sign channel, sharing the heavy solves."""
    grid.check_resolution(sys.max_frequency)
    times = grid.times
    dt = grid.dt
    grids = neq_correlation_grids(
        sys, times, beta, soc_signs=tuple(soc_signs), tail_floor=_TAIL_FLOOR
    )
    pe = np.exp(-1j * sys.delta_g * times)
    traces = []
    for cg in grids:
        f = (pe[:, None] * cg.values) * np.conj(pe)[None, :]
        t_sq = _cumulative_square_trapezoid(f)
        p_complex = abs(sys.v) ** 2 * dt * dt * t_sq
        p = p_complex.real
        worst = np.max(np.abs(p_complex.imag))
        if worst > 1e-6 * max(np.max(np.abs(p)), 1e-300):
            warnings.warn(
                f"population double integral has residual imaginary part {worst:.3g}",
                stacklevel=2,
            )
        if np.any(p > _BREAKDOWN_LEVEL):
            raise PerturbationBreakdown(
                f"P_g reaches {p.max():.3g}; second-order treatment invalid"
            )
        # the k=0 square is a single point with zero net weight
        p[0] = 0.0
        traces.append(PopulationTrace(times, p))
    return traces


def neq_population(sys, beta: float, grid: TimeGrid) -> PopulationTrace:
    """Ground-state population after photoexcitation (single SOC channel)."""
    return _neq_traces(sys, beta, grid, (1.0,))[0]


def polarization_run(spec: LangevinSpec, grid: TimeGrid) -> PolarizationResult:
    """+W and -W populations of the same Langevin model, and their contrast.

    The two spin channels differ only in the sign of W, so they share every
    Sigma factorization inside the correlator batch.
    """
    sys = reduce_to_normal_modes(assemble_langevin(spec))
    up, down = _neq_traces(sys, spec.beta, grid, (1.0, -1.0))
    total = up.values + down.values
    with np.errstate(invalid="ignore", divide="ignore"):
        chi = np.where(total > 1e-12, (up.values - down.values) / total, 0.0)
    chi = np.clip(chi, -1.0, 1.0)
    pg = 0.5 * total
    return PolarizationResult(up, down, chi, pg)


# ---------------------------------------------------------------------------
# parameter sweeps


def _one_cell(spec: LangevinSpec, grid: TimeGrid) -> tuple[float, float, str | None]:
    try:
        res = polarization_run(spec, grid)
        return res.headline_chi, res.headline_pg, None
    except PhysicsError as err:
        return math.nan, math.nan, f"{type(err).__name__}: {err}"


def _run_cells(specs: list[LangevinSpec], grid: TimeGrid,
               threads: int = 1) -> list[tuple[float, float, str | None]]:
    """polarization_run over a list of specs; failures become NaN cells.

    Cells are independent, so with ``threads > 1`` they run on a thread pool
    (the heavy lifting is in LAPACK calls that release the GIL).  Results are
    assembled in submission order, so the output is identical for any thread
    count.
    """
    if threads > 1 and len(specs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda s: _one_cell(s, grid), specs))
    return [_one_cell(s, grid) for s in specs]


def _assemble_surface(spec, axis_a, axis_b, cells, meta, label) -> SweepSurface:
    chi = np.array([c[0] for c in cells]).reshape(axis_a.size, axis_b.size)
    pg = np.array([c[1] for c in cells]).reshape(axis_a.size, axis_b.size)
    meta["cell_errors"] = [
        [k // axis_b.size, k % axis_b.size, c[2]]
        for k, c in enumerate(cells)
        if c[2] is not None
    ]
    return SweepSurface(axis_a, axis_b, chi, pg, meta, eta_label=label)


def sweep(spec: LangevinSpec, phi_axis, eta_axis, grid: TimeGrid,
          threads: int = 1) -> SweepSurface:
    """Map polarization over a (phi, eta) grid; failed cells are recorded NaN."""
    phi_axis = np.atleast_1d(np.asarray(phi_axis, dtype=float))
    eta_axis = np.atleast_1d(np.asarray(eta_axis, dtype=float))
    if phi_axis.size == 0 or eta_axis.size == 0:
        raise ValidationError("sweep axes must be nonempty")
    specs = [
        dataclasses.replace(spec, phi=float(phi), eta=float(eta))
        for phi in phi_axis
        for eta in eta_axis
    ]
    cells = _run_cells(specs, grid, threads)
    meta = dataclasses.asdict(spec)
    meta.pop("phi"), meta.pop("eta")
    return _assemble_surface(spec, phi_axis, eta_axis, cells, meta, "eta")


def temp_sweep(spec: LangevinSpec, phi_axis, beta_axis, grid: TimeGrid,
               threads: int = 1) -> SweepSurface:
    """Map polarization over (phi, beta); the second axis holds beta values."""
    phi_axis = np.atleast_1d(np.asarray(phi_axis, dtype=float))
    beta_axis = np.atleast_1d(np.asarray(beta_axis, dtype=float))
    if phi_axis.size == 0 or beta_axis.size == 0:
        raise ValidationError("sweep axes must be nonempty")
    specs = [
        dataclasses.replace(spec, phi=float(phi), beta=float(b))
        for phi in phi_axis
        for b in beta_axis
    ]
    cells = _run_cells(specs, grid, threads)
    meta = dataclasses.asdict(spec)
    meta.pop("phi"), meta.pop("beta")
    return _assemble_surface(spec, phi_axis, beta_axis, cells, meta, "beta")


# ---------------------------------------------------------------------------
# analytic references and small fitting helpers


def marcus_rate(v: complex, e_r: float, delta_g: float, temperature: float) -> float:
    """Classic Marcus rate, k_B = 1: 2pi|V|^2/sqrt(4 pi E_r T) * exp(-(dG+E_r)^2/(4 E_r T))."""
    if not e_r > 0.0:
        raise ValidationError(f"reorganization energy must be positive, got {e_r}")
    if not temperature > 0.0:
        raise ValidationError(f"temperature must be positive, got {temperature}")
    act = (delta_g + e_r) ** 2 / (4.0 * e_r * temperature)
    return 2.0 * math.pi * abs(v) ** 2 / math.sqrt(4.0 * math.pi * e_r * temperature) * math.exp(-act)


def parabolic_peak_location(x, y, half_window: int = 2) -> float:
    """Vertex abscissa of a parabola fitted around the sampled maximum."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or x.shape != y.shape or x.size < 3:
        raise ValidationError("need matching 1-D arrays with at least 3 points")
    k = int(np.argmax(y))
    lo = max(0, k - half_window)
    hi = min(x.size, k + half_window + 1)
    if hi - lo < 3:
        lo, hi = (0, 3) if k < 1 else (x.size - 3, x.size)
    c2, c1, _ = np.polyfit(x[lo:hi], y[lo:hi], 2)
    if c2 >= 0.0:
        raise ValidationError("no concave peak in the fitted window")
    return float(-c1 / (2.0 * c2))


# ---------------------------------------------------------------------------
# zero isolines (marching squares)

# For each cell the four corner signs select which edges the zero contour
# crosses.  Edges are numbered 0: bottom (j, j+1 at i), 1: right (i, i+1 at
# j+1), 2: top (j, j+1 at i+1), 3: left (i, i+1 at j).
_EDGE_TABLE = {
    1: [(3, 0)], 2: [(0, 1)], 3: [(3, 1)], 4: [(1, 2)],
    5: [(3, 0), (1, 2)], 6: [(0, 2)], 7: [(3, 2)], 8: [(2, 3)],
    9: [(0, 2)], 10: [(0, 1), (2, 3)], 11: [(1, 2)], 12: [(1, 3)],
    13: [(0, 1)], 14: [(3, 0)],
}


def _edge_point(edge: int, i: int, j: int, x: np.ndarray, y: np.ndarray,
                f: np.ndarray) -> tuple[float, float]:
    """Linear zero crossing on the given edge of cell (i, j)."""
    if edge == 0:
        a, b = f[i, j], f[i, j + 1]
        t = a / (a - b)
        return x[i], y[j] + t * (y[j + 1] - y[j])
    if edge == 2:
        a, b = f[i + 1, j], f[i + 1, j + 1]
        t = a / (a - b)
        return x[i + 1], y[j] + t * (y[j + 1] - y[j])
    if edge == 3:
        a, b = f[i, j], f[i + 1, j]
        t = a / (a - b)
        return x[i] + t * (x[i + 1] - x[i]), y[j]
    a, b = f[i, j + 1], f[i + 1, j + 1]
    t = a / (a - b)
    return x[i] + t * (x[i + 1] - x[i]), y[j + 1]


def zero_isolines(x_axis, y_axis, field) -> list[np.ndarray]:
    """Zero-level contours of a sampled field by marching squares.

    Returns a list of (k, 2) polylines in (x, y) coordinates.  Cells touching
    NaN samples are skipped, so sweeps with missing cells still contour.
    """
    x = np.asarray(x_axis, dtype=float)
    y = np.asarray(y_axis, dtype=float)
    f = np.asarray(field, dtype=float)
    if f.shape != (x.size, y.size):
        raise ValidationError("field shape does not match the axes")
    segments = []
    for i in range(x.size - 1):
        for j in range(y.size - 1):
            corners = f[i, j], f[i, j + 1], f[i + 1, j + 1], f[i + 1, j]
            if not all(np.isfinite(corners)):
                continue
            code = sum(bit for bit, c in zip((1, 2, 4, 8), corners) if c > 0.0)
            for e0, e1 in _EDGE_TABLE.get(code, ()):
                p0 = _edge_point(e0, i, j, x, y, f)
                p1 = _edge_point(e1, i, j, x, y, f)
                segments.append((p0, p1))
    return _chain_segments(segments)


def _chain_segments(segments: list) -> list[np.ndarray]:
    """Greedily join shared-endpoint segments into polylines."""
    if not segments:
        return []

    def key(p):
        return (round(p[0], 12), round(p[1], 12))

    unused = list(range(len(segments)))
    by_end: dict = {}
    for idx, (p0, p1) in enumerate(segments):
        by_end.setdefault(key(p0), []).append(idx)
        by_end.setdefault(key(p1), []).append(idx)
    used = np.zeros(len(segments), dtype=bool)
    lines = []
    for start in unused:
        if used[start]:
            continue
        used[start] = True
        p0, p1 = segments[start]
        line = [p0, p1]
        for head in (1, 0):
            while True:
                tip = key(line[-1] if head else line[0])
                nxt = next((i for i in by_end.get(tip, []) if not used[i]), None)
                if nxt is None:
                    break
                used[nxt] = True
                q0, q1 = segments[nxt]
                ext = q1 if key(q0) == tip else q0
                if head:
                    line.append(ext)
                else:
                    line.insert(0, ext)
        lines.append(np.asarray(line))
    return lines
