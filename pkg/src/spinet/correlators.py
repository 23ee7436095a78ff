"""Closed-form Gaussian correlation functions for Duschinskii systems.

Everything here evaluates thermal traces of products of harmonic
propagators with complex exponential couplings, in closed form.  With
``x_g = S x_e + d`` and the diagonal kernels a, b of :mod:`spinet.numerics`
define, for the equilibrium function of the time difference tau,

    A = a_e(-tau - i beta) + S^T a_g(tau) S
    B = b_e(-tau - i beta) + S^T b_g(tau) S
    E = (b_e - a_e)(-tau - i beta)        G = (b_g - a_g)(tau)

and then

    C(tau) = (1/Z) sqrt( det a_e(-tau-i beta) det a_g(tau)
                         / (det(B+A) det(B-A)) )
             exp( i [ d^T G S (B-A)^{-1} E S^T d  -  W^T (B+A)^{-1} W ] )

where Z is the excited-surface partition function.  The determinant
denominator is usually written det(B) det(B - A B^{-1} A); eliminating the
block matrix [[B, A], [A, B]] two different ways shows this equals
det(B+A) det(B-A) for any square blocks, so the prefactor shares the two
factorizations the exponent already needs.

The nonequilibrium function of two times (t1 >= t2, tau = t1 - t2) is

    C(t1, t2) = (1/Z_g) sqrt( det[a_g(-i beta) a_e(-t1) a_g(tau) a_e(t2)]
                              / det Sigma )
                exp( i d^T (G_beta + G) d - (i/2) v^T Sigma^{-1} v )

with Z_g the ground-surface partition function, G_beta = (b_g - a_g)(-i
beta), Sigma the symmetric 4n x 4n block matrix assembled in
:meth:`_NeqEvaluator._assemble`, and

    v = [ S^T G_beta d ; S^T G_beta d ; S^T G d - W ; S^T G d + W ].

Flipping the sign of W flips the sign of only the cross term of the
quadratic form, so both spin channels share all factorizations.

At t2 = 0 the fourth propagator degenerates to the identity: a_e(t2) and
b_e(t2) diverge like 1/(i t2) while their difference stays finite, which
pins the difference of the first and fourth integration blocks and merges
Sigma into the 3n x 3n form assembled in
:meth:`_NeqEvaluator._boundary_pieces`.  The divergent factors cancel
exactly between the numerator and det Sigma, so the boundary column is
evaluated in closed form rather than at a small-t2 stand-in (whose
conditioning degrades like 1/t2).

Branch policy: both C's are square roots of determinant ratios, carried in
log-magnitude/phase form.  Each evaluation path starts at a small inset
delta = 1e-4 * dt from the analytic anchor (tau = 0, where C = 1), the
determinant-ratio phase is continued along the path with bisection
refinement, and the residual two-valuedness of the square root is resolved
by requiring the anchor value to land near +1.  Stored grids place exact
1.0 at tau = 0 / on the diagonal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg.lapack import zgesv

from .errors import SingularMatrix
from .model import DuschinskiiSystem
from .numerics import (
    DiagonalSpectrum,
    continued_phase_path,
    kernel_a,
    kernel_b,
    kernel_b_minus_a,
    kernel_b_plus_a,
    wrap_phase,
)

__all__ = [
    "EqKernelSet",
    "NeqKernelSet",
    "CorrelationGrid",
    "partition_function",
    "eq_kernels",
    "neq_kernels",
    "eq_correlation",
    "eq_correlation_grid",
    "neq_correlation",
    "neq_correlation_grid",
    "neq_correlation_grids",
]

# Fraction of a grid step used as the inset from singular anchor points.
_ANCHOR_INSET = 1e-4

# Soft memory budget for batched Sigma stacks, bytes.
_CHUNK_BYTES = 6.0e7

# Soft memory budget for the precomputed Duschinskii-sandwich tables of
# :meth:`_NeqEvaluator.prime_ladder`; past it only the diagonal kernels and
# their log/phase sums are tabulated and sandwiches are rebuilt per row.
_LADDER_BYTES = 2.5e8

# Tail truncation: a row may stop once its magnitude envelope has spent this
# many consecutive nodes below tail_floor times the row peak, and rows are
# evaluated in batches of _TAIL_CHUNK nodes so the stop lands promptly.
_TAIL_RUN = 8
_TAIL_CHUNK = 32

_EQ_BOUND_TOL = 1e-6


def partition_function(omega, beta: float) -> float:
    """Log of the harmonic partition function, log Z = -sum log(2 sinh(beta w/2)).

    Returned in the log domain because Z underflows for large beta*omega;
    exponentiate only if you know the scale is safe.
    """
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    w = omega.frequencies if isinstance(omega, DiagonalSpectrum) else np.atleast_1d(omega)
    x = beta * np.asarray(w, dtype=float)
    return float(-np.sum(0.5 * x + np.log1p(-np.exp(-x))))


def _sandwich(s: np.ndarray, entries: np.ndarray) -> np.ndarray:
    """S^T diag(entries) S, batched over leading axes of ``entries``."""
    return np.einsum("ji,...j,jk->...ik", s, entries, s)


@dataclass(frozen=True)
class EqKernelSet:
    """The four matrices of the equilibrium closed form at one tau."""

    A: np.ndarray
    B: np.ndarray
    E: np.ndarray
    G: np.ndarray
    tau: float

    def __post_init__(self):
        for name in ("A", "B"):
            m = getattr(self, name)
            scale = max(float(np.max(np.abs(m))), 1.0)
            if np.max(np.abs(m - m.T)) > 1e-10 * scale:
                raise ValueError(f"{name} must be symmetric")


@dataclass(frozen=True)
class NeqKernelSet:
    """Sigma and the two G matrices of the nonequilibrium closed form."""

    Sigma: np.ndarray
    G: np.ndarray
    G_beta: np.ndarray
    times: tuple

    def __post_init__(self):
        m = self.Sigma
        scale = max(float(np.max(np.abs(m))), 1.0)
        if np.max(np.abs(m - m.T)) > 1e-10 * scale:
            raise ValueError("Sigma must be symmetric")


@dataclass(frozen=True)
class CorrelationGrid:
    """Sampled correlation values on a uniform time grid.

    ``kind`` is "equilibrium" (1-D in tau) or "nonequilibrium" (2-D in
    (t1, t2), Hermitian).  ``branch_anchor`` is the analytic value at the
    anchor point, always exactly 1.
    """

    kind: str
    axes: tuple
    values: np.ndarray
    branch_anchor: complex = 1.0 + 0.0j

    def __post_init__(self):
        if self.kind not in ("equilibrium", "nonequilibrium"):
            raise ValueError(f"unknown grid kind {self.kind!r}")
        axes = tuple(np.asarray(ax, dtype=float) for ax in self.axes)
        values = np.asarray(self.values, dtype=complex)
        if values.shape != tuple(len(ax) for ax in axes):
            raise ValueError("values shape must match axes")
        if not np.all(np.isfinite(values)):
            raise ValueError("correlation values must be finite")
        if abs(self.branch_anchor - 1.0) > 1e-8:
            raise ValueError("branch anchor must equal 1 within 1e-8")
        if self.kind == "equilibrium":
            if len(axes) != 1:
                raise ValueError("equilibrium grids are one-dimensional")
            over = np.max(np.abs(values)) - 1.0
            if over > _EQ_BOUND_TOL:
                raise ValueError(
                    f"|C| exceeds the thermal bound by {over:.3e}; branch tracking failed"
                )
        elif len(axes) != 2:
            raise ValueError("nonequilibrium grids are two-dimensional")
        for ax in axes:
            ax.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "values", values)


def _validate_uniform_times(times) -> float:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2:
        raise ValueError("need a 1-D grid of at least two times")
    if times[0] != 0.0:
        raise ValueError("time grids must start at 0")
    steps = np.diff(times)
    dt = steps[0]
    if dt <= 0 or not np.allclose(steps, dt, rtol=1e-9, atol=0):
        raise ValueError("time grid must be uniform and ascending")
    return float(dt)


def _add_diag(stack: np.ndarray, offset: int, entries: np.ndarray, n: int):
    idx = offset + np.arange(n)
    stack[..., idx, idx] += entries


class _EqEvaluator:
    """Batched equilibrium C(tau) along an ascending positive-tau path."""

    def __init__(self, sys: DuschinskiiSystem, beta: float):
        if beta <= 0:
            raise ValueError(f"beta must be positive, got {beta}")
        self._sys = sys
        self._beta = beta
        self._log_z = partition_function(sys.omega_e, beta)
        self._std = sys.S.T @ sys.d
        chunk = int(_CHUNK_BYTES / (16.0 * sys.n * sys.n)) if sys.n else 1
        self._chunk = max(1, min(chunk, 8192))

    def _pieces(self, taus: np.ndarray):
        sys = self._sys
        s = sys.S
        te = -taus - 1j * self._beta
        ae = kernel_a(sys.omega_e, te)
        ag = kernel_a(sys.omega_g, taus)
        e_diag = kernel_b_minus_a(sys.omega_e, te)
        g_diag = kernel_b_minus_a(sys.omega_g, taus)
        ep_diag = kernel_b_plus_a(sys.omega_e, te)
        gp_diag = kernel_b_plus_a(sys.omega_g, taus)
        n = sys.n
        bma = _sandwich(s, g_diag)
        _add_diag(bma, 0, e_diag, n)
        bpa = _sandwich(s, gp_diag)
        _add_diag(bpa, 0, ep_diag, n)
        sign_m, log_m = np.linalg.slogdet(bma)
        sign_p, log_p = np.linalg.slogdet(bpa)
        if np.any(sign_m == 0) or np.any(sign_p == 0):
            raise SingularMatrix("B -+ A singular along the tau path")
        x_m = np.linalg.solve(bma, (e_diag * self._std)[..., None])[..., 0]
        term1 = np.einsum("...i,...i->...", g_diag * sys.d, np.einsum("ij,...j->...i", s, x_m))
        if np.any(sys.w):
            rhs_w = np.broadcast_to(sys.w.astype(complex), taus.shape + (n,))
            x_p = np.linalg.solve(bpa, rhs_w[..., None])[..., 0]
            term2 = np.einsum("i,...i->...", sys.w, x_p)
        else:
            term2 = np.zeros(taus.shape, dtype=complex)
        with np.errstate(divide="ignore"):
            log_num = np.sum(np.log(np.abs(ae)), axis=-1) + np.sum(np.log(np.abs(ag)), axis=-1)
        ph_num = np.sum(np.angle(ae), axis=-1) + np.sum(np.angle(ag), axis=-1)
        r_log = log_num - log_m - log_p
        r_ph = wrap_phase(ph_num - np.angle(sign_m) - np.angle(sign_p))
        return r_log, r_ph, 1j * (term1 - term2)

    def _phase_at(self, tau: float) -> float:
        return float(self._pieces(np.array([tau]))[1][0])

    def values(self, path: np.ndarray) -> np.ndarray:
        """C along an ascending path of positive taus; path[0] is the anchor."""
        parts = [
            self._pieces(path[k : k + self._chunk]) for k in range(0, len(path), self._chunk)
        ]
        r_log = np.concatenate([p[0] for p in parts])
        r_ph = np.concatenate([p[1] for p in parts])
        expo = np.concatenate([p[2] for p in parts])
        theta = continued_phase_path(path, r_ph, eval_phase=self._phase_at)
        log_c = 0.5 * (r_log + 1j * theta) + expo - self._log_z
        anchor = np.exp(log_c[0])
        if abs(-anchor - 1.0) < abs(anchor - 1.0):
            log_c = log_c + 1j * np.pi  # other square-root sheet
        return np.exp(log_c)


def eq_correlation(sys: DuschinskiiSystem, tau: float, beta: float) -> complex:
    """Equilibrium C(tau) for one tau >= 0 (C(0) = 1 analytically)."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if tau == 0:
        return 1.0 + 0.0j
    ev = _EqEvaluator(sys, beta)
    step_target = 0.2 / sys.max_frequency
    steps = max(16, int(np.ceil(tau / step_target)))
    path = np.linspace(tau / steps * _ANCHOR_INSET, tau, steps + 1)
    return complex(ev.values(path)[-1])


def eq_correlation_grid(sys: DuschinskiiSystem, times, beta: float) -> CorrelationGrid:
    """Equilibrium C on a uniform tau grid starting at 0."""
    times = np.asarray(times, dtype=float)
    dt = _validate_uniform_times(times)
    ev = _EqEvaluator(sys, beta)
    path = np.concatenate([[dt * _ANCHOR_INSET], times[1:]])
    vals = ev.values(path)
    out = np.empty(len(times), dtype=complex)
    out[0] = 1.0
    out[1:] = vals[1:]
    return CorrelationGrid("equilibrium", (times,), out)


def eq_kernels(sys: DuschinskiiSystem, tau: float, beta: float) -> EqKernelSet:
    """The A, B, E, G matrices at one tau, for inspection and testing."""
    s = sys.S
    te = -tau - 1j * beta
    a = np.diag(kernel_a(sys.omega_e, te)) + _sandwich(s, kernel_a(sys.omega_g, tau))
    b = np.diag(kernel_b(sys.omega_e, te)) + _sandwich(s, kernel_b(sys.omega_g, tau))
    e = np.diag(kernel_b_minus_a(sys.omega_e, te))
    g = np.diag(kernel_b_minus_a(sys.omega_g, tau))
    return EqKernelSet(A=a, B=b, E=e, G=g, tau=tau)


class _NeqEvaluator:
    """Batched nonequilibrium C(t1, t2) along rows of constant t1.

    ``form`` selects how the thermal off-diagonal block of Sigma is
    written: "rotated" wraps a_g(-i beta) as S^T (.) S like every other
    ground-frame block; "bare" inserts it without the frame rotation.  The
    two disagree for S != I and the exact-trace oracle arbitrates (the
    rotated form wins); "bare" exists so that test can be stated.
    """

    def __init__(self, sys: DuschinskiiSystem, beta: float, form: str = "rotated"):
        if form not in ("rotated", "bare"):
            raise ValueError(f"unknown Sigma form {form!r}")
        if beta <= 0:
            raise ValueError(f"beta must be positive, got {beta}")
        self._sys = sys
        self._beta = beta
        n = sys.n
        s = sys.S
        self._log_z = partition_function(sys.omega_g, beta)
        a_beta = kernel_a(sys.omega_g, -1j * beta)
        b_beta = kernel_b(sys.omega_g, -1j * beta)
        g_beta = kernel_b_minus_a(sys.omega_g, -1j * beta)
        self._g_beta = g_beta
        self._bbeta_s = _sandwich(s, b_beta)
        self._abeta_block = _sandwich(s, a_beta) if form == "rotated" else np.diag(a_beta)
        with np.errstate(divide="ignore"):
            self._log_abeta = float(np.sum(np.log(np.abs(a_beta))))
        self._ph_abeta = float(np.sum(np.angle(a_beta)))
        sgbd = s.T @ (g_beta * sys.d)
        self._u_thermal = np.concatenate([sgbd, sgbd])
        self._dgbd = complex(np.sum(g_beta * sys.d**2))
        self._wtilde = np.concatenate(
            [np.zeros(n), np.zeros(n), -sys.w, sys.w]
        ).astype(complex)
        chunk = int(_CHUNK_BYTES / (16.0 * (4 * n) ** 2))
        self._chunk = max(1, min(chunk, 8192))
        self._ladder = None

    def prime_ladder(self, dt: float, m: int) -> None:
        """Precompute kernel tables at the grid multiples dt, 2dt, ...

        On a uniform grid every row revisits the same tau = k dt and
        t2 = k dt values, so the expensive per-node pieces (kernels, their
        Duschinskii sandwiches, and log/phase sums) are tabulated once and
        looked up by exact value match.  Off-ladder values (anchor insets,
        bisection midpoints) fall back to direct evaluation, so priming
        never changes a result, only its cost.
        """
        sys = self._sys
        n = sys.n
        vals = dt * np.arange(1, m, dtype=float)
        a_tau = kernel_a(sys.omega_g, vals)
        g_tau = kernel_b_minus_a(sys.omega_g, vals)
        ae = kernel_a(sys.omega_e, vals)
        be = kernel_b(sys.omega_e, vals)
        with np.errstate(divide="ignore"):
            ladder = {
                "dt": dt,
                "vals": vals,
                "a": a_tau,
                "g": g_tau,
                "ae": ae,
                "be": be,
                "log_a": np.sum(np.log(np.abs(a_tau)), axis=-1),
                "ang_a": np.sum(np.angle(a_tau), axis=-1),
                "log_ae": np.sum(np.log(np.abs(ae)), axis=-1),
                "ang_ae": np.sum(np.angle(ae), axis=-1),
            }
        if 2 * len(vals) * n * n * 16 <= _LADDER_BYTES:
            ladder["bs"] = _sandwich(sys.S, a_tau + g_tau)
            ladder["as"] = _sandwich(sys.S, a_tau)
        self._ladder = ladder

    def _ladder_idx(self, vals: np.ndarray) -> np.ndarray | None:
        """Table rows for each value, -1 where the value is off the ladder."""
        lad = self._ladder
        if lad is None:
            return None
        k = np.rint(vals / lad["dt"]).astype(int) - 1
        idx = np.clip(k, 0, len(lad["vals"]) - 1)
        ok = (k >= 0) & (k < len(lad["vals"])) & (vals == lad["vals"][idx])
        return np.where(ok, idx, -1)

    def _gathered(self, keys, vals: np.ndarray, fresh_fn):
        """Ladder lookup of the named tables with direct fill-in of misses."""
        idx = self._ladder_idx(vals)
        if idx is None:
            return fresh_fn(vals)
        lad = self._ladder
        hit = idx >= 0
        if hit.all():
            return tuple(lad[k][idx] for k in keys)
        outs = [
            np.empty((len(vals),) + lad[k].shape[1:], dtype=lad[k].dtype)
            for k in keys
        ]
        fresh = fresh_fn(vals[~hit])
        for out, k, f in zip(outs, keys, fresh):
            out[hit] = lad[k][idx[hit]]
            out[~hit] = f
        return tuple(outs)

    def _fresh_excited(self, vals: np.ndarray):
        ae = kernel_a(self._sys.omega_e, vals)
        be = kernel_b(self._sys.omega_e, vals)
        with np.errstate(divide="ignore"):
            return (
                ae,
                be,
                np.sum(np.log(np.abs(ae)), axis=-1),
                np.sum(np.angle(ae), axis=-1),
            )

    def _fresh_ground(self, vals: np.ndarray):
        sys = self._sys
        a = kernel_a(sys.omega_g, vals)
        g = kernel_b_minus_a(sys.omega_g, vals)
        with np.errstate(divide="ignore"):
            out = (
                a,
                g,
                np.sum(np.log(np.abs(a)), axis=-1),
                np.sum(np.angle(a), axis=-1),
            )
        if self._ladder is None or "bs" in self._ladder:
            out = out + (_sandwich(sys.S, a + g), _sandwich(sys.S, a))
        return out

    def _assemble(self, t1: float, taus: np.ndarray):
        """Sigma stack plus the tau-dependent kernel pieces for one row."""
        sys = self._sys
        s = sys.S
        n = sys.n
        b = len(taus)
        t2 = t1 - taus
        ae_m = kernel_a(sys.omega_e, -t1)
        be_m = kernel_b(sys.omega_e, -t1)
        ae_p, be_p, log_ae, ang_ae = self._gathered(
            ("ae", "be", "log_ae", "ang_ae"), t2, self._fresh_excited
        )
        if self._ladder is None or "bs" in self._ladder:
            a_tau, g_tau, log_a, ang_a, bs_tau, as_tau = self._gathered(
                ("a", "g", "log_a", "ang_a", "bs", "as"), taus, self._fresh_ground
            )
        else:
            # Sandwich tables over the memory cap: gather the diagonal
            # kernels and rebuild the rotated blocks for this row only.
            a_tau, g_tau, log_a, ang_a = self._gathered(
                ("a", "g", "log_a", "ang_a"), taus, self._fresh_ground
            )
            bs_tau = _sandwich(s, a_tau + g_tau)
            as_tau = _sandwich(s, a_tau)
        with np.errstate(divide="ignore"):
            log_num = (
                self._log_abeta + np.sum(np.log(np.abs(ae_m))) + log_a + log_ae
            )
        ph_num = self._ph_abeta + np.sum(np.angle(ae_m)) + ang_a + ang_ae
        sigma = np.zeros((b, 4 * n, 4 * n), dtype=complex)
        blk = [slice(0, n), slice(n, 2 * n), slice(2 * n, 3 * n), slice(3 * n, 4 * n)]
        sigma[:, blk[0], blk[0]] = self._bbeta_s
        _add_diag(sigma, 0, be_p, n)
        sigma[:, blk[1], blk[1]] = self._bbeta_s
        _add_diag(sigma, n, be_m, n)
        sigma[:, blk[2], blk[2]] = bs_tau
        _add_diag(sigma, 2 * n, be_m, n)
        sigma[:, blk[3], blk[3]] = bs_tau
        _add_diag(sigma, 3 * n, be_p, n)
        sigma[:, blk[0], blk[1]] = -self._abeta_block
        sigma[:, blk[1], blk[0]] = -self._abeta_block
        r = np.arange(n)
        sigma[:, n + r, 2 * n + r] = -ae_m
        sigma[:, 2 * n + r, n + r] = -ae_m
        sigma[:, blk[2], blk[3]] = -as_tau
        sigma[:, blk[3], blk[2]] = -as_tau
        sigma[:, r, 3 * n + r] = -ae_p
        sigma[:, 3 * n + r, r] = -ae_p
        return sigma, g_tau, log_num, ph_num

    def _solve_with_det(self, sigma: np.ndarray, rhs: np.ndarray, t1: float):
        """Sigma^{-1} rhs plus log|det| and det phase, one LU per matrix.

        One factorization serves both the solve and the determinant, where
        solve + slogdet would factor Sigma twice.
        """
        b, nn = sigma.shape[:2]
        sol = np.empty_like(rhs)
        logdet = np.empty(b)
        ph_det = np.empty(b)
        rows = np.arange(nn)
        for k in range(b):
            lu, piv, x, info = zgesv(sigma[k], rhs[k])
            if info != 0:
                raise SingularMatrix(f"Sigma singular on the row t1 = {t1}")
            sol[k] = x
            diag = np.diagonal(lu)
            logdet[k] = np.sum(np.log(np.abs(diag)))
            ph_det[k] = np.sum(np.angle(diag)) + np.pi * (
                np.count_nonzero(piv != rows) & 1
            )
        return sol, logdet, ph_det

    def _forms(self, u: np.ndarray, wt: np.ndarray, sol: np.ndarray, g_tau):
        """The exponent pieces shared by the row and boundary evaluations."""
        quu = np.einsum("bi,bi->b", u, sol[..., 0])
        quw = np.einsum("i,bi->b", wt, sol[..., 0])
        qww = np.einsum("i,bi->b", wt, sol[..., 1])
        base = (
            1j * (self._dgbd + np.einsum("bi,i->b", g_tau, self._sys.d**2))
            - 0.5j * (quu + qww)
        )
        return base, -1j * quw

    def _pieces(self, t1: float, taus: np.ndarray):
        sys = self._sys
        n = sys.n
        b = len(taus)
        sigma, g_tau, log_num, ph_num = self._assemble(t1, taus)
        sgd = (g_tau * sys.d) @ sys.S
        u = np.concatenate(
            [np.broadcast_to(self._u_thermal, (b, 2 * n)), sgd, sgd], axis=1
        )
        rhs = np.stack([u, np.broadcast_to(self._wtilde, (b, 4 * n))], axis=-1)
        sol, logdet, ph_det = self._solve_with_det(sigma, rhs, t1)
        r_log = log_num - logdet
        r_ph = wrap_phase(ph_num - ph_det)
        base, cross = self._forms(u, self._wtilde, sol, g_tau)
        return r_log, r_ph, base, cross

    def _boundary_pieces(self, t1s: np.ndarray):
        """Exact C(t1, 0) pieces from the merged 3n x 3n Sigma.

        Pinning the difference of the first and fourth blocks of the full
        Sigma at t2 = 0 leaves their sum coordinate, so the four-block
        structure collapses to [sum, second, third]; the divergent
        (b+a)_e(t2) factors cancel against the a_e(t2) numerator product
        and drop out entirely.
        """
        sys = self._sys
        s = sys.S
        n = sys.n
        b = len(t1s)
        ae_m = kernel_a(sys.omega_e, -t1s)
        be_m = kernel_b(sys.omega_e, -t1s)
        a_tau = kernel_a(sys.omega_g, t1s)
        g_tau = kernel_b_minus_a(sys.omega_g, t1s)
        bs_tau = _sandwich(s, a_tau + g_tau)
        as_tau = _sandwich(s, a_tau)
        sigma = np.zeros((b, 3 * n, 3 * n), dtype=complex)
        blk = [slice(0, n), slice(n, 2 * n), slice(2 * n, 3 * n)]
        sigma[:, blk[0], blk[0]] = self._bbeta_s + bs_tau
        sigma[:, blk[1], blk[1]] = self._bbeta_s
        _add_diag(sigma, n, be_m, n)
        sigma[:, blk[2], blk[2]] = bs_tau
        _add_diag(sigma, 2 * n, be_m, n)
        sigma[:, blk[0], blk[1]] = -self._abeta_block
        sigma[:, blk[1], blk[0]] = -self._abeta_block
        sigma[:, blk[0], blk[2]] = -as_tau
        sigma[:, blk[2], blk[0]] = -as_tau
        r = np.arange(n)
        sigma[:, n + r, 2 * n + r] = -ae_m
        sigma[:, 2 * n + r, n + r] = -ae_m
        sgbd = self._u_thermal[:n]
        sgd = (g_tau * sys.d) @ s
        u = np.concatenate(
            [sgd + sgbd, np.broadcast_to(sgbd, (b, n)), sgd], axis=1
        )
        wt = np.concatenate([sys.w, np.zeros(n), -sys.w]).astype(complex)
        rhs = np.stack([u, np.broadcast_to(wt, (b, 3 * n))], axis=-1)
        sol, logdet, ph_det = self._solve_with_det(sigma, rhs, float(t1s[-1]))
        with np.errstate(divide="ignore"):
            log_num = (
                self._log_abeta
                + np.sum(np.log(np.abs(ae_m)), axis=-1)
                + np.sum(np.log(np.abs(a_tau)), axis=-1)
            )
        ph_num = (
            self._ph_abeta
            + np.sum(np.angle(ae_m), axis=-1)
            + np.sum(np.angle(a_tau), axis=-1)
        )
        r_log = log_num - logdet
        r_ph = wrap_phase(ph_num - ph_det)
        base, cross = self._forms(u, wt, sol, g_tau)
        return r_log, r_ph, base, cross

    def _pieces_until_dead(self, t1: float, path: np.ndarray, tail_floor: float):
        """Evaluate ``path`` in small batches, stopping in the dead tail.

        The envelope max(|C_+|, |C_-|) = exp(r_log/2 - log Z + Re(base) +
        |Re(cross)|) is tracked against the running row peak; once the
        trailing _TAIL_RUN nodes all sit below tail_floor * peak the rest of
        the row cannot contribute above roundoff and evaluation stops.
        """
        log_floor = math.log(tail_floor)
        parts = []
        peak = -math.inf
        run = 0
        chunk = min(self._chunk, _TAIL_CHUNK)
        for k in range(0, len(path), chunk):
            piece = self._pieces(t1, path[k : k + chunk])
            parts.append(piece)
            log_mag = (
                0.5 * piece[0] - self._log_z + piece[2].real + np.abs(piece[3].real)
            )
            for value in log_mag:
                peak = max(peak, value)
                run = run + 1 if value < peak + log_floor else 0
            if run >= _TAIL_RUN:
                break
        return parts

    def row_values(
        self,
        t1: float,
        path: np.ndarray,
        soc_signs: Sequence[float],
        tail_floor: float | None = None,
    ):
        """C(t1, t1 - tau) for each tau in ``path`` and each W sign.

        ``path`` ascends from the near-diagonal anchor; returns one array
        per entry of ``soc_signs`` (each +-1), sharing every factorization.

        With ``tail_floor`` set, evaluation stops once the magnitude
        envelope (covering both W signs) has stayed below ``tail_floor``
        times the row's running peak for ``_TAIL_RUN`` consecutive nodes;
        the returned rows are then shorter than ``path``.  Rows that never
        decay that far are computed in full, so the option is inert on
        order-one systems and only trims quadrature cells whose weight is
        below roundoff on strongly displaced ones.
        """
        if tail_floor is None:
            parts = [
                self._pieces(t1, path[k : k + self._chunk])
                for k in range(0, len(path), self._chunk)
            ]
        else:
            parts = self._pieces_until_dead(t1, path, tail_floor)
            path = path[: sum(len(p[0]) for p in parts)]
        r_log = np.concatenate([p[0] for p in parts])
        r_ph = np.concatenate([p[1] for p in parts])
        base = np.concatenate([p[2] for p in parts])
        cross = np.concatenate([p[3] for p in parts])
        theta = continued_phase_path(
            path, r_ph, eval_phase=lambda tau: float(self._pieces(t1, np.array([tau]))[1][0])
        )
        half = 0.5 * (r_log + 1j * theta) - self._log_z
        flip = None
        rows = []
        for sign in soc_signs:
            if sign not in (-1.0, 1.0, -1, 1):
                raise ValueError("soc_signs entries must be +-1")
            log_c = half + base + sign * cross
            if flip is None:
                anchor = np.exp(log_c[0])
                flip = abs(-anchor - 1.0) < abs(anchor - 1.0)
            if flip:
                log_c = log_c + 1j * np.pi
            rows.append(np.exp(log_c))
        return rows

    def boundary_values(self, path: np.ndarray, soc_signs: Sequence[float]):
        """C(t1, 0) for each t1 in ``path`` and each W sign.

        ``path`` ascends from a near-zero anchor where C = 1; branch
        continuation and the square-root sheet are resolved exactly as for
        :meth:`row_values`, only on the merged boundary form.
        """
        parts = [
            self._boundary_pieces(path[k : k + self._chunk])
            for k in range(0, len(path), self._chunk)
        ]
        r_log = np.concatenate([p[0] for p in parts])
        r_ph = np.concatenate([p[1] for p in parts])
        base = np.concatenate([p[2] for p in parts])
        cross = np.concatenate([p[3] for p in parts])
        theta = continued_phase_path(
            path,
            r_ph,
            eval_phase=lambda t: float(self._boundary_pieces(np.array([t]))[1][0]),
        )
        half = 0.5 * (r_log + 1j * theta) - self._log_z
        flip = None
        rows = []
        for sign in soc_signs:
            if sign not in (-1.0, 1.0, -1, 1):
                raise ValueError("soc_signs entries must be +-1")
            log_c = half + base + sign * cross
            if flip is None:
                anchor = np.exp(log_c[0])
                flip = abs(-anchor - 1.0) < abs(anchor - 1.0)
            if flip:
                log_c = log_c + 1j * np.pi
            rows.append(np.exp(log_c))
        return rows


def neq_correlation(
    sys: DuschinskiiSystem, t1: float, t2: float, beta: float, form: str = "rotated"
) -> complex:
    """Nonequilibrium C(t1, t2) at one time pair.

    Hermitian symmetry supplies t2 > t1; the t2 = 0 boundary uses the
    merged closed form.
    """
    if t1 < 0 or t2 < 0:
        raise ValueError("times must be nonnegative")
    if t1 == t2:
        return 1.0 + 0.0j
    if t2 > t1:
        return complex(np.conj(neq_correlation(sys, t2, t1, beta, form)))
    ev = _NeqEvaluator(sys, beta, form)
    step_target = 0.2 / sys.max_frequency
    steps = max(16, int(np.ceil((t1 - t2) / step_target)))
    step = (t1 - t2) / steps
    if t2 == 0:
        path = np.linspace(step * _ANCHOR_INSET, t1, steps + 1)
        return complex(ev.boundary_values(path, (1.0,))[0][-1])
    path = np.linspace(step * _ANCHOR_INSET, t1 - t2, steps + 1)
    return complex(ev.row_values(t1, path, (1.0,))[0][-1])


def neq_correlation_grids(
    sys: DuschinskiiSystem,
    times,
    beta: float,
    soc_signs: Sequence[float] = (1.0,),
    form: str = "rotated",
    tail_floor: float | None = None,
):
    """Nonequilibrium C on the full (t1, t2) square for each W sign.

    The lower triangle (t1 > t2) is evaluated row by row — each row is one
    branch-continuation unit — the t2 = 0 column comes from the merged
    boundary form, and the upper triangle is filled by Hermitian symmetry.
    Rows share Sigma factorizations across the signs in ``soc_signs``, so
    a spin-up/spin-down pair costs barely more than a single channel.
    Returns a tuple of :class:`CorrelationGrid`.

    ``tail_floor`` (e.g. 1e-16) lets each row stop once |C| has decayed
    that far below the row's peak; the skipped far-off-diagonal cells are
    stored as exact zeros.  Strongly displaced systems whose correlation
    collapses within a fraction of the grid then cost a ridge's worth of
    Sigma solves instead of the full square, while systems whose C never
    decays are unaffected.
    """
    times = np.asarray(times, dtype=float)
    dt = _validate_uniform_times(times)
    ev = _NeqEvaluator(sys, beta, form)
    ev.prime_ladder(dt, len(times))
    m = len(times)
    delta = dt * _ANCHOR_INSET
    grids = [np.zeros((m, m), dtype=complex) for _ in soc_signs]
    for grid in grids:
        np.fill_diagonal(grid, 1.0)
    for i in range(2, m):
        t1 = times[i]
        path = np.concatenate([[delta], dt * np.arange(1, i)])
        rows = ev.row_values(t1, path, soc_signs, tail_floor=tail_floor)
        for grid, row in zip(grids, rows):
            grid[i, i - 1 :: -1][: len(row) - 1] = row[1:]
    boundary = ev.boundary_values(np.concatenate([[delta], times[1:]]), soc_signs)
    for grid, col in zip(grids, boundary):
        grid[1:, 0] = col[1:]
    iu = np.triu_indices(m, k=1)
    for grid in grids:
        grid[iu] = np.conj(grid.T[iu])
    return tuple(
        CorrelationGrid("nonequilibrium", (times, times), grid) for grid in grids
    )


def neq_correlation_grid(
    sys: DuschinskiiSystem, times, beta: float, form: str = "rotated"
) -> CorrelationGrid:
    """Single-channel convenience wrapper around :func:`neq_correlation_grids`."""
    return neq_correlation_grids(sys, times, beta, (1.0,), form)[0]


def neq_kernels(
    sys: DuschinskiiSystem, t1: float, t2: float, beta: float, form: str = "rotated"
) -> NeqKernelSet:
    """Sigma, G and G_beta at one (t1, t2), for inspection and testing."""
    if not t1 > t2 >= 0:
        raise ValueError("need t1 > t2 >= 0")
    ev = _NeqEvaluator(sys, beta, form)
    tau = np.array([t1 - t2])
    sigma, g_tau, _, _ = ev._assemble(t1, tau)
    return NeqKernelSet(
        Sigma=sigma[0],
        G=np.diag(g_tau[0]),
        G_beta=np.diag(ev._g_beta),
        times=(t1, t2),
    )
