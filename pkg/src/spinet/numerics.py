"""Complex-time harmonic kernels and guarded dense linear algebra.

Every correlation formula in this package is assembled from the two diagonal
kernels of an uncoupled harmonic system,

    a(t) = Omega / sin(Omega t)          b(t) = Omega / tan(Omega t),

evaluated at complex times: real times for dynamics, ``-i*beta`` for thermal
sections, and mixtures of both.  Naive evaluation overflows once
``|Im(t)|*omega`` passes ~700, so ``sin`` and ``cos`` are computed with the
dominant exponential split off,

    sin(u + iv) = e^{|v|} * s~,   cos(u + iv) = e^{|v|} * c~,

and the ``e^{|v|}`` factors are cancelled analytically inside each kernel.
For the same reason determinants never exist here as bare complex numbers:
they are carried as :class:`PhasedDeterminant` (log-magnitude plus phase),
produced either by :class:`LUFactorization` or by the batched helpers the
correlation evaluators use.

The final piece is square-root branch tracking.  The correlation functions
are square roots of determinant ratios, and the principal branch is wrong on
roughly half of any interesting time grid; :func:`continued_phase_path` and
:func:`branch_continued_sqrt` continue the phase along a path, refining by
bisection when neighbouring samples are too far apart to disambiguate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .errors import BranchAmbiguity, SingularKernel, SingularMatrix

__all__ = [
    "DiagonalSpectrum",
    "PhasedDeterminant",
    "LUFactorization",
    "kernel_a",
    "kernel_b",
    "kernel_b_minus_a",
    "kernel_b_plus_a",
    "lu_factor",
    "phased_det",
    "wrap_phase",
    "branch_continued_sqrt",
    "continued_phase_path",
]

# A kernel argument z counts as singular when |sin z| (with its split-off
# exponential restored) falls below ~10 ulps of the argument itself: exact
# zeros of sin land there after float rounding (|sin| ~ eps*|z|), while any
# deliberately resolved near-approach sits far above it.
_SINGULAR_ULPS = 10.0 * np.finfo(float).eps

# Relative pivot threshold for LU singularity detection, scaled by the
# largest row 1-norm of the input matrix.
_PIVOT_RTOL = 1e-14


def wrap_phase(phi):
    """Wrap angles to the interval (-pi, pi]."""
    phi = np.asarray(phi, dtype=float)
    out = -((-phi + np.pi) % (2.0 * np.pi) - np.pi)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class DiagonalSpectrum:
    """Strictly positive normal-mode frequencies, sorted ascending.

    The constructor validates; it never reorders.  An unsorted input is a
    sign that an eigendecomposition upstream went wrong, so it is rejected
    rather than silently fixed.
    """

    frequencies: np.ndarray

    def __post_init__(self):
        freq = np.atleast_1d(np.asarray(self.frequencies, dtype=float)).copy()
        if freq.ndim != 1 or freq.size == 0:
            raise ValueError("frequencies must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(freq)):
            raise ValueError("frequencies must be finite")
        if np.any(freq <= 0.0):
            raise ValueError(f"frequencies must be strictly positive, got min {freq.min()}")
        if np.any(np.diff(freq) < 0.0):
            raise ValueError("frequencies must be sorted ascending")
        freq.setflags(write=False)
        object.__setattr__(self, "frequencies", freq)

    def __len__(self) -> int:
        return int(self.frequencies.size)

    @property
    def max(self) -> float:
        return float(self.frequencies[-1])


@dataclass(frozen=True)
class PhasedDeterminant:
    """A nonzero complex determinant as log-magnitude and phase.

    ``value`` may overflow or underflow float64; the pair never does.  The
    phase is normalized to (-pi, pi].
    """

    log_magnitude: float
    phase: float

    def __post_init__(self):
        if not np.isfinite(self.log_magnitude):
            raise ValueError("log_magnitude must be finite")
        if not np.isfinite(self.phase):
            raise ValueError("phase must be finite")
        object.__setattr__(self, "phase", wrap_phase(self.phase))

    @property
    def value(self) -> complex:
        """The determinant as a plain complex number (may over/underflow)."""
        return complex(np.exp(self.log_magnitude) * np.exp(1j * self.phase))

    def __mul__(self, other: "PhasedDeterminant") -> "PhasedDeterminant":
        if not isinstance(other, PhasedDeterminant):
            return NotImplemented
        return PhasedDeterminant(
            self.log_magnitude + other.log_magnitude, self.phase + other.phase
        )


def _frequencies(omega) -> np.ndarray:
    if isinstance(omega, DiagonalSpectrum):
        return omega.frequencies
    return np.atleast_1d(np.asarray(omega, dtype=float))


def _scaled_sin_cos(z: np.ndarray):
    """Return (s, c, |v|) with sin(z) = s*e^{|v|}, cos(z) = c*e^{|v|}.

    ``z = u + iv``.  Both s and c are O(1); the shared exponential is
    returned separately so callers can cancel it analytically.
    """
    z = np.asarray(z, dtype=complex)
    u = z.real
    v = z.imag
    av = np.abs(v)
    sg = np.sign(v)
    em = np.exp(-2.0 * av)
    s = 0.5 * (np.sin(u) * (1.0 + em) + 1j * sg * np.cos(u) * (1.0 - em))
    c = 0.5 * (np.cos(u) * (1.0 + em) - 1j * sg * np.sin(u) * (1.0 - em))
    return s, c, av


def _check_nonsingular(mag: np.ndarray, av: np.ndarray, z: np.ndarray, what: str):
    """Raise SingularKernel where the (rescaled) trig factor vanishes."""
    z = np.asarray(z)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_true = np.log(mag) + av
        threshold = np.log(_SINGULAR_ULPS * np.maximum(np.abs(z), 1.0))
    bad = ~(log_true > threshold)
    if np.any(bad):
        offender = z[bad].flat[0]
        raise SingularKernel(f"{what} vanishes at omega*t = {offender}")


def _outer_argument(omega, t) -> np.ndarray:
    w = _frequencies(omega)
    t = np.asarray(t, dtype=complex)
    return np.multiply.outer(t, w), w


def kernel_a(omega, t):
    """Diagonal entries of a(t) = Omega / sin(Omega t).

    ``omega`` is a :class:`DiagonalSpectrum` or array of n frequencies;
    ``t`` a complex time or array of times.  The result has shape
    ``t.shape + (n,)``.  Raises :class:`SingularKernel` where
    sin(omega t) = 0 (real t at multiples of pi/omega; never for t with a
    nonzero imaginary part).
    """
    z, w = _outer_argument(omega, t)
    s, _, av = _scaled_sin_cos(z)
    _check_nonsingular(np.abs(s), av, z, "sin(omega*t)")
    return (w / s) * np.exp(-av)


def kernel_b(omega, t):
    """Diagonal entries of b(t) = Omega / tan(Omega t).

    Singular where sin(omega t) = 0, like :func:`kernel_a`.  The
    ``e^{|v|}`` factors of sin and cos cancel, so the ratio is computed
    from the scaled pieces directly.
    """
    z, w = _outer_argument(omega, t)
    s, c, av = _scaled_sin_cos(z)
    _check_nonsingular(np.abs(s), av, z, "sin(omega*t)")
    return w * c / s


def kernel_b_minus_a(omega, t):
    """b(t) - a(t) = -Omega tan(Omega t / 2), evaluated in that stable form.

    Direct subtraction of b and a cancels catastrophically for small
    omega*t; the half-angle form is exact and stays finite through
    omega*t = 2 pi k.  Singular where cos(omega t / 2) = 0 (i.e. at the
    odd multiples of pi/omega, where b and a diverge individually).
    """
    z, w = _outer_argument(omega, t)
    s2, c2, av = _scaled_sin_cos(0.5 * z)
    _check_nonsingular(np.abs(c2), av, z, "cos(omega*t/2)")
    return -w * s2 / c2


def kernel_b_plus_a(omega, t):
    """b(t) + a(t) = Omega / tan(Omega t / 2).

    Singular where sin(omega t / 2) = 0.
    """
    z, w = _outer_argument(omega, t)
    s2, c2, av = _scaled_sin_cos(0.5 * z)
    _check_nonsingular(np.abs(s2), av, z, "sin(omega*t/2)")
    return w * c2 / s2


class LUFactorization:
    """Partial-pivoted LU of a square complex matrix.

    Wraps ``scipy.linalg.lu_factor`` and adds the one policy this package
    needs everywhere: a pivot whose magnitude is at or below
    ``1e-14 * max row 1-norm`` means the matrix is singular for our
    purposes, and that is reported as :class:`SingularMatrix` at
    factorization time instead of surfacing later as a quiet ``inf``.
    """

    def __init__(self, matrix):
        m = np.asarray(matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {m.shape}")
        self.shape = m.shape
        scale = float(np.abs(m).sum(axis=1).max()) if m.size else 0.0
        with warnings.catch_warnings():
            # Exactly singular input raises our own error below; scipy's
            # warning on the way there is just noise.
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            self._lu, self._piv = scipy.linalg.lu_factor(m, check_finite=True)
        pivots = np.abs(np.diagonal(self._lu))
        threshold = _PIVOT_RTOL * scale
        if scale == 0.0 or np.any(pivots <= threshold):
            raise SingularMatrix(
                f"matrix of shape {self.shape} is singular to working precision "
                f"(min pivot {pivots.min() if m.size else 0.0:.3e}, "
                f"threshold {threshold:.3e})"
            )

    def solve(self, rhs) -> np.ndarray:
        """Solve M x = rhs for one or more right-hand sides."""
        return scipy.linalg.lu_solve((self._lu, self._piv), np.asarray(rhs, dtype=complex))

    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.shape[0], dtype=complex))

    def phased_det(self) -> PhasedDeterminant:
        """Determinant in overflow-proof form, from the U diagonal."""
        diag = np.diagonal(self._lu)
        swaps = int(np.count_nonzero(self._piv != np.arange(self.shape[0])))
        log_magnitude = float(np.sum(np.log(np.abs(diag))))
        phase = float(np.sum(np.angle(diag))) + np.pi * swaps
        return PhasedDeterminant(log_magnitude, phase)

    def det(self) -> complex:
        return self.phased_det().value


def lu_factor(matrix) -> LUFactorization:
    """Factor a square complex matrix; raises SingularMatrix on zero pivots."""
    return LUFactorization(matrix)


def phased_det(matrix) -> PhasedDeterminant:
    """Determinant of a square complex matrix in log-magnitude/phase form."""
    return LUFactorization(matrix).phased_det()


def _bridge_phase(
    pos_lo: float,
    pos_hi: float,
    phi_lo: float,
    phi_hi: float,
    eval_phase: Callable[[float], float] | None,
    depth: int,
) -> float:
    """Continuous phase increment from pos_lo to pos_hi.

    Phases are only known modulo 2 pi; the increment is taken as the
    wrapped difference provided it is unambiguous (|increment| < pi/2).
    Otherwise the interval is bisected with fresh evaluations, up to
    ``depth`` levels, before giving up with :class:`BranchAmbiguity`.
    """
    delta = wrap_phase(phi_hi - phi_lo)
    if abs(delta) < 0.5 * np.pi:
        return delta
    if eval_phase is None or depth <= 0:
        raise BranchAmbiguity(
            f"phase jump of {delta:+.3f} rad between positions {pos_lo} and "
            f"{pos_hi} cannot be bridged (refinement exhausted)"
        )
    mid = 0.5 * (pos_lo + pos_hi)
    phi_mid = float(eval_phase(mid))
    left = _bridge_phase(pos_lo, mid, phi_lo, phi_mid, eval_phase, depth - 1)
    right = _bridge_phase(mid, pos_hi, phi_mid, phi_hi, eval_phase, depth - 1)
    return left + right


def continued_phase_path(
    positions: Sequence[float],
    phases: Sequence[float],
    eval_phase: Callable[[float], float] | None = None,
    max_depth: int = 6,
) -> np.ndarray:
    """Unwrap sampled phases into a continuous path.

    ``phases[k]`` is the phase (mod 2 pi) of some continuous nonvanishing
    function at ``positions[k]``.  Returns an array ``theta`` with
    ``theta[0] = phases[0]`` and each increment chosen continuously.  Where
    neighbouring samples differ by >= pi/2 (wrapped), midpoints are
    evaluated through ``eval_phase(position) -> phase`` with up to
    ``max_depth`` bisection levels; without an evaluator, such a jump
    raises :class:`BranchAmbiguity` immediately.
    """
    positions = np.asarray(positions, dtype=float)
    phases = np.asarray(phases, dtype=float)
    if positions.shape != phases.shape or positions.ndim != 1:
        raise ValueError("positions and phases must be matching 1-D sequences")
    theta = np.empty_like(phases)
    theta[0] = phases[0]
    for k in range(1, len(phases)):
        inc = _bridge_phase(
            positions[k - 1], positions[k], phases[k - 1], phases[k], eval_phase, max_depth
        )
        theta[k] = theta[k - 1] + inc
    return theta


def branch_continued_sqrt(values, anchor: complex | None = None) -> np.ndarray:
    """Square root of a complex path with the branch continued along it.

    ``values`` samples a continuous, nonvanishing function along some path.
    Each output element squares back to its input exactly (each is the
    principal root times +-1); the sign pattern is chosen so the root is
    continuous, which requires neighbouring values to move by less than
    pi/2 in (wrapped) phase — otherwise :class:`BranchAmbiguity`.

    If ``anchor`` is given, the overall sign is fixed so the first root is
    the one closer to ``anchor``; otherwise the first root is principal.
    """
    v = np.atleast_1d(np.asarray(values, dtype=complex))
    if np.any(v == 0) or not np.all(np.isfinite(v)):
        raise ValueError("values must be finite and nonvanishing")
    dv = wrap_phase(np.diff(np.angle(v)))
    big = np.abs(dv) >= 0.5 * np.pi
    if np.any(big):
        k = int(np.argmax(big))
        raise BranchAmbiguity(
            f"phase step of {dv[k]:+.3f} rad between samples {k} and {k + 1} "
            "is too coarse to track the square-root branch"
        )
    roots = np.sqrt(v)
    # The principal root's phase halves the jump; a flip is needed wherever
    # the principal branch cut was crossed.
    dr = wrap_phase(np.diff(np.angle(roots)))
    flips = np.where(np.abs(dr) > 0.5 * np.pi, -1.0, 1.0)
    signs = np.concatenate([[1.0], np.cumprod(flips)])
    if anchor is not None:
        if abs(-roots[0] - anchor) < abs(roots[0] - anchor):
            signs = -signs
    return roots * signs
