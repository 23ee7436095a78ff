"""System construction: quadratic vibronic Hamiltonians and their reduction.

Three layers, from concrete to abstract:

* :class:`LangevinSpec` — the intuitive two-mode picture: a ground well
  displaced by ``d_mag`` along angle ``theta``, an excited well at the
  origin rotated by ``phi``, a complex exponential coupling of magnitude
  ``w_mag`` along angle ``eta``, and an Ohmic bath of strength ``gamma``
  attached to each primary coordinate.
* :class:`QuadraticVibronic` — the same physics as a pair of general
  quadratic surfaces (Hessians, linear couplings, constants) in one shared
  set of Cartesian coordinates.
* :class:`DuschinskiiSystem` — both surfaces in their own normal modes,
  related by the rotation ``S`` and shift ``d``; this is the form every
  correlation-function formula consumes.

All quantities are in Hartree atomic units with unit masses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotOrthogonal, NotPositiveDefinite, ValidationError
from .numerics import DiagonalSpectrum

__all__ = [
    "BathConfig",
    "LangevinSpec",
    "QuadraticVibronic",
    "DuschinskiiSystem",
    "discretize_bath",
    "assemble_langevin",
    "reduce_to_normal_modes",
    "apply_point_transform",
    "reorganization_energy",
]

_ORTHO_TOL = 1e-10


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class BathConfig:
    """Discretized Ohmic bath settings: ``modes_per_bath`` per primary
    coordinate, evenly spaced below ``cutoff``.  Zero modes gives a
    bath-free system."""

    modes_per_bath: int = 20
    cutoff: float = 4.0e-3

    def __post_init__(self):
        if int(self.modes_per_bath) != self.modes_per_bath or self.modes_per_bath < 0:
            raise ValidationError(f"modes_per_bath must be a count >= 0, got {self.modes_per_bath}")
        if not (self.cutoff > 0 and np.isfinite(self.cutoff)):
            raise ValidationError(f"cutoff must be positive and finite, got {self.cutoff}")


@dataclass(frozen=True)
class LangevinSpec:
    """Two damped primary modes with displaced/rotated wells and a complex
    exponential interstate coupling.

    ``delta_g`` is the energy gap between the two well minima after bath
    counter-terms, not the bare electronic constant; assembly solves for
    the constant that realizes it.
    """

    omega1: float = 2.0e-4
    omega2: float = 4.0e-4
    gamma: float = 4.0e-4
    theta: float = np.pi / 4
    phi: float = 0.0
    eta: float = np.pi / 2
    d_mag: float = 884.0
    w_mag: float = 0.05
    delta_g: float = -0.01
    v: complex = 1.0e-4
    beta: float = 1000.0
    bath: BathConfig = field(default_factory=BathConfig)

    def __post_init__(self):
        for name in ("omega1", "omega2", "beta"):
            val = getattr(self, name)
            if not (val > 0 and np.isfinite(val)):
                raise ValidationError(f"{name} must be positive and finite, got {val}")
        if not (self.gamma >= 0 and np.isfinite(self.gamma)):
            raise ValidationError(f"gamma must be nonnegative and finite, got {self.gamma}")
        for name in ("theta", "phi", "eta", "d_mag", "w_mag", "delta_g"):
            if not np.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")
        if not np.isfinite(complex(self.v)):
            raise ValidationError("v must be finite")


@dataclass(frozen=True)
class QuadraticVibronic:
    """Two quadratic surfaces in shared coordinates.

    ``omega2_g``/``omega2_e`` are the (mass-weighted) Hessians, ``lambda_g``/
    ``lambda_e`` the linear terms, ``e_g``/``e_e`` the constants of the
    quadratic forms, ``v`` the coupling magnitude and ``w`` the coupling
    phase gradient: the off-diagonal operator is ``v * exp(i w.x)``.
    """

    omega2_g: np.ndarray
    omega2_e: np.ndarray
    lambda_g: np.ndarray
    lambda_e: np.ndarray
    e_g: float
    e_e: float
    v: complex
    w: np.ndarray

    def __post_init__(self):
        og = np.atleast_2d(np.asarray(self.omega2_g, dtype=float))
        oe = np.atleast_2d(np.asarray(self.omega2_e, dtype=float))
        n = og.shape[0]
        if og.shape != (n, n) or oe.shape != (n, n):
            raise ValueError("Hessians must be square and same-sized")
        for name, m in (("omega2_g", og), ("omega2_e", oe)):
            if not np.all(np.isfinite(m)):
                raise ValueError(f"{name} must be finite")
            if np.max(np.abs(m - m.T)) > 1e-12 * max(np.max(np.abs(m)), 1e-300):
                raise ValueError(f"{name} must be symmetric")
        vecs = {}
        for name in ("lambda_g", "lambda_e", "w"):
            vec = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if vec.shape != (n,) or not np.all(np.isfinite(vec)):
                raise ValueError(f"{name} must be a finite length-{n} vector")
            vecs[name] = vec
        object.__setattr__(self, "omega2_g", _frozen(og))
        object.__setattr__(self, "omega2_e", _frozen(oe))
        for name, vec in vecs.items():
            object.__setattr__(self, name, _frozen(vec))
        object.__setattr__(self, "v", complex(self.v))

    @property
    def n(self) -> int:
        return self.omega2_g.shape[0]


@dataclass(frozen=True)
class DuschinskiiSystem:
    """Both surfaces in normal modes, linked by ``x_g = S x_e + d``.

    ``w`` is the coupling phase gradient in excited-state normal
    coordinates; ``delta_g`` the reduced driving force (well-minimum gap).
    """

    omega_g: DiagonalSpectrum
    omega_e: DiagonalSpectrum
    S: np.ndarray
    d: np.ndarray
    w: np.ndarray
    v: complex
    delta_g: float

    def __post_init__(self):
        n = len(self.omega_g)
        if len(self.omega_e) != n:
            raise ValueError("ground and excited spectra must have equal size")
        S = np.atleast_2d(np.asarray(self.S, dtype=float))
        if S.shape != (n, n):
            raise ValueError(f"S must be {n}x{n}")
        if np.max(np.abs(S.T @ S - np.eye(n))) >= _ORTHO_TOL:
            raise NotOrthogonal("S is not orthogonal to 1e-10")
        if abs(abs(np.linalg.det(S)) - 1.0) >= _ORTHO_TOL:
            raise NotOrthogonal("det(S) is not +-1 to 1e-10")
        d = np.atleast_1d(np.asarray(self.d, dtype=float))
        w = np.atleast_1d(np.asarray(self.w, dtype=float))
        if d.shape != (n,) or w.shape != (n,):
            raise ValueError(f"d and w must be length-{n} vectors")
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(w)) and np.isfinite(self.delta_g)):
            raise ValueError("d, w, delta_g must be finite")
        object.__setattr__(self, "S", _frozen(S))
        object.__setattr__(self, "d", _frozen(d))
        object.__setattr__(self, "w", _frozen(w))
        object.__setattr__(self, "v", complex(self.v))

    @property
    def n(self) -> int:
        return len(self.omega_g)

    @property
    def max_frequency(self) -> float:
        return max(self.omega_g.max, self.omega_e.max)

    def with_soc(self, scale: float) -> "DuschinskiiSystem":
        """Same system with the coupling phase gradient scaled (e.g. -1
        for the opposite spin channel, 0 to switch the phase off)."""
        return DuschinskiiSystem(
            self.omega_g, self.omega_e, self.S, self.d, scale * self.w, self.v, self.delta_g
        )


def discretize_bath(cfg: BathConfig, gamma: float):
    """Frequencies and couplings for one Ohmic chain, J(omega) = gamma*omega.

    Midpoint frequencies omega_k = (k - 1/2) * cutoff / M avoid a
    zero-frequency mode; the mode density rho = M / cutoff then fixes
    c_k = sqrt((2/pi) * gamma * omega_k**2 / rho).
    """
    if gamma < 0:
        raise ValidationError(f"gamma must be nonnegative, got {gamma}")
    m = int(cfg.modes_per_bath)
    if m == 0:
        return np.empty(0), np.empty(0)
    k = np.arange(1, m + 1)
    freqs = (k - 0.5) * cfg.cutoff / m
    rho = m / cfg.cutoff
    couplings = np.sqrt((2.0 / np.pi) * gamma * freqs**2 / rho)
    return freqs, couplings


def assemble_langevin(spec: LangevinSpec) -> QuadraticVibronic:
    """Write the Langevin model as a pair of quadratic surfaces.

    Coordinate order is (x, y, x-bath modes, y-bath modes).  Both surfaces
    carry the same bath blocks and counter-terms; they differ only in the
    primary 2x2 block and the linear term.  The ground-state constant is
    solved so the reduced driving force equals ``spec.delta_g`` exactly.
    """
    if spec.bath.modes_per_bath > 0 and spec.bath.cutoff <= max(spec.omega1, spec.omega2):
        raise ValidationError(
            f"bath cutoff {spec.bath.cutoff} must exceed the primary frequencies "
            f"({spec.omega1}, {spec.omega2})"
        )
    wb, cb = discretize_bath(spec.bath, spec.gamma)
    m = wb.size
    n = 2 + 2 * m
    w1sq = spec.omega1**2
    w2sq = spec.omega2**2
    counter = float(np.sum(cb**2 / wb**2)) if m else 0.0

    def bath_frame(primary_2x2):
        out = np.zeros((n, n))
        out[:2, :2] = primary_2x2
        out[0, 0] += counter
        out[1, 1] += counter
        if m:
            xs = slice(2, 2 + m)
            ys = slice(2 + m, n)
            out[xs, xs] = np.diag(wb**2)
            out[ys, ys] = np.diag(wb**2)
            out[0, xs] = out[xs, 0] = cb
            out[1, ys] = out[ys, 1] = cb
        return out

    omega2_g = bath_frame(np.diag([w2sq, w1sq]))
    cphi, sphi = np.cos(spec.phi), np.sin(spec.phi)
    off = -0.5 * np.sin(2 * spec.phi) * (w2sq - w1sq)
    omega2_e = bath_frame(
        np.array(
            [
                [w1sq * cphi**2 + w2sq * sphi**2, off],
                [off, w2sq * cphi**2 + w1sq * sphi**2],
            ]
        )
    )

    lambda_g = np.zeros(n)
    lambda_g[0] = -spec.d_mag * w2sq * np.cos(spec.theta)
    lambda_g[1] = -spec.d_mag * w1sq * np.sin(spec.theta)
    lambda_e = np.zeros(n)
    w_vec = np.zeros(n)
    w_vec[0] = spec.w_mag * np.cos(spec.eta)
    w_vec[1] = spec.w_mag * np.sin(spec.eta)

    # delta_g is the well-minimum gap: e_g - e_e - 1/2 lambda_g' Og^-2 lambda_g
    # (lambda_e = 0), so the ground constant follows by one linear solve.
    relax = 0.5 * float(lambda_g @ np.linalg.solve(omega2_g, lambda_g))
    e_g = spec.delta_g + relax
    return QuadraticVibronic(omega2_g, omega2_e, lambda_g, lambda_e, e_g, 0.0, spec.v, w_vec)


def _signed_eigh(matrix: np.ndarray):
    """Ascending eigh with each column's largest-|entry| made positive."""
    vals, vecs = np.linalg.eigh(matrix)
    lead = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[lead, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vals, vecs * signs


def reduce_to_normal_modes(h: QuadraticVibronic) -> DuschinskiiSystem:
    """Diagonalize both surfaces and express one in the frame of the other.

    Raises :class:`NotPositiveDefinite` if either Hessian has an
    eigenvalue at or below 1e-16 (an unbound or translational mode).
    """
    out = {}
    for name, hess, lam in (
        ("g", h.omega2_g, h.lambda_g),
        ("e", h.omega2_e, h.lambda_e),
    ):
        vals, vecs = _signed_eigh(hess)
        if vals.min() <= 1e-16:
            raise NotPositiveDefinite(
                f"omega2_{name} has eigenvalue {vals.min():.3e}; surface is not bound"
            )
        # Omega^-2 lambda in the original coordinates.
        shift = vecs @ ((vecs.T @ lam) / vals)
        out[name] = (np.sqrt(vals), vecs, shift, float(lam @ shift))
    freq_g, s_g, shift_g, quad_g = out["g"]
    freq_e, s_e, shift_e, quad_e = out["e"]
    return DuschinskiiSystem(
        omega_g=DiagonalSpectrum(freq_g),
        omega_e=DiagonalSpectrum(freq_e),
        S=s_g.T @ s_e,
        d=s_g.T @ (shift_g - shift_e),
        w=s_e.T @ h.w,
        v=h.v,
        delta_g=h.e_g - h.e_e + 0.5 * (quad_e - quad_g),
    )


def apply_point_transform(h: QuadraticVibronic, q: np.ndarray) -> QuadraticVibronic:
    """Rotate/reflect the primary plane of a quadratic vibronic system.

    ``q`` is a 2x2 orthogonal matrix acting on the primary coordinates
    (identity on the bath).  Every observable of the reduced dynamics is
    invariant under this; the function exists to let tests state that.
    """
    q = np.asarray(q, dtype=float)
    if q.shape != (2, 2) or np.max(np.abs(q.T @ q - np.eye(2))) >= _ORTHO_TOL:
        raise NotOrthogonal("q must be a 2x2 orthogonal matrix (to 1e-10)")
    full = np.eye(h.n)
    full[:2, :2] = q
    return QuadraticVibronic(
        omega2_g=full @ h.omega2_g @ full.T,
        omega2_e=full @ h.omega2_e @ full.T,
        lambda_g=full @ h.lambda_g,
        lambda_e=full @ h.lambda_e,
        e_g=h.e_g,
        e_e=h.e_e,
        v=h.v,
        w=full @ h.w,
    )


def reorganization_energy(h: QuadraticVibronic) -> float:
    """Ground-surface energy released relaxing from the excited minimum.

    E_r = V_g(x_e*) - V_g(x_g*) with x* the respective minima.  For the
    Langevin model this reduces to d^2 (omega2^2 cos^2 theta +
    omega1^2 sin^2 theta) / 2 independent of the bath (the counter-terms
    exactly cancel the bath-induced softening).
    """
    x_g = -np.linalg.solve(h.omega2_g, h.lambda_g)
    x_e = -np.linalg.solve(h.omega2_e, h.lambda_e)

    def v_g(x):
        return 0.5 * x @ h.omega2_g @ x + h.lambda_g @ x

    return float(v_g(x_e) - v_g(x_g))
