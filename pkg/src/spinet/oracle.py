"""Brute-force references in a truncated harmonic-oscillator number basis.

Everything here is deliberately small, dense and slow: exact operator traces
and exact two-surface propagation for 1-2 mode systems, used as independent
referees for the closed-form evaluators and the quadrature pipeline, plus the
textbook golden-rule state sum.

The basis is the excited-surface product Fock basis.  The ground Hamiltonian
is assembled as H_e plus the potential difference so that no truncated p^2
product ever appears; truncation artifacts then live only in the topmost
levels, which the thermal-leak gate polices.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from functools import reduce

import numpy as np

from .dynamics import PopulationTrace, TimeGrid
from .errors import StepError, TruncationError, ValidationError
from .model import DuschinskiiSystem

__all__ = [
    "FockSpec",
    "FockOperators",
    "build_operators",
    "exact_eq_correlation",
    "exact_neq_correlation",
    "exact_populations",
    "fgr_state_sum",
    "truncation_change",
]

#: Thermal probability allowed in the top decile of the ladder.
_LEAK_BUDGET = 1e-8


@dataclass(frozen=True)
class FockSpec:
    """A 1-2 mode system and the per-mode basis size for exact evaluation."""

    system: DuschinskiiSystem
    levels_per_mode: int
    converged: bool = False

    def __post_init__(self) -> None:
        if self.system.n not in (1, 2):
            raise ValidationError(
                f"exact evaluation supports 1 or 2 modes, got {self.system.n}"
            )
        levels = int(self.levels_per_mode)
        if levels != self.levels_per_mode or levels < 2:
            raise ValidationError(f"levels_per_mode must be an integer >= 2, got {self.levels_per_mode}")
        object.__setattr__(self, "levels_per_mode", levels)
        if self.dim > 14400:
            raise ValidationError(
                f"total dimension {self.dim} exceeds the 14400 cap"
            )

    @property
    def dim(self) -> int:
        return self.levels_per_mode ** self.system.n

    def mark_converged(self) -> "FockSpec":
        return dataclasses.replace(self, converged=True)


@dataclass(frozen=True)
class FockOperators:
    """Dense operators and the ground-surface eigensystem, built once."""

    h_g: np.ndarray            # dense symmetric, minimum at zero energy offset
    h_e_diag: np.ndarray       # excited energies (diagonal basis)
    u: np.ndarray              # e^{i W^T x}
    eig_g: np.ndarray          # ground eigenvalues
    vec_g: np.ndarray          # ground eigenvectors (columns)
    mode_index: np.ndarray     # (n, dim) per-mode ladder index of each basis state


def _single_mode_x(levels: int, omega: float) -> np.ndarray:
    ladder = np.diag(np.sqrt(np.arange(1, levels)), 1)
    return (ladder + ladder.T) / math.sqrt(2.0 * omega)


def _kron_chain(mats: list[np.ndarray]) -> np.ndarray:
    return reduce(np.kron, mats)


def build_operators(spec: FockSpec) -> FockOperators:
    """Position operators, H_g, H_e and U = e^{i W^T x} in the excited Fock basis."""
    sys = spec.system
    n, levels = sys.n, spec.levels_per_mode
    we = sys.omega_e.frequencies
    wg = sys.omega_g.frequencies
    eye = np.eye(levels)

    x_ops = []
    for i in range(n):
        factors = [eye] * n
        factors[i] = _single_mode_x(levels, we[i])
        x_ops.append(_kron_chain(factors))

    counts = np.arange(levels)
    grids = np.meshgrid(*([counts] * n), indexing="ij")
    mode_index = np.stack([g.ravel() for g in grids])
    h_e_diag = np.einsum("i,ik->k", we, mode_index + 0.5)

    # H_g = H_e + [V_g(Sx + d) - V_e(x)]: the kinetic parts cancel exactly,
    # so no truncated momentum products are ever formed.
    delta_v = np.zeros((spec.dim, spec.dim))
    for i in range(n):
        y = sum(sys.S[i, j] * x_ops[j] for j in range(n)) + sys.d[i] * np.eye(spec.dim)
        delta_v += 0.5 * wg[i] ** 2 * (y @ y)
        delta_v -= 0.5 * we[i] ** 2 * (x_ops[i] @ x_ops[i])
    h_g = np.diag(h_e_diag) + delta_v

    m = sum(sys.w[i] * x_ops[i] for i in range(n))
    lam, v = np.linalg.eigh(m)
    u = (v * np.exp(1j * lam)) @ v.T

    eig_g, vec_g = np.linalg.eigh(h_g)
    return FockOperators(h_g, h_e_diag, u, eig_g, vec_g, mode_index)


def _check_ground_leak(spec: FockSpec, ops: FockOperators, beta: float) -> None:
    """Gate: thermal ground-surface occupation must not reach the top decile."""
    p = np.exp(-beta * (ops.eig_g - ops.eig_g[0]))
    p /= p.sum()
    occupation = np.abs(ops.vec_g) ** 2 @ p
    boundary = np.any(ops.mode_index >= math.floor(0.9 * spec.levels_per_mode), axis=0)
    leak = float(occupation[boundary].sum())
    if leak > _LEAK_BUDGET:
        raise TruncationError(
            f"thermal ground state leaks {leak:.3g} probability into the top "
            f"decile of a {spec.levels_per_mode}-level ladder at beta={beta:g}"
        )


def exact_eq_correlation(spec: FockSpec, tau, beta: float,
                         ops: FockOperators | None = None):
    """Equilibrium correlation by exact trace over the truncated basis.

    C(tau) = (1/Z) sum_{m,k} e^{(i tau - beta) eps_m} |T_km|^2 e^{-i E_k tau}
    with T = V_g^T U, eps the excited ladder and E the ground eigenvalues.
    """
    if ops is None:
        ops = build_operators(spec)
    _check_ground_leak(spec, ops, beta)
    taus = np.asarray(tau, dtype=float)
    scalar = taus.ndim == 0
    taus = np.atleast_1d(taus)
    t_mat = ops.vec_g.T @ ops.u
    weights = np.abs(t_mat) ** 2                       # (k, m)
    z = np.sum(np.exp(-beta * ops.h_e_diag))
    excited = np.exp((1j * taus[:, None] - beta) * ops.h_e_diag[None, :])
    ground = np.exp(-1j * taus[:, None] * ops.eig_g[None, :])
    vals = np.einsum("tk,km,tm->t", ground, weights, excited) / z
    return complex(vals[0]) if scalar else vals


def exact_neq_correlation(spec: FockSpec, t1: float, t2: float, beta: float,
                          ops: FockOperators | None = None) -> complex:
    """Nonequilibrium correlation by direct matrix products.

    C(t', t'') = Tr[rho_g e^{iH_e t'} U^dag e^{-iH_g (t'-t'')} U e^{-iH_e t''}]
    with rho_g the thermal ground-surface density matrix.
    """
    if ops is None:
        ops = build_operators(spec)
    _check_ground_leak(spec, ops, beta)
    tau = t1 - t2
    pg = np.exp(-beta * (ops.eig_g - ops.eig_g[0]))
    zg = pg.sum()
    rho = (ops.vec_g * (pg / zg)) @ ops.vec_g.T
    prop_g = (ops.vec_g * np.exp(-1j * ops.eig_g * tau)) @ ops.vec_g.T
    middle = ops.u.conj().T @ prop_g @ ops.u
    full = rho @ (np.exp(1j * ops.h_e_diag * t1)[:, None] * middle) \
        * np.exp(-1j * ops.h_e_diag * t2)[None, :]
    return complex(np.trace(full))


def exact_populations(spec: FockSpec, v: complex, delta_g: float,
                      grid: TimeGrid, beta: float,
                      ops: FockOperators | None = None) -> PopulationTrace:
    """Exact two-surface propagation from the photoexcited initial state.

    The full vibronic Hamiltonian [[dG + H_g, V U], [V* U^dag, H_e]] acts on
    (ground block, excited block); the initial density is the thermal ground
    nuclear state placed on the excited electronic surface.  One dense evolution
    operator per grid step, with a unitarity check at every step.
    """
    if ops is None:
        ops = build_operators(spec)
    _check_ground_leak(spec, ops, beta)
    dim = spec.dim
    h_full = np.zeros((2 * dim, 2 * dim), dtype=complex)
    h_full[:dim, :dim] = ops.h_g + delta_g * np.eye(dim)
    h_full[dim:, dim:] = np.diag(ops.h_e_diag)
    h_full[:dim, dim:] = v * ops.u
    h_full[dim:, :dim] = np.conj(v) * ops.u.conj().T
    lam, q = np.linalg.eigh(h_full)

    # thermal ground-surface columns, heaviest first, truncated at 1e-12 tail
    pg = np.exp(-beta * (ops.eig_g - ops.eig_g[0]))
    pg /= pg.sum()
    order = np.argsort(pg)[::-1]
    tail = np.cumsum(pg[order])
    keep = order[: int(np.searchsorted(tail, 1.0 - 1e-12) + 1)]
    psi = np.zeros((2 * dim, keep.size), dtype=complex)
    psi[dim:, :] = ops.vec_g[:, keep]

    step = (q * np.exp(-1j * lam * grid.dt)) @ q.conj().T
    times = grid.times
    p_out = np.zeros(times.size)
    weights = pg[keep]
    for k in range(1, times.size):
        psi = step @ psi
        norms = np.einsum("ij,ij->j", psi.conj(), psi).real
        defect = float(np.max(np.abs(norms - 1.0)))
        if defect > 1e-9:
            raise StepError(
                f"unitarity defect {defect:.3g} at step {k} exceeds 1e-9"
            )
        ground_mass = np.einsum("ij,ij->j", psi[:dim].conj(), psi[:dim]).real
        p_out[k] = float(weights @ ground_mass)
    return PopulationTrace(times, p_out)


def fgr_state_sum(spec: FockSpec, v: complex, delta_g: float, beta: float,
                  sigma: float | None = None,
                  ops: FockOperators | None = None) -> float:
    """Golden-rule rate as an explicit thermally weighted state sum.

    k = 2 pi |V|^2 sum_m P_m sum_k |T_km|^2 N(E_k + dG - eps_m; sigma) with a
    normalized Gaussian in place of the energy delta; sigma defaults to three
    mean level spacings of the acceptor spectrum.
    """
    if ops is None:
        ops = build_operators(spec)
    _check_ground_leak(spec, ops, beta)
    spacing = (ops.eig_g[-1] - ops.eig_g[0]) / (ops.eig_g.size - 1)
    if sigma is None:
        sigma = 3.0 * spacing
    if not sigma > spacing / 5.0:
        raise ValidationError(
            f"broadening {sigma:g} is below a fifth of the level spacing {spacing:g}"
        )
    p_m = np.exp(-beta * ops.h_e_diag)
    p_m /= p_m.sum()
    t_mat = np.abs(ops.vec_g.T @ ops.u) ** 2            # (k, m)
    gap = ops.eig_g[:, None] + delta_g - ops.h_e_diag[None, :]
    gauss = np.exp(-0.5 * (gap / sigma) ** 2) / (sigma * math.sqrt(2.0 * math.pi))
    return float(2.0 * math.pi * abs(v) ** 2 * np.einsum("km,km,m->", t_mat, gauss, p_m))


def truncation_change(spec: FockSpec, beta: float, tau_probes,
                      neq_probes=()) -> float:
    """Worst relative change of probe values when levels grow by 25 percent.

    This is the convergence gate: a spec is trusted once the returned figure
    is below 1e-6.
    """
    bigger = dataclasses.replace(
        spec, levels_per_mode=math.ceil(1.25 * spec.levels_per_mode)
    )
    worst = 0.0
    base_ops, big_ops = build_operators(spec), build_operators(bigger)
    for tau in tau_probes:
        a = exact_eq_correlation(spec, float(tau), beta, ops=base_ops)
        b = exact_eq_correlation(bigger, float(tau), beta, ops=big_ops)
        worst = max(worst, abs(a - b) / max(abs(b), 1e-300))
    for t1, t2 in neq_probes:
        a = exact_neq_correlation(spec, float(t1), float(t2), beta, ops=base_ops)
        b = exact_neq_correlation(bigger, float(t1), float(t2), beta, ops=big_ops)
        worst = max(worst, abs(a - b) / max(abs(b), 1e-300))
    return worst
