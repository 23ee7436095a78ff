import numpy as np
import pytest
from numpy.testing import assert_allclose

from spinet.errors import BranchAmbiguity, SingularKernel, SingularMatrix
from spinet.numerics import (
    DiagonalSpectrum,
    LUFactorization,
    PhasedDeterminant,
    branch_continued_sqrt,
    continued_phase_path,
    kernel_a,
    kernel_b,
    kernel_b_minus_a,
    kernel_b_plus_a,
    lu_factor,
    phased_det,
    wrap_phase,
)

# Reference kernel values computed independently with 50-digit arithmetic
# (mpmath), frozen here.
THERMAL_A = 9.933643137629034e-4j          # a(2e-4, -1000i)
THERMAL_B = 5.586076564159999e-4j          # b(3e-4, -2000i)
DEEP_A = 7.121608204288078e-221 + 1.4231345082873384e-219j  # a(1e-2, 5-50000i)
GENERIC_A = 0.15877490390701929 + 0.13732736663237564j      # a(0.37, 2.1-3.4i)
GENERIC_B = 0.059543323901463476 + 0.36618949047826905j     # b(0.37, 2.1-3.4i)


def test_kernel_thermal_values():
    assert_allclose(kernel_a([2e-4], -1000j)[0], THERMAL_A, rtol=1e-13)
    assert_allclose(kernel_b([3e-4], -2000j)[0], THERMAL_B, rtol=1e-13)


def test_kernel_generic_complex_argument():
    assert_allclose(kernel_a([0.37], 2.1 - 3.4j)[0], GENERIC_A, rtol=1e-13)
    assert_allclose(kernel_b([0.37], 2.1 - 3.4j)[0], GENERIC_B, rtol=1e-13)


def test_kernel_overflow_regime():
    # omega*|Im t| = 500: the e^500 factors must cancel analytically.
    t = 5.0 - 50000.0j
    a = kernel_a([1e-2], t)[0]
    assert_allclose(a, DEEP_A, rtol=1e-12)
    b = kernel_b([1e-2], t)[0]
    assert_allclose(b, 0.01j, rtol=1e-13, atol=0)
    # Far beyond float range (e^2000): cosh/sinh are inf naively, but the
    # kernels stay exact: b -> i*omega*coth(2000) = i*omega.
    assert_allclose(kernel_b([1.0], -2000.0j)[0], 1j, rtol=1e-15)
    assert kernel_a([1.0], -2000.0j)[0] == 0  # true value e^-2000: underflow
    assert_allclose(kernel_b_minus_a([1.0], -2000.0j)[0], 1j, rtol=1e-15)
    assert_allclose(kernel_b_plus_a([1.0], -2000.0j)[0], 1j, rtol=1e-15)


def test_kernel_matches_naive_when_safe():
    rng = np.random.default_rng(7)
    w = np.sort(rng.uniform(0.1, 2.0, size=4))
    for t in (3.7, -1.2 + 0.8j, 0.05 - 2j):
        assert_allclose(kernel_a(w, t), w / np.sin(w * t), rtol=1e-13)
        assert_allclose(kernel_b(w, t), w / np.tan(w * t), rtol=1e-13)


def test_kernel_broadcasting():
    w = DiagonalSpectrum([1e-4, 2e-4, 5e-4])
    ts = np.array([100.0, 200.0, 300.0, 400.0, 500.0])
    out = kernel_a(w, ts)
    assert out.shape == (5, 3)
    assert_allclose(out[2], kernel_a(w, 300.0), rtol=0)
    assert kernel_b(w, 250.0).shape == (3,)


def test_kernel_oddness():
    rng = np.random.default_rng(11)
    w = np.sort(rng.uniform(0.05, 1.5, size=5))
    for _ in range(20):
        t = complex(rng.uniform(-3, 3), rng.uniform(-3, 3))
        if abs(t) < 0.1:
            continue
        assert_allclose(kernel_a(w, -t), -kernel_a(w, t), rtol=1e-12)
        assert_allclose(kernel_b(w, -t), -kernel_b(w, t), rtol=1e-12)


def test_kernel_sum_difference_identities():
    rng = np.random.default_rng(13)
    w = np.sort(rng.uniform(0.1, 1.0, size=3))
    for t in (0.7, 2.9 - 0.4j, -1.1 + 1.3j):
        b = kernel_b(w, t)
        a = kernel_a(w, t)
        assert_allclose(kernel_b_minus_a(w, t), b - a, rtol=1e-11)
        assert_allclose(kernel_b_plus_a(w, t), b + a, rtol=1e-11)


def test_kernel_difference_stable_near_full_period():
    # At omega*t = 2*pi + eps, b and a are each ~2/eps large; their
    # difference is ~ -omega*eps/2 and must come out to full precision.
    w = 1.0
    eps = 1e-8
    t = 2 * np.pi + eps
    diff = kernel_b_minus_a([w], t)[0]
    assert_allclose(diff, -w * np.tan(w * t / 2), rtol=1e-12)
    # Accuracy is limited only by placing t relative to the float value of
    # 2*pi (~1e-16 absolute), not by cancellation (~1e-8 here).
    assert abs(diff + w * eps / 2) < 1e-15
    naive = kernel_b([w], t)[0] - kernel_a([w], t)[0]
    assert abs(naive - diff) > 1e-12 * abs(diff)  # direct subtraction is junk


def test_kernel_singularities():
    with pytest.raises(SingularKernel):
        kernel_a([0.5], 2 * np.pi)  # omega*t = pi
    with pytest.raises(SingularKernel):
        kernel_b([1.0], np.pi)
    with pytest.raises(SingularKernel):
        kernel_b_minus_a([1.0], np.pi)  # cos(omega*t/2) = 0
    with pytest.raises(SingularKernel):
        kernel_b_plus_a([1.0], 2 * np.pi)  # sin(omega*t/2) = 0
    # b - a is regular at a full period even though b and a diverge there.
    assert_allclose(kernel_b_minus_a([1.0], 2 * np.pi)[0], 0.0, atol=1e-12)
    # The error message names the offending argument.
    with pytest.raises(SingularKernel, match="omega\\*t"):
        kernel_a([1.0, 2.0], np.pi / 2)


def test_diagonal_spectrum_validation():
    spec = DiagonalSpectrum([1e-4, 2e-4, 2e-4, 7e-4])
    assert len(spec) == 4
    assert spec.max == 7e-4
    with pytest.raises(ValueError):
        DiagonalSpectrum([2e-4, 1e-4])  # not ascending
    with pytest.raises(ValueError):
        DiagonalSpectrum([0.0, 1.0])  # not strictly positive
    with pytest.raises(ValueError):
        DiagonalSpectrum([-1.0])
    with pytest.raises(ValueError):
        DiagonalSpectrum([])
    with pytest.raises(ValueError):
        DiagonalSpectrum([1.0, np.nan])
    with pytest.raises(ValueError):
        spec.frequencies[0] = 5.0  # frozen


def test_wrap_phase():
    assert wrap_phase(0.0) == 0.0
    assert wrap_phase(np.pi) == pytest.approx(np.pi)
    assert wrap_phase(-np.pi) == pytest.approx(np.pi)  # (-pi, pi]: -pi maps up
    assert wrap_phase(3 * np.pi) == pytest.approx(np.pi)
    assert_allclose(wrap_phase(np.array([2 * np.pi, -0.5, 7.0])), [0.0, -0.5, 7.0 - 2 * np.pi])


def test_phased_determinant():
    d = PhasedDeterminant(np.log(6.0), np.pi / 2)
    assert_allclose(d.value, 6j, rtol=1e-14)
    # Phase normalizes into (-pi, pi].
    assert PhasedDeterminant(0.0, 3 * np.pi).phase == pytest.approx(np.pi)
    assert PhasedDeterminant(0.0, -np.pi / 2 + 4 * np.pi).phase == pytest.approx(-np.pi / 2)
    prod = d * PhasedDeterminant(np.log(2.0), np.pi / 2)
    assert_allclose(prod.value, -12.0, rtol=1e-14)
    with pytest.raises(ValueError):
        PhasedDeterminant(np.inf, 0.0)


def test_lu_basics():
    rng = np.random.default_rng(3)
    m = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    fac = lu_factor(m)
    rhs = rng.standard_normal((8, 2))
    assert_allclose(fac.solve(rhs), np.linalg.solve(m, rhs), rtol=1e-11)
    assert_allclose(fac.inverse() @ m, np.eye(8), atol=1e-12)
    assert_allclose(fac.det(), np.linalg.det(m), rtol=1e-11)


def test_lu_singular_detection():
    with pytest.raises(SingularMatrix):
        lu_factor(np.zeros((3, 3)))
    ones = np.ones((4, 4), dtype=complex)
    with pytest.raises(SingularMatrix):
        lu_factor(ones)  # rank 1
    # Pivot threshold is relative: 1e-10 survives, 1e-20 does not.
    assert_allclose(lu_factor(np.diag([1.0, 1e-10])).det(), 1e-10, rtol=1e-12)
    with pytest.raises(SingularMatrix):
        lu_factor(np.diag([1.0, 1e-20]))


def test_phased_det_beyond_float_range():
    big = np.exp(200.0)
    d = phased_det(np.diag([big, big]))  # det = e^400 overflows float64
    assert_allclose(d.log_magnitude, 400.0, rtol=1e-13)
    assert_allclose(d.phase, 0.0, atol=1e-12)
    # 81 well-scaled negative entries: det = -e^405, phase pi.
    d2 = phased_det(np.diag(np.full(81, -np.exp(5.0))))
    assert_allclose(d2.log_magnitude, 405.0, rtol=1e-13)
    assert_allclose(d2.phase, np.pi, rtol=1e-12)
    # Extreme *internal* scale spread is a conditioning problem, not an
    # overflow problem, and the relative pivot test treats it as singular.
    with pytest.raises(SingularMatrix):
        phased_det(np.diag([big, 1e-180]))


def test_phased_det_eigenvalue_oracle():
    # Independent route: det = product of eigenvalues.
    rng = np.random.default_rng(21)
    n = 168
    m = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    lam = np.linalg.eigvals(m)
    d = phased_det(m)
    assert_allclose(d.log_magnitude, np.sum(np.log(np.abs(lam))), rtol=1e-10)
    assert abs(wrap_phase(d.phase - np.sum(np.angle(lam)))) < 1e-8


def test_phased_det_agrees_with_slogdet():
    # The grid evaluators use numpy's batched slogdet; it must agree with
    # the LU-based determinant used everywhere else.
    rng = np.random.default_rng(22)
    for n in (2, 5, 33):
        m = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        sign, logdet = np.linalg.slogdet(m)
        d = phased_det(m)
        assert_allclose(d.log_magnitude, logdet, rtol=1e-12)
        assert abs(wrap_phase(d.phase - np.angle(sign))) < 1e-10


def test_branch_continued_sqrt_basic():
    vals = np.full(5, 4.0 + 0j)
    assert_allclose(branch_continued_sqrt(vals), np.full(5, 2.0 + 0j), rtol=0)
    # Anchor selects the other root globally.
    assert_allclose(branch_continued_sqrt(vals, anchor=-2.0), np.full(5, -2.0 + 0j), rtol=0)


def test_branch_continued_sqrt_follows_winding():
    # Going once around the origin must flip the root's sign.
    theta = np.linspace(0.0, 2 * np.pi, 41)
    vals = np.exp(1j * theta)
    roots = branch_continued_sqrt(vals)
    assert_allclose(roots ** 2, vals, rtol=1e-14)
    assert_allclose(roots[0], 1.0, rtol=1e-14)
    assert_allclose(roots[-1], -1.0, rtol=1e-12)
    # Two full turns return to +1.
    theta2 = np.linspace(0.0, 4 * np.pi, 161)
    roots2 = branch_continued_sqrt(np.exp(1j * theta2))
    assert_allclose(roots2[-1], 1.0, rtol=1e-12)


def test_branch_continued_sqrt_exact_squares():
    rng = np.random.default_rng(5)
    phases = np.cumsum(rng.uniform(-1.2, 1.2, size=60))
    mags = np.exp(rng.uniform(-3, 3, size=60))
    vals = mags * np.exp(1j * phases)
    roots = branch_continued_sqrt(vals)
    # Each root is +-principal, so squaring is bit-exact.
    principal = np.sqrt(vals)
    assert np.all((roots == principal) | (roots == -principal))


def test_branch_continued_sqrt_rejects_coarse_sampling():
    with pytest.raises(BranchAmbiguity):
        branch_continued_sqrt(np.array([1.0, np.exp(1j * (np.pi - 0.1))]))


def test_continued_phase_path_refinement():
    # True phase 10*x sampled every 0.3 rad*10 = 3 rad: hopeless without
    # refinement, exact with it.
    xs = np.arange(0.0, 3.01, 0.3)
    raw = wrap_phase(10.0 * xs)
    with pytest.raises(BranchAmbiguity):
        continued_phase_path(xs, raw)
    theta = continued_phase_path(xs, raw, eval_phase=lambda x: wrap_phase(10.0 * x))
    assert_allclose(theta, 10.0 * xs, atol=1e-10)
    with pytest.raises(BranchAmbiguity):
        continued_phase_path(xs, raw, eval_phase=lambda x: wrap_phase(10.0 * x), max_depth=0)


def test_continued_phase_path_plain():
    xs = np.linspace(0, 1, 50)
    true = 4.0 * np.sin(3 * xs) + 2.5 * xs
    theta = continued_phase_path(xs, wrap_phase(true))
    assert_allclose(theta, true - true[0] + wrap_phase(true)[0], atol=1e-12)
