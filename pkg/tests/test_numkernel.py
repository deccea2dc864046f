import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ellipscert.numkernel import (
    DomainError, NotPositiveDefiniteError, chi2_cdf, chi2_quantile, chi2_sf, gamma_p, gamma_q, log_gamma,
    noncentral_chi2_cdf, quadratic_form_cdf, spd_factorize, std_normal_cdf, std_normal_quantile, sym_eigenvalues, symmetric,
)

dofs = st.integers(min_value=1, max_value=200)


def test_log_gamma_known_values():
    assert log_gamma(1.0) == 0.0
    assert abs(log_gamma(0.5) - 0.5 * math.log(math.pi)) < 1e-14
    assert abs(log_gamma(10.0) - math.log(362880.0)) < 1e-12
    with pytest.raises(DomainError):
        log_gamma(0.0)


@pytest.mark.parametrize("a,x", [(0.5, 0.1), (1.0, 2.0), (3.5, 3.0), (50.0, 45.0), (50.0, 70.0), (250.0, 260.0)])
def test_incomplete_gamma_matches_mpmath(a, x):
    ref = float(mpmath.gammainc(a, 0, x, regularized=True))
    assert abs(gamma_p(a, x) - ref) < 1e-13
    assert abs(gamma_q(a, x) - (1 - ref)) < 1e-13


def test_chi2_cdf_two_dof_closed_form():
    for t in np.linspace(0, 60, 301):
        assert abs(chi2_cdf(2, t) - (1 - math.exp(-t / 2))) < 1e-12


def test_chi2_cdf_matches_scipy_grid():
    for d in (1, 2, 3, 7, 30, 100, 500):
        for t in np.linspace(0.01, 3 * d + 30, 40):
            assert abs(chi2_cdf(d, t) - stats.chi2.cdf(t, d)) < 1e-12
            assert abs(chi2_sf(d, t) - stats.chi2.sf(t, d)) < 1e-12


def test_chi2_sf_deep_tail_is_relative_accurate():
    ref = stats.chi2.sf(400.0, 10)
    assert abs(chi2_sf(10, 400.0) - ref) <= 1e-10 * ref


def test_chi2_quantile_known_value():
    assert abs(chi2_quantile(2, 0.95) - 5.991464547107979) < 1e-9


@settings(max_examples=200, deadline=None)
@given(dofs, st.floats(min_value=1e-9, max_value=1 - 1e-9))
def test_quantile_cdf_round_trip(d, p):
    t = chi2_quantile(d, p)
    assert abs(chi2_cdf(d, t) - p) < 1e-9


@settings(max_examples=200, deadline=None)
@given(dofs, st.floats(0, 500), st.floats(0, 500))
def test_chi2_cdf_monotone_and_bounded(d, a, b):
    lo, hi = sorted((a, b))
    assert 0.0 <= chi2_cdf(d, lo) <= chi2_cdf(d, hi) <= 1.0


@pytest.mark.parametrize("d,w,t", [(1, 0.5, 1.0), (2, 4.0, 3.0), (2, 16.0, 30.0), (5, 1.0, 2.0),
                                   (10, 50.0, 40.0), (50, 200.0, 300.0), (3, 1500.0, 1400.0)])
def test_noncentral_matches_scipy(d, w, t):
    assert abs(noncentral_chi2_cdf(d, w, t) - stats.ncx2.cdf(t, d, w)) < 1e-10


def test_noncentral_reduces_to_central():
    for d in (1, 4, 9):
        for t in (0.5, 3.0, 12.0):
            assert noncentral_chi2_cdf(d, 0.0, t) == chi2_cdf(d, t)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 50), st.floats(0, 200), st.floats(0, 200), st.floats(0, 300))
def test_noncentral_monotone(d, w1, w2, t):
    # stochastically increasing in the noncentrality
    lo, hi = sorted((w1, w2))
    assert noncentral_chi2_cdf(d, hi, t) <= noncentral_chi2_cdf(d, lo, t) + 1e-12


def test_domain_errors():
    with pytest.raises(DomainError):
        chi2_cdf(0, 1.0)
    with pytest.raises(DomainError):
        chi2_cdf(2, -1.0)
    with pytest.raises(DomainError):
        chi2_quantile(2, 1.0)
    with pytest.raises(DomainError):
        noncentral_chi2_cdf(2, -1.0, 1.0)
    with pytest.raises(DomainError):
        std_normal_quantile(0.0)


def test_std_normal():
    assert std_normal_cdf(0.0) == 0.5
    for p in (1e-10, 0.01, 0.3, 0.5, 0.99):
        assert abs(std_normal_cdf(std_normal_quantile(p)) - p) < 1e-12 * max(1.0, p / 1e-3)
    assert abs(std_normal_quantile(0.975) - 1.959963984540054) < 1e-12


def test_symmetric_is_bitwise_symmetric(rng):
    a = rng.standard_normal((6, 6))
    s = symmetric(a)
    assert np.array_equal(s, s.T)
    assert np.array_equal(np.tril(s), np.tril(a))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_cholesky_reconstructs_and_solves(d, seed):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((d, d))
    A = B @ B.T + d * np.eye(d)
    f = spd_factorize(A)
    assert np.allclose(f.lower @ f.lower.T, A, rtol=1e-12, atol=1e-10)
    assert abs(f.log_det - np.linalg.slogdet(A)[1]) < 1e-9
    b = rng.standard_normal(d)
    assert np.allclose(A @ f.solve(b), b, atol=1e-9)
    assert abs(np.sum(f.whiten(b) ** 2) - b @ np.linalg.solve(A, b)) < 1e-9 * (1 + abs(b @ b))


def test_cholesky_rejects_indefinite_and_singular():
    with pytest.raises(NotPositiveDefiniteError) as err:
        spd_factorize([[1.0, 2.0], [2.0, 1.0]])
    assert err.value.pivot == 1
    with pytest.raises(NotPositiveDefiniteError):
        spd_factorize(np.ones((3, 3)))


def test_eigenvalues_ascending_and_match(rng):
    A = symmetric(rng.standard_normal((8, 8)))
    ev = sym_eigenvalues(A)
    assert np.all(np.diff(ev) >= 0)
    assert np.allclose(ev, np.sort(np.linalg.eigvals(A).real), atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 20), st.floats(0, 25), st.floats(0.01, 80))
def test_quadratic_form_one_dof_closed_form(lam, b2, t):
    # P(lam (y + b)^2 <= t) = Phi(s - b) - Phi(-s - b) with s = sqrt(t / lam)
    s, b = math.sqrt(t / lam), math.sqrt(b2)
    exact = float(stats.norm.cdf(s - b) - stats.norm.cdf(-s - b))
    got = quadratic_form_cdf([lam], [b2], t)
    assert exact - 1e-15 <= got <= exact + 1e-11


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.floats(0.1, 5), st.floats(0, 50), st.floats(0.01, 100))
def test_quadratic_form_equal_weights_is_noncentral(d, lam, w, t):
    b2 = np.zeros(d)
    b2[0] = w
    exact = float(stats.ncx2.cdf(t / lam, d, w)) if w > 0 else float(stats.chi2.cdf(t / lam, d))
    assert quadratic_form_cdf(np.full(d, lam), b2, t) == pytest.approx(exact, abs=1e-10)


def test_quadratic_form_against_monte_carlo():
    rng = np.random.default_rng(8)
    n = 2_000_000
    for _ in range(6):
        d = int(rng.integers(2, 6))
        lam = rng.uniform(0.2, 3.0, d)
        b = rng.standard_normal(d) * 2
        t = float(rng.uniform(1, 20))
        mc = np.mean(((rng.standard_normal((n, d)) + b) ** 2) @ lam <= t)
        se = math.sqrt(max(mc * (1 - mc), 1e-6) / n)
        assert abs(quadratic_form_cdf(lam, b * b, t) - mc) <= 4 * se


def test_quadratic_form_large_shift_no_underflow():
    # leading mixture weight exp(-1000) underflows without rescaling
    v = quadratic_form_cdf([0.5, 2.0], [2000.0, 0.0], 1000.0)
    assert 0.0 < v < 1.0
    assert quadratic_form_cdf([1.0, 1.0], [0.0, 0.0], 0.0) == 0.0
    with pytest.raises(DomainError):
        quadratic_form_cdf([1.0, -1.0], [0.0, 0.0], 1.0)
