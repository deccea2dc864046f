"""Special functions and dense symmetric-matrix primitives.

Scalar special functions are pure Python on top of :mod:`math`; matrix
routines operate on dense numpy arrays (row-major, d up to ~1e3).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np
from scipy.linalg import solve_triangular

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 100_000
_STD_NORMAL = NormalDist()


class DomainError(ValueError):
    """Argument outside the mathematical domain of a function."""


class NotPositiveDefiniteError(ArithmeticError):
    """Cholesky factorization met a non-positive pivot."""

    def __init__(self, pivot: int, value: float):
        super().__init__(f"matrix is not positive definite: pivot {pivot} = {value:.6g}")
        self.pivot = pivot
        self.value = value


def _finite(x: float, name: str = "x") -> float:
    x = float(x)
    if not math.isfinite(x):
        raise DomainError(f"{name} must be finite, got {x}")
    return x


# --------------------------------------------------------------------------
# Gamma family
# --------------------------------------------------------------------------

def log_gamma(x: float) -> float:
    """ln Gamma(x) for x > 0."""
    x = _finite(x)
    if x <= 0:
        raise DomainError(f"log_gamma requires x > 0, got {x}")
    return math.lgamma(x)


def _gamma_series(a: float, x: float) -> float:
    # P(a, x) by the power series; converges fast for x < a + 1
    ap = a
    term = total = 1.0 / a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cfrac(a: float, x: float) -> float:
    # Q(a, x) by the modified Lentz continued fraction; for x >= a + 1
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gamma_p(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if a <= 0:
        raise DomainError(f"gamma_p requires a > 0, got {a}")
    if x < 0:
        raise DomainError(f"gamma_p requires x >= 0, got {x}")
    if x == 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        p = _gamma_series(a, x)
    else:
        p = 1.0 - _gamma_cfrac(a, x)
    return min(1.0, max(0.0, p))


def gamma_q(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x)."""
    if a <= 0:
        raise DomainError(f"gamma_q requires a > 0, got {a}")
    if x < 0:
        raise DomainError(f"gamma_q requires x >= 0, got {x}")
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        q = 1.0 - _gamma_series(a, x)
    else:
        q = _gamma_cfrac(a, x)
    return min(1.0, max(0.0, q))


def _check_dof(d: float) -> float:
    d = _finite(d, "d")
    if d <= 0:
        raise DomainError(f"degrees of freedom must be positive, got {d}")
    return d


def chi2_cdf(d: float, t: float) -> float:
    """CDF of the chi-square distribution with ``d`` degrees of freedom."""
    d = _check_dof(d)
    t = float(t)
    if math.isnan(t) or t < 0:
        raise DomainError(f"chi2_cdf requires t >= 0, got {t}")
    return gamma_p(0.5 * d, 0.5 * t)


def chi2_sf(d: float, t: float) -> float:
    """Survival function 1 - chi2_cdf, without cancellation in the tail."""
    d = _check_dof(d)
    t = float(t)
    if math.isnan(t) or t < 0:
        raise DomainError(f"chi2_sf requires t >= 0, got {t}")
    return gamma_q(0.5 * d, 0.5 * t)


def _chi2_logpdf(d: float, t: float) -> float:
    h = 0.5 * d
    return (h - 1.0) * math.log(t) - 0.5 * t - h * math.log(2.0) - math.lgamma(h)


def chi2_quantile(d: float, p: float, tol: float = 1e-12) -> float:
    """Inverse of :func:`chi2_cdf` in ``t``.

    Bracketed Newton iteration; any step leaving the bracket is replaced by
    bisection.
    """
    d = _check_dof(d)
    p = float(p)
    if not (0.0 <= p < 1.0):
        raise DomainError(f"chi2_quantile requires 0 <= p < 1, got {p}")
    if p == 0.0:
        return 0.0
    lo, hi = 0.0, d + 20.0 * math.sqrt(d) + 40.0
    while chi2_cdf(d, hi) < p:
        lo, hi = hi, 2.0 * hi
    t = max(d - 2.0, 0.5 * hi) if d > 2 else 0.5 * hi
    t = min(max(t, lo), hi)
    for _ in range(500):
        f = chi2_cdf(d, t) - p
        if abs(f) <= tol:
            return t
        if f < 0:
            lo = t
        else:
            hi = t
        step = None
        if t > 0:
            logpdf = _chi2_logpdf(d, t)
            if logpdf > -700:
                step = t - f / math.exp(logpdf)
        if step is None or not (lo < step < hi):
            step = 0.5 * (lo + hi)
        if hi - lo <= 4 * _EPS * hi:
            return step
        t = step
    return t


def noncentral_chi2_cdf(d: float, w: float, t: float, tail: float = 1e-12) -> float:
    """CDF of the noncentral chi-square with ``d`` dof and noncentrality ``w``.

    Poisson mixture of central CDFs, summed outward from the modal Poisson
    index so that large ``w`` does not underflow the leading weights.
    """
    d = _check_dof(d)
    w = float(w)
    t = float(t)
    if math.isnan(w) or w < 0:
        raise DomainError(f"noncentrality must be >= 0, got {w}")
    if math.isnan(t) or t < 0:
        raise DomainError(f"noncentral_chi2_cdf requires t >= 0, got {t}")
    if t == 0:
        return 0.0
    lam = 0.5 * w
    if lam == 0:                      # also catches subnormal w
        return chi2_cdf(d, t)
    log_lam = math.log(lam)
    k0 = int(math.floor(lam))

    def weight(k: int) -> float:
        return math.exp(-lam + k * log_lam - math.lgamma(k + 1.0))

    mass = 0.0
    total = 0.0
    w0 = weight(k0)
    mass += w0
    total += w0 * chi2_cdf(d + 2 * k0, t)
    up, down = k0 + 1, k0 - 1
    while 1.0 - mass >= tail:
        w_up = weight(up)
        w_down = weight(down) if down >= 0 else 0.0
        if w_up == 0.0 and w_down == 0.0:
            break
        if w_up > 0.0:
            mass += w_up
            total += w_up * chi2_cdf(d + 2 * up, t)
            up += 1
        if w_down > 0.0:
            mass += w_down
            total += w_down * chi2_cdf(d + 2 * down, t)
            down -= 1
    return min(1.0, max(0.0, total))


def quadratic_form_cdf(weights, shifts_sq, t: float, tail: float = 1e-13, max_terms: int = 100_000) -> float:
    """Upper bound on P(sum_k lam_k (y_k + b_k)^2 <= t) for y ~ N(0, I) and lam_k > 0.

    ``weights`` holds lam_k and ``shifts_sq`` holds b_k^2. Expands the law as
    a mixture sum_n a_n F_{chi2_{d+2n}}(t / beta) with beta = min lam, whose
    weights are nonnegative and sum to one. Weight left unsummed is charged
    at the next central CDF, so the result is never below the true value and
    exceeds it by at most about ``tail``.
    """
    lam = np.asarray(weights, dtype=float).ravel()
    b2 = np.asarray(shifts_sq, dtype=float).ravel()
    t = float(t)
    if lam.size == 0 or lam.shape != b2.shape:
        raise DomainError("weights and shifts_sq must be nonempty and of equal length")
    if np.any(~(lam > 0)) or np.any(~(b2 >= 0)) or not np.all(np.isfinite(lam)) or not np.all(np.isfinite(b2)):
        raise DomainError("weights must be finite and > 0, shifts_sq finite and >= 0")
    if math.isnan(t) or t < 0:
        raise DomainError(f"quadratic_form_cdf requires t >= 0, got {t}")
    if t == 0:
        return 0.0
    d = lam.size
    beta = float(lam.min())
    g = 1.0 - beta / lam
    gmax = float(g.max())
    # log h(z) = log a_0 + sum_m c_m z^m; terms beyond n_coef are dropped, which only lowers the a_n
    n_coef = 1 if gmax <= 0 else min(max_terms, 1 + int(math.ceil(-40.0 / math.log10(gmax))))
    m = np.arange(1, n_coef + 1)
    c = np.array([float(np.sum(g ** k / (2.0 * k) + 0.5 * b2 * (1.0 - g) * g ** (k - 1))) for k in m])
    mc = m * c
    log_a0 = 0.5 * float(np.sum(np.log(beta / lam))) - 0.5 * float(np.sum(b2))

    x = t / beta
    log_half_x = math.log(0.5 * x)
    F = chi2_cdf(d, x)
    coef = [1.0]                      # a_n / exp(scale)
    scale = log_a0
    mass = total = 0.0
    for n in range(max_terms):
        if n > 0:
            k = min(n, n_coef)
            coef.append(float(np.dot(mc[:k], coef[-1:-k - 1:-1])) / n)
            if coef[-1] > 1e250:
                coef = [v * 1e-250 for v in coef]
                scale += 250.0 * math.log(10.0)
        a = coef[-1] * math.exp(scale) if scale > -745.0 else 0.0
        mass += a
        total += a * F
        F = max(0.0, F - math.exp((0.5 * d + n) * log_half_x - 0.5 * x - math.lgamma(0.5 * d + n + 1.0)))
        if max(0.0, 1.0 - mass) * F <= tail:
            break
    return min(1.0, total + max(0.0, 1.0 - mass) * F + (n + 1) * 4.0 * _EPS)


# --------------------------------------------------------------------------
# Standard normal
# --------------------------------------------------------------------------

def std_normal_cdf(x: float) -> float:
    x = float(x)
    if math.isnan(x):
        raise DomainError("std_normal_cdf of NaN")
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def std_normal_quantile(p: float) -> float:
    p = float(p)
    if not (0.0 < p < 1.0):
        raise DomainError(f"std_normal_quantile requires 0 < p < 1, got {p}")
    return _STD_NORMAL.inv_cdf(p)


# --------------------------------------------------------------------------
# Symmetric matrices
# --------------------------------------------------------------------------

def symmetric(m) -> np.ndarray:
    """Mirror the lower triangle of ``m`` onto the upper one.

    The result is exactly symmetric (``a[i, j] == a[j, i]`` bitwise).
    """
    a = np.array(m, dtype=float, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {a.shape}")
    lower = np.tril(a)
    return lower + np.tril(a, -1).T


@dataclass(frozen=True)
class SpdFactorization:
    """Cholesky factor ``lower`` with ``lower @ lower.T == source``."""

    lower: np.ndarray
    log_det: float

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def solve(self, b) -> np.ndarray:
        """Solve ``A x = b``; ``b`` may be a vector or a (d, m) matrix."""
        y = solve_triangular(self.lower, b, lower=True, check_finite=False)
        return solve_triangular(self.lower.T, y, lower=False, check_finite=False)

    def whiten(self, b) -> np.ndarray:
        """``L^{-1} b``, so that ``||whiten(b)||^2 = b^T A^{-1} b``."""
        return solve_triangular(self.lower, b, lower=True, check_finite=False)

    def inverse(self) -> np.ndarray:
        return symmetric(self.solve(np.eye(self.dim)))


def spd_factorize(m) -> SpdFactorization:
    """Column Cholesky factorization of a symmetric positive-definite matrix.

    Raises NotPositiveDefiniteError when a pivot falls at or below
    ``1e-12 * max(diag)``.
    """
    a = symmetric(m)
    if not np.all(np.isfinite(a)):
        raise DomainError("matrix has non-finite entries")
    d = a.shape[0]
    scale = float(np.max(np.abs(np.diag(a)))) if d else 0.0
    floor = 1e-12 * scale
    lower = np.zeros_like(a)
    for j in range(d):
        row = lower[j, :j]
        pivot = a[j, j] - row @ row
        if not pivot > floor:
            raise NotPositiveDefiniteError(j, float(pivot))
        ljj = math.sqrt(pivot)
        lower[j, j] = ljj
        if j + 1 < d:
            lower[j + 1:, j] = (a[j + 1:, j] - lower[j + 1:, :j] @ row) / ljj
    log_det = 2.0 * float(np.sum(np.log(np.diag(lower))))
    return SpdFactorization(lower=lower, log_det=log_det)


def sym_eigenvalues(m) -> np.ndarray:
    """All eigenvalues of a symmetric matrix, ascending."""
    a = symmetric(m)
    if not np.all(np.isfinite(a)):
        raise DomainError("matrix has non-finite entries")
    return np.sort(np.linalg.eigvalsh(a))
