"""Localization calculators for Gaussian class-conditionals on ellipsoids.

Each class i is localized on S_i = {x : (x - mu_i)^T Sigma_i^{-1} (x - mu_i) <= r_i^2}.
The module reports the mass outside S_i (delta_i), the largest exponent
eps with Vol(S_i) <= C exp(-eps) (epsilon_cap_i), and the union bound
gamma_i on the mass class i puts on the 2*eps expansions
of the other classes' sets. 1 - delta - gamma is the certified accuracy of
the nearest-localization-set baseline.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .formats import CurveTable, ValidationError, check_grid
from .mixture import GaussianComponent, MixtureModel, mahalanobis_sq, stream
from .numkernel import (
    chi2_cdf, chi2_quantile, log_gamma, noncentral_chi2_cdf, quadratic_form_cdf, sym_eigenvalues, symmetric,
)

DEFAULT_DELTA = 0.001


def log_unit_ball_volume(d: int) -> float:
    return 0.5 * d * math.log(math.pi) - log_gamma(0.5 * d + 1.0)


def default_log_c(d: int) -> float:
    """ln C for C = Vol(unit ball) * e^d."""
    return log_unit_ball_volume(d) + d


@dataclass(frozen=True)
class LocalizationQuery:
    radii: tuple
    epsilon: float = 0.0
    C: float | None = None     # None means Vol(unit ball) * e^d

    def __post_init__(self):
        r = tuple(float(v) for v in np.atleast_1d(self.radii))
        if any(not (v > 0 and math.isfinite(v)) for v in r):
            raise ValidationError("localization radii must be finite and > 0")
        if not (self.epsilon >= 0):
            raise ValidationError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.C is not None and not self.C > 0:
            raise ValidationError(f"C must be > 0, got {self.C}")
        object.__setattr__(self, "radii", r)

    @classmethod
    def for_delta(cls, model: MixtureModel, delta: float, epsilon: float = 0.0, C=None):
        r = radius_for_delta(model.dimension, delta)
        return cls(tuple([r] * model.K), epsilon, C)

    def log_c(self, d: int) -> float:
        return default_log_c(d) if self.C is None else math.log(self.C)


def _check(model: MixtureModel, q: LocalizationQuery):
    if len(q.radii) != model.K:
        raise ValidationError(f"{len(q.radii)} radii for K={model.K} classes")


def radius_for_delta(d: int, delta: float) -> float:
    """Radius r with P(chi2_d > r^2) = delta."""
    if not (0 < delta < 1):
        raise ValidationError(f"delta must lie in (0, 1), got {delta}")
    return math.sqrt(chi2_quantile(d, 1.0 - delta))


def localization_params(model: MixtureModel, q: LocalizationQuery):
    """Per class ``(delta_i, epsilon_cap_i)`` as two arrays."""
    _check(model, q)
    d = model.dimension
    log_c = q.log_c(d)
    delta = np.array([1.0 - chi2_cdf(d, r * r) for r in q.radii])
    cap = np.array([log_gamma(0.5 * d + 1.0) + log_c - 0.5 * d * math.log(math.pi)
                    - d * math.log(r) - 0.5 * c.log_det_cov
                    for r, c in zip(q.radii, model.components)])
    return delta, cap


def expanded_radii(model: MixtureModel, q: LocalizationQuery) -> np.ndarray:
    """R_j = 2 eps / sqrt(lambda_min(Sigma_j)) + r_j, in Mahalanobis units of class j."""
    lam = np.array([sym_eigenvalues(c.covariance)[0] for c in model.components])
    return 2.0 * q.epsilon / np.sqrt(lam) + np.asarray(q.radii)


def noncentralities(model: MixtureModel) -> np.ndarray:
    """w[i, j] = (mu_i - mu_j)^T Sigma_j^{-1} (mu_i - mu_j)."""
    K = model.K
    w = np.zeros((K, K))
    for j, c in enumerate(model.components):
        w[:, j] = mahalanobis_sq(c, model.means)
    np.fill_diagonal(w, 0.0)
    return np.maximum(w, 0.0)


def overlap_term(ci: GaussianComponent, cj: GaussianComponent, R: float) -> float:
    """P_{x ~ N(mu_i, Sigma_i)}((x - mu_j)^T Sigma_j^{-1} (x - mu_j) <= R^2), rounded up.

    With x = mu_i + L_i z the form is (z + a)^T M (z + a), M = L_i^T Sigma_j^{-1} L_i,
    a = L_i^{-1} (mu_i - mu_j); in the eigenbasis of M it is a weighted sum of
    independent noncentral chi-squares with one degree of freedom each.
    """
    if np.array_equal(ci.covariance, cj.covariance):
        return noncentral_chi2_cdf(ci.dim, max(float(mahalanobis_sq(cj, ci.mean)), 0.0), R * R)
    Li = ci.factor.lower
    lam, V = np.linalg.eigh(symmetric(Li.T @ cj.factor.solve(Li)))
    a = ci.factor.whiten(ci.mean - cj.mean)
    return quadratic_form_cdf(lam, (V.T @ a) ** 2, R * R)


def strong_localization_gamma(model: MixtureModel, q: LocalizationQuery,
                              legacy_formula: bool = False) -> np.ndarray:
    """gamma_i = sum_{j != i} P_i(d_M(x, mu_j) <= R_j), clamped to [0, 1].

    ``legacy_formula=True`` uses the noncentral chi-square at the offset
    measured in Sigma_j for every pair; that is exact only when
    Sigma_i = Sigma_j and can undershoot the overlap mass otherwise.
    """
    _check(model, q)
    d = model.dimension
    R = expanded_radii(model, q)
    comps = model.components
    if legacy_formula:
        w = noncentralities(model)
        terms = lambda i, j: noncentral_chi2_cdf(d, w[i, j], R[j] ** 2)
    else:
        terms = lambda i, j: overlap_term(comps[i], comps[j], R[j])
    gamma = np.array([math.fsum(terms(i, j) for j in range(model.K) if j != i) for i in range(model.K)])
    return np.clip(gamma, 0.0, 1.0)


@dataclass(frozen=True)
class LocalizationReport:
    delta_i: np.ndarray
    epsilon_cap_i: np.ndarray
    gamma_i: np.ndarray

    @property
    def delta(self) -> float:
        return float(self.delta_i.max())

    @property
    def gamma(self) -> float:
        return float(self.gamma_i.max())

    @property
    def pal_certified_accuracy(self) -> float:
        return 1.0 - self.delta - self.gamma

    def to_dict(self, model: MixtureModel, q: LocalizationQuery) -> dict:
        return {
            "epsilon": q.epsilon,
            "log_C": q.log_c(model.dimension),
            "classes": [
                {"label": lab, "r": r, "delta": float(dl), "epsilon_cap": float(ec), "gamma": float(g)}
                for lab, r, dl, ec, g in zip(model.class_labels, q.radii, self.delta_i,
                                             self.epsilon_cap_i, self.gamma_i)
            ],
            "delta": self.delta,
            "gamma": self.gamma,
            "pal_certified_accuracy_raw": self.pal_certified_accuracy,
            "pal_certified_accuracy": max(0.0, self.pal_certified_accuracy),
        }


def localize(model: MixtureModel, q: LocalizationQuery, legacy_formula: bool = False) -> LocalizationReport:
    delta, cap = localization_params(model, q)
    return LocalizationReport(delta, cap, strong_localization_gamma(model, q, legacy_formula))


def pal_certified_accuracy(model: MixtureModel, eps_grid, delta: float = DEFAULT_DELTA,
                           legacy_formula: bool = False) -> CurveTable:
    """1 - delta - gamma(eps) with one delta shared by every class."""
    eps = check_grid(eps_grid)
    rows = []
    for e in eps:
        q = LocalizationQuery.for_delta(model, delta, float(e))
        rep = localize(model, q, legacy_formula)
        raw = rep.pal_certified_accuracy
        rows.append([e, max(0.0, raw), raw, rep.delta, rep.gamma])
    return CurveTable(["epsilon", "pal_certacc_clamped", "pal_certacc_raw", "delta", "gamma"], rows)


# ---------------------------------------------------------------------------
# Monte-Carlo check of the expansion mass
# ---------------------------------------------------------------------------

def distance_to_ellipsoid(component: GaussianComponent, r: float, X, iters: int = 200) -> np.ndarray:
    """Euclidean distance from each row of ``X`` to the set {d_M(., mu) <= r}.

    Works in the covariance eigenbasis: the projection is p*s/(s + t) with
    the multiplier t >= 0 solving sum p^2 s / (s + t)^2 = r^2; the left side
    is convex and decreasing in t, so Newton from t = 0 increases
    monotonically to the root.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    s, U = np.linalg.eigh(component.covariance)
    P = (X - component.mean) @ U
    inside = np.einsum("nd,d,nd->n", P, 1.0 / s, P) <= r * r
    out = np.zeros(X.shape[0])
    Q = P[~inside]
    if Q.size == 0:
        return out
    t = np.zeros(Q.shape[0])
    q2 = Q * Q
    for _ in range(iters):
        den = s[None, :] + t[:, None]
        g = np.sum(q2 * s / den ** 2, axis=1) - r * r
        dg = -2.0 * np.sum(q2 * s / den ** 3, axis=1)
        step = g / dg
        t = t - step
        if np.all(np.abs(step) <= 1e-15 * np.maximum(t, 1.0)):
            break
    ratio = t[:, None] / (s[None, :] + t[:, None])
    out[~inside] = np.linalg.norm(Q * ratio, axis=1)
    return out


def in_expansion(component: GaussianComponent, r: float, X, radius: float, R: float | None = None):
    """Membership of each row of ``X`` in the l2 ``radius``-expansion of the ellipsoid.

    ``R`` (the Mahalanobis radius of an enclosing ellipsoid) lets obvious
    outsiders skip the projection.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    dm2 = mahalanobis_sq(component, X)
    hit = dm2 <= r * r
    maybe = ~hit if R is None else (~hit & (dm2 <= R * R * (1 + 1e-12)))
    if np.any(maybe):
        hit[maybe] = distance_to_ellipsoid(component, r, X[maybe]) <= radius
    return hit


def monte_carlo_masses(model: MixtureModel, q: LocalizationQuery, n: int, seed: int):
    """Sampled P_i(S_i) and P_i(union_{j != i} S_j^{+2 eps}) for each class.

    Returns ``(inside, overlap)`` arrays of empirical frequencies.
    """
    _check(model, q)
    R = expanded_radii(model, q)
    inside = np.empty(model.K)
    overlap = np.empty(model.K)
    for i, c in enumerate(model.components):
        z = stream(seed, 5, i).standard_normal((n, model.dimension))
        X = c.mean + z @ c.factor.lower.T
        inside[i] = np.mean(mahalanobis_sq(c, X) <= q.radii[i] ** 2)
        hit = np.zeros(n, dtype=bool)
        for j, cj in enumerate(model.components):
            if j == i:
                continue
            todo = ~hit
            hit[todo] = in_expansion(cj, q.radii[j], X[todo], 2.0 * q.epsilon, R[j])
        overlap[i] = hit.mean()
    return inside, overlap
