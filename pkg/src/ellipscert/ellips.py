"""Nearest-ellipsoid (QDA) classifier and its closed-form l2 certificate.

score_i(x) = -(x - mu_i)^T Sigma_i^{-1} (x - mu_i) - log det Sigma_i + 2 log pi_i

For a point x with winner i* and margin m, the prediction is constant on
the l2 ball of radius

    m / (sqrt(c^2 + max(-lam, 0) * m) + c)

where c is the largest gap between the half-gradients Sigma^{-1}(x - mu) of
the winner and any other class, and lam is the smallest eigenvalue over all
differences of precision matrices Sigma_i^{-1} - Sigma_{i*}^{-1}.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .formats import CurveTable, ValidationError, check_grid
from .mixture import LabeledDataset, MixtureModel, mahalanobis_sq

FIRST_ORDER = "first_order"
SECOND_ORDER = "second_order"


@dataclass(frozen=True)
class ScoreReport:
    scores: np.ndarray
    predicted: int
    runner_up: int
    margin: float


@dataclass(frozen=True)
class Certificate:
    radius: float
    c_M: float
    lambda_min_W: float
    margin: float
    predicted: int

    @property
    def curvature_case(self) -> str:
        return SECOND_ORDER if self.lambda_min_W < 0 else FIRST_ORDER

    @property
    def unbounded(self) -> bool:
        return math.isinf(self.radius)


def _as_batch(model: MixtureModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.dimension:
        found = X.shape[-1] if X.ndim else 0
        raise ValidationError(f"dimension mismatch: expected d={model.dimension}, found d={found}")
    return X


def scores(model: MixtureModel, X) -> np.ndarray:
    """Score matrix of shape (n, K)."""
    X = _as_batch(model, X)
    out = np.empty((X.shape[0], model.K))
    for i, c in enumerate(model.components):
        out[:, i] = -mahalanobis_sq(c, X) - c.log_det_cov + 2.0 * math.log(c.prior)
    return out


def rank_scores(S: np.ndarray):
    """Winner, runner-up and margin for each row; ties go to the lowest index."""
    rows = np.arange(S.shape[0])
    top = np.argmax(S, axis=1)
    masked = S.copy()
    masked[rows, top] = -np.inf
    second = np.argmax(masked, axis=1)
    margin = S[rows, top] - S[rows, second]
    return top, second, np.maximum(margin, 0.0)


def score(model: MixtureModel, x) -> ScoreReport:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValidationError("score expects a single point; use scores() for batches")
    S = scores(model, x)
    top, second, margin = rank_scores(S)
    return ScoreReport(S[0], int(top[0]), int(second[0]), float(margin[0]))


def predict(model: MixtureModel, X) -> np.ndarray:
    return np.argmax(scores(model, X), axis=1)


def radius_formula(margin, c_M, lam) -> np.ndarray:
    """Certified radius from (margin, c_M, lambda_min_W), elementwise.

    Degenerate c_M = 0 uses the limit of the formula: +inf when lam >= 0,
    sqrt(m / -lam) otherwise. Zero margin gives zero radius.
    """
    m = np.asarray(margin, dtype=float)
    c = np.asarray(c_M, dtype=float)
    lam = np.asarray(lam, dtype=float)
    m, c, lam = np.broadcast_arrays(m, c, lam)
    neg = np.maximum(-lam, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = m / (np.sqrt(c * c + neg * m) + c)
        r = np.where(c == 0, np.where(lam >= 0, np.inf, np.sqrt(m / np.where(neg > 0, neg, 1.0))), r)
    return np.where(m <= 0, 0.0, r)


@dataclass(frozen=True)
class CertificateBatch:
    predicted: np.ndarray
    margin: np.ndarray
    c_M: np.ndarray
    lambda_min_W: np.ndarray
    radius: np.ndarray

    def __len__(self) -> int:
        return self.radius.size

    def __getitem__(self, k: int) -> Certificate:
        return Certificate(float(self.radius[k]), float(self.c_M[k]), float(self.lambda_min_W[k]),
                           float(self.margin[k]), int(self.predicted[k]))

    @property
    def cases(self) -> list[str]:
        return [SECOND_ORDER if v < 0 else FIRST_ORDER for v in self.lambda_min_W]


def certify_batch(model: MixtureModel, X) -> CertificateBatch:
    X = _as_batch(model, X)
    S = scores(model, X)
    top, _, margin = rank_scores(S)
    # half-gradients Sigma_i^{-1}(x - mu_i), shape (n, K, d)
    diff = X[:, None, :] - model.means[None, :, :]
    G = np.einsum("kde,nke->nkd", model.precisions, diff)
    rows = np.arange(X.shape[0])
    gap = np.linalg.norm(G[rows, top][:, None, :] - G, axis=2)
    gap[rows, top] = -np.inf
    c_M = gap.max(axis=1)
    lam = model.lambda_min_w[top]
    return CertificateBatch(top, margin, c_M, lam, radius_formula(margin, c_M, lam))


def certify(model: MixtureModel, x) -> Certificate:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValidationError("certify expects a single point; use certify_batch() for batches")
    return certify_batch(model, x)[0]


def certified_accuracy(correct: np.ndarray, radius: np.ndarray, eps_grid) -> np.ndarray:
    """Fraction of points that are correct and have radius >= eps, per eps."""
    eps = np.asarray(eps_grid, dtype=float)
    ok = correct[:, None] & (radius[:, None] >= eps[None, :])
    return ok.mean(axis=0)


def certified_accuracy_curve(model: MixtureModel, data: LabeledDataset, eps_grid) -> CurveTable:
    eps = check_grid(eps_grid)
    if len(data) == 0:
        raise ValidationError("empty dataset")
    cert = certify_batch(model, data.X)
    y = model.label_index(data.labels)
    acc = certified_accuracy(cert.predicted == y, cert.radius, eps)
    return CurveTable(["epsilon", "certified_accuracy"], [[e, a] for e, a in zip(eps, acc)])
