"""Certification on precomputed latent embeddings.

An encoder f is not run here: each sample carries its embedding z = f(x)
and a local Lipschitz constant L_x. A latent radius R_z certifies the
input-space ball of radius R_z / L_x, since ||f(x) - f(x')|| <= L_x ||x - x'||.
When the latent law P_z is only close to the fitted mixture Q_z,
KL(P_z || Q_z) <= kl gives CertAcc(P_z) >= CertAcc(Q_z) - sqrt(kl / 2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma

from .ellips import Certificate, certified_accuracy, certify, certify_batch
from .formats import CurveTable, ValidationError, check_grid
from .mixture import LabeledDataset, MixtureModel, fit, load_dataset, sample, stream
from .numkernel import NotPositiveDefiniteError, chi2_sf, spd_factorize, std_normal_cdf, log_gamma


@dataclass(frozen=True)
class LatentSample:
    z: np.ndarray
    label: str
    lipschitz: float

    def __post_init__(self):
        if not (math.isfinite(self.lipschitz) and self.lipschitz > 0):
            raise ValidationError(f"lipschitz constant must be finite and > 0, got {self.lipschitz}")


def input_space_radius(latent_radius, lipschitz, c_M=None, lambda_min_W=None, margin=None,
                       legacy_formula: bool = False):
    """Input-space radius R_z / L_x.

    ``legacy_formula=True`` instead evaluates m / (L_x sqrt(c^2 + (-lam)_+ m) + c),
    kept only for side-by-side comparison; it needs c_M, lambda_min_W and margin.
    """
    L = np.asarray(lipschitz, dtype=float)
    if np.any(~(L > 0)):
        raise ValidationError("lipschitz constants must be > 0")
    if not legacy_formula:
        return np.asarray(latent_radius, dtype=float) / L
    m = np.asarray(margin, dtype=float)
    c = np.asarray(c_M, dtype=float)
    neg = np.maximum(-np.asarray(lambda_min_W, dtype=float), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = m / (L * np.sqrt(c * c + neg * m) + c)
    return np.where(m <= 0, 0.0, r)


def input_space_certify(model: MixtureModel, s: LatentSample, legacy_formula: bool = False) -> Certificate:
    cert = certify(model, s.z)
    r = input_space_radius(cert.radius, s.lipschitz, cert.c_M, cert.lambda_min_W, cert.margin,
                           legacy_formula=legacy_formula)
    return Certificate(float(r), cert.c_M, cert.lambda_min_W, cert.margin, cert.predicted)


# ---------------------------------------------------------------------------
# KL degradation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DegradationReport:
    kl_epsilon: float
    cert_acc_gmm: float

    @property
    def cert_acc_lower_bound_raw(self) -> float:
        return self.cert_acc_gmm - math.sqrt(self.kl_epsilon / 2.0)

    @property
    def cert_acc_lower_bound(self) -> float:
        return max(0.0, self.cert_acc_lower_bound_raw)


def degraded_certified_accuracy(cert_acc_gmm: float, kl_epsilon: float) -> DegradationReport:
    if not (kl_epsilon >= 0):
        raise ValidationError(f"KL budget must be >= 0, got {kl_epsilon}")
    if not (0.0 <= cert_acc_gmm <= 1.0):
        raise ValidationError(f"certified accuracy must lie in [0, 1], got {cert_acc_gmm}")
    return DegradationReport(float(kl_epsilon), float(cert_acc_gmm))


@dataclass(frozen=True)
class KLEstimate:
    estimate: float
    raw: float
    stderr: float
    k: int
    n: int


def kl_knn_estimate(p_samples, q_model: MixtureModel, k: int = 5) -> KLEstimate:
    """KL(P || Q) from samples of P and the exact mixture density of Q.

    log p is the Kozachenko-Leonenko k-NN log-density (digamma corrected);
    log q is evaluated exactly. The estimate is clamped at 0 and carries a
    delete-one jackknife standard error over the per-sample terms.
    """
    X = np.atleast_2d(np.asarray(p_samples, dtype=float))
    n, d = X.shape
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if n <= k:
        raise ValidationError(f"need more samples than neighbours: n={n}, k={k}")
    if d != q_model.dimension:
        raise ValidationError(f"dimension mismatch: expected d={q_model.dimension}, found d={d}")
    dist, _ = cKDTree(X).query(X, k=k + 1)
    rho = np.maximum(dist[:, k], np.finfo(float).tiny)
    log_vd = 0.5 * d * math.log(math.pi) - log_gamma(0.5 * d + 1.0)
    log_p = digamma(k) - digamma(n) - log_vd - d * np.log(rho)
    terms = log_p - q_model.log_density(X)
    raw = float(terms.mean())
    loo = (terms.sum() - terms) / (n - 1)
    se = math.sqrt((n - 1) / n * float(np.sum((loo - loo.mean()) ** 2)))
    return KLEstimate(max(0.0, raw), raw, se, k, n)


# ---------------------------------------------------------------------------
# Mardia
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MardiaClass:
    label: str
    n: int
    skewness: float
    kurtosis: float
    skewness_stat: float
    kurtosis_stat: float
    p_skewness: float
    p_kurtosis: float
    level: float = 0.05

    @property
    def passed(self) -> bool:
        return self.p_skewness >= self.level and self.p_kurtosis >= self.level


@dataclass(frozen=True)
class MardiaReport:
    classes: tuple

    @property
    def pass_rate(self) -> float:
        return float(np.mean([c.passed for c in self.classes]))

    def to_dict(self) -> dict:
        return {c.label: {"n": c.n, "skewness": c.skewness, "kurtosis": c.kurtosis,
                          "skewness_stat": c.skewness_stat, "kurtosis_stat": c.kurtosis_stat,
                          "p_skewness": c.p_skewness, "p_kurtosis": c.p_kurtosis,
                          "pass": c.passed}
                for c in self.classes}


def mardia_statistics(X, block: int = 1024):
    """Sample (b1, b2) with the MLE covariance; memory is O(block * n)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    C = X - X.mean(axis=0)
    fac = spd_factorize(C.T @ C / n)
    Y = fac.whiten(C.T).T             # rows y_j with y_j . y_k = g_jk
    b1 = 0.0
    for a in range(0, n, block):
        G = Y[a:a + block] @ Y.T
        b1 += float(np.sum(G ** 3))
    b1 /= n * n
    b2 = float(np.mean(np.sum(Y * Y, axis=1) ** 2))
    return b1, b2


def mardia_test(data: LabeledDataset, level: float = 0.05) -> MardiaReport:
    d = data.dimension
    out = []
    for lab in data.classes():
        X = data.X[data.labels == lab]
        n = X.shape[0]
        if n <= d + 1:
            raise ValidationError(f"class {lab!r}: Mardia's test needs n > d + 1, got n={n}, d={d}")
        try:
            b1, b2 = mardia_statistics(X)
        except NotPositiveDefiniteError as exc:
            raise ArithmeticError(f"class {lab!r}: sample covariance is singular ({exc})") from None
        skew_stat = n * b1 / 6.0
        dof = d * (d + 1) * (d + 2) / 6.0
        kurt_stat = (b2 - d * (d + 2)) / math.sqrt(8.0 * d * (d + 2) / n)
        out.append(MardiaClass(lab, n, b1, b2, skew_stat, kurt_stat, chi2_sf(dof, skew_stat),
                               2.0 * std_normal_cdf(-abs(kurt_stat)), level))
    return MardiaReport(tuple(out))


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

def random_linear_encoder(d: int, seed: int, spread: tuple = (0.5, 2.0)) -> np.ndarray:
    """Seeded d x d map U diag(s) V^T with singular values s uniform in ``spread``."""
    rng = stream(seed, 12)
    U, _ = np.linalg.qr(rng.standard_normal((d, d)))
    V, _ = np.linalg.qr(rng.standard_normal((d, d)))
    s = rng.uniform(spread[0], spread[1], size=d)
    return (U * s) @ V.T


def linear_encoder_dataset(model: MixtureModel, A, n: int, seed: int):
    """Sample inputs from ``model``, embed with z = A x, attach L = ||A||_op.

    Returns ``(inputs, latents)``; the latent dataset carries the lipschitz column.
    """
    A = np.asarray(A, dtype=float)
    inputs = sample(model, n, seed)
    L = float(np.linalg.norm(A, 2))
    latents = LabeledDataset(inputs.X @ A.T, inputs.labels, np.full(n, L))
    return inputs, latents


@dataclass
class PipelineResult:
    model: MixtureModel
    latent_curve: CurveTable
    input_curve: CurveTable
    degradation: CurveTable
    kl: KLEstimate
    mardia: MardiaReport | None

    def report(self) -> dict:
        eps = self.degradation.column("epsilon")
        return {
            "kl_epsilon": self.kl.estimate,
            "kl_raw": self.kl.raw,
            "kl_stderr": self.kl.stderr,
            "kl_k": self.kl.k,
            "epsilon": eps.tolist(),
            "cert_acc_gmm": self.degradation.column("cert_acc_gmm").tolist(),
            "lower_bound": self.degradation.column("lower_bound").tolist(),
            "lower_bound_raw": self.degradation.column("lower_bound_raw").tolist(),
            "cert_acc_empirical": self.latent_curve.column("certified_accuracy").tolist(),
            "mardia": None if self.mardia is None else self.mardia.to_dict(),
        }


def latent_pipeline(data, eps_grid, seed: int, k: int = 5, reg: float | None = None,
                    n_gmm: int | None = None, legacy_formula: bool = False) -> PipelineResult:
    """Fit, certify in input space, estimate KL and degrade, test normality.

    ``data`` is a LabeledDataset with a lipschitz column or a CSV path.
    ``cert_acc_gmm`` is the latent certified accuracy on ``n_gmm`` draws from
    the fitted mixture (default max(len(data), 10^4)); the lower bound applies
    it to the data law through the KL estimate, one value per grid point.
    """
    if not isinstance(data, LabeledDataset):
        data = load_dataset(data, require_lipschitz=True)
    if data.lipschitz is None:
        raise ValidationError("dataset has no 'lipschitz' column")
    eps = check_grid(eps_grid)
    model = fit(data, reg)
    cert = certify_batch(model, data.X)
    correct = cert.predicted == model.label_index(data.labels)
    r_in = input_space_radius(cert.radius, data.lipschitz, cert.c_M, cert.lambda_min_W, cert.margin,
                              legacy_formula=legacy_formula)
    latent_acc = certified_accuracy(correct, cert.radius, eps)
    input_acc = certified_accuracy(correct, r_in, eps)

    q_data = sample(model, n_gmm or max(len(data), 10_000), seed)
    q_cert = certify_batch(model, q_data.X)
    gmm_acc = certified_accuracy(q_cert.predicted == model.label_index(q_data.labels), q_cert.radius, eps)
    kl = kl_knn_estimate(data.X, model, k)
    rows = []
    for e, a in zip(eps, gmm_acc):
        rep = degraded_certified_accuracy(float(a), kl.estimate)
        rows.append([e, a, rep.cert_acc_lower_bound, rep.cert_acc_lower_bound_raw])

    try:
        mardia = mardia_test(data)
    except ValidationError:
        mardia = None                 # too few samples per class for the test
    return PipelineResult(
        model,
        CurveTable(["epsilon", "certified_accuracy"], [[e, a] for e, a in zip(eps, latent_acc)]),
        CurveTable(["epsilon", "certified_accuracy"], [[e, a] for e, a in zip(eps, input_acc)]),
        CurveTable(["epsilon", "cert_acc_gmm", "lower_bound", "lower_bound_raw"], rows),
        kl, mardia)
