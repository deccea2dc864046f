"""Synthetic studies: circle-mixture generators, method comparison, radius-error scaling."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .baselines import AttackConfig, SmoothingConfig, empirical_robust_accuracy, smoothed_accuracy, \
    smoothed_certify_batch
from .ellips import certified_accuracy, certify_batch
from .formats import CurveTable, ValidationError, check_grid
from .localization import DEFAULT_DELTA, pal_certified_accuracy
from .mixture import GaussianComponent, LabeledDataset, MixtureModel, fit, sample, stream

ISOTROPIC = "isotropic"
ANISOTROPIC = "anisotropic"
PRINCIPAL_VARIANCES = (1.5, 0.5)


@dataclass(frozen=True)
class SyntheticConfig:
    K: int = 3
    circle_radius: float = 2.0
    dimension: int = 2
    covariance_kind: str = ISOTROPIC
    n_train: int = 5000
    n_eval: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.K < 2:
            raise ValidationError(f"K must be >= 2, got {self.K}")
        if not self.circle_radius > 0:
            raise ValidationError(f"circle radius must be > 0, got {self.circle_radius}")
        if self.dimension < 2:
            raise ValidationError(f"dimension must be >= 2, got {self.dimension}")
        if self.covariance_kind not in (ISOTROPIC, ANISOTROPIC):
            raise ValidationError(f"covariance kind must be {ISOTROPIC!r} or {ANISOTROPIC!r}")
        if self.n_train < 1 or self.n_eval < 1:
            raise ValidationError("n_train and n_eval must be >= 1")


@dataclass(frozen=True)
class SyntheticData:
    model: MixtureModel
    train: LabeledDataset
    eval: LabeledDataset


def circle_model(K: int, radius: float, d: int, kind: str = ISOTROPIC) -> MixtureModel:
    """Equal-prior mixture with means evenly spaced on a circle in the first two axes.

    The anisotropic kind puts variance 1.5 along the mean direction, 0.5
    along its in-plane normal, and 1 on the remaining axes.
    """
    comps = []
    for k in range(K):
        a = 2.0 * math.pi * k / K
        u = np.zeros(d)
        u[:2] = math.cos(a), math.sin(a)
        cov = np.eye(d)
        if kind == ANISOTROPIC:
            v = np.zeros(d)
            v[:2] = -math.sin(a), math.cos(a)
            cov[:2, :2] = 0.0
            cov += PRINCIPAL_VARIANCES[0] * np.outer(u, u) + PRINCIPAL_VARIANCES[1] * np.outer(v, v)
        comps.append(GaussianComponent(radius * u, cov, 1.0 / K))
    return MixtureModel(tuple(comps), tuple(str(k) for k in range(K)))


def make_synthetic(cfg: SyntheticConfig) -> SyntheticData:
    model = circle_model(cfg.K, cfg.circle_radius, cfg.dimension, cfg.covariance_kind)
    return SyntheticData(model, sample(model, cfg.n_train, cfg.seed, 1), sample(model, cfg.n_eval, cfg.seed, 2))


# ---------------------------------------------------------------------------
# Method comparison
# ---------------------------------------------------------------------------

COMPARISON_COLUMNS = ["epsilon", "ellips_fitted", "ellips_true", "pal", "pgd_empirical", "smoothing"]


@dataclass(frozen=True)
class ComparisonConfig:
    delta: float = DEFAULT_DELTA
    attack: AttackConfig = field(default_factory=AttackConfig)
    sigmas: tuple = (0.25, 0.5, 1.0)
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    run_smoothing: bool = True


def _certacc(model: MixtureModel, data: LabeledDataset, eps: np.ndarray) -> np.ndarray:
    cert = certify_batch(model, data.X)
    return certified_accuracy(cert.predicted == model.label_index(data.labels), cert.radius, eps)


def comparison_study(cfg: SyntheticConfig, eps_grid, comp: ComparisonConfig | None = None) -> CurveTable:
    """Certified and empirical accuracy curves of all methods on one synthetic mixture.

    ELLIPS, PGD and smoothing use the mixture fitted on the training split and
    are scored on the evaluation split; the localization baseline and the
    ``ellips_true`` column use the generating parameters. The smoothing column
    is the upper envelope over the configured noise levels (NaN when skipped).
    """
    comp = comp or ComparisonConfig()
    eps = check_grid(eps_grid)
    syn = make_synthetic(cfg)
    fitted = fit(syn.train)
    y = fitted.label_index(syn.eval.labels)
    ell_fit = _certacc(fitted, syn.eval, eps)
    ell_true = _certacc(syn.model, syn.eval, eps)
    pal = pal_certified_accuracy(syn.model, eps, comp.delta).column("pal_certacc_clamped")
    atk = AttackConfig(0.0, comp.attack.steps, comp.attack.step_size, comp.attack.restarts, cfg.seed)
    pgd = empirical_robust_accuracy(fitted, syn.eval.X, y, eps, atk)
    smooth = np.full(eps.size, np.nan)
    if comp.run_smoothing:
        smooth[:] = 0.0
        for k, s in enumerate(comp.sigmas):
            sc = SmoothingConfig(s, comp.smoothing.n0, comp.smoothing.n, comp.smoothing.alpha)
            pred, rad = smoothed_certify_batch(fitted, syn.eval.X, sc, cfg.seed + 7919 * (k + 1))
            smooth = np.maximum(smooth, smoothed_accuracy(pred, rad, y, eps)[0])
    rows = [list(r) for r in zip(eps, ell_fit, ell_true, pal, pgd, smooth)]
    return CurveTable(list(COMPARISON_COLUMNS), rows)


# ---------------------------------------------------------------------------
# Radius-error scaling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalingStudyConfig:
    sample_sizes: tuple = (10, 100, 500, 1000)
    dims: tuple = (2, 10, 100)
    trials: int = 10
    seed: int = 0
    K: int = 3
    mean_norm: float = 4.0
    n_probe: int = 200
    workers: int | None = None

    def __post_init__(self):
        if len(set(self.sample_sizes)) < 2 or len(set(self.dims)) < 2:
            raise ValidationError("need at least two distinct sample sizes and two distinct dimensions")
        if min(self.sample_sizes) < 1 or min(self.dims) < 2:
            raise ValidationError("sample sizes must be >= 1 and dimensions >= 2")
        if self.trials < 1:
            raise ValidationError(f"trials must be >= 1, got {self.trials}")


@dataclass
class RegressionReport:
    alpha: float             # slope on log n
    beta: float              # slope on log d
    intercept: float
    alpha_se: float
    beta_se: float
    residual_std: float
    n_obs: int
    failed: int
    cells: list

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "intercept": self.intercept,
                "alpha_se": self.alpha_se, "beta_se": self.beta_se,
                "residual_std": self.residual_std, "n_obs": self.n_obs, "failed_cells": self.failed,
                "cells": self.cells}


def scaling_truth(cfg: ScalingStudyConfig, d: int) -> MixtureModel:
    """Random ground truth for dimension ``d``, fixed across n and trials.

    Means have norm ``mean_norm`` in uniformly random directions; covariances
    are A A^T / d + I / 2 with Gaussian A, equal priors.
    """
    rng = stream(cfg.seed, 10, d)
    comps = []
    for _ in range(cfg.K):
        g = rng.standard_normal(d)
        A = rng.standard_normal((d, d))
        comps.append(GaussianComponent(cfg.mean_norm * g / np.linalg.norm(g), A @ A.T / d + 0.5 * np.eye(d),
                                       1.0 / cfg.K))
    return MixtureModel(tuple(comps), tuple(str(k) for k in range(cfg.K)))


def _per_class_sample(model: MixtureModel, n: int, rng) -> LabeledDataset:
    X = np.concatenate([c.mean + rng.standard_normal((n, model.dimension)) @ c.factor.lower.T
                        for c in model.components])
    labels = np.repeat(np.array(model.class_labels, dtype=object), n)
    return LabeledDataset(X, labels)


def _cell(cfg: ScalingStudyConfig, truth: MixtureModel, true_r: np.ndarray, probes: np.ndarray,
          n: int, d: int, trial: int) -> dict:
    rec = {"n": n, "d": d, "trial": trial}
    if n <= d + 1:
        return {**rec, "error": None, "failed": "n <= d + 1: sample covariance is singular"}
    data = _per_class_sample(truth, n, stream(cfg.seed, 8, n, d, trial))
    try:
        model = fit(data, reg=0.0)
    except ArithmeticError as exc:
        return {**rec, "error": None, "failed": str(exc)}
    est_r = certify_batch(model, probes).radius
    ok = np.isfinite(est_r) & np.isfinite(true_r)
    err = float(np.mean(np.abs(est_r[ok] - true_r[ok]))) if ok.any() else math.nan
    if not (err > 0 and math.isfinite(err)):
        return {**rec, "error": None, "failed": "non-finite radius error"}
    return {**rec, "error": err, "failed": None}


def regress_log_error(cells: list) -> tuple:
    good = [c for c in cells if c["error"] is not None]
    A = np.array([[1.0, math.log(c["n"]), math.log(c["d"])] for c in good])
    b = np.log([c["error"] for c in good])
    if len(good) <= 3 or np.linalg.matrix_rank(A) < 3:
        raise ValidationError("regression design is rank deficient; need two distinct n and d among valid cells")
    coef, *_ = np.linalg.lstsq(A, b, rcond=None)
    resid = b - A @ coef
    s2 = float(resid @ resid) / (len(b) - 3)
    cov = s2 * np.linalg.inv(A.T @ A)
    return coef, np.sqrt(np.diag(cov)), math.sqrt(s2), len(b)


def scaling_study(cfg: ScalingStudyConfig) -> RegressionReport:
    """Mean |R_hat(x) - R(x)| over frozen probes, regressed on (log n, log d).

    Each (n, d, trial) cell draws n points per class from its own stream, so
    results do not depend on the worker count.
    """
    jobs = []
    for d in cfg.dims:
        truth = scaling_truth(cfg, d)
        probes = sample(truth, cfg.n_probe, cfg.seed, 9, d).X
        true_r = certify_batch(truth, probes).radius
        jobs += [(truth, true_r, probes, n, d, t) for n in cfg.sample_sizes for t in range(cfg.trials)]
    workers = cfg.workers or os.cpu_count() or 1
    with ThreadPoolExecutor(max_workers=workers) as pool:
        cells = list(pool.map(lambda j: _cell(cfg, *j), jobs))
    coef, se, sd, m = regress_log_error(cells)
    failed = sum(c["failed"] is not None for c in cells)
    return RegressionReport(float(coef[1]), float(coef[2]), float(coef[0]), float(se[1]), float(se[2]),
                            sd, m, failed, cells)
