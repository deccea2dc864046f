"""Labeled Gaussian mixtures: estimation, sampling, and file formats."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .formats import FORMAT_VERSION, ParseError, ValidationError, dump_json, fmt_float, parse_float
from .numkernel import SpdFactorization, spd_factorize, sym_eigenvalues, symmetric

_PRIOR_TOL = 1e-12


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by ``(seed, *keys)``.

    Streams with different keys are statistically independent, so per-class
    or per-cell draws do not depend on the order in which they are made.
    """
    words = [int(seed) % 2**64] + [int(k) % 2**64 for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


@dataclass(frozen=True, eq=False)
class GaussianComponent:
    mean: np.ndarray
    covariance: np.ndarray
    prior: float
    factor: SpdFactorization = field(init=False, repr=False)

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = symmetric(np.atleast_2d(np.asarray(self.covariance, dtype=float)))
        if cov.shape != (mean.size, mean.size):
            raise ValidationError(f"covariance shape {cov.shape} does not match mean dimension {mean.size}")
        if not np.all(np.isfinite(mean)):
            raise ValidationError("mean has non-finite entries")
        prior = float(self.prior)
        if not (0.0 < prior <= 1.0):
            raise ValidationError(f"prior must lie in (0, 1], got {prior}")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "factor", spd_factorize(cov))

    @property
    def dim(self) -> int:
        return self.mean.size

    @cached_property
    def precision(self) -> np.ndarray:
        p = self.factor.inverse()
        p.setflags(write=False)
        return p

    @property
    def log_det_cov(self) -> float:
        return self.factor.log_det


def mahalanobis_sq(component: GaussianComponent, x) -> float | np.ndarray:
    """(x - mu)^T Sigma^{-1} (x - mu) through the Cholesky factor.

    ``x`` may be one point of shape (d,) or a batch of shape (n, d).
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != component.dim:
        raise ValidationError(f"dimension mismatch: expected d={component.dim}, found d={x.shape[-1]}")
    diff = x - component.mean
    if diff.ndim == 1:
        y = component.factor.whiten(diff)
        return float(y @ y)
    y = component.factor.whiten(diff.T)
    return np.einsum("ij,ij->j", y, y)


@dataclass(frozen=True, eq=False)
class MixtureModel:
    components: tuple
    class_labels: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        labels = tuple(str(c) for c in self.class_labels)
        if len(comps) < 2:
            raise ValidationError(f"a mixture needs K >= 2 components, got K={len(comps)}")
        if len(labels) != len(comps):
            raise ValidationError(f"{len(labels)} labels for {len(comps)} components")
        if len(set(labels)) != len(labels):
            raise ValidationError("class labels must be distinct")
        d = comps[0].dim
        if any(c.dim != d for c in comps):
            raise ValidationError("all components must share one dimension")
        total = math.fsum(c.prior for c in comps)
        if abs(total - 1.0) > _PRIOR_TOL:
            raise ValidationError(f"priors must sum to 1, got sum {total!r}")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "class_labels", labels)

    @classmethod
    def from_params(cls, means, covs, priors, labels=None) -> "MixtureModel":
        means = np.asarray(means, dtype=float)
        if labels is None:
            labels = [str(i) for i in range(len(means))]
        comps = [GaussianComponent(m, c, p) for m, c, p in zip(means, covs, priors)]
        if not (len(comps) == len(means) == len(priors) == len(covs)):
            raise ValidationError("means, covs and priors must have equal length")
        return cls(tuple(comps), tuple(labels))

    @property
    def K(self) -> int:
        return len(self.components)

    @property
    def dimension(self) -> int:
        return self.components[0].dim

    @cached_property
    def means(self) -> np.ndarray:
        return np.stack([c.mean for c in self.components])

    @cached_property
    def covariances(self) -> np.ndarray:
        return np.stack([c.covariance for c in self.components])

    @cached_property
    def precisions(self) -> np.ndarray:
        return np.stack([c.precision for c in self.components])

    @cached_property
    def log_dets(self) -> np.ndarray:
        return np.array([c.log_det_cov for c in self.components])

    @cached_property
    def priors(self) -> np.ndarray:
        return np.array([c.prior for c in self.components])

    @cached_property
    def lambda_min_w(self) -> np.ndarray:
        """For each winner i*, min over i != i* of lambda_min(P_i - P_{i*})."""
        P = self.precisions
        out = np.empty(self.K)
        for s in range(self.K):
            out[s] = min(sym_eigenvalues(P[i] - P[s])[0] for i in range(self.K) if i != s)
        return out

    def label_index(self, labels: Sequence[str]) -> np.ndarray:
        """Dense indices of ``labels``; unknown labels map to -1."""
        lookup = {lab: i for i, lab in enumerate(self.class_labels)}
        return np.array([lookup.get(str(lab), -1) for lab in labels], dtype=int)

    def log_density(self, x) -> np.ndarray:
        """Mixture log-density at each row of ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = self.dimension
        terms = np.empty((x.shape[0], self.K))
        for i, c in enumerate(self.components):
            terms[:, i] = (math.log(c.prior) - 0.5 * (d * math.log(2 * math.pi) + c.log_det_cov)
                           - 0.5 * mahalanobis_sq(c, x))
        top = terms.max(axis=1, keepdims=True)
        return (top + np.log(np.exp(terms - top).sum(axis=1, keepdims=True)))[:, 0]


@dataclass(eq=False)
class LabeledDataset:
    X: np.ndarray
    labels: np.ndarray
    lipschitz: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.labels = np.array([str(v) for v in self.labels], dtype=object)
        if self.X.shape[0] != self.labels.size:
            raise ValidationError(f"{self.X.shape[0]} samples but {self.labels.size} labels")
        if not np.all(np.isfinite(self.X)):
            raise ValidationError("samples have non-finite entries")
        if self.lipschitz is not None:
            self.lipschitz = np.asarray(self.lipschitz, dtype=float).reshape(-1)
            if self.lipschitz.size != self.labels.size:
                raise ValidationError("lipschitz column length does not match samples")
            if not np.all(np.isfinite(self.lipschitz) & (self.lipschitz > 0)):
                raise ValidationError("lipschitz constants must be finite and > 0")

    def __len__(self) -> int:
        return self.labels.size

    @property
    def dimension(self) -> int:
        return self.X.shape[1]

    def classes(self) -> list[str]:
        """Distinct labels in first-appearance order."""
        seen: dict[str, None] = {}
        for lab in self.labels:
            seen.setdefault(lab, None)
        return list(seen)


def fit(data: LabeledDataset, reg: float | None = None) -> MixtureModel:
    """Per-class sample mean, MLE covariance (divisor n_i) and proportions.

    Each covariance is shifted by ``max(0, reg - lambda_min)`` along the
    identity so its smallest eigenvalue is at least ``reg``; by default
    ``reg`` is 1e-6 times that class's mean diagonal.
    """
    classes = data.classes()
    if len(classes) < 2:
        raise ValidationError(f"fit needs at least 2 classes, found {len(classes)}")
    n = len(data)
    comps = []
    for lab in classes:
        Xi = data.X[data.labels == lab]
        ni = Xi.shape[0]
        if ni < 2:
            raise ValidationError(f"class {lab!r} has {ni} sample(s); at least 2 required")
        mu = Xi.mean(axis=0)
        C = Xi - mu
        S = symmetric(C.T @ C / ni)
        r = 1e-6 * float(np.mean(np.diag(S))) if reg is None else float(reg)
        if r < 0:
            raise ValidationError(f"reg must be >= 0, got {r}")
        lam = max(0.0, r - float(sym_eigenvalues(S)[0]))
        if lam > 0:
            S = S + lam * np.eye(S.shape[0])
        comps.append(GaussianComponent(mu, S, ni / n))
    return MixtureModel(tuple(comps), tuple(classes))


def sample(model: MixtureModel, n: int, seed: int, *keys: int) -> LabeledDataset:
    """Draw ``n`` labeled points; labels from the priors, then per-class streams.

    Extra ``keys`` select an independent draw under the same seed.
    """
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    idx = stream(seed, *keys, 0).choice(model.K, size=n, p=model.priors)
    X = np.empty((n, model.dimension))
    for i, c in enumerate(model.components):
        rows = np.flatnonzero(idx == i)
        z = stream(seed, *keys, 1, i).standard_normal((rows.size, model.dimension))
        X[rows] = c.mean + z @ c.factor.lower.T
    labels = np.array(model.class_labels, dtype=object)[idx]
    return LabeledDataset(X, labels)


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def model_to_dict(model: MixtureModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "d": model.dimension,
        "classes": list(model.class_labels),
        "priors": [float(p) for p in model.priors],
        "means": model.means.tolist(),
        "covs": model.covariances.tolist(),
    }


def model_from_dict(obj: dict) -> MixtureModel:
    try:
        d = int(obj["d"])
        classes = [str(c) for c in obj["classes"]]
        priors = [float(p) for p in obj["priors"]]
        means = np.array(obj["means"], dtype=float)
        covs = np.array(obj["covs"], dtype=float)
    except KeyError as exc:
        raise ParseError(f"model file is missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise ParseError(f"model file has a malformed field: {exc}") from None
    K = len(classes)
    if K < 2:
        raise ValidationError(f"model must have K >= 2 classes, got K={K}")
    if len(priors) != K or means.shape != (K, d) or covs.shape != (K, d, d):
        raise ValidationError(
            f"inconsistent shapes: K={K}, d={d}, priors {len(priors)}, means {means.shape}, covs {covs.shape}")
    total = math.fsum(priors)
    if abs(total - 1.0) > _PRIOR_TOL:
        raise ValidationError(f"priors must sum to 1, got sum {total!r}")
    return MixtureModel.from_params(means, covs, priors, classes)


def save(model: MixtureModel, path) -> None:
    Path(path).write_text(dump_json(model_to_dict(model)), encoding="utf-8")


def load(path) -> MixtureModel:
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise ParseError(f"{path}: top-level JSON value must be an object")
    return model_from_dict(obj)


def dataset_to_csv(data: LabeledDataset) -> str:
    d = data.dimension
    header = ["label"] + [f"z_{j}" for j in range(d)]
    if data.lipschitz is not None:
        header.append("lipschitz")
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for r in range(len(data)):
        cells = [data.labels[r]] + [fmt_float(v) for v in data.X[r]]
        if data.lipschitz is not None:
            cells.append(fmt_float(data.lipschitz[r]))
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()


def save_dataset(data: LabeledDataset, path) -> None:
    Path(path).write_text(dataset_to_csv(data), encoding="utf-8")


def load_dataset(path, require_lipschitz: bool = False) -> LabeledDataset:
    """Read ``label,z_0,...,z_{d-1}[,lipschitz]`` CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if not header or header[0] != "label":
            raise ParseError(f"{path}: line 1: first column must be 'label'")
        has_lip = header[-1] == "lipschitz"
        zcols = header[1:-1] if has_lip else header[1:]
        if not zcols:
            raise ParseError(f"{path}: line 1: no z_* columns")
        for j, name in enumerate(zcols):
            if name != f"z_{j}":
                raise ParseError(f"{path}: line 1: column {j + 2} should be 'z_{j}', found {name!r}")
        if require_lipschitz and not has_lip:
            raise ParseError(f"{path}: line 1: missing required 'lipschitz' column")
        labels, rows, lips = [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise ParseError(f"{path}: line {lineno}: expected {len(header)} fields, found {len(rec)}")
            labels.append(rec[0])
            try:
                rows.append([parse_float(v) for v in rec[1:1 + len(zcols)]])
                if has_lip:
                    lips.append(parse_float(rec[-1]))
            except ValueError:
                for k, v in enumerate(rec[1:], start=1):
                    try:
                        parse_float(v)
                    except ValueError:
                        raise ParseError(f"{path}: line {lineno}: field {header[k]!r}: "
                                         f"not a number: {v!r}") from None
                raise
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return LabeledDataset(np.array(rows), labels, np.array(lips) if has_lip else None)
