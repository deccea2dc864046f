"""Empirical and certified baselines: l2 PGD on the margin, randomized smoothing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import beta as beta_dist

from .ellips import predict, scores
from .formats import CurveTable, ValidationError, check_grid
from .mixture import LabeledDataset, MixtureModel, stream
from .numkernel import std_normal_quantile

ABSTAIN = -1


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 0.0
    steps: int = 100
    step_size: float | None = None   # default 2.5 * epsilon / steps
    restarts: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValidationError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.steps < 1:
            raise ValidationError(f"steps must be >= 1, got {self.steps}")
        if self.restarts < 1:
            raise ValidationError(f"restarts must be >= 1, got {self.restarts}")
        if self.step_size is not None and not self.step_size > 0:
            raise ValidationError(f"step_size must be > 0, got {self.step_size}")

    def step_for(self, eps: float) -> float:
        return self.step_size if self.step_size is not None else 2.5 * eps / self.steps


@dataclass(frozen=True)
class SmoothingConfig:
    sigma: float = 0.5
    n0: int = 100
    n: int = 10_000
    alpha: float = 0.001

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValidationError(f"sigma must be > 0, got {self.sigma}")
        if not (1 <= self.n0 <= self.n):
            raise ValidationError(f"need n >= n0 >= 1, got n0={self.n0}, n={self.n}")
        if not (0 < self.alpha < 1):
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha}")


# ---------------------------------------------------------------------------
# PGD
# ---------------------------------------------------------------------------

def _scores_and_grads(model: MixtureModel, Z: np.ndarray):
    diff = Z[:, None, :] - model.means[None, :, :]
    G = np.einsum("kde,mke->mkd", model.precisions, diff)
    quad = np.einsum("mkd,mkd->mk", diff, G)
    S = -quad - model.log_dets + 2.0 * np.log(model.priors)
    return S, -2.0 * G


def _margin_loss(model, Z, y, encoder):
    """max_{i != y} s_i - s_y and its gradient with respect to the input."""
    S, dS = _scores_and_grads(model, Z if encoder is None else Z @ encoder.T)
    rows = np.arange(Z.shape[0])
    other = S.copy()
    other[rows, y] = -np.inf
    j = np.argmax(other, axis=1)
    loss = S[rows, j] - S[rows, y]
    grad = dS[rows, j] - dS[rows, y]
    if encoder is not None:
        grad = grad @ encoder
    return loss, grad


def _project(delta: np.ndarray, eps) -> np.ndarray:
    """Scale rows of ``delta`` back onto the l2 ball of radius ``eps`` (scalar or per row)."""
    eps = np.reshape(np.asarray(eps, dtype=float), (-1, 1))
    norm = np.linalg.norm(delta, axis=1, keepdims=True)
    scale = np.where(norm > eps, eps / np.where(norm > 0, norm, 1.0), 1.0)
    return delta * scale


def _random_ball(rng, m: int, d: int, eps) -> np.ndarray:
    u = rng.standard_normal((m, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = np.reshape(eps, (-1, 1)) * rng.random((m, 1)) ** (1.0 / d)
    return u * r


def pgd_batch(model: MixtureModel, X, y, eps, cfg: AttackConfig, rng=None,
              init=None, encoder=None):
    """Projected normalized-gradient ascent on the margin loss, batched.

    ``eps`` is one budget or one per row of ``X``.
    ``X`` is (n, d) in the attacked space; with ``encoder`` (a matrix A) the
    classifier sees ``A x`` and the attack runs in input space. Restart 0
    starts at ``init`` (or zero); the others start uniformly in the ball.
    Returns ``(flipped, adversarial)``; the adversarial point is the first
    flipping iterate, otherwise the highest-loss one.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=int)
    unknown = (y < 0) | (y >= model.K)
    y = np.where(unknown, 0, y)
    n, d = X.shape
    if encoder is not None:
        encoder = np.asarray(encoder, dtype=float)
        if encoder.shape != (model.dimension, d):
            raise ValidationError(f"encoder shape {encoder.shape} does not map d={d} to d={model.dimension}")
    elif d != model.dimension:
        raise ValidationError(f"dimension mismatch: expected d={model.dimension}, found d={d}")
    eps = np.broadcast_to(np.asarray(eps, dtype=float), (n,))
    if np.any(eps < 0):
        raise ValidationError("attack budgets must be >= 0")
    if n == 0 or not np.any(eps > 0):
        Z = X if encoder is None else X @ encoder.T
        return (predict(model, Z) != y) | unknown, X.copy()
    rng = rng if rng is not None else stream(cfg.seed, 2)
    R = cfg.restarts
    eps_r = np.repeat(eps, R)
    alpha = (np.full(eps_r.shape, cfg.step_size) if cfg.step_size is not None
             else 2.5 * eps_r / cfg.steps)[:, None]

    delta = _random_ball(rng, n * R, d, eps_r).reshape(n, R, d)
    delta[:, 0] = 0.0 if init is None else _project(np.asarray(init, dtype=float) - X, eps)
    delta = delta.reshape(n * R, d)
    base = np.repeat(X, R, axis=0)
    yy = np.repeat(y, R)

    best_loss = np.full(n * R, -np.inf)
    best = delta.copy()
    found = np.zeros(n * R, dtype=bool)
    for step in range(cfg.steps + 1):
        loss, grad = _margin_loss(model, base + delta, yy, encoder)
        better = (loss > best_loss) & ~found
        best[better] = delta[better]
        best_loss[better] = loss[better]
        found |= loss > 0
        if step == cfg.steps:
            break
        gn = np.linalg.norm(grad, axis=1, keepdims=True)
        delta = _project(delta + alpha * grad / np.where(gn > 0, gn, 1.0), eps_r)

    best_loss = best_loss.reshape(n, R)
    pick = np.argmax(best_loss, axis=1)
    adv = X + best.reshape(n, R, d)[np.arange(n), pick]
    Z = adv if encoder is None else adv @ encoder.T
    flipped = (predict(model, Z) != y) | unknown
    return flipped, adv


def pgd_attack(model: MixtureModel, x, y: int, cfg: AttackConfig, encoder=None):
    """Attack one point; returns ``{"flipped": bool, "adversarial": array}``."""
    flipped, adv = pgd_batch(model, np.asarray(x, dtype=float)[None, :], [y], cfg.epsilon, cfg,
                             encoder=encoder)
    return {"flipped": bool(flipped[0]), "adversarial": adv[0]}


def empirical_robust_accuracy(model: MixtureModel, X, y, eps_grid, cfg: AttackConfig,
                              encoder=None) -> np.ndarray:
    """Robust accuracy per epsilon; a point flipped at some eps stays flipped.

    Each epsilon warm-starts from the strongest point found at the previous one.
    """
    eps = check_grid(eps_grid)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=int)
    flipped = np.zeros(len(y), dtype=bool)
    adv = X.copy()
    out = np.empty(eps.size)
    for k, e in enumerate(eps):
        todo = np.flatnonzero(~flipped)
        if todo.size:
            f, a = pgd_batch(model, X[todo], y[todo], float(e), cfg, rng=stream(cfg.seed, 2, k),
                             init=adv[todo], encoder=encoder)
            flipped[todo] = f
            adv[todo] = a
        out[k] = 1.0 - flipped.mean()
    return out


def empirical_robust_curve(model: MixtureModel, data: LabeledDataset, eps_grid,
                           cfg: AttackConfig) -> CurveTable:
    eps = check_grid(eps_grid)
    acc = empirical_robust_accuracy(model, data.X, model.label_index(data.labels), eps, cfg)
    return CurveTable(["epsilon", "empirical_robust_acc"], [[e, a] for e, a in zip(eps, acc)])


# ---------------------------------------------------------------------------
# Randomized smoothing
# ---------------------------------------------------------------------------

def clopper_pearson_lower(k: int, n: int, alpha: float) -> float:
    """One-sided (1 - alpha) Clopper-Pearson lower bound on a binomial proportion."""
    if k <= 0:
        return 0.0
    return float(beta_dist.ppf(alpha, k, n - k + 1))


def smoothing_radius(p_lower: float, sigma: float) -> float:
    return sigma * std_normal_quantile(p_lower) if p_lower > 0.5 else 0.0


def _votes(model, x, sigma, m, rng, chunk=20_000):
    counts = np.zeros(model.K, dtype=np.int64)
    left = m
    while left > 0:
        b = min(chunk, left)
        noisy = x + sigma * rng.standard_normal((b, x.size))
        counts += np.bincount(np.argmax(scores(model, noisy), axis=1), minlength=model.K)
        left -= b
    return counts


def smoothed_certify(model: MixtureModel, x, cfg: SmoothingConfig, seed: int, key: int = 0):
    """Monte-Carlo smoothing certificate of the ELLIPS prediction at ``x``.

    Returns ``(prediction, radius)``; prediction is ``ABSTAIN`` when the
    lower confidence bound on the top-class probability is not above 1/2.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (model.dimension,):
        raise ValidationError(f"dimension mismatch: expected d={model.dimension}, found d={x.shape[-1]}")
    rng = stream(seed, 3, key)
    c_hat = int(np.argmax(_votes(model, x, cfg.sigma, cfg.n0, rng)))
    n_a = int(_votes(model, x, cfg.sigma, cfg.n, rng)[c_hat])
    p_lower = clopper_pearson_lower(n_a, cfg.n, cfg.alpha)
    if p_lower > 0.5:
        return c_hat, smoothing_radius(p_lower, cfg.sigma)
    return ABSTAIN, 0.0


def smoothed_certify_batch(model: MixtureModel, X, cfg: SmoothingConfig, seed: int):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    pred = np.empty(X.shape[0], dtype=int)
    rad = np.empty(X.shape[0])
    for j, x in enumerate(X):
        pred[j], rad[j] = smoothed_certify(model, x, cfg, seed, key=j)
    return pred, rad


def smoothed_accuracy(pred, rad, y, eps_grid):
    """(certified accuracy, abstain rate) per epsilon; abstentions never count."""
    eps = np.asarray(eps_grid, dtype=float)
    ok = (pred == y)[:, None] & (rad[:, None] >= eps[None, :])
    return ok.mean(axis=0), float(np.mean(pred == ABSTAIN))


def smoothed_curve(model: MixtureModel, data: LabeledDataset, eps_grid, cfg: SmoothingConfig,
                   seed: int) -> CurveTable:
    eps = check_grid(eps_grid)
    pred, rad = smoothed_certify_batch(model, data.X, cfg, seed)
    acc, abstain = smoothed_accuracy(pred, rad, model.label_index(data.labels), eps)
    return CurveTable(["epsilon", "smoothed_cert_acc", "abstain_rate"],
                      [[e, a, abstain] for e, a in zip(eps, acc)])
