import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from ellipscert.baselines import AttackConfig, pgd_batch
from ellipscert.ellips import (
    FIRST_ORDER, SECOND_ORDER, certified_accuracy_curve, certify, certify_batch, predict, radius_formula, score,
)
from ellipscert.formats import ValidationError
from ellipscert.mixture import LabeledDataset, MixtureModel, sample

from conftest import random_model


def binary_identity():
    return MixtureModel.from_params([[-1.0, 0.0], [1.0, 0.0]], [np.eye(2)] * 2, [0.5, 0.5])


def test_prediction_at_mean():
    m = binary_identity()
    assert score(m, np.array([1.0, 0.0])).predicted == 1


def test_prior_only_margin():
    m = MixtureModel.from_params(np.zeros((2, 2)), [np.eye(2)] * 2, [0.9, 0.1])
    r = score(m, np.array([0.3, -0.2]))
    assert r.predicted == 0 and r.runner_up == 1
    assert abs(r.margin - 2 * math.log(9)) < 1e-12


def test_prediction_matches_posterior(rng):
    m = random_model(rng, 3, 4, priors=[0.2, 0.3, 0.5])
    X = rng.standard_normal((1000, 4)) * 3
    dens = np.column_stack([p * multivariate_normal(mu, S).pdf(X)
                            for mu, S, p in zip(m.means, m.covariances, m.priors)])
    assert np.array_equal(predict(m, X), np.argmax(dens, axis=1))


def test_tie_goes_to_lowest_index():
    m = binary_identity()
    r = score(m, np.array([0.0, 5.0]))
    assert r.predicted == 0 and r.margin == 0.0
    c = certify(m, np.array([0.0, 5.0]))
    assert c.radius == 0.0


def test_symmetric_binary_certificate():
    c = certify(binary_identity(), np.array([-1.0, 0.0]))
    assert c.margin == pytest.approx(4.0, abs=1e-14)
    assert c.c_M == pytest.approx(2.0, abs=1e-14)
    assert c.lambda_min_W == 0.0
    assert c.radius == pytest.approx(1.0, rel=1e-14)
    assert c.curvature_case == FIRST_ORDER


def test_radius_formula_limits():
    assert radius_formula(0.0, 1.0, -1.0) == 0.0
    assert math.isinf(radius_formula(2.0, 0.0, 0.0))
    assert radius_formula(2.0, 0.0, -0.5) == pytest.approx(2.0)
    assert radius_formula(3.0, 1.5, 0.7) == pytest.approx(1.0)
    m, c, lam = 2.0, 1.0, -0.5
    assert radius_formula(m, c, lam) == pytest.approx(m / (math.sqrt(c * c + 0.5 * m) + c))


def test_unbounded_sentinel():
    # same covariance, same mean, different priors: gradients agree everywhere
    m = MixtureModel.from_params(np.zeros((2, 2)), [np.eye(2)] * 2, [0.7, 0.3])
    c = certify(m, np.array([1.0, 2.0]))
    assert c.unbounded and c.c_M == 0.0


def test_dimension_mismatch():
    with pytest.raises(ValidationError, match="expected d=2, found d=3"):
        certify(binary_identity(), np.zeros(3))


def test_second_order_case_flag(rng):
    m = MixtureModel.from_params([[0.0, 0.0], [3.0, 0.0]], [np.eye(2), 2 * np.eye(2)], [0.5, 0.5])
    c = certify_batch(m, rng.standard_normal((20, 2)))
    for k in range(len(c)):
        expect = SECOND_ORDER if c.lambda_min_W[k] < 0 else FIRST_ORDER
        assert c.cases[k] == expect == c[k].curvature_case


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 5), st.integers(1, 6))
def test_certificate_invariants(seed, K, d):
    rng = np.random.default_rng(seed)
    m = random_model(rng, K, d)
    c = certify_batch(m, rng.standard_normal((30, d)) * 2)
    assert np.all(c.radius >= 0) and np.all(c.margin >= 0)
    assert np.array_equal(c.radius == 0, c.margin == 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_shift_equivariance(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 3, 3)
    t = rng.standard_normal(3) * 5
    moved = MixtureModel.from_params(m.means + t, m.covariances, m.priors)
    X = rng.standard_normal((10, 3))
    a, b = certify_batch(m, X), certify_batch(moved, X + t)
    for f in ("margin", "c_M", "lambda_min_W", "radius"):
        assert np.allclose(getattr(a, f), getattr(b, f), rtol=1e-9, atol=1e-9)


def test_radius_monotone_in_margin_along_rays(rng):
    # equal covariances: c_M is constant, so along a ray toward the winner's mean the
    # radius orders exactly like the margin (the margin itself may fall for points
    # lying behind the mean)
    S = np.array([[2.0, 0.3], [0.3, 0.5]])
    m = MixtureModel.from_params([[0.0, 0.0], [2.0, 1.0], [-1.0, 2.5]], [S] * 3, [0.3, 0.3, 0.4])
    rising = 0
    for x in rng.standard_normal((50, 2)) * 2:
        i = predict(m, x)[0]
        ts = np.linspace(0, 1, 21)
        c = certify_batch(m, x + ts[:, None] * (m.means[i] - x))
        keep = c.predicted == i
        order = np.argsort(c.margin[keep], kind="stable")
        assert np.all(np.diff(c.radius[keep][order]) >= -1e-9)
        rising += np.all(np.diff(c.margin[keep]) >= 0)
    assert rising > 0


def test_equal_covariance_tightness(rng):
    for _ in range(50):
        d = int(rng.integers(1, 8))
        m = random_model(rng, 2, 1 if d == 0 else d, priors=None)
        S = m.covariances[0]
        m = MixtureModel.from_params(m.means, [S, S], rng.dirichlet([2, 2]))
        x = rng.standard_normal(d) * 2
        P = np.linalg.inv(S)
        w = 2 * P @ (m.means[0] - m.means[1])
        b = (m.means[1] @ P @ m.means[1] - m.means[0] @ P @ m.means[0]
             + 2 * math.log(m.priors[0] / m.priors[1]))
        dist = abs(w @ x + b) / np.linalg.norm(w)
        assert certify(m, x).radius == pytest.approx(dist, rel=1e-9)


def test_pgd_cannot_flip_inside_radius(rng):
    m = random_model(rng, 2, 4)
    X = sample(m, 200, 3).X
    c = certify_batch(m, X)
    flipped, _ = pgd_batch(m, X, c.predicted, 0.999 * c.radius, AttackConfig(restarts=100))
    assert not flipped.any()
    flipped_out, _ = pgd_batch(m, X, c.predicted, 3.0 * c.radius, AttackConfig())
    assert flipped_out.any()


def test_curve_basics(rng):
    m = random_model(rng, 3, 2)
    data = sample(m, 500, 1)
    tab = certified_accuracy_curve(m, data, [0.0, 0.5, 1.0, 1e6])
    acc = tab.column("certified_accuracy")
    clean = np.mean(predict(m, data.X) == m.label_index(data.labels))
    assert acc[0] == clean
    assert np.all(np.diff(acc) <= 0)
    assert acc[-1] == 0.0
    with pytest.raises(ValidationError):
        certified_accuracy_curve(m, LabeledDataset(np.zeros((0, 2)), []), [0.0])


def test_curve_close_to_pgd_when_separated():
    from ellipscert.baselines import empirical_robust_accuracy
    m = MixtureModel.from_params([[-3.0, 0.0], [3.0, 0.0]], [np.eye(2)] * 2, [0.5, 0.5])
    data = sample(m, 2000, 5)
    cert = certified_accuracy_curve(m, data, [1.0]).column("certified_accuracy")[0]
    emp = empirical_robust_accuracy(m, data.X, m.label_index(data.labels), [1.0], AttackConfig(seed=1))[0]
    assert abs(cert - emp) <= 0.03
