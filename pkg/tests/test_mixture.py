import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ellipscert.formats import ParseError, ValidationError
from ellipscert.mixture import (
    GaussianComponent, LabeledDataset, MixtureModel, dataset_to_csv, fit, load, load_dataset, mahalanobis_sq,
    model_to_dict, sample, save, save_dataset, stream,
)

from conftest import random_model


def test_fit_hand_computed_one_dimensional():
    data = LabeledDataset([[0.0], [2.0], [5.0], [7.0]], ["a", "a", "b", "b"])
    m = fit(data, reg=0.0)
    a = m.components[0]
    assert a.mean[0] == 1.0
    assert a.covariance[0, 0] == 1.0     # divisor n_i, not n_i - 1


def test_fit_priors_from_counts(rng):
    X = rng.standard_normal((100, 2))
    labels = ["x"] * 30 + ["y"] * 70
    m = fit(LabeledDataset(X, labels))
    assert np.allclose(m.priors, [0.3, 0.7])
    assert m.class_labels == ("x", "y")


@pytest.mark.parametrize("seed", range(5))
def test_fit_concentrates_on_truth(seed):
    rng = np.random.default_rng(seed)
    mu = np.array([1.0, -2.0, 0.5])
    B = rng.standard_normal((3, 3))
    Sigma = B @ B.T + np.eye(3)
    n = 100_000
    X = rng.multivariate_normal(mu, Sigma, size=n)
    Y = rng.multivariate_normal(-mu, Sigma, size=n)
    data = LabeledDataset(np.vstack([X, Y]), ["p"] * n + ["q"] * n)
    c = fit(data).components[0]
    assert np.linalg.norm(c.mean - mu) <= 5 * np.sqrt(np.trace(Sigma) / n)
    assert np.linalg.norm(c.covariance - Sigma, 2) <= 0.1 * np.linalg.norm(Sigma, 2)


def test_fit_errors():
    with pytest.raises(ValidationError, match="at least 2 classes"):
        fit(LabeledDataset([[0.0], [1.0]], ["a", "a"]))
    with pytest.raises(ValidationError, match="'b' has 1 sample"):
        fit(LabeledDataset([[0.0], [1.0], [2.0]], ["a", "a", "b"]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-4, 1.0))
def test_fit_regularization_floor(seed, reg):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((6, 5))       # fewer samples than dimensions: singular MLE
    m = fit(LabeledDataset(X, ["a", "a", "a", "b", "b", "b"]), reg=reg)
    for c in m.components:
        assert np.linalg.eigvalsh(c.covariance)[0] >= reg - 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_fit_is_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((40, 3))
    labels = np.array(["a", "b"] * 20)
    p = rng.permutation(40)
    m1 = fit(LabeledDataset(X, labels))
    m2 = fit(LabeledDataset(X[p], labels[p]))
    order = [m2.class_labels.index(c) for c in m1.class_labels]
    assert np.allclose(m1.means, m2.means[order], atol=1e-12)
    assert np.allclose(m1.covariances, m2.covariances[order], atol=1e-12)
    for c in m1.components:
        assert abs(mahalanobis_sq(c, c.mean)) < 1e-10


def test_component_invariants(rng):
    m = random_model(rng, 3, 6)
    for c in m.components:
        assert np.max(np.abs(c.precision @ c.covariance - np.eye(6))) < 1e-8
    with pytest.raises(ValidationError):
        GaussianComponent(np.zeros(2), np.eye(2), 0.0)


def test_mixture_invariants():
    comp = GaussianComponent(np.zeros(2), np.eye(2), 1.0)
    with pytest.raises(ValidationError, match="K >= 2"):
        MixtureModel((comp,), ("a",))
    with pytest.raises(ValidationError, match="prior"):
        MixtureModel.from_params(np.zeros((2, 2)), [np.eye(2)] * 2, [1.0, 0.0])
    with pytest.raises(ValidationError, match="sum"):
        MixtureModel.from_params(np.zeros((2, 2)), [np.eye(2)] * 2, [0.5, 0.49])


def test_mahalanobis_examples():
    c = GaussianComponent(np.array([1.0, 1.0]), np.diag([4.0, 1.0]), 1.0)
    assert mahalanobis_sq(c, c.mean) == 0.0
    assert abs(mahalanobis_sq(c, np.array([3.0, 1.0])) - 1.0) < 1e-15
    e = GaussianComponent(np.zeros(3), np.eye(3), 1.0)
    assert abs(mahalanobis_sq(e, np.array([1.0, 2.0, 2.0])) - 9.0) < 1e-13


def test_sample_deterministic_and_lln():
    m = MixtureModel.from_params(np.zeros((2, 2)), [np.eye(2)] * 2, [0.5, 0.5])
    a, b = sample(m, 1000, 7), sample(m, 1000, 7)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.labels, b.labels)
    assert not np.array_equal(sample(m, 1000, 8).X, a.X)
    big = sample(m, 100_000, 3)
    assert np.max(np.abs(np.cov(big.X.T, bias=True) - np.eye(2))) < 0.05


def test_streams_are_keyed():
    x = stream(1, 2, 3).random(4)
    assert np.array_equal(x, stream(1, 2, 3).random(4))
    assert not np.array_equal(x, stream(1, 3, 2).random(4))


def test_model_round_trip(tmp_path, rng):
    m = random_model(rng, 4, 5, priors=rng.dirichlet(np.ones(4)))
    p = tmp_path / "m.json"
    save(m, p)
    m2 = load(p)
    assert np.array_equal(m.means, m2.means)
    assert np.array_equal(m.covariances, m2.covariances)
    assert np.array_equal(m.priors, m2.priors)
    assert json.loads(p.read_text())["format_version"] == 1


def test_model_file_errors(tmp_path, rng):
    obj = model_to_dict(random_model(rng, 2, 2))
    one = dict(obj, classes=obj["classes"][:1], priors=[1.0], means=obj["means"][:1], covs=obj["covs"][:1])
    (tmp_path / "k1.json").write_text(json.dumps(one))
    with pytest.raises(ValidationError, match="K >= 2"):
        load(tmp_path / "k1.json")
    (tmp_path / "p.json").write_text(json.dumps(dict(obj, priors=[0.49, 0.49])))
    with pytest.raises(ValidationError, match="0.98"):
        load(tmp_path / "p.json")
    (tmp_path / "bad.json").write_text('{"d": 2,\n "classes": [}')
    with pytest.raises(ParseError, match="line 2"):
        load(tmp_path / "bad.json")


def test_dataset_round_trip_and_errors(tmp_path, rng):
    data = LabeledDataset(rng.standard_normal((5, 3)), list("aabbc"), rng.uniform(0.5, 2, 5))
    p = tmp_path / "d.csv"
    save_dataset(data, p)
    back = load_dataset(p, require_lipschitz=True)
    assert np.array_equal(back.X, data.X) and np.array_equal(back.lipschitz, data.lipschitz)
    assert list(back.labels) == list(data.labels)
    (tmp_path / "n.csv").write_text("label,z_0\na,1\n")
    with pytest.raises(ParseError, match="lipschitz"):
        load_dataset(tmp_path / "n.csv", require_lipschitz=True)
    (tmp_path / "x.csv").write_text("label,z_0,z_1\na,1,2\nb,1,oops\n")
    with pytest.raises(ParseError, match="line 3.*z_1"):
        load_dataset(tmp_path / "x.csv")
    assert dataset_to_csv(data).splitlines()[0] == "label,z_0,z_1,z_2,lipschitz"
