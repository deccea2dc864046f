"""Certified l2 robustness for Gaussian-mixture (QDA) classifiers."""
__version__ = "0.1.0"

from .ellips import Certificate, certify, certify_batch, predict, score, scores
from .formats import ParseError, ValidationError
from .mixture import GaussianComponent, LabeledDataset, MixtureModel, fit, load, load_dataset, sample, save
from .numkernel import NotPositiveDefiniteError

__all__ = [
    "Certificate", "certify", "certify_batch", "predict", "score", "scores",
    "ParseError", "ValidationError",
    "GaussianComponent", "LabeledDataset", "MixtureModel", "fit", "load", "load_dataset", "sample", "save",
    "NotPositiveDefiniteError",
]
