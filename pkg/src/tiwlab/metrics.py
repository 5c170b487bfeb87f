"""Evaluation statistics for generated sample sets.

The latent "classifier" is an analytic mixture posterior, so the bias
statistic and mode proportions are exact functions of the sample sets.
Energy distance stands in for feature-space distribution distances at
desk scale.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InputError
from .mixture import GaussianMixture


def _check_samples(X, name):
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    if X.ndim != 2 or X.shape[0] == 0:
        raise InputError(f"{name} must be a non-empty (n, dim) matrix")
    return X


def mode_proportions(samples, classifier: GaussianMixture):
    """Mean posterior mass per latent component (soft assignment)."""
    X = _check_samples(samples, "samples")
    return classifier.posterior(X).mean(axis=0)


def mode_counts(samples, classifier: GaussianMixture):
    """Hard-assignment variant: argmax posterior, ties to the lower index."""
    X = _check_samples(samples, "samples")
    idx = np.argmax(classifier.posterior(X), axis=1)
    return np.bincount(idx, minlength=classifier.n_components) / X.shape[0]


def bias_metric(samples_model, samples_ref, classifier: GaussianMixture):
    """Sum over latent components of |E_ref p(z|x) - E_model p(z|x)|.

    Zero iff the mean posteriors coincide; symmetric in the two sets.
    """
    a = mode_proportions(samples_model, classifier)
    b = mode_proportions(samples_ref, classifier)
    return float(np.abs(a - b).sum())


def energy_distance(a, b):
    """Energy distance 2 E||X-Y|| - E||X-X'|| - E||Y-Y'||.

    All expectations are plain means over every ordered pair including
    i == j (the V-statistic convention), so identical matrices give an
    exact 0 at the cost of a small O(1/n) bias.
    """
    A = _check_samples(a, "a")
    B = _check_samples(b, "b")
    if A.shape[1] != B.shape[1]:
        raise InputError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    # fix the cross-term summation order so the result is exactly symmetric
    first, second = (A, B) if (A.shape[0], A.tobytes()) <= (B.shape[0], B.tobytes()) \
        else (B, A)
    sxy = kernels.pairwise_mean_dist(first, second)
    sxx = kernels.pairwise_mean_dist(A, A)
    syy = kernels.pairwise_mean_dist(B, B)
    return 2.0 * sxy - (sxx + syy)


@dataclass
class EvalReport:
    """One evaluation row: bias statistic, proportions, distance, DRE curve."""

    bias: float
    proportions: np.ndarray
    energy_distance: float
    dre_curve: list = field(default_factory=list)  # (t, mse) pairs
    notes: str = ""

    def __post_init__(self):
        self.proportions = np.asarray(self.proportions, dtype=np.float64)
        if abs(self.proportions.sum() - 1.0) > 1e-9:
            raise InputError("proportions must sum to 1 within 1e-9")
        if self.bias < 0.0 or self.energy_distance < -1e-12:
            raise InputError("bias and energy distance must be non-negative")

    def csv_header(self):
        props = [f"proportion_{i}" for i in range(self.proportions.size)]
        return ["bias", *props, "energy_distance", "notes"]

    def csv_row(self):
        return [repr(float(self.bias)),
                *[repr(float(p)) for p in self.proportions],
                repr(float(self.energy_distance)),
                self.notes]


def evaluate_samples(samples, oracle_samples, classifier, notes=""):
    """Bundle the three headline statistics against an oracle reference set."""
    return EvalReport(
        bias=bias_metric(samples, oracle_samples, classifier),
        proportions=mode_proportions(samples, classifier),
        energy_distance=energy_distance(samples, oracle_samples),
        notes=notes,
    )
