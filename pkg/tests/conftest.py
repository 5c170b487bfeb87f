import numpy as np
import pytest

from tiwlab.mixture import (
    GaussianMixture,
    two_mode_balanced_mixture,
    two_mode_bias_mixture,
)
from tiwlab.sde import VpSchedule


@pytest.fixture(scope="session")
def sched():
    return VpSchedule()


@pytest.fixture(scope="session")
def p_data():
    return two_mode_balanced_mixture()


@pytest.fixture(scope="session")
def p_bias():
    return two_mode_bias_mixture()


@pytest.fixture(scope="session")
def gm_1d_pair():
    """Skewed/balanced mixture pair in 1-D for the cheap training studies."""
    bias = GaussianMixture(weights=[0.9, 0.1], means=[[-2.0], [2.0]], variances=[1.0, 1.0])
    data = GaussianMixture(weights=[0.5, 0.5], means=[[-2.0], [2.0]], variances=[1.0, 1.0])
    return bias, data


def gauss_pdf(x, mean, var):
    """Independent reference pdf used by the oracle-style tests."""
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    d = x.size
    sq = float(((x - mean) ** 2).sum())
    return (2.0 * np.pi * var) ** (-d / 2.0) * np.exp(-0.5 * sq / var)


def mixture_pdf_by_hand(x, weights, means, variances):
    return sum(w * gauss_pdf(x, m, v) for w, m, v in zip(weights, means, variances))
