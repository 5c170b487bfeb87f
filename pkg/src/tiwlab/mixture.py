"""Closed-form isotropic Gaussian mixtures.

These mixtures are the ground truth of every experiment: they supply exact
densities, scores, perturbed (noised) versions of themselves, density
ratios, samples, and component posteriors. Densities are accumulated in
the log domain (log-sum-exp) so cross terms at the e^-16 scale survive,
and ratios floor the densities at 1e-300.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InputError

DENSITY_FLOOR = 1e-300


def _as_batch(x, dim, name="x"):
    """Coerce a point or batch of points to (n, dim); report if input was 1-D."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise InputError(f"{name} must have dimension {dim}, got shape {np.shape(x)}")
    return np.ascontiguousarray(arr), single


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture of isotropic Gaussians: sum_i w_i N(mean_i, variance_i * I)."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    _log_weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        w = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float64))
        m = np.ascontiguousarray(np.atleast_2d(np.asarray(self.means, dtype=np.float64)))
        v = np.ascontiguousarray(np.asarray(self.variances, dtype=np.float64))
        if w.ndim != 1 or w.size == 0:
            raise InputError("mixture needs at least one component")
        if m.shape[0] != w.size or v.shape != w.shape:
            raise InputError("weights, means, variances must agree in component count")
        if np.any(w <= 0.0):
            raise InputError("component weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise InputError(f"weights must sum to 1 within 1e-12, got {w.sum()!r}")
        if np.any(v <= 0.0):
            raise InputError("variances must be strictly positive")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(v))):
            raise InputError("means and variances must be finite")
        for arr in (w, m, v):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)
        lw = np.log(w)
        lw.setflags(write=False)
        object.__setattr__(self, "_log_weights", lw)

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def n_components(self):
        return self.weights.size

    # -- densities -----------------------------------------------------------

    def log_density(self, x):
        X, single = _as_batch(x, self.dim)
        out = kernels.gm_logpdf(X, self._log_weights, self.means, self.variances)
        return out[0] if single else out

    def density(self, x):
        return np.exp(self.log_density(x))

    def score(self, x):
        """Gradient of log density: sum_i r_i(x) (mean_i - x) / variance_i."""
        X, single = _as_batch(x, self.dim)
        out = kernels.gm_score(X, self._log_weights, self.means, self.variances)
        return out[0] if single else out

    def posterior(self, x):
        """Component responsibilities r_i(x) = w_i N_i(x) / p(x); rows sum to 1."""
        X, single = _as_batch(x, self.dim)
        out = kernels.gm_posterior(X, self._log_weights, self.means, self.variances)
        return out[0] if single else out

    # -- transforms ----------------------------------------------------------

    def perturb(self, sched, t):
        """Exact pushforward through the forward noising kernel at time t.

        Means scale by alpha(t); each variance becomes alpha^2 v + sigma^2.
        """
        alpha, sigma = sched.alpha_sigma(t)
        return GaussianMixture(
            weights=self.weights.copy(),
            means=alpha * self.means,
            variances=alpha * alpha * self.variances + sigma * sigma,
        )

    def sample(self, n, seed):
        if n < 1:
            raise InputError(f"sample count must be >= 1, got {n}")
        rng = np.random.default_rng(seed)
        idx = rng.choice(self.n_components, size=n, p=self.weights)
        noise = rng.standard_normal((n, self.dim))
        return self.means[idx] + np.sqrt(self.variances[idx])[:, None] * noise

    # -- serialization -------------------------------------------------------

    def to_dict(self):
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(weights=d["weights"], means=d["means"], variances=d["variances"])


def true_ratio(p_num: GaussianMixture, p_den: GaussianMixture, x):
    """Exact density ratio p_num(x) / p_den(x), densities floored at 1e-300."""
    if p_num.dim != p_den.dim:
        raise InputError(f"dimension mismatch: {p_num.dim} vs {p_den.dim}")
    num = np.maximum(p_num.density(x), DENSITY_FLOOR)
    den = np.maximum(p_den.density(x), DENSITY_FLOOR)
    return num / den


def pooled_mixture(a: GaussianMixture, b: GaussianMixture, weight_a=0.5):
    """The mixture weight_a * a + (1 - weight_a) * b as a single GaussianMixture."""
    if a.dim != b.dim:
        raise InputError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if not 0.0 < weight_a < 1.0:
        raise InputError("pooling weight must lie in (0, 1)")
    return GaussianMixture(
        weights=np.concatenate([weight_a * a.weights, (1.0 - weight_a) * b.weights]),
        means=np.vstack([a.means, b.means]),
        variances=np.concatenate([a.variances, b.variances]),
    )


def perturbed_log_density_batch(gm: GaussianMixture, sched, X, ts):
    """log density of the noised mixture with a per-row time vector.

    Equivalent to looping gm.perturb(sched, t_i).log_density(x_i) but in one
    broadcasted pass; used where every batch element carries its own time.
    """
    X, _ = _as_batch(X, gm.dim)
    alpha, sigma = sched.alpha_sigma(ts)
    alpha = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (X.shape[0],))
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (X.shape[0],))
    # (B, k) moments of the pushforward at each row's time
    means = alpha[:, None, None] * gm.means[None, :, :]
    var = alpha[:, None] ** 2 * gm.variances[None, :] + sigma[:, None] ** 2
    sq = ((X[:, None, :] - means) ** 2).sum(axis=2)
    d = gm.dim
    terms = gm._log_weights[None, :] - 0.5 * d * np.log(2.0 * np.pi * var) - 0.5 * sq / var
    mx = terms.max(axis=1)
    return mx + np.log(np.exp(terms - mx[:, None]).sum(axis=1))


def perturbed_score_batch(gm: GaussianMixture, sched, X, ts):
    """Score of the noised mixture with a per-row time vector."""
    X, _ = _as_batch(X, gm.dim)
    alpha, sigma = sched.alpha_sigma(ts)
    alpha = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (X.shape[0],))
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (X.shape[0],))
    means = alpha[:, None, None] * gm.means[None, :, :]
    var = alpha[:, None] ** 2 * gm.variances[None, :] + sigma[:, None] ** 2
    diff = X[:, None, :] - means
    sq = (diff**2).sum(axis=2)
    d = gm.dim
    terms = gm._log_weights[None, :] - 0.5 * d * np.log(2.0 * np.pi * var) - 0.5 * sq / var
    mx = terms.max(axis=1, keepdims=True)
    resp = np.exp(terms - mx)
    resp /= resp.sum(axis=1, keepdims=True)
    return (resp[:, :, None] * (-diff / var[:, :, None])).sum(axis=1)


def standard_normal_mixture(dim):
    return GaussianMixture(weights=[1.0], means=np.zeros((1, dim)), variances=[1.0])


def two_mode_bias_mixture():
    """0.9 N((-2,-2), I) + 0.1 N((2,2), I): the skewed two-mode benchmark."""
    return GaussianMixture(
        weights=[0.9, 0.1], means=[[-2.0, -2.0], [2.0, 2.0]], variances=[1.0, 1.0]
    )


def two_mode_balanced_mixture():
    """Balanced counterpart of :func:`two_mode_bias_mixture`."""
    return GaussianMixture(
        weights=[0.5, 0.5], means=[[-2.0, -2.0], [2.0, 2.0]], variances=[1.0, 1.0]
    )
