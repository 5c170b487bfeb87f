"""Variance-preserving forward/reverse dynamics.

Linear noise schedule beta(t) = beta_min + t * (beta_max - beta_min) on
[0, T]. The perturbation kernel is x_t = alpha(t) x_0 + sigma(t) eps with

    alpha(t) = exp(-0.5 * (beta_min t + 0.5 (beta_max - beta_min) t^2))
    sigma(t) = sqrt(1 - alpha(t)^2)

so alpha^2 + sigma^2 = 1 by construction. Generation integrates either the
probability-flow ODE (deterministic; Euler or Heun) or the reverse SDE
(Euler-Maruyama) from t = T down to t = t_eps.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericalError

SAMPLER_KINDS = ("probability-flow-ode", "reverse-sde")
INTEGRATORS = ("euler", "heun")


@dataclass(frozen=True)
class VpSchedule:
    beta_min: float = 0.1
    beta_max: float = 20.0
    T: float = 1.0
    t_eps: float = 1e-3

    def __post_init__(self):
        if self.beta_min <= 0.0 or self.beta_max < self.beta_min:
            raise InputError("need 0 < beta_min <= beta_max")
        if not 0.0 < self.t_eps < self.T:
            raise InputError("need 0 < t_eps < T")

    def _check_t(self, t):
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < 0.0) or np.any(t > self.T):
            raise InputError(f"time must lie in [0, {self.T}], got {t!r}")
        return t

    def beta(self, t):
        t = self._check_t(t)
        return self.beta_min + t * (self.beta_max - self.beta_min)

    def alpha_sigma(self, t):
        """Perturbation-kernel coefficients (alpha(t), sigma(t))."""
        t = self._check_t(t)
        integral = self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t
        alpha = np.exp(-0.5 * integral)
        sigma = np.sqrt(1.0 - alpha * alpha)
        return alpha, sigma

    def forward_sample(self, x0, t, noise):
        """Draw from the kernel: alpha(t) x0 + sigma(t) noise.

        Accepts single vectors or (n, d) batches; for batches t may be a
        scalar or a per-row array.
        """
        x0 = np.asarray(x0, dtype=np.float64)
        noise = np.asarray(noise, dtype=np.float64)
        if x0.shape != noise.shape:
            raise InputError(f"noise shape {noise.shape} != x0 shape {x0.shape}")
        alpha, sigma = self.alpha_sigma(t)
        if x0.ndim == 2 and np.ndim(alpha) == 1:
            alpha = alpha[:, None]
            sigma = sigma[:, None]
        return alpha * x0 + sigma * noise

    def cond_score(self, x_t, x0, t):
        """Gradient of the log perturbation kernel: -(x_t - alpha x0) / sigma^2."""
        x_t = np.asarray(x_t, dtype=np.float64)
        x0 = np.asarray(x0, dtype=np.float64)
        if x_t.shape != x0.shape:
            raise InputError(f"x_t shape {x_t.shape} != x0 shape {x0.shape}")
        t_arr = np.asarray(t, dtype=np.float64)
        if np.any(t_arr < self.t_eps):
            raise NumericalError(
                f"cond_score is singular below t_eps={self.t_eps}, got t={t!r}"
            )
        alpha, sigma = self.alpha_sigma(t)
        if x_t.ndim == 2 and np.ndim(alpha) == 1:
            alpha = alpha[:, None]
            sigma = sigma[:, None]
        return -(x_t - alpha * x0) / (sigma * sigma)


@dataclass(frozen=True)
class SamplerSpec:
    kind: str = "probability-flow-ode"
    steps: int = 200
    integrator: str = "heun"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise InputError(f"sampler kind must be one of {SAMPLER_KINDS}")
        if self.integrator not in INTEGRATORS:
            raise InputError(f"integrator must be one of {INTEGRATORS}")
        if self.steps < 2:
            raise InputError("steps must be >= 2")
        if self.kind == "reverse-sde" and self.integrator != "euler":
            raise InputError("reverse-sde supports only the euler (Euler-Maruyama) integrator")

    def to_dict(self):
        return {
            "kind": self.kind,
            "steps": self.steps,
            "integrator": self.integrator,
            "seed": self.seed,
        }


def _trajectory_noise(seed, n, rows, dim):
    """Per-trajectory standard-normal blocks, derived from (seed, index).

    Row 0 of each block seeds the prior draw; later rows are per-step noise.
    Streams depend only on (seed, trajectory index), so the result is
    independent of evaluation order.
    """
    out = np.empty((n, rows, dim))
    for i in range(n):
        out[i] = np.random.default_rng([seed, i]).standard_normal((rows, dim))
    return out


def _check_finite(x, step, t):
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite state at step {step}, t={t:.6g}")


def reverse_generate(sched: VpSchedule, score_fn, spec: SamplerSpec, n, dim):
    """Integrate the reverse dynamics from the N(0, I) prior at t=T to t_eps.

    score_fn(X, t) must return the (n, dim) score at scalar time t for
    t in [t_eps, T]. Deterministic given spec.seed.
    """
    if n < 1:
        raise InputError("n must be >= 1")
    times = np.linspace(sched.T, sched.t_eps, spec.steps + 1)
    stochastic = spec.kind == "reverse-sde"
    noise = _trajectory_noise(spec.seed, n, spec.steps + 1 if stochastic else 1, dim)
    x = noise[:, 0, :].copy()

    def ode_drift(xx, t):
        beta = sched.beta(t)
        s = np.asarray(score_fn(xx, t), dtype=np.float64)
        _check_finite(s, -1, t)
        return -0.5 * beta * (xx + s)

    for k in range(spec.steps):
        t, t_next = times[k], times[k + 1]
        dt = t_next - t  # negative
        if stochastic:
            beta = sched.beta(t)
            s = np.asarray(score_fn(x, t), dtype=np.float64)
            _check_finite(s, k, t)
            drift = -0.5 * beta * x - beta * s
            x = x + dt * drift + np.sqrt(-dt * beta) * noise[:, k + 1, :]
        elif spec.integrator == "euler":
            x = x + dt * ode_drift(x, t)
        else:  # heun
            k1 = ode_drift(x, t)
            k2 = ode_drift(x + dt * k1, t_next)
            x = x + 0.5 * dt * (k1 + k2)
        _check_finite(x, k, t_next)
    return x
