"""Density-ratio machinery: discriminator training and ratio accessors.

A binary discriminator with logit h(x, t) separates reference points
(label 1) from biased points (label 0) after both are pushed through the
forward noising kernel at a per-sample time. At the optimum,
d = sigmoid(h) satisfies w = d / (1 - d), so

    log w(x, t) = h(x, t)            ... exactly, no log/division chain
    w~(x, t)    = 2 sigmoid(h)       ... ratio against the pooled half/half mix
    w~(x, t, a) = 2 sigmoid(a h)     ... confidence-scaled variant

An oracle variant computes the same quantities from closed-form mixture
pairs and is used to calibrate everything the learned one does.

Learned ratios clamp the logit to +-ln(1000) before exponentiation, which
caps w in [1e-3, 1e3]; an overconfident discriminator otherwise produces
weights that blow up downstream losses. The clamp is applied consistently
to w and w~ so the algebraic identity w~ = 2w/(1+w) survives it.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InputError, NumericalError
from .mixture import (
    GaussianMixture,
    perturbed_log_density_batch,
    perturbed_score_batch,
    pooled_mixture,
    true_ratio,
)
from .net import Mlp, adam_step, init_optim, load_net, save_net
from .sde import VpSchedule

LOGIT_CLAMP = float(np.log(1000.0))
LOG_FLOOR = float(np.log(1e-300))


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _softplus(z):
    return np.logaddexp(0.0, z)


@dataclass
class DatasetSplit:
    """Labeled sample store: biased points and (small) reference points."""

    bias_points: np.ndarray
    ref_points: np.ndarray

    def __post_init__(self):
        self.bias_points = np.atleast_2d(np.asarray(self.bias_points, dtype=np.float64))
        self.ref_points = np.atleast_2d(np.asarray(self.ref_points, dtype=np.float64))
        if self.bias_points.shape[0] == 0 or self.ref_points.shape[0] == 0:
            raise InputError("both bias and reference sets must be non-empty")
        if self.bias_points.shape[1] != self.ref_points.shape[1]:
            raise InputError("bias and reference sets must share a dimension")

    @property
    def dim(self):
        return self.bias_points.shape[1]

    @property
    def pooled(self):
        return np.vstack([self.bias_points, self.ref_points])


@dataclass
class RatioModel:
    """Learned (discriminator) or oracle (closed-form) density ratio.

    time_independent models answer every query with their t=0 value, which
    is how the single-time baseline is held constant across the horizon.
    """

    sched: VpSchedule
    kind: str = "learned"  # "learned" | "oracle"
    net: Mlp = None
    p_num: GaussianMixture = None
    p_den: GaussianMixture = None
    time_independent: bool = False
    logit_clamp: float = LOGIT_CLAMP
    train_report: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind == "learned":
            if self.net is None or self.net.output_dim != 1:
                raise InputError("learned ratio model needs a scalar-logit network")
        elif self.kind == "oracle":
            if self.p_num is None or self.p_den is None:
                raise InputError("oracle ratio model needs numerator and denominator mixtures")
            if self.p_num.dim != self.p_den.dim:
                raise InputError("oracle mixtures must share a dimension")
        else:
            raise InputError(f"ratio model kind must be learned|oracle, got {self.kind!r}")

    @property
    def dim(self):
        return self.net.input_dim if self.kind == "learned" else self.p_num.dim

    def _times(self, x, t):
        return 0.0 if self.time_independent else t

    # -- core accessors ------------------------------------------------------

    def logit(self, x, t):
        """Raw log-ratio estimate (unclamped)."""
        t = self._times(x, t)
        if self.kind == "learned":
            out = self.net.forward(x, t)
            return out[..., 0]
        x = np.asarray(x, dtype=np.float64)
        if np.ndim(t) == 0:
            pnum = self.p_num.perturb(self.sched, float(t))
            pden = self.p_den.perturb(self.sched, float(t))
            lnum = np.maximum(pnum.log_density(x), LOG_FLOOR)
            lden = np.maximum(pden.log_density(x), LOG_FLOOR)
            return lnum - lden
        ts = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
        lnum = np.maximum(perturbed_log_density_batch(self.p_num, self.sched, x, ts), LOG_FLOOR)
        lden = np.maximum(perturbed_log_density_batch(self.p_den, self.sched, x, ts), LOG_FLOOR)
        return lnum - lden

    def _effective_logit(self, x, t):
        h = self.logit(x, t)
        if self.kind == "learned":
            h = np.clip(h, -self.logit_clamp, self.logit_clamp)
        return h

    def log_ratio_w(self, x, t):
        """log w, which IS the (clamped) logit: no exp/log round trip."""
        return self._effective_logit(x, t)

    def ratio_w(self, x, t):
        """w = p_num^t / p_den^t; learned values are capped to [1e-3, 1e3]."""
        return np.exp(self._effective_logit(x, t))

    def ratio_tilde(self, x, t):
        """Ratio against the pooled half/half mixture: 2w/(1+w) in (0, 2)."""
        return 2.0 * _sigmoid(self._effective_logit(x, t))

    def ratio_tilde_alpha(self, x, t, alpha):
        """Confidence-scaled pooled ratio 2 w^a / (1 + w^a); a=0 gives 1."""
        if alpha < 0.0:
            raise InputError("alpha must be >= 0")
        return 2.0 * _sigmoid(alpha * self._effective_logit(x, t))

    def grad_log_w(self, x, t):
        """Gradient of log w in x; for the oracle this is the score difference."""
        t = self._times(x, t)
        if self.kind == "learned":
            return self.net.input_gradient(x, t)
        x = np.asarray(x, dtype=np.float64)
        if np.ndim(t) == 0:
            pnum = self.p_num.perturb(self.sched, float(t))
            pden = self.p_den.perturb(self.sched, float(t))
            return pnum.score(x) - pden.score(x)
        ts = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
        return perturbed_score_batch(self.p_num, self.sched, x, ts) - \
            perturbed_score_batch(self.p_den, self.sched, x, ts)

    def grad_log_tilde(self, x, t, alpha=1.0):
        """Gradient of log(2 w^a / (1 + w^a)): a (1 - sigmoid(a h)) grad h."""
        if alpha < 0.0:
            raise InputError("alpha must be >= 0")
        if alpha == 0.0:
            x = np.asarray(x, dtype=np.float64)
            return np.zeros_like(x)
        h = self.logit(x, t)
        factor = alpha * (1.0 - _sigmoid(alpha * h))
        g = self.grad_log_w(x, t)
        return factor[..., None] * g if np.ndim(g) == 2 else factor * g


def oracle_ratio_model(p_num, p_den, sched, time_independent=False):
    return RatioModel(sched=sched, kind="oracle", p_num=p_num, p_den=p_den,
                      time_independent=time_independent)


# ---------------------------------------------------------------------------
# discriminator training
# ---------------------------------------------------------------------------

@dataclass
class DiscTrainConfig:
    steps: int = 3000
    batch_size: int = 128
    learning_rate: float = 1e-3
    seed: int = 0
    time_dependent: bool = True
    hidden: tuple = (64, 64, 64)
    activation: str = "silu"
    time_embed: str = "sinusoidal"
    n_frequencies: int = 8
    lambda_prime: str = "uniform"  # temporal weighting of the BCE
    holdout_fraction: float = 0.1


def _lambda_prime(sched, t, kind):
    if kind == "uniform":
        return np.ones_like(np.asarray(t, dtype=np.float64))
    if kind == "sigma_squared":
        _, sigma = sched.alpha_sigma(t)
        return sigma * sigma
    raise InputError(f"unknown temporal weighting {kind!r}")


def train_discriminator(split: DatasetSplit, sched: VpSchedule,
                        cfg: DiscTrainConfig = None) -> RatioModel:
    """Fit the time-dependent discriminator by temporally weighted BCE.

    Each step takes half a batch of reference points (label 1) and half of
    biased points (label 0), draws a per-sample time uniformly on
    [t_eps, T] (or pins it to 0 for the time-independent baseline), pushes
    the points through the forward kernel and descends the weighted BCE of
    the logit. Deterministic in cfg.seed; a held-out BCE estimate is
    recorded in the returned model's train_report.
    """
    cfg = cfg or DiscTrainConfig()
    rng = np.random.default_rng(cfg.seed)
    half = cfg.batch_size // 2
    if half < 1:
        raise InputError("batch_size must be >= 2")

    def carve(points):
        n_hold = int(round(cfg.holdout_fraction * points.shape[0]))
        n_hold = min(n_hold, points.shape[0] - 1)
        perm = rng.permutation(points.shape[0])
        return points[perm[n_hold:]], points[perm[:n_hold]]

    ref_train, ref_hold = carve(split.ref_points)
    bias_train, bias_hold = carve(split.bias_points)

    net = Mlp(split.dim, list(cfg.hidden), 1, activation=cfg.activation,
              time_embed=cfg.time_embed, n_frequencies=cfg.n_frequencies,
              seed=cfg.seed)
    state = init_optim(net.n_params, learning_rate=cfg.learning_rate)
    labels = np.concatenate([np.ones(half), np.zeros(half)])
    last_loss = np.nan
    for step in range(cfg.steps):
        x0 = np.vstack([
            ref_train[rng.integers(0, ref_train.shape[0], half)],
            bias_train[rng.integers(0, bias_train.shape[0], half)],
        ])
        if cfg.time_dependent:
            t = rng.uniform(sched.t_eps, sched.T, 2 * half)
        else:
            t = np.zeros(2 * half)
        x_t = sched.forward_sample(x0, t, rng.standard_normal(x0.shape))
        out, cache = net.forward(x_t, t, want_cache=True)
        h = out[:, 0]
        lam = _lambda_prime(sched, t, cfg.lambda_prime)
        losses = lam * (_softplus(h) - labels * h)
        last_loss = float(losses.mean())
        if not np.isfinite(last_loss):
            raise NumericalError(f"discriminator loss became non-finite at step {step}")
        outgrad = (lam * (_sigmoid(h) - labels) / (2 * half))[:, None]
        grads = net.param_gradient(outgrad, cache)
        adam_step(net.params, grads, state)

    model = RatioModel(sched=sched, kind="learned", net=net,
                       time_independent=not cfg.time_dependent)
    model.train_report = {
        "final_train_bce": last_loss,
        "steps": cfg.steps,
        "heldout_tbce": _heldout_tbce(net, sched, ref_hold, bias_hold, cfg, seed=cfg.seed + 1),
    }
    return model


def _heldout_tbce(net, sched, ref_hold, bias_hold, cfg, seed, n_rounds=16):
    if ref_hold.shape[0] == 0 or bias_hold.shape[0] == 0:
        return float("nan")
    rng = np.random.default_rng(seed)
    vals = []
    for _ in range(n_rounds):
        for points, label in ((ref_hold, 1.0), (bias_hold, 0.0)):
            if cfg.time_dependent:
                t = rng.uniform(sched.t_eps, sched.T, points.shape[0])
            else:
                t = np.zeros(points.shape[0])
            x_t = sched.forward_sample(points, t, rng.standard_normal(points.shape))
            h = net.forward(x_t, t)[:, 0]
            lam = _lambda_prime(sched, t, cfg.lambda_prime)
            vals.append(lam * (_softplus(h) - label * h))
    return float(np.concatenate(vals).mean())


# ---------------------------------------------------------------------------
# ratio-quality metrics
# ---------------------------------------------------------------------------

def dre_mse(rm: RatioModel, oracle_rm: RatioModel, eval_mix: GaussianMixture,
            t, n, seed):
    """Monte-Carlo E[(w_true - w_est)^2] under eval_mix pushed to time t."""
    mix_t = eval_mix.perturb(rm.sched, t)
    X = mix_t.sample(n, seed)
    w_true = oracle_rm.ratio_w(X, t)
    w_est = rm.ratio_w(X, t)
    return float(np.mean((w_true - w_est) ** 2))


@dataclass
class DreScan:
    """Per-time ratio errors for both discriminators plus the integral ratio."""

    ratio: float
    grid: np.ndarray
    mse_time_dep: np.ndarray
    mse_time_indep: np.ndarray

    @property
    def per_t(self):
        return [
            (float(t), float(a), float(b))
            for t, a, b in zip(self.grid, self.mse_time_dep, self.mse_time_indep)
        ]


def integrated_dre_error(rm_time_dep: RatioModel, rm_time_indep: RatioModel,
                         oracle: RatioModel, grid, n, seed=0) -> DreScan:
    """Trapezoid integral of the ratio error over the time grid, for both models.

    The time-independent model is scored once at t=0 on unperturbed samples
    and that error is held constant across the grid (its ratio never moves
    with t). Returns the integral ratio time-dependent / time-independent;
    when both integrals vanish (< 1e-12) the ratio is 1 by convention.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise InputError("grid must be strictly increasing with >= 2 points")
    eval_mix = pooled_mixture(oracle.p_num, oracle.p_den)
    mse_dep = np.array([
        dre_mse(rm_time_dep, oracle, eval_mix, t, n, np.random.default_rng([seed, j]).integers(2**31))
        for j, t in enumerate(grid)
    ])
    mse0_indep = dre_mse(rm_time_indep, oracle, eval_mix, 0.0, n,
                         np.random.default_rng([seed, grid.size]).integers(2**31))
    mse_indep = np.full(grid.size, mse0_indep)
    int_dep = float(np.trapezoid(mse_dep, grid))
    int_indep = float(np.trapezoid(mse_indep, grid))
    if int_dep < 1e-12 and int_indep < 1e-12:
        ratio = 1.0
    elif int_indep <= 1e-12:
        raise InputError("time-independent error integral is degenerate (zero)")
    else:
        ratio = int_dep / int_indep
    return DreScan(ratio=ratio, grid=grid, mse_time_dep=mse_dep, mse_time_indep=mse_indep)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_ratio_model(rm: RatioModel, path):
    if rm.kind != "learned":
        raise InputError("only learned ratio models are checkpointed")
    save_net(rm.net, path, extra={
        "role": "discriminator",
        "time_independent": rm.time_independent,
        "logit_clamp": rm.logit_clamp,
    })


def load_ratio_model(path, sched: VpSchedule) -> RatioModel:
    net, header = load_net(path)
    if header.get("role") != "discriminator":
        raise InputError(f"checkpoint {path} is not a discriminator (role field)")
    return RatioModel(sched=sched, kind="learned", net=net,
                      time_independent=bool(header.get("time_independent", False)),
                      logit_clamp=float(header.get("logit_clamp", LOGIT_CLAMP)))
