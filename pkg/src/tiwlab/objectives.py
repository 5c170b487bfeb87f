"""Score-matching objectives and the score-network training loop.

Per-sample losses share one skeleton,

    loss = 0.5 * lambda(t) * weight(x_t, t) * ||s(x_t, t) - k(x_t|x0) - c(x_t, t)||^2

where k is the conditional kernel score and the (weight, c) pair encodes
the variant:

    dsm               weight = 1,            c = 0
    iw_dsm            weight = ratio at t=0, c = 0
    tiw_dsm/tiw_alpha weight = ratio^a,      c = grad log ratio^a
    weight_only       weight = ratio^a,      c = 0
    correction_only   weight = 1,            c = grad log ratio^a
    interpolated      dsm for t < tau, tiw for t >= tau

ratio_form chooses which ratio feeds the variant: "tilde" uses the pooled
half/half ratio (2 sigmoid of the logit; the practical form trained on the
full observed set), "plain" the direct bias-vs-data ratio (exp of the
logit; the form whose weight-only / correction-only fixed points are the
biased and unbiased scores respectively). An exact-quadrature oracle loss
is provided for verifying that the reweighted objective's parameter
gradient coincides with classical score matching against the clean data
density.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, InputError, NumericalError
from .mixture import GaussianMixture
from .net import Mlp, adam_step, init_optim
from .ratio import DatasetSplit, RatioModel
from .sde import VpSchedule

OBJECTIVE_KINDS = ("dsm", "sm_oracle", "iw_dsm", "tiw_dsm", "tiw_alpha",
                   "weight_only", "correction_only", "interpolated")
LAMBDA_KINDS = ("sigma_squared", "uniform")
STREAMS = ("bias", "ref", "obs")
RATIO_FORMS = ("tilde", "plain")

_RATIO_KINDS = ("iw_dsm", "tiw_dsm", "tiw_alpha", "weight_only",
                "correction_only", "interpolated")
_KIND_DEFAULT_STREAM = {"weight_only": "bias", "correction_only": "bias"}
_KIND_DEFAULT_FORM = {"weight_only": "plain", "correction_only": "plain"}


def lambda_weight(sched: VpSchedule, t, kind):
    if kind == "uniform":
        return np.ones_like(np.asarray(t, dtype=np.float64))
    if kind == "sigma_squared":
        _, sigma = sched.alpha_sigma(t)
        return sigma * sigma
    raise InputError(f"unknown temporal weighting {kind!r}")


@dataclass
class ObjectiveSpec:
    kind: str = "tiw_dsm"
    alpha: float = 1.0
    tau: float = 0.0
    lambda_kind: str = "sigma_squared"
    stream: str = None
    ratio_form: str = None
    ratio: RatioModel = None
    t_min: float = None
    t_max: float = None

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise InputError(f"objective kind must be one of {OBJECTIVE_KINDS}")
        if self.lambda_kind not in LAMBDA_KINDS:
            raise InputError(f"lambda_kind must be one of {LAMBDA_KINDS}")
        if self.stream is None:
            self.stream = _KIND_DEFAULT_STREAM.get(self.kind, "obs")
        if self.ratio_form is None:
            self.ratio_form = _KIND_DEFAULT_FORM.get(self.kind, "tilde")
        if self.stream not in STREAMS:
            raise InputError(f"stream must be one of {STREAMS}")
        if self.ratio_form not in RATIO_FORMS:
            raise InputError(f"ratio_form must be one of {RATIO_FORMS}")
        if self.alpha < 0.0:
            raise InputError("alpha must be >= 0")
        if self.tau < 0.0:
            raise InputError("tau must be >= 0")
        if self.kind in _RATIO_KINDS and self.ratio is None:
            raise InputError(f"objective kind {self.kind!r} requires a ratio model")


@dataclass
class LossSample:
    """One telemetry record: where a loss value came from."""

    step: int
    x0: np.ndarray
    t: float
    noise: np.ndarray
    loss: float
    weight: float


def _ratio_terms(rm: RatioModel, X_t, ts, alpha, form):
    """(weight, correction) arrays for the reweighted objectives."""
    if form == "tilde":
        w = rm.ratio_tilde_alpha(X_t, ts, alpha)
        g = rm.grad_log_tilde(X_t, ts, alpha)
    else:
        logit = rm.log_ratio_w(X_t, ts)
        w = np.exp(alpha * logit)
        g = alpha * rm.grad_log_w(X_t, ts)
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(g))):
        raise NumericalError("non-finite density-ratio term in objective")
    return w, g


def _batch_terms(net, X0, ts, eps, sched, spec: ObjectiveSpec, iw_weights=None):
    """Per-sample losses plus what backprop needs (d loss_i / d s_i, cache)."""
    X0 = np.atleast_2d(np.asarray(X0, dtype=np.float64))
    eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    ts = np.broadcast_to(np.asarray(ts, dtype=np.float64), (X0.shape[0],))
    X_t = sched.forward_sample(X0, ts, eps)
    target = sched.cond_score(X_t, X0, ts)
    lam = lambda_weight(sched, ts, spec.lambda_kind)

    B, d = X_t.shape
    weights = np.ones(B)
    corr = np.zeros((B, d))
    kind = spec.kind
    if kind == "iw_dsm":
        if iw_weights is None:
            raise ContractError("iw_dsm needs per-sample t=0 weights")
        weights = np.broadcast_to(np.asarray(iw_weights, dtype=np.float64), (B,))
    elif kind in ("tiw_dsm", "tiw_alpha", "weight_only", "correction_only"):
        w, g = _ratio_terms(spec.ratio, X_t, ts, spec.alpha, spec.ratio_form)
        if kind != "correction_only":
            weights = w
        if kind != "weight_only":
            corr = g
    elif kind == "interpolated":
        w, g = _ratio_terms(spec.ratio, X_t, ts, spec.alpha, spec.ratio_form)
        tiw_side = ts >= spec.tau
        weights = np.where(tiw_side, w, 1.0)
        corr = np.where(tiw_side[:, None], g, 0.0)

    out, cache = net.forward(X_t, ts, want_cache=True)
    resid = out - target - corr
    losses = 0.5 * lam * weights * (resid * resid).sum(axis=1)
    outgrad = (lam * weights)[:, None] * resid
    return losses, outgrad, cache, weights, X_t


def _single(value):
    return float(np.asarray(value)[0])


def persample_dsm(net, x0, t, noise, sched, lambda_kind="sigma_squared"):
    spec = ObjectiveSpec(kind="dsm", lambda_kind=lambda_kind)
    losses, *_ = _batch_terms(net, x0, t, noise, sched, spec)
    return _single(losses)


def persample_tiw_dsm(net, x0, t, noise, sched, rm, lambda_kind="sigma_squared",
                      alpha=1.0, ratio_form="tilde"):
    spec = ObjectiveSpec(kind="tiw_alpha", alpha=alpha, lambda_kind=lambda_kind,
                         ratio=rm, ratio_form=ratio_form)
    losses, *_ = _batch_terms(net, x0, t, noise, sched, spec)
    return _single(losses)


def persample_iw_dsm(net, x0_origin_weight, x0, t, noise, sched,
                     lambda_kind="sigma_squared"):
    if x0_origin_weight <= 0.0:
        raise InputError("importance weight must be positive")
    base = persample_dsm(net, x0, t, noise, sched, lambda_kind)
    return x0_origin_weight * base


def persample_ablation(kind, net, x0, t, noise, sched, rm,
                       lambda_kind="sigma_squared", alpha=1.0, ratio_form="plain"):
    if kind not in ("weight_only", "correction_only"):
        raise InputError("ablation kind must be weight_only or correction_only")
    spec = ObjectiveSpec(kind=kind, alpha=alpha, lambda_kind=lambda_kind,
                         ratio=rm, ratio_form=ratio_form)
    losses, *_ = _batch_terms(net, x0, t, noise, sched, spec)
    return _single(losses)


def persample_interpolated(tau, net, x0, t, noise, sched, rm,
                           lambda_kind="sigma_squared", alpha=1.0,
                           ratio_form="tilde"):
    spec = ObjectiveSpec(kind="interpolated", tau=tau, alpha=alpha,
                         lambda_kind=lambda_kind, ratio=rm, ratio_form=ratio_form)
    losses, *_ = _batch_terms(net, x0, t, noise, sched, spec)
    return _single(losses)


# ---------------------------------------------------------------------------
# exact-quadrature score-matching loss (theorem verification)
# ---------------------------------------------------------------------------

@dataclass
class QuadratureGrid:
    """Tensor-product Gauss-Legendre grid: time x space, +-pad_std coverage.

    The time axis is composite (t_panels panels of n_t nodes each) because
    sinusoidal time embeddings make the integrand oscillatory in t.
    """

    n_t: int = 16
    n_x: int = 160
    pad_std: float = 6.0
    t_panels: int = 8


def _space_nodes(pt: GaussianMixture, n_x, pad_std):
    std = float(np.sqrt(pt.variances.max()))
    nodes, weights = np.polynomial.legendre.leggauss(n_x)
    axes = []
    for c in range(pt.dim):
        lo = pt.means[:, c].min() - pad_std * std
        hi = pt.means[:, c].max() + pad_std * std
        axes.append((0.5 * (hi - lo) * nodes + 0.5 * (hi + lo),
                     0.5 * (hi - lo) * weights))
    if pt.dim == 1:
        X = axes[0][0][:, None]
        w = axes[0][1]
    else:
        xs, ys = np.meshgrid(axes[0][0], axes[1][0], indexing="ij")
        X = np.column_stack([xs.ravel(), ys.ravel()])
        w = np.outer(axes[0][1], axes[1][1]).ravel()
    return X, w


def _sm_quadrature(net, grid, sched, p_data, lambda_kind, want_grad):
    if p_data.dim > 2:
        raise InputError("quadrature oracle supports 1-D and 2-D mixtures only")
    base_nodes, base_weights = np.polynomial.legendre.leggauss(grid.n_t)
    edges = np.linspace(sched.t_eps, sched.T, grid.t_panels + 1)
    t_nodes, t_weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        t_nodes.append(0.5 * (hi - lo) * base_nodes + 0.5 * (hi + lo))
        t_weights.append(0.5 * (hi - lo) * base_weights)
    t_nodes = np.concatenate(t_nodes)
    t_weights = np.concatenate(t_weights)
    value = 0.0
    grads = np.zeros(net.n_params) if want_grad else None
    for t, tw in zip(t_nodes, t_weights):
        pt = p_data.perturb(sched, t)
        X, xw = _space_nodes(pt, grid.n_x, grid.pad_std)
        dens = pt.density(X)
        score = pt.score(X)
        lam = float(lambda_weight(sched, t, lambda_kind))
        if want_grad:
            out, cache = net.forward(X, t, want_cache=True)
        else:
            out = net.forward(X, t)
        resid = out - score
        cell = xw * dens
        value += tw * 0.5 * lam * float(cell @ (resid * resid).sum(axis=1))
        if want_grad:
            outgrad = (tw * lam * cell)[:, None] * resid
            grads += net.param_gradient(outgrad, cache)
    return value, grads


def loss_sm_oracle(net, grid: QuadratureGrid, sched, p_data: GaussianMixture,
                   lambda_kind="sigma_squared", want_grad=True, refine_check=True):
    """Deterministic quadrature of the classical score-matching loss.

    Integrates 0.5 lambda(t) E_{p^t}||s(x,t) - score_p^t(x)||^2 over
    [t_eps, T] and differentiates it w.r.t. the network parameters. A
    Richardson-style check against a doubled grid raises when the grid is
    too coarse (relative gap > 1e-4).
    """
    value, grads = _sm_quadrature(net, grid, sched, p_data, lambda_kind, want_grad)
    if refine_check:
        fine = QuadratureGrid(n_t=grid.n_t, n_x=2 * grid.n_x, pad_std=grid.pad_std,
                              t_panels=2 * grid.t_panels)
        ref, _ = _sm_quadrature(net, fine, sched, p_data, lambda_kind, False)
        if abs(value - ref) > 1e-4 * max(abs(ref), 1e-12):
            raise NumericalError(
                f"quadrature grid too coarse: value {value:.6e} vs refined {ref:.6e}"
            )
    return value, grads


# ---------------------------------------------------------------------------
# Monte-Carlo batch gradients (equivalence studies)
# ---------------------------------------------------------------------------

def mc_loss_gradient(net, spec: ObjectiveSpec, sched, base_mixture: GaussianMixture,
                     n, seed, batch=8192, variance_reduction=True):
    """Common-random-number MC estimate of the loss and its parameter gradient.

    Draws x0 from base_mixture, one stratified-uniform time per sample and
    kernel noise; the draws depend only on (seed, n), so two objectives
    called with the same seed see identical randomness. n counts loss
    evaluations. With variance_reduction the kernel noise comes in
    antithetic, second-moment-matched pairs (n//2 base points evaluated at
    +-eps), which sharpens gradient-equivalence comparisons several-fold.
    The [t_min, t_max] range factor is included, making the result directly
    comparable with the quadrature loss.
    """
    t_lo = spec.t_min if spec.t_min is not None else sched.t_eps
    t_hi = spec.t_max if spec.t_max is not None else sched.T
    m = n // 2 if variance_reduction else n
    x0 = base_mixture.sample(m, seed=[seed, 1])
    rng_t = np.random.default_rng([seed, 2])
    ts = t_lo + (np.arange(m) + rng_t.uniform(size=m)) / m * (t_hi - t_lo)
    eps = np.random.default_rng([seed, 3]).standard_normal(x0.shape)
    if variance_reduction:
        eps = eps / np.sqrt((eps * eps).mean())
        noise_blocks = (eps, -eps)
    else:
        noise_blocks = (eps,)

    iw = _iw_weights(spec, x0) if spec.kind == "iw_dsm" else None

    total = 0.0
    grads = np.zeros(net.n_params)
    for block in noise_blocks:
        for s in range(0, m, batch):
            sl = slice(s, min(s + batch, m))
            losses, outgrad, cache, _, _ = _batch_terms(
                net, x0[sl], ts[sl], block[sl], sched, spec,
                iw_weights=None if iw is None else iw[sl])
            total += losses.sum()
            grads += net.param_gradient(outgrad, cache)
    scale = (t_hi - t_lo) / (m * len(noise_blocks))
    return total * scale, grads * scale


def _iw_weights(spec: ObjectiveSpec, points):
    """Importance weights at t=0, cached per data point for iw_dsm."""
    rm = spec.ratio
    if spec.ratio_form == "tilde":
        return rm.ratio_tilde(points, 0.0)
    return rm.ratio_w(points, 0.0)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class ScoreTrainConfig:
    steps: int = 6000
    batch_size: int = 128
    learning_rate: float = 1e-3
    seed: int = 0
    hidden: tuple = (64, 64, 64)
    activation: str = "silu"
    time_embed: str = "sinusoidal"
    n_frequencies: int = 8
    telemetry_every: int = 0       # 0 disables telemetry
    telemetry_path: str = None
    divergence_threshold: float = 1e6
    # pooled-stream draw rule; None resolves per objective: tilde-ratio
    # objectives draw the source set by a fair coin ("balanced", matching
    # the half/half pool their weights are normalized against), plain DSM
    # pools with empirical proportions
    obs_stream: str = None
    lr_decay: str = "cosine"       # or "none"


def _stream_points(data: DatasetSplit, stream):
    if stream == "bias":
        return data.bias_points
    if stream == "ref":
        return data.ref_points
    return data.pooled


def train_score(data: DatasetSplit, spec: ObjectiveSpec, sched: VpSchedule,
                cfg: ScoreTrainConfig = None) -> Mlp:
    """Adam loop over mini-batches of the configured objective.

    The data stream follows spec.stream; for "obs" the pooled set is drawn
    with empirical proportions unless cfg.obs_stream == "balanced", which
    picks the source set by a fair coin first. Deterministic in cfg.seed.
    Telemetry LossSamples land on the returned network (.telemetry) and,
    when telemetry_path is set, in a CSV with columns step,t,weight,loss.
    """
    if spec.kind == "sm_oracle":
        raise InputError("sm_oracle is a verification loss, not a trainable objective")
    cfg = cfg or ScoreTrainConfig()
    if cfg.obs_stream not in (None, "empirical", "balanced"):
        raise InputError("obs_stream must be empirical or balanced")
    if cfg.lr_decay not in ("cosine", "none"):
        raise InputError("lr_decay must be cosine or none")
    obs_stream = cfg.obs_stream
    if obs_stream is None:
        tilde_ratio = spec.kind in _RATIO_KINDS and spec.ratio_form == "tilde"
        obs_stream = "balanced" if tilde_ratio else "empirical"
    rng = np.random.default_rng(cfg.seed)
    pool = _stream_points(data, spec.stream)
    n_pool = pool.shape[0]
    dim = pool.shape[1]
    balanced = spec.stream == "obs" and obs_stream == "balanced"
    n_bias = data.bias_points.shape[0]

    iw_cache = _iw_weights(spec, pool) if spec.kind == "iw_dsm" else None

    net = Mlp(dim, list(cfg.hidden), dim, activation=cfg.activation,
              time_embed=cfg.time_embed, n_frequencies=cfg.n_frequencies,
              seed=cfg.seed)
    state = init_optim(net.n_params, learning_rate=cfg.learning_rate)
    t_lo = spec.t_min if spec.t_min is not None else sched.t_eps
    t_hi = spec.t_max if spec.t_max is not None else sched.T

    telemetry = []
    writer = ctx = None
    if cfg.telemetry_path and cfg.telemetry_every:
        ctx = open(cfg.telemetry_path, "w", newline="")
        writer = csv.writer(ctx)
        writer.writerow(["step", "t", "weight", "loss"])
    try:
        for step in range(cfg.steps):
            if balanced:
                pick_ref = rng.integers(0, 2, cfg.batch_size).astype(bool)
                idx = np.where(
                    pick_ref,
                    n_bias + rng.integers(0, n_pool - n_bias, cfg.batch_size),
                    rng.integers(0, n_bias, cfg.batch_size),
                )
            else:
                idx = rng.integers(0, n_pool, cfg.batch_size)
            x0 = pool[idx]
            ts = rng.uniform(t_lo, t_hi, cfg.batch_size)
            eps = rng.standard_normal((cfg.batch_size, dim))
            losses, outgrad, cache, weights, _ = _batch_terms(
                net, x0, ts, eps, sched, spec,
                iw_weights=None if iw_cache is None else iw_cache[idx])
            mean_loss = float(losses.mean())
            if not np.isfinite(mean_loss) or mean_loss > cfg.divergence_threshold:
                raise NumericalError(f"score training diverged at step {step}: "
                                     f"loss {mean_loss!r}")
            grads = net.param_gradient(outgrad / cfg.batch_size, cache)
            if cfg.lr_decay == "cosine":
                state.learning_rate = cfg.learning_rate * 0.5 * (
                    1.0 + np.cos(np.pi * step / cfg.steps))
            adam_step(net.params, grads, state)
            if cfg.telemetry_every and step % cfg.telemetry_every == 0:
                rec = LossSample(step=step, x0=x0[0].copy(), t=float(ts[0]),
                                 noise=eps[0].copy(), loss=float(losses[0]),
                                 weight=float(weights[0]))
                telemetry.append(rec)
                if writer is not None:
                    writer.writerow([rec.step, repr(rec.t), repr(rec.weight),
                                     repr(rec.loss)])
    finally:
        if ctx is not None:
            ctx.close()
    net.telemetry = telemetry
    return net
