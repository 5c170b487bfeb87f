"""Small fully connected network with a time input, trained by Adam.

The same class serves as the score network s(x, t) and as the
discriminator logit h(x, t). Parameters live in one flat float64 vector
(layout: W_0, b_0, W_1, b_1, ...) so optimizers and checkpoints can treat
the network as a plain vector. Forward/backward are hand-written
reverse-mode numpy; gradients are exact, which the test suite checks
against central finite differences.

Checkpoint format (little-endian): magic ``TIWNET``, u16 format version,
u32 header length, JSON header (architecture + arbitrary extra fields),
then the parameter vector as raw float64. Round-trips are bit-exact.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, InputError, IoError

ACTIVATIONS = ("tanh", "silu")
TIME_EMBEDS = ("append-scalar", "sinusoidal")

CHECKPOINT_MAGIC = b"TIWNET"
CHECKPOINT_VERSION = 1


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _silu(z):
    return z * _sigmoid(z)


def _silu_prime(z):
    s = _sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


def _tanh_prime(z):
    th = np.tanh(z)
    return 1.0 - th * th


_ACT = {"tanh": (np.tanh, _tanh_prime), "silu": (_silu, _silu_prime)}


@dataclass
class ForwardCache:
    """Activations saved by forward() for the matching backward pass."""

    net: "Mlp"
    feats: np.ndarray          # (B, feature_dim) network input incl. time features
    zs: list                   # pre-activations per hidden layer
    acts: list                 # post-activations per layer, acts[0] == feats
    batch: int


class Mlp:
    def __init__(self, input_dim, hidden, output_dim, activation="silu",
                 time_embed="sinusoidal", n_frequencies=8, params=None, seed=0):
        if activation not in ACTIVATIONS:
            raise InputError(f"activation must be one of {ACTIVATIONS}")
        if time_embed not in TIME_EMBEDS:
            raise InputError(f"time_embed must be one of {TIME_EMBEDS}")
        if input_dim < 1 or output_dim < 1:
            raise InputError("input_dim and output_dim must be >= 1")
        if time_embed == "sinusoidal" and n_frequencies < 1:
            raise InputError("sinusoidal embedding needs n_frequencies >= 1")
        self.input_dim = int(input_dim)
        self.hidden = [int(h) for h in hidden]
        self.output_dim = int(output_dim)
        self.activation = activation
        self.time_embed = time_embed
        self.n_frequencies = int(n_frequencies)

        self.embed_dim = 1 if time_embed == "append-scalar" else 2 * self.n_frequencies
        self.widths = [self.input_dim + self.embed_dim] + self.hidden + [self.output_dim]
        # layout descriptor: (offset, shape) per tensor, W then b per layer
        self.layout = []
        off = 0
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            self.layout.append((off, (fan_out, fan_in)))
            off += fan_out * fan_in
            self.layout.append((off, (fan_out,)))
            off += fan_out
        self.n_params = off

        if params is None:
            self.params = self._init_params(seed)
        else:
            params = np.asarray(params, dtype=np.float64)
            if params.shape != (self.n_params,):
                raise InputError(
                    f"params must have length {self.n_params}, got {params.shape}"
                )
            self.params = params.copy()

    def _init_params(self, seed):
        # uniform +-1/sqrt(fan_in), per layer
        rng = np.random.default_rng(seed)
        params = np.empty(self.n_params)
        for i in range(0, len(self.layout), 2):
            w_off, w_shape = self.layout[i]
            b_off, b_shape = self.layout[i + 1]
            bound = 1.0 / np.sqrt(w_shape[1])
            params[w_off:w_off + w_shape[0] * w_shape[1]] = rng.uniform(
                -bound, bound, w_shape[0] * w_shape[1]
            )
            params[b_off:b_off + b_shape[0]] = rng.uniform(-bound, bound, b_shape[0])
        return params

    def _tensors(self, flat=None):
        flat = self.params if flat is None else flat
        out = []
        for off, shape in self.layout:
            out.append(flat[off:off + int(np.prod(shape))].reshape(shape))
        return out

    # -- evaluation ----------------------------------------------------------

    def _time_features(self, t, batch):
        t = np.asarray(t, dtype=np.float64)
        if t.ndim == 0:
            t = np.full(batch, float(t))
        if t.shape != (batch,):
            raise InputError(f"t must be scalar or shape ({batch},), got {t.shape}")
        if self.time_embed == "append-scalar":
            return t[:, None]
        # harmonics 1..k of the unit horizon; keeps the t-dependence band-limited
        freqs = np.arange(1, self.n_frequencies + 1, dtype=np.float64)
        ang = 2.0 * np.pi * t[:, None] * freqs[None, :]
        return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)

    def forward(self, x, t, want_cache=False):
        """Evaluate the network; returns (B, output_dim) for batches.

        Single vectors come back as vectors. With want_cache=True also
        returns the ForwardCache consumed by param_gradient.
        """
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise InputError(f"x must have dimension {self.input_dim}, got {x.shape}")
        if not np.all(np.isfinite(X)):
            raise InputError("non-finite network input")
        feats = np.concatenate([X, self._time_features(t, X.shape[0])], axis=1)

        act, _ = _ACT[self.activation]
        tensors = self._tensors()
        a = feats
        zs, acts = [], [feats]
        n_layers = len(self.widths) - 1
        for l in range(n_layers):
            W, b = tensors[2 * l], tensors[2 * l + 1]
            z = a @ W.T + b
            if l < n_layers - 1:
                zs.append(z)
                a = act(z)
                acts.append(a)
            else:
                a = z
        out = a[0] if single else a
        if want_cache:
            return out, ForwardCache(net=self, feats=feats, zs=zs, acts=acts,
                                     batch=feats.shape[0])
        return out

    def _check_cache(self, cache):
        if not isinstance(cache, ForwardCache) or cache.net is not self:
            raise ContractError("forward cache does not belong to this network")
        if len(cache.acts) != len(self.widths) - 1:
            raise ContractError("forward cache layer count does not match network")

    def param_gradient(self, loss_grad_at_output, cache):
        """Exact d(loss)/d(params) given d(loss)/d(output), summed over the batch."""
        self._check_cache(cache)
        g = np.asarray(loss_grad_at_output, dtype=np.float64)
        if g.ndim == 1:
            g = g[None, :]
        if g.shape != (cache.batch, self.output_dim):
            raise ContractError(
                f"output gradient shape {g.shape} does not match cache batch "
                f"{cache.batch} x output_dim {self.output_dim}"
            )
        _, act_prime = _ACT[self.activation]
        tensors = self._tensors()
        grads = np.zeros(self.n_params)
        gtensors = self._tensors(grads)
        delta = g
        for l in range(len(self.widths) - 2, -1, -1):
            W = tensors[2 * l]
            gtensors[2 * l] += delta.T @ cache.acts[l]
            gtensors[2 * l + 1] += delta.sum(axis=0)
            if l > 0:
                delta = (delta @ W) * act_prime(cache.zs[l - 1])
        return grads

    def input_gradient(self, x, t):
        """Jacobian of the output w.r.t. x (time features excluded).

        Shapes: (output_dim, input_dim) for a single x, squeezed to
        (input_dim,) when output_dim == 1; batches gain a leading axis.
        """
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        _, cache = self.forward(x, t, want_cache=True)
        _, act_prime = _ACT[self.activation]
        tensors = self._tensors()
        B = cache.batch
        jac = np.empty((B, self.output_dim, self.input_dim))
        primes = [act_prime(z) for z in cache.zs]
        for o in range(self.output_dim):
            delta = np.zeros((B, self.output_dim))
            delta[:, o] = 1.0
            for l in range(len(self.widths) - 2, -1, -1):
                delta = delta @ tensors[2 * l]
                if l > 0:
                    delta = delta * primes[l - 1]
            jac[:, o, :] = delta[:, :self.input_dim]
        if self.output_dim == 1:
            jac = jac[:, 0, :]
        return jac[0] if single else jac

    # -- serialization -------------------------------------------------------

    def arch_dict(self):
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "output_dim": self.output_dim,
            "activation": self.activation,
            "time_embed": self.time_embed,
            "n_frequencies": self.n_frequencies,
        }


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class OptimState:
    step: int
    m: np.ndarray
    v: np.ndarray
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_optim(n_params, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    return OptimState(step=0, m=np.zeros(n_params), v=np.zeros(n_params),
                      learning_rate=learning_rate, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params, grads, state: OptimState):
    """One bias-corrected Adam update, in place. Returns (params, state)."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ContractError("params, grads and optimizer moments must share a shape")
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grads
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    params -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_net(net: Mlp, path, extra=None):
    header = dict(net.arch_dict())
    header["param_count"] = net.n_params
    if extra:
        header.update(extra)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(struct.pack("<H", CHECKPOINT_VERSION))
            f.write(struct.pack("<I", len(blob)))
            f.write(blob)
            f.write(net.params.astype("<f8").tobytes())
    except OSError as e:
        raise IoError(f"cannot write checkpoint {path}: {e}") from e


def load_net(path):
    """Read a checkpoint; returns (net, header dict)."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise IoError(f"cannot read checkpoint {path}: {e}") from e
    if raw[:6] != CHECKPOINT_MAGIC:
        raise IoError(f"corrupt checkpoint {path}: bad magic field")
    if len(raw) < 12:
        raise IoError(f"corrupt checkpoint {path}: truncated header")
    (version,) = struct.unpack("<H", raw[6:8])
    if version != CHECKPOINT_VERSION:
        raise IoError(f"corrupt checkpoint {path}: unsupported version field {version}")
    (hlen,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise IoError(f"corrupt checkpoint {path}: unreadable header ({e})") from e
    for field in ("input_dim", "hidden", "output_dim", "activation",
                  "time_embed", "n_frequencies", "param_count"):
        if field not in header:
            raise IoError(f"corrupt checkpoint {path}: missing header field {field!r}")
    body = raw[12 + hlen:]
    n = header["param_count"]
    if len(body) != 8 * n:
        raise IoError(
            f"corrupt checkpoint {path}: params field has {len(body)} bytes, "
            f"expected {8 * n}"
        )
    params = np.frombuffer(body, dtype="<f8").astype(np.float64)
    net = Mlp(header["input_dim"], header["hidden"], header["output_dim"],
              activation=header["activation"], time_embed=header["time_embed"],
              n_frequencies=header["n_frequencies"], params=params)
    return net, header
