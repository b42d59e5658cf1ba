"""Fixed-shape MLPs with hand-written backprop, Adam, and a tanh-squashed Gaussian head.

Every network in the package is ``Linear -> ReLU -> Linear -> ReLU -> Linear``
evaluated in float64.  Weight matrices are stored ``(fan_in, fan_out)`` so a
batch ``x`` of shape ``(n, fan_in)`` maps through ``x @ W + b``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, NumericError

HIDDEN_UNITS = (128, 128)
LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
SQUASH_EPS = 1e-6
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class MlpParams:
    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ConfigurationError("need one bias per weight matrix")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ConfigurationError(f"layer {k}: weight {w.shape} vs bias {b.shape}")
            if k and self.weights[k - 1].shape[1] != w.shape[0]:
                raise ConfigurationError(
                    f"layer {k} expects {w.shape[0]} inputs, previous layer gives "
                    f"{self.weights[k - 1].shape[1]}"
                )

    @property
    def in_dim(self):
        return self.weights[0].shape[0]

    @property
    def out_dim(self):
        return self.weights[-1].shape[1]

    @property
    def shapes(self):
        return [w.shape for w in self.weights]

    def arrays(self):
        """Parameters interleaved as ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @classmethod
    def from_arrays(cls, arrays):
        return cls(list(arrays[0::2]), list(arrays[1::2]))

    def copy(self):
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self):
        return MlpParams([np.zeros_like(w) for w in self.weights],
                         [np.zeros_like(b) for b in self.biases])

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def init_mlp(in_dim, out_dim, rng, hidden=HIDDEN_UNITS):
    """Uniform ``±1/sqrt(fan_in)`` init for weights and biases."""
    dims = [in_dim, *hidden, out_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(weights, biases)


def _as_batch(params, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ConfigurationError(f"input width {x.shape[-1]} does not match network input {params.in_dim}")
    return x, single


def mlp_forward_cached(params, x):
    """Forward pass returning ``(output, layer_inputs)`` for :func:`mlp_backward`."""
    x, single = _as_batch(params, x)
    layer_inputs = [x]
    h = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if k < last:
            h = np.maximum(h, 0.0)
            layer_inputs.append(h)
    return (h[0] if single else h), layer_inputs


def mlp_forward(params, x):
    return mlp_forward_cached(params, x)[0]


def mlp_backward(params, x, upstream_grad, cache=None, param_grads=True):
    """Gradients of ``sum(output * upstream_grad)`` w.r.t. every parameter and the input.

    Batched inputs sum the parameter gradients over rows; the input gradient
    keeps one row per sample.  Returns ``(grads, input_grad)`` with ``grads``
    shaped like ``params``, or ``None`` when ``param_grads`` is false (only the
    input gradient is needed, which skips half the matrix products).
    """
    g = np.asarray(upstream_grad, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite upstream gradient")
    single = g.ndim == 1
    if single:
        g = g[None, :]
    if cache is None:
        _, cache = mlp_forward_cached(params, x)
    if g.shape != (cache[0].shape[0], params.out_dim):
        raise ConfigurationError(f"upstream gradient {g.shape} does not match output width {params.out_dim}")

    n_layers = len(params.weights)
    gw = [None] * n_layers
    gb = [None] * n_layers
    for k in range(n_layers - 1, -1, -1):
        a = cache[k]
        if param_grads:
            gw[k] = a.T @ g
            gb[k] = g.sum(axis=0)
        g = g @ params.weights[k].T
        if k > 0:
            g = g * (a > 0.0)
    grads = MlpParams(gw, gb) if param_grads else None
    return grads, (g[0] if single else g)


@dataclass
class AdamState:
    m: MlpParams
    v: MlpParams
    step: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr=3e-4, **kwargs):
        return cls(params.zeros_like(), params.zeros_like(), lr=lr, **kwargs)


def adam_step(state, params, grads):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``.

    Inputs are left untouched, so a :class:`NumericError` on non-finite
    gradients leaves the caller's parameters exactly as they were.
    """
    if grads.shapes != params.shapes or state.m.shapes != params.shapes:
        raise ConfigurationError("gradient / moment shapes do not match parameters")
    if not grads.is_finite():
        raise NumericError("non-finite gradient passed to adam_step")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_p, new_m, new_v = [], [], []
    for p, m, v, g in zip(params.arrays(), state.m.arrays(), state.v.arrays(), grads.arrays()):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_m.append(m)
        new_v.append(v)
        new_p.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
    new_state = AdamState(MlpParams.from_arrays(new_m), MlpParams.from_arrays(new_v), t,
                          state.lr, b1, b2, state.eps)
    return MlpParams.from_arrays(new_p), new_state


def soft_update(target, online, tau):
    """Polyak average ``(1 - tau) * target + tau * online``."""
    return MlpParams.from_arrays(
        [(1.0 - tau) * t + tau * o for t, o in zip(target.arrays(), online.arrays())]
    )


@dataclass
class GaussianHead:
    mean: np.ndarray
    log_std: np.ndarray
    clipped: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        raw = np.asarray(self.log_std, dtype=np.float64)
        if np.any(np.isnan(self.mean)) or np.any(np.isnan(raw)) or not np.all(np.isfinite(self.mean)):
            raise NumericError("Gaussian head needs finite mean and non-NaN log-std")
        self.clipped = (raw < LOG_STD_MIN) | (raw > LOG_STD_MAX)
        self.log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)

    @classmethod
    def from_output(cls, out):
        """Split a network output ``[mean | log_std]`` along the last axis."""
        d = out.shape[-1] // 2
        return cls(out[..., :d], out[..., d:])

    @property
    def std(self):
        return np.exp(self.log_std)


@dataclass
class SquashedSample:
    action: np.ndarray
    log_prob: np.ndarray
    pre_tanh: np.ndarray
    noise: np.ndarray


def squashed_sample(head, noise):
    """Reparameterised tanh-Gaussian sample for a given standard-normal ``noise``."""
    u = head.mean + head.std * noise
    a = np.tanh(u)
    gauss = -0.5 * noise ** 2 - head.log_std - _HALF_LOG_2PI
    log_prob = gauss.sum(axis=-1) - np.log(1.0 - a * a + SQUASH_EPS).sum(axis=-1)
    return SquashedSample(a, log_prob, u, noise)


def tanh_gaussian_sample(head, rng):
    """Draw ``(action, log_prob)``; every action component lies in (-1, 1)."""
    s = squashed_sample(head, rng.standard_normal(head.mean.shape))
    # float64 tanh saturates to exactly ±1 once |u| > ~19
    a = np.clip(s.action, -np.nextafter(1.0, 0.0), np.nextafter(1.0, 0.0))
    return a, s.log_prob


def squashed_sample_grads(head, sample, grad_action, grad_log_prob):
    """Backprop a loss through :func:`squashed_sample` with the noise held fixed.

    ``grad_action`` is dL/da (same shape as the action) and ``grad_log_prob``
    dL/dlog_prob (one value per sample).  Returns ``(dL/dmean, dL/dlog_std)``
    where the log-std gradient is w.r.t. the *raw* network output (zero where
    the clamp was active).
    """
    a = sample.action
    one_m_a2 = 1.0 - a * a
    std = head.std
    glp = np.asarray(grad_log_prob, dtype=np.float64)[..., None]
    # d(-log(1 - tanh(u)^2 + eps))/du
    squash_du = 2.0 * a * one_m_a2 / (one_m_a2 + SQUASH_EPS)
    du = grad_action * one_m_a2 + glp * squash_du
    d_mean = du
    d_log_std = du * std * sample.noise - glp
    d_log_std = np.where(head.clipped, 0.0, d_log_std)
    return d_mean, d_log_std


# -- checkpoints -------------------------------------------------------------

CHECKPOINT_VERSION = "silo-ckpt-v1"


def save_checkpoint(path, networks, optimizers=None, extra=None):
    """Write networks and optimiser state into one ``.npz`` archive.

    Array keys are ``net/<name>/W<k>``, ``net/<name>/b<k>``,
    ``adam/<name>/m/W<k>`` (likewise ``m/b``, ``v/W``, ``v/b``) and
    ``adam/<name>/scalars`` = ``[step, lr, beta1, beta2, eps]``.  The
    ``header`` entry is a JSON document listing every layer shape plus
    ``extra``.
    """
    optimizers = optimizers or {}
    header = {"version": CHECKPOINT_VERSION,
              "networks": {k: [list(s) for s in p.shapes] for k, p in networks.items()},
              "optimizers": sorted(optimizers),
              "extra": extra or {}}
    arrays = {"header": np.array(json.dumps(header, sort_keys=True))}
    for name, p in networks.items():
        for k, (w, b) in enumerate(zip(p.weights, p.biases)):
            arrays[f"net/{name}/W{k}"] = w
            arrays[f"net/{name}/b{k}"] = b
    for name, st in optimizers.items():
        for which in ("m", "v"):
            moments = getattr(st, which)
            for k, (w, b) in enumerate(zip(moments.weights, moments.biases)):
                arrays[f"adam/{name}/{which}/W{k}"] = w
                arrays[f"adam/{name}/{which}/b{k}"] = b
        arrays[f"adam/{name}/scalars"] = np.array([st.step, st.lr, st.beta1, st.beta2, st.eps])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`: ``(networks, optimizers, extra)``."""
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ConfigurationError(f"unknown checkpoint version {header.get('version')!r}")

        def read(prefix, n_layers):
            return MlpParams([data[f"{prefix}/W{k}"].copy() for k in range(n_layers)],
                             [data[f"{prefix}/b{k}"].copy() for k in range(n_layers)])

        networks = {}
        for name, shapes in header["networks"].items():
            p = read(f"net/{name}", len(shapes))
            if [list(s) for s in p.shapes] != shapes:
                raise ConfigurationError(f"network {name}: stored shapes disagree with header")
            networks[name] = p
        optimizers = {}
        for name in header["optimizers"]:
            n_layers = len(header["networks"].get(name, [])) or sum(
                1 for k in data.files if k.startswith(f"adam/{name}/m/W"))
            step, lr, b1, b2, eps = data[f"adam/{name}/scalars"].tolist()
            optimizers[name] = AdamState(read(f"adam/{name}/m", n_layers),
                                         read(f"adam/{name}/v", n_layers),
                                         int(step), lr, b1, b2, eps)
    return networks, optimizers, header["extra"]
