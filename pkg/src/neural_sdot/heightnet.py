"""A small fully connected network mapping an atom to its height.

Architecture: ``d -> 512 -> 512 -> 512 -> 1`` where every hidden layer is
Linear, BatchNorm, ReLU and the last layer is Linear.  Forward and backward
passes are written out by hand in float64 numpy; Adam updates the
parameters.

Parameter layout (also the checkpoint order) is layer-major.  For layer
``l`` the entries are ``W_l`` with shape ``(fan_in, fan_out)`` flattened
row-major, then ``b_l``, then for hidden layers the batch-norm scale and
shift.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, InvalidStateError

__all__ = [
    "HeightNet",
    "AdamState",
    "adam_step",
    "net_forward",
    "net_backward",
    "load_checkpoint",
    "save_checkpoint",
]

CHECKPOINT_FORMAT = "neural_sdot.heightnet/1"


@dataclass
class AdamState:
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper) -> AdamState:
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **hyper)

    def copy(self) -> AdamState:
        return AdamState(self.lr, self.beta1, self.beta2, self.eps, self.step,
                         [a.copy() for a in self.m], [a.copy() for a in self.v])


def adam_step(params, grads, state: AdamState, lr: float | None = None):
    """One bias-corrected Adam update.

    Returns ``(new_params, new_state)``; the inputs are left untouched.
    ``lr`` overrides ``state.lr`` for this step only.
    """
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise InvalidInputError("params, grads and moments differ in length")
    for p, g, m in zip(params, grads, state.m):
        if np.shape(p) != np.shape(g) or np.shape(p) != np.shape(m):
            raise InvalidInputError(f"shape mismatch {np.shape(p)} / {np.shape(g)} / {np.shape(m)}")
    lr = state.lr if lr is None else lr
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(state.lr, b1, b2, state.eps, t, new_m, new_v)


class HeightNet:
    """MLP height representation with optional batch normalization.

    ``training`` selects batch statistics (True) or running statistics
    (False) in the normalization layers.  Running variance tracks the biased
    batch variance, the same quantity used to normalise in training mode.
    """

    def __init__(self, dim: int, hidden=(512, 512, 512), *, batch_norm: bool = True,
                 momentum: float = 0.1, bn_eps: float = 1e-5, seed: int = 0,
                 lr: float = 0.005, beta1: float = 0.9, beta2: float = 0.999, adam_eps: float = 1e-8):
        if dim < 1:
            raise InvalidInputError("input dimension must be >= 1")
        self.widths = [int(dim), *map(int, hidden), 1]
        self.batch_norm = bool(batch_norm)
        self.momentum = float(momentum)
        self.bn_eps = float(bn_eps)
        self.seed = int(seed)
        self.training = True
        rng = np.random.default_rng(seed)
        self.W, self.b = [], []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            bound = np.sqrt(1.0 / fan_in)
            self.W.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            self.b.append(rng.uniform(-bound, bound, fan_out))
        hw = self.widths[1:-1] if batch_norm else []
        self.gamma = [np.ones(w) for w in hw]
        self.beta = [np.zeros(w) for w in hw]
        self.running_mean = [np.zeros(w) for w in hw]
        self.running_var = [np.ones(w) for w in hw]
        self.adam = AdamState.for_params(self.parameters(), lr=lr, beta1=beta1, beta2=beta2, eps=adam_eps)
        self._cache = None

    @property
    def dim(self) -> int:
        return self.widths[0]

    @property
    def n_hidden(self) -> int:
        return len(self.widths) - 2

    def parameters(self) -> list[np.ndarray]:
        out = []
        for l in range(len(self.W)):
            out += [self.W[l], self.b[l]]
            if self.batch_norm and l < self.n_hidden:
                out += [self.gamma[l], self.beta[l]]
        return out

    def parameter_names(self) -> list[str]:
        out = []
        for l in range(len(self.W)):
            out += [f"W{l}", f"b{l}"]
            if self.batch_norm and l < self.n_hidden:
                out += [f"gamma{l}", f"beta{l}"]
        return out

    def set_parameters(self, params) -> None:
        it = iter(params)
        for l in range(len(self.W)):
            self.W[l], self.b[l] = next(it), next(it)
            if self.batch_norm and l < self.n_hidden:
                self.gamma[l], self.beta[l] = next(it), next(it)
        self._cache = None

    def train(self) -> HeightNet:
        self.training = True
        return self

    def eval(self) -> HeightNet:
        self.training = False
        return self

    def __call__(self, Y, training: bool | None = None, update_stats: bool = True) -> np.ndarray:
        return net_forward(self, Y, training=training, update_stats=update_stats)

    def backward(self, dL_dh) -> list[np.ndarray]:
        return net_backward(self, self._cache, dL_dh)

    def step(self, grads, lr: float | None = None) -> None:
        """Apply one Adam update from ``grads`` (ordered as ``parameters()``)."""
        new_params, self.adam = adam_step(self.parameters(), grads, self.adam, lr=lr)
        self.set_parameters(new_params)

    def set_running_stats(self, Y) -> None:
        """Replace running statistics by the exact batch statistics of ``Y``.

        Afterwards the inference forward of ``Y`` equals its training forward
        bit for bit.
        """
        if not self.batch_norm:
            return
        momentum, self.momentum = self.momentum, 1.0
        try:
            net_forward(self, Y, training=True)
        finally:
            self.momentum = momentum
            self._cache = None

    def copy(self) -> HeightNet:
        return load_checkpoint_dict(checkpoint_dict(self))

    def save(self, path) -> None:
        save_checkpoint(self, path)


def _as_batch(Y, dim: int) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None] if dim == 1 else Y[None, :]
    if Y.ndim != 2 or Y.shape[1] != dim:
        raise InvalidInputError(f"expected inputs of width {dim}, got shape {Y.shape}")
    return Y


def net_forward(net: HeightNet, Y, *, training: bool | None = None, update_stats: bool = True) -> np.ndarray:
    """Heights ``H_w(y)`` for every row of ``Y``.

    Per-layer activations are cached for :func:`net_backward`.  In
    training mode, if ``update_stats``, the running statistics move toward
    the batch statistics with the configured momentum.
    """
    training = net.training if training is None else training
    a = _as_batch(Y, net.dim)
    n = a.shape[0]
    if training and net.batch_norm and n < 2:
        raise InvalidInputError("training-mode batch normalization needs at least 2 inputs")
    layers = []
    for l in range(net.n_hidden):
        z = a @ net.W[l] + net.b[l]
        if net.batch_norm:
            if training:
                mu, var = z.mean(axis=0), z.var(axis=0)
                if update_stats:
                    m = net.momentum
                    net.running_mean[l] = (1 - m) * net.running_mean[l] + m * mu
                    net.running_var[l] = (1 - m) * net.running_var[l] + m * var
            else:
                mu, var = net.running_mean[l], net.running_var[l]
            inv_std = 1.0 / np.sqrt(var + net.bn_eps)
            xhat = (z - mu) * inv_std
            y = net.gamma[l] * xhat + net.beta[l]
        else:
            inv_std = xhat = None
            y = z
        layers.append((a, xhat, inv_std, y))
        a = np.maximum(y, 0.0)
    out = (a @ net.W[-1] + net.b[-1])[:, 0]
    net._cache = {"layers": layers, "last": a, "n": n, "training": training}
    return out


def net_backward(net: HeightNet, cache, dL_dh) -> list[np.ndarray]:
    """Gradients of ``sum_i dL_dh[i] * H_w(y_i)`` in ``parameters()`` order.

    ``cache`` must be the state left by the latest forward with the current
    parameters; it is consumed by the call.  Through a training-mode
    forward the batch statistics are differentiated as functions of the
    batch; through an inference-mode forward they are constants.
    """
    if cache is None or cache is not net._cache:
        raise InvalidStateError("no cached forward for the current parameters")
    g = np.asarray(dL_dh, dtype=np.float64).reshape(-1)
    n = cache["n"]
    if g.shape[0] != n:
        raise InvalidInputError(f"{g.shape[0]} output gradients for a batch of {n}")
    net._cache = None
    nl = len(net.W)
    gW, gb = [None] * nl, [None] * nl
    ggamma, gbeta = [None] * net.n_hidden, [None] * net.n_hidden

    gW[-1] = cache["last"].T @ g[:, None]
    gb[-1] = np.array([g.sum()])
    da = g[:, None] @ net.W[-1].T
    for l in reversed(range(net.n_hidden)):
        a_prev, xhat, inv_std, y = cache["layers"][l]
        dy = da * (y > 0)
        if net.batch_norm:
            ggamma[l] = (dy * xhat).sum(axis=0)
            gbeta[l] = dy.sum(axis=0)
            dxhat = dy * net.gamma[l]
            if cache["training"]:
                dz = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
            else:
                dz = dxhat * inv_std
        else:
            dz = dy
        gW[l] = a_prev.T @ dz
        gb[l] = dz.sum(axis=0)
        if l > 0:
            da = dz @ net.W[l].T

    out = []
    for l in range(nl):
        out += [gW[l], gb[l]]
        if net.batch_norm and l < net.n_hidden:
            out += [ggamma[l], gbeta[l]]
    return out


def _flat(arrs) -> list[float]:
    return [x for a in arrs for x in np.asarray(a, dtype=np.float64).ravel().tolist()]


def _unflat(values, shapes) -> list[np.ndarray]:
    values = np.asarray(values, dtype=np.float64)
    sizes = [int(np.prod(s)) for s in shapes]
    if values.size != sum(sizes):
        raise InvalidInputError("checkpoint array length does not match architecture")
    chunks = np.split(values, np.cumsum(sizes)[:-1]) if sizes else []
    return [c.reshape(s) for c, s in zip(chunks, shapes)]


def checkpoint_dict(net: HeightNet) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "widths": list(net.widths),
        "batch_norm": net.batch_norm,
        "momentum": net.momentum,
        "bn_eps": net.bn_eps,
        "seed": net.seed,
        "training": net.training,
        "parameter_order": net.parameter_names(),
        "parameters": _flat(net.parameters()),
        "running_mean": _flat(net.running_mean),
        "running_var": _flat(net.running_var),
        "adam": {
            "lr": net.adam.lr,
            "beta1": net.adam.beta1,
            "beta2": net.adam.beta2,
            "eps": net.adam.eps,
            "step": net.adam.step,
            "m": _flat(net.adam.m),
            "v": _flat(net.adam.v),
        },
    }


def load_checkpoint_dict(doc: dict) -> HeightNet:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise InvalidInputError(f"unsupported checkpoint format {doc.get('format')!r}")
    widths = doc["widths"]
    net = HeightNet(widths[0], widths[1:-1], batch_norm=doc["batch_norm"], momentum=doc["momentum"],
                    bn_eps=doc["bn_eps"], seed=doc["seed"])
    net.training = bool(doc["training"])
    shapes = [p.shape for p in net.parameters()]
    net.set_parameters(_unflat(doc["parameters"], shapes))
    stat_shapes = [(w,) for w in widths[1:-1]] if net.batch_norm else []
    net.running_mean = _unflat(doc["running_mean"], stat_shapes)
    net.running_var = _unflat(doc["running_var"], stat_shapes)
    a = doc["adam"]
    net.adam = AdamState(a["lr"], a["beta1"], a["beta2"], a["eps"], a["step"],
                         _unflat(a["m"], shapes), _unflat(a["v"], shapes))
    return net


def dumps_checkpoint(net: HeightNet) -> str:
    return json.dumps(checkpoint_dict(net), sort_keys=True)


def save_checkpoint(net: HeightNet, path) -> None:
    Path(path).write_text(dumps_checkpoint(net))


def load_checkpoint(path) -> HeightNet:
    return load_checkpoint_dict(json.loads(Path(path).read_text()))
