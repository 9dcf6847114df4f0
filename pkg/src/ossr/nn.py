"""Minimal dense-network substrate: parameters, layers, backprop, Adam, checkpoints.

Backpropagation runs over a static list of layers. Each :class:`DenseLayer`
caches its input and pre-activation during ``forward`` and consumes the cache
in ``backward``, accumulating into its parameters' ``grad`` arrays.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DataIntegrityError, DivergenceError, UsageError

ACTIVATIONS = ("relu", "identity", "softplus")
CHECKPOINT_MAGIC = b"OSSR-CKPT"
CHECKPOINT_VERSION = 1


class ParamTensor:
    """A named float64 parameter array with a gradient buffer of the same shape."""

    def __init__(self, name: str, values):
        self.name = name
        self.values = np.array(values, dtype=np.float64)
        self.grad = np.zeros_like(self.values)

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def zero_grad(self):
        self.grad[...] = 0.0

    def assign(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.values.shape:
            raise ValueError(f"{self.name}: shape {values.shape} != {self.values.shape}")
        self.values[...] = values

    def __repr__(self):
        return f"ParamTensor({self.name!r}, shape={self.shape})"


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


class DenseLayer:
    """``act(x @ W.T + b)`` for a batch ``x`` of shape (n, in)."""

    def __init__(self, n_in: int, n_out: int, activation: str = "relu", name: str = "dense", rng=None):
        if n_in < 1 or n_out < 1:
            raise ValueError("layer dimensions must be >= 1")
        if activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        self.name = name
        self.activation = activation
        rng = np.random.default_rng(0) if rng is None else rng
        bound = 1.0 / np.sqrt(n_in)
        self.weight = ParamTensor(f"{name}.weight", rng.uniform(-bound, bound, size=(n_out, n_in)))
        self.bias = ParamTensor(f"{name}.bias", np.zeros(n_out))
        self._cache = None

    @property
    def n_in(self):
        return self.weight.shape[1]

    @property
    def n_out(self):
        return self.weight.shape[0]

    def params(self) -> list[ParamTensor]:
        return [self.weight, self.bias]

    def __call__(self, x, cache: bool = True):
        return self.forward(x, cache)

    def forward(self, x, cache: bool = True):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise DataIntegrityError(f"{self.name}: expected input (n, {self.n_in}), got {x.shape}")
        pre = x @ self.weight.values.T + self.bias.values
        if self.activation == "relu":
            out = np.maximum(pre, 0.0)
        elif self.activation == "softplus":
            out = _softplus(pre)
        else:
            out = pre
        if cache:
            self._cache = (x, pre)
        return out

    def backward(self, grad_out):
        """Accumulate parameter gradients and return the gradient w.r.t. the input."""
        if self._cache is None:
            raise UsageError(f"{self.name}: backward called before forward")
        x, pre = self._cache
        if self.activation == "relu":
            g = grad_out * (pre > 0.0)
        elif self.activation == "softplus":
            g = grad_out * _sigmoid(pre)
        else:
            g = grad_out
        self.weight.grad += g.T @ x
        self.bias.grad += g.sum(axis=0)
        return g @ self.weight.values

    def clear_cache(self):
        self._cache = None


def forward(layers: Sequence[DenseLayer], x) -> list[np.ndarray]:
    """Run ``layers`` in order; returns ``[x, a_1, ..., a_n]``."""
    acts = [np.asarray(x, dtype=np.float64)]
    for layer in layers:
        acts.append(layer.forward(acts[-1]))
    return acts


def backward(layers: Sequence[DenseLayer], grad_out):
    """Backpropagate ``grad_out`` through ``layers`` (reverse order)."""
    g = grad_out
    for layer in reversed(layers):
        g = layer.backward(g)
    return g


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits, targets):
    """Mean softmax cross-entropy and its gradient w.r.t. ``logits``."""
    n = logits.shape[0]
    logp = log_softmax(logits)
    loss = -logp[np.arange(n), targets].mean()
    grad = np.exp(logp)
    grad[np.arange(n), targets] -= 1.0
    return float(loss), grad / n


class Adam:
    def __init__(self, params: Sequence[ParamTensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self, batch_index=None):
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise DivergenceError(f"non-finite gradient in {p.name} (batch {batch_index})")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.values -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        self.zero_grad()


def gradcheck(
    loss_fn: Callable[[], float],
    params: Sequence[ParamTensor],
    n_probe: int = 50,
    h: float = 1e-5,
    rtol: float = 1e-4,
    atol: float = 1e-8,
    rng=None,
):
    """Compare ``p.grad`` (already populated) with central differences of ``loss_fn``.

    Probes up to ``n_probe`` random entries of every parameter tensor. Returns a
    list of ``(name, flat_index, analytic, numeric, ok)`` tuples.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    results = []
    for p in params:
        flat = p.values.reshape(-1)
        analytic = p.grad.reshape(-1).copy()
        k = min(n_probe, flat.size)
        for i in rng.choice(flat.size, size=k, replace=False):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_fn()
            flat[i] = orig - h
            lm = loss_fn()
            flat[i] = orig
            num = (lp - lm) / (2 * h)
            a = analytic[i]
            diff = abs(a - num)
            ok = diff <= atol or diff <= rtol * max(abs(a), abs(num))
            results.append((p.name, int(i), float(a), float(num), bool(ok)))
    return results


def save_checkpoint(path, header: dict, params: Sequence[ParamTensor]) -> None:
    """Write a JSON header followed by little-endian float64 payload in ``params`` order."""
    header = dict(header)
    header["format_version"] = CHECKPOINT_VERSION
    header["params"] = [{"name": p.name, "shape": list(p.shape)} for p in params]
    text = json.dumps(header, indent=2, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + b" %d %d\n" % (CHECKPOINT_VERSION, len(text)))
        fh.write(text)
        fh.write(b"\n")
        for p in params:
            fh.write(p.values.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    first, _, rest = data.partition(b"\n")
    parts = first.split()
    if len(parts) != 3 or parts[0] != CHECKPOINT_MAGIC:
        raise DataIntegrityError(f"{path}: not a checkpoint file")
    if int(parts[1]) != CHECKPOINT_VERSION:
        raise DataIntegrityError(f"{path}: unsupported checkpoint version {int(parts[1])}")
    n = int(parts[2])
    header = json.loads(rest[:n])
    payload = memoryview(rest)[n + 1 :]
    arrays, offset = {}, 0
    for spec in header["params"]:
        count = int(np.prod(spec["shape"], dtype=np.int64))
        nbytes = 8 * count
        if offset + nbytes > len(payload):
            raise DataIntegrityError(f"{path}: truncated payload at {spec['name']}")
        arr = np.frombuffer(payload[offset : offset + nbytes], dtype="<f8").astype(np.float64)
        arrays[spec["name"]] = arr.reshape(spec["shape"])
        offset += nbytes
    if offset != len(payload):
        raise DataIntegrityError(f"{path}: {len(payload) - offset} trailing bytes")
    return header, arrays
