"""Minimal reverse-mode autodiff core on float64 numpy arrays.

Just enough machinery for the graph reasoner: dense matmul, row
gather/scatter, elementwise GELU/sigmoid/tanh, fused layer normalization,
a fused LSTM sequence encoder, softmax cross-entropy, binary log loss,
masked reductions, concatenation, and bias-corrected Adam. Everything is
deterministic: fixed summation order, no threading, no global RNG.

``grad_check`` is the independent oracle: it compares reverse-mode gradients
against central finite differences, coordinate-sampled per tensor.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import erf

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class NumericError(RuntimeError):
    """Non-finite values encountered where finite math is required."""


def _as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """A float64 array plus an optional gradient and backward closure."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_f64(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True)
        else:
            self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar for the common compositions.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- primitives --------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(grad: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(grad, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(grad, b.data.shape))

    return _make(data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def backward(grad: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(grad, a.data.shape))
        if b.requires_grad:
            b._accumulate(-_unbroadcast(grad, b.data.shape))

    return _make(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(grad: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(grad * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(grad * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def scale(a: Tensor, factor: float) -> Tensor:
    data = a.data * factor

    def backward(grad: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(grad * factor)

    return _make(data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for 2D@2D and 1D@2D operands."""
    data = a.data @ b.data

    def backward(grad: np.ndarray) -> None:
        if a.data.ndim == 1:
            if a.requires_grad:
                a._accumulate(grad @ b.data.T)
            if b.requires_grad:
                b._accumulate(np.outer(a.data, grad))
        else:
            if a.requires_grad:
                a._accumulate(grad @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ grad)

    return _make(data, (a, b), backward)


def gather(x: Tensor, indices) -> Tensor:
    """Row lookup ``x[indices]`` (embedding lookup)."""
    idx = np.asarray(indices, dtype=np.int64)
    data = x.data[idx]

    def backward(grad: np.ndarray) -> None:
        if x.requires_grad:
            out = np.zeros_like(x.data)
            np.add.at(out, idx, grad)
            x._accumulate(out)

    return _make(data, (x,), backward)


def scatter_add(rows: Tensor, indices, n_rows: int) -> Tensor:
    """Sum ``rows`` into an ``(n_rows, d)`` zero tensor at ``indices``."""
    idx = np.asarray(indices, dtype=np.int64)
    data = np.zeros((n_rows,) + rows.data.shape[1:], dtype=np.float64)
    np.add.at(data, idx, rows.data)

    def backward(grad: np.ndarray) -> None:
        if rows.requires_grad:
            rows._accumulate(grad[idx])

    return _make(data, (rows,), backward)


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 1-D tensors."""
    data = np.concatenate([p.data for p in parts])
    sizes = [p.data.shape[0] for p in parts]

    def backward(grad: np.ndarray) -> None:
        offset = 0
        for p, size in zip(parts, sizes):
            if p.requires_grad:
                p._accumulate(grad[offset : offset + size])
            offset += size

    return _make(data, tuple(parts), backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = x.data.reshape(shape)

    def backward(grad: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(grad.reshape(x.data.shape))

    return _make(data, (x,), backward)


def mean_rows(x: Tensor, indices) -> Tensor:
    """Masked reduction: mean over the selected rows of a 2-D tensor."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("mean_rows needs at least one row")
    data = x.data[idx].mean(axis=0)

    def backward(grad: np.ndarray) -> None:
        if x.requires_grad:
            out = np.zeros_like(x.data)
            np.add.at(out, idx, np.broadcast_to(grad / idx.size, (idx.size,) + grad.shape))
            x._accumulate(out)

    return _make(data, (x,), backward)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    data = x.data.mean()

    def backward(grad: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(np.full_like(x.data, grad / n))

    return _make(data, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    data = _stable_sigmoid(x.data)

    def backward(grad: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(grad * data * (1.0 - data))

    return _make(data, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    data = np.tanh(x.data)

    def backward(grad: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(grad * (1.0 - data * data))

    return _make(data, (x,), backward)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU: x * Phi(x)."""
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    data = x.data * cdf

    def backward(grad: np.ndarray) -> None:
        if x.requires_grad:
            pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
            x._accumulate(grad * (cdf + x.data * pdf))

    return _make(data, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-8) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centered * inv_std
    data = x_hat * gain.data + bias.data

    def backward(grad: np.ndarray) -> None:
        if gain.requires_grad:
            gain._accumulate(_unbroadcast(grad * x_hat, gain.data.shape))
        if bias.requires_grad:
            bias._accumulate(_unbroadcast(grad, bias.data.shape))
        if x.requires_grad:
            d_xhat = grad * gain.data
            m1 = d_xhat.mean(axis=-1, keepdims=True)
            m2 = (d_xhat * x_hat).mean(axis=-1, keepdims=True)
            x._accumulate(inv_std * (d_xhat - m1 - x_hat * m2))

    return _make(data, (x, gain, bias), backward)


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax_cross_entropy(logits: Tensor, target: int) -> Tensor:
    """Cross-entropy of a single label against a 1-D logit vector."""
    z = logits.data
    zmax = z.max()
    exp = np.exp(z - zmax)
    total = exp.sum()
    probs = exp / total
    data = math.log(total) + zmax - z[target]

    def backward(grad: np.ndarray) -> None:
        if logits.requires_grad:
            g = probs.copy()
            g[target] -= 1.0
            logits._accumulate(grad * g)

    return _make(data, (logits,), backward)


def softmax(logits: Tensor) -> Tensor:
    z = logits.data
    exp = np.exp(z - z.max())
    data = exp / exp.sum()

    def backward(grad: np.ndarray) -> None:
        if logits.requires_grad:
            dot = float((grad * data).sum())
            logits._accumulate(data * (grad - dot))

    return _make(data, (logits,), backward)


def binary_cross_entropy_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary log loss over a 1-D logit vector, numerically stable."""
    y = _as_f64(targets)
    z = logits.data
    if z.size == 0:
        raise ValueError("binary log loss over an empty vector")
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    data = per.mean()
    n = z.size

    def backward(grad: np.ndarray) -> None:
        if logits.requires_grad:
            logits._accumulate(grad * (_stable_sigmoid(z) - y) / n)

    return _make(data, (logits,), backward)


def lstm_encode(x_seq: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Run an LSTM over ``(T, d_in)`` inputs, returning the final hidden state.

    ``weights`` is ``(d_in + d_h, 4*d_h)`` with gate order (input, forget,
    cell, output); initial hidden and cell states are zero. Backward is full
    BPTT.
    """
    T, d_in = x_seq.data.shape
    four_h = weights.data.shape[1]
    d_h = four_h // 4
    if weights.data.shape[0] != d_in + d_h:
        raise ValueError("LSTM weight shape mismatch")

    h = np.zeros(d_h)
    c = np.zeros(d_h)
    cache = []
    for t in range(T):
        xt = x_seq.data[t]
        catv = np.concatenate([xt, h])
        z = catv @ weights.data + bias.data
        i = _stable_sigmoid(z[:d_h])
        f = _stable_sigmoid(z[d_h : 2 * d_h])
        g = np.tanh(z[2 * d_h : 3 * d_h])
        o = _stable_sigmoid(z[3 * d_h :])
        c_new = f * c + i * g
        tanh_c = np.tanh(c_new)
        h_new = o * tanh_c
        cache.append((catv, i, f, g, o, c, tanh_c))
        h, c = h_new, c_new
    data = h.copy()

    def backward(grad: np.ndarray) -> None:
        dW = np.zeros_like(weights.data) if weights.requires_grad else None
        db = np.zeros_like(bias.data) if bias.requires_grad else None
        dx = np.zeros_like(x_seq.data) if x_seq.requires_grad else None
        dh = grad.copy()
        dc = np.zeros(d_h)
        for t in range(T - 1, -1, -1):
            catv, i, f, g, o, c_prev, tanh_c = cache[t]
            do = dh * tanh_c
            dc = dc + dh * o * (1.0 - tanh_c * tanh_c)
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dc = dc * f
            dz = np.concatenate([
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ])
            if dW is not None:
                dW += np.outer(catv, dz)
            if db is not None:
                db += dz
            dcat = weights.data @ dz
            if dx is not None:
                dx[t] = dcat[:d_in]
            dh = dcat[d_in:]
        if dW is not None:
            weights._accumulate(dW)
        if db is not None:
            bias._accumulate(db)
        if dx is not None:
            x_seq._accumulate(dx)

    return _make(data, (x_seq, weights, bias), backward)


# -- backprop driver ---------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Reverse-accumulate gradients from a scalar loss."""
    if loss.data.ndim != 0:
        raise ValueError("backward expects a scalar loss")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# -- parameters and optimizer ------------------------------------------------

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in (0, 1)")


class ParamStore:
    """Named trainable tensors plus Adam moment buffers."""

    def __init__(self) -> None:
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def gradients(self) -> dict[str, np.ndarray]:
        return {
            name: t.grad for name, t in self.params.items() if t.grad is not None
        }

    def state_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "params": {
                name: {"shape": list(t.data.shape), "values": t.data.ravel().tolist()}
                for name, t in self.params.items()
            },
        }

    def load_state_dict(self, state: Mapping) -> None:
        if state.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {state.get('version')!r}")
        for name, entry in state["params"].items():
            arr = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
            if name in self.params:
                if self.params[name].data.shape != arr.shape:
                    raise ValueError(f"shape mismatch loading {name}")
                self.params[name].data = arr
            else:
                self.add(name, arr)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.state_dict()), encoding="utf-8")

    @staticmethod
    def load(path: str | Path) -> "ParamStore":
        store = ParamStore()
        store.load_state_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        return store


def adam_step(
    store: ParamStore, grads: Mapping[str, np.ndarray], cfg: AdamConfig
) -> ParamStore:
    """One bias-corrected Adam update in place; returns the store."""
    for name in store.names():
        g = grads.get(name)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    store.step_count += 1
    t = store.step_count
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name in store.names():
        g = grads.get(name)
        if g is None:
            continue
        m = store.m[name]
        v = store.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        store.params[name].data = store.params[name].data - cfg.lr * update
    return store


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is <= max_norm."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm and total > 0.0:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total


# -- initialization ----------------------------------------------------------

def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def embedding_uniform(rng: np.random.Generator, rows: int, dim: int) -> np.ndarray:
    return rng.uniform(-0.1, 0.1, size=(rows, dim))


# -- finite-difference oracle -------------------------------------------------

def grad_check(
    f: Callable[[ParamStore], Tensor],
    store: ParamStore,
    eps: float = 1e-4,
    coords_per_tensor: int = 32,
    seed: int = 0,
) -> float:
    """Max relative error between reverse-mode and central-difference grads.

    ``f`` must be a pure scalar function of the store's parameters. For each
    tensor, up to ``coords_per_tensor`` coordinates are sampled (all of them
    for small tensors). The relative-error denominator is floored at the
    finite-difference measurement precision (float64 rounding of the loss
    divided by the step), so coordinates whose true gradient sits below the
    oracle's own noise cannot dominate the report.
    """
    store.zero_grad()
    loss = f(store)
    if not np.isfinite(loss.data):
        raise NumericError("loss is not finite")
    backward(loss)
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in store.params.items()
    }
    fd_noise_floor = max(1e-8, abs(loss.item()) * 1e-11 / eps)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in store.names():
        t = store.params[name]
        size = t.data.size
        n_coords = min(size, coords_per_tensor)
        coords = rng.choice(size, size=n_coords, replace=False)
        flat = t.data.ravel()
        for c in coords:
            original = flat[c]
            flat[c] = original + eps
            up = f(store).item()
            flat[c] = original - eps
            down = f(store).item()
            flat[c] = original
            if not (math.isfinite(up) and math.isfinite(down)):
                raise NumericError(f"non-finite loss while probing {name!r}")
            fd = (up - down) / (2.0 * eps)
            ad = analytic[name].ravel()[c]
            denom = max(fd_noise_floor, abs(fd) + abs(ad))
            worst = max(worst, abs(fd - ad) / denom)
    return worst
