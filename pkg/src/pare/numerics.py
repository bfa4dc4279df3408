"""Small dense numeric kernel with hand-derived backward passes.

Tensors are float64 numpy arrays.  All affine maps use the row-vector
convention ``act(x @ W + b)`` with ``W`` of shape ``(in, out)``; batched
inputs carry the batch on axis 0.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, Optional

import numpy as np

CHECKPOINT_VERSION = 1

ACTIVATIONS = ("none", "sigmoid", "tanh", "relu")


class ShapeError(ValueError):
    pass


class NumericError(FloatingPointError):
    """Non-finite value where a finite one is required."""


def as_float(x) -> np.ndarray:
    """Float array view of ``x``; extended precision input is kept as is."""
    a = np.asarray(x)
    return a if a.dtype == np.longdouble else a.astype(np.float64, copy=False)


def sigmoid(x):
    # tanh form never overflows and avoids a branch per sign
    return 0.5 * (1.0 + np.tanh(0.5 * as_float(x)))


def _activate(z, activation):
    if activation == "none":
        return z
    if activation == "sigmoid":
        return sigmoid(z)
    if activation == "tanh":
        return np.tanh(z)
    if activation == "relu":
        return np.maximum(z, 0.0)
    raise ValueError(f"unknown activation {activation!r}")


def _activation_grad(z, out, activation):
    if activation == "none":
        return np.ones_like(z)
    if activation == "sigmoid":
        return out * (1.0 - out)
    if activation == "tanh":
        return 1.0 - out * out
    # relu: subgradient 0 at the kink
    return (z > 0).astype(np.float64)


# ---------------------------------------------------------------- affine

def affine(x, W, b, activation="none"):
    """Forward ``act(x @ W + b)``; returns ``(out, cache)``."""
    x = as_float(x)
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    if W.ndim != 2 or x.shape[-1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError(f"affine shape mismatch: x{tuple(x.shape)} W{tuple(W.shape)} b{tuple(b.shape)}")
    z = x @ W + b
    out = _activate(z, activation)
    return out, (x, W, z, out, activation)


def affine_backward(dout, cache):
    """Returns ``(dx, dW, db)`` for an upstream gradient ``dout``."""
    x, W, z, out, activation = cache
    dz = dout * _activation_grad(z, out, activation)
    if x.ndim == 1:
        dW = np.outer(x, dz)
        db = dz.copy()
    else:
        dW = x.T @ dz
        db = dz.sum(axis=0)
    dx = dz @ W.T
    return dx, dW, db


# ----------------------------------------------------------------- embed

def embed(selector, table):
    """Sum of selected table rows.

    ``selector`` is either an integer row index, or a (multi-hot) vector of
    length ``q`` (optionally batched as ``(B, q)``).
    """
    q = table.shape[0]
    if np.isscalar(selector) or (isinstance(selector, np.ndarray) and selector.ndim == 0):
        idx = int(selector)
        if not 0 <= idx < q:
            raise IndexError(f"embedding index {idx} out of range [0, {q})")
        return table[idx].copy()
    sel = as_float(selector)
    if sel.shape[-1] != q:
        raise ShapeError(f"selector length {sel.shape[-1]} != table rows {q}")
    return sel @ table


def embed_backward(dout, selector, table_shape):
    """Gradient w.r.t. the table; only selected rows receive mass."""
    grad = np.zeros(table_shape)
    if np.isscalar(selector) or (isinstance(selector, np.ndarray) and selector.ndim == 0):
        grad[int(selector)] += dout
        return grad
    sel = np.asarray(selector, dtype=np.float64)
    if sel.ndim == 1:
        return np.outer(sel, dout)
    return sel.T @ dout


def gather_backward(dout, index, table_shape):
    """Gradient of ``table[index]`` for an integer index array."""
    grad = np.zeros(table_shape)
    np.add.at(grad, index, dout)
    return grad


# ------------------------------------------------------------------ LSTM

GATES = ("I", "F", "G", "O")


def lstm_sequence(xs, params, mask=None, prefix="lstm."):
    """Run the gated recurrence over scalar inputs and return the last hidden state.

    ``xs`` is ``(L,)`` or ``(B, L)``.  ``mask`` (same shape) marks real steps;
    masked steps leave ``H`` and ``C`` untouched, so right-aligned padding
    yields the same result as running each row on its own.  Gate weights are
    ``params[prefix + "W_I"]`` etc. with shape ``(1 + h, h)`` acting on
    ``[p_t, H_{t-1}]``.
    """
    xs = as_float(xs)
    single = xs.ndim == 1
    if single:
        xs = xs[None, :]
        mask = None if mask is None else np.asarray(mask)[None, :]
    if not np.all(np.isfinite(xs)):
        raise NumericError("non-finite value in LSTM input sequence")
    B, L = xs.shape
    h = params[prefix + "W_I"].shape[1]
    m = np.ones((B, L)) if mask is None else np.asarray(mask, dtype=np.float64)
    H = np.zeros((B, h))
    C = np.zeros((B, h))
    W = np.concatenate([params[prefix + f"W_{g}"] for g in GATES], axis=1)
    b = np.concatenate([params[prefix + f"b_{g}"] for g in GATES])
    x_part = xs[:, :, None] * W[0] + b  # input contribution for every step, (B, L, 4h)
    W_h = W[1:]
    steps = []
    for t in range(L):
        pre = x_part[:, t] + H @ W_h
        act = sigmoid(pre)
        I, F, O = act[:, :h], act[:, h:2 * h], act[:, 3 * h:]
        G = np.tanh(pre[:, 2 * h:3 * h])
        C_new = F * C + I * G
        tc = np.tanh(C_new)
        H_new = O * tc
        mt = m[:, t:t + 1]
        steps.append((xs[:, t:t + 1], H, I, F, G, O, C, tc, mt))
        if mask is None or mt.all():
            H, C = H_new, C_new
        else:
            H = mt * H_new + (1.0 - mt) * H
            C = mt * C_new + (1.0 - mt) * C
    cache = (steps, prefix, h, single)
    return (H[0] if single else H), cache


def lstm_backward(dH_last, cache, params):
    """Backpropagate through time; returns ``(dxs, grads)`` keyed like ``params``."""
    steps, prefix, h, single = cache
    dH = np.atleast_2d(np.asarray(dH_last, dtype=np.float64)).copy()
    B = dH.shape[0]
    dC = np.zeros((B, h))
    grads = {prefix + f"{k}_{g}": np.zeros_like(params[prefix + f"{k}_{g}"])
             for g in GATES for k in ("W", "b")}
    dxs = np.zeros((B, len(steps)))
    for t in range(len(steps) - 1, -1, -1):
        x_t, H_prev, I, F, G, O, C_prev, tc, mt = steps[t]
        z = np.concatenate([x_t, H_prev], axis=1)
        dH_new = mt * dH
        dC_new = mt * dC + dH_new * O * (1.0 - tc * tc)
        da = {
            "O": dH_new * tc * O * (1.0 - O),
            "F": dC_new * C_prev * F * (1.0 - F),
            "I": dC_new * G * I * (1.0 - I),
            "G": dC_new * I * (1.0 - G * G),
        }
        dz = np.zeros_like(z)
        for g in GATES:
            grads[prefix + f"W_{g}"] += z.T @ da[g]
            grads[prefix + f"b_{g}"] += da[g].sum(axis=0)
            dz += da[g] @ params[prefix + f"W_{g}"].T
        dxs[:, t] = dz[:, 0]
        dH = dz[:, 1:] + (1.0 - mt) * dH
        dC = dC_new * F + (1.0 - mt) * dC
    return (dxs[0] if single else dxs), grads


# ------------------------------------------------------------------- MSE

def mse(pred, target):
    """Squared error and its gradient w.r.t. ``pred``.

    Arrays are reduced by their mean; the gradient is scaled to match.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    diff = target - pred
    if diff.ndim == 0:
        return float(diff * diff), -2.0 * diff
    n = diff.size
    return float(np.mean(diff * diff)), -2.0 * diff / n


# ------------------------------------------------------------- ParamStore

class ParamStore:
    """Named parameters with matching gradient accumulators."""

    def __init__(self, values: Optional[Dict[str, np.ndarray]] = None, decay: Iterable[str] = ()):
        self.values: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self.decay = set(decay)
        for name, v in (values or {}).items():
            self.add(name, v)

    def add(self, name, value, decay=False):
        value = np.array(value, dtype=np.float64)
        self.values[name] = value
        self.grads[name] = np.zeros_like(value)
        if decay:
            self.decay.add(name)

    def __getitem__(self, name):
        return self.values[name]

    def __contains__(self, name):
        return name in self.values

    def __iter__(self):
        return iter(self.values)

    def names(self):
        return list(self.values)

    def accumulate(self, grads: Dict[str, np.ndarray]):
        for name, g in grads.items():
            if g.shape != self.values[name].shape:
                raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {self.values[name].shape}")
            self.grads[name] += g

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> "ParamStore":
        out = ParamStore(decay=self.decay)
        for name, v in self.values.items():
            out.add(name, v.copy())
        return out

    def shapes(self):
        return {name: tuple(v.shape) for name, v in self.values.items()}

    def check_finite(self):
        for name, v in self.values.items():
            if not np.all(np.isfinite(v)):
                raise NumericError(f"non-finite value in parameter {name}")


# ------------------------------------------------------------------ Adam

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(store: ParamStore, state: AdamState) -> ParamStore:
    """Bias-corrected Adam with L2 folded into the gradient of decayed parameters.

    Updates ``store`` in place, zeroes its gradients and returns it.
    """
    if state.step >= np.iinfo(np.int64).max - 1:
        raise OverflowError("Adam step counter overflow")
    for name, g in store.grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, theta in store.values.items():
        g = store.grads[name]
        if state.weight_decay and name in store.decay:
            g = g + state.weight_decay * theta
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        theta -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    store.zero_grad()
    return store


# -------------------------------------------------------- gradient check

@dataclass
class GradCheckReport:
    max_rel_err: Dict[str, float]
    tol: float

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tol

    def failing(self):
        return sorted(k for k, v in self.max_rel_err.items() if not v < self.tol)

    def lines(self):
        return [f"{name}\t{err:.3e}\t{'ok' if err < self.tol else 'FAIL'}"
                for name, err in sorted(self.max_rel_err.items())]


def gradient_check(closure: Callable[[ParamStore], float], store: ParamStore,
                   analytic: Dict[str, np.ndarray], h: float = 1e-5, tol: float = 1e-4,
                   max_entries: Optional[int] = None, rng=None,
                   precise: Optional[Callable[[ParamStore], float]] = None) -> GradCheckReport:
    """Compare ``analytic`` gradients with central differences of ``closure``.

    ``closure`` evaluates the scalar loss from the current values in
    ``store`` (perturbed in place and restored).  ``max_entries`` caps the
    number of coordinates probed per parameter, sampled with ``rng``.

    With a step of 1e-5, float64 roundoff in the loss can swamp gradient
    components that are tiny relative to the loss itself.  ``precise``, if
    given, is an extended-precision version of ``closure``; coordinates whose
    float64 error exceeds ``tol / 100`` are re-differenced with it and report
    that (more accurate) error instead.
    """
    base = closure(store)
    if closure(store) != base:
        raise RuntimeError("closure is not deterministic: two baseline evaluations differ")
    rng = np.random.default_rng(0) if rng is None else rng

    def central(f, flat, k):
        old = flat[k]
        flat[k] = old + h
        fp = f(store)
        flat[k] = old - h
        fm = f(store)
        flat[k] = old
        return (fp - fm) / (2.0 * h)

    def rel(a, num):
        return float(abs(a - num) / max(abs(a), abs(num), 1e-8))

    report = {}
    for name in store.names():
        flat = store.values[name].reshape(-1)
        a_flat = np.asarray(analytic[name], dtype=np.float64).reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        worst = 0.0
        for k in idx:
            err = rel(a_flat[k], central(closure, flat, k))
            if precise is not None and err > tol / 100:
                err = rel(a_flat[k], central(precise, flat, k))
            worst = max(worst, err)
        report[name] = worst
    return GradCheckReport(report, tol)


# ------------------------------------------------------------ checkpoint

def save_params(store: ParamStore, path, meta: Optional[dict] = None):
    """Write a JSON checkpoint; float ``repr`` round-trips 64-bit values exactly."""
    doc = {
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "decay": sorted(store.decay),
        "params": {name: {"shape": list(v.shape), "values": [float(x) for x in v.reshape(-1)]}
                   for name, v in sorted(store.values.items())},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, allow_nan=False))


def load_params(path):
    """Read a checkpoint written by :func:`save_params`; returns ``(store, meta)``."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"corrupt or truncated checkpoint {path}: {exc}") from None
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint version {doc.get('version')} != supported {CHECKPOINT_VERSION}")
    store = ParamStore(decay=doc.get("decay", ()))
    for name, entry in doc["params"].items():
        shape = tuple(entry["shape"])
        vals = np.array(entry["values"], dtype=np.float64)
        if vals.size != math.prod(shape):
            raise ValueError(f"checkpoint entry {name}: {vals.size} values for shape {shape}")
        store.add(name, vals.reshape(shape))
    return store, doc.get("meta", {})


def glorot(rng, fan_in, fan_out, shape=None):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))
