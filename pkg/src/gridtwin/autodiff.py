"""Minimal dense-tensor engine with reverse-mode differentiation.

Everything is float64. A Tape records forward operations in order; backward
walks the record in exact reverse, so gradients are deterministic for a
deterministic op sequence. Parameters are long-lived named arrays injected
into a fresh tape each step via Tape.watch; backward overwrites their .grad
(a second backward on the same tape reproduces the first).

Supported ops: matmul, add, sub, mul, scale, transpose, row_softmax,
sigmoid, relu, concat_lastdim, slice_lastdim, mean_all, square. Elementwise
ops broadcast only over the leading axis ((T, d) op (d,)); anything else
needs an explicit reshape.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import (
    MissingGradient,
    NonFiniteValue,
    NotScalarLoss,
    ShapeMismatch,
)

CHECKPOINT_FORMAT = "gridtwin-params"
CHECKPOINT_VERSION = 1


class Parameter:
    """Named trainable array with a gradient slot.

    `grad` is None until a backward pass populates it; sgd_step consumes and
    clears it.
    """

    __slots__ = ("name", "value", "grad", "init_info")

    def __init__(self, name, value, init_info=None):
        self.name = name
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.init_info = init_info or {}

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class Tensor:
    """Handle to one node of a tape."""

    __slots__ = ("tape", "idx")

    def __init__(self, tape, idx):
        self.tape = tape
        self.idx = idx

    @property
    def value(self):
        return self.tape.values[self.idx]

    @property
    def shape(self):
        return self.value.shape

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __repr__(self):
        return f"Tensor(idx={self.idx}, shape={self.shape})"


class Tape:
    """Append-only computation record; inputs always precede outputs."""

    def __init__(self):
        self.ops = []
        self.inputs = []
        self.values = []
        self.ctx = []
        self.params = []
        self._watched = {}

    def _record(self, op, inputs, value, ctx=None, param=None):
        value = np.asarray(value, dtype=float)
        if not np.all(np.isfinite(value)):
            raise NonFiniteValue(f"op {op!r} produced a non-finite value")
        self.ops.append(op)
        self.inputs.append(inputs)
        self.values.append(value)
        self.ctx.append(ctx)
        self.params.append(param)
        return Tensor(self, len(self.ops) - 1)

    def constant(self, value):
        """Leaf with no gradient destination."""
        return self._record("leaf", (), value)

    def watch(self, param):
        """Leaf bound to a Parameter; memoized so reuse accumulates properly."""
        key = id(param)
        if key not in self._watched:
            self._watched[key] = self._record("leaf", (), param.value, param=param)
        return self._watched[key]

    def backward(self, loss):
        """Populate .grad of every watched Parameter with d(loss)/d(param)."""
        if loss.tape is not self:
            raise ValueError("loss belongs to a different tape")
        if loss.value.ndim != 0:
            raise NotScalarLoss(f"loss must be a scalar, got shape {loss.value.shape}")
        grads = [None] * len(self.ops)
        grads[loss.idx] = np.ones(())
        for i in range(loss.idx, -1, -1):
            g = grads[i]
            if g is None:
                continue
            op = self.ops[i]
            if op == "leaf":
                if self.params[i] is not None:
                    self.params[i].grad = np.array(g, dtype=float)
                continue
            _BACKWARD[op](self, i, g, grads)


def _accumulate(grads, idx, g):
    grads[idx] = g if grads[idx] is None else grads[idx] + g


def _tape_of(*tensors):
    tape = tensors[0].tape
    for t in tensors[1:]:
        if t.tape is not tape:
            raise ValueError("tensors live on different tapes")
    return tape


# --- elementwise with leading-axis broadcast ---

def _broadcast_kind(a_shape, b_shape):
    if a_shape == b_shape:
        return "none"
    if len(a_shape) == len(b_shape) + 1 and a_shape[1:] == b_shape:
        return "b"  # b broadcasts over a's leading axis
    if len(b_shape) == len(a_shape) + 1 and b_shape[1:] == a_shape:
        return "a"
    raise ShapeMismatch(f"elementwise shapes {a_shape} and {b_shape} do not align")


def _reduce_broadcast(g, kind, operand):
    if kind == operand:
        return g.sum(axis=0)
    return g


def add(a, b):
    tape = _tape_of(a, b)
    kind = _broadcast_kind(a.shape, b.shape)
    return tape._record("add", (a.idx, b.idx), a.value + b.value, ctx=kind)


def sub(a, b):
    tape = _tape_of(a, b)
    kind = _broadcast_kind(a.shape, b.shape)
    return tape._record("sub", (a.idx, b.idx), a.value - b.value, ctx=kind)


def mul(a, b):
    tape = _tape_of(a, b)
    kind = _broadcast_kind(a.shape, b.shape)
    return tape._record("mul", (a.idx, b.idx), a.value * b.value, ctx=kind)


def _back_add(tape, i, g, grads):
    ia, ib = tape.inputs[i]
    kind = tape.ctx[i]
    _accumulate(grads, ia, _reduce_broadcast(g, kind, "a"))
    _accumulate(grads, ib, _reduce_broadcast(g, kind, "b"))


def _back_sub(tape, i, g, grads):
    ia, ib = tape.inputs[i]
    kind = tape.ctx[i]
    _accumulate(grads, ia, _reduce_broadcast(g, kind, "a"))
    _accumulate(grads, ib, _reduce_broadcast(-g, kind, "b"))


def _back_mul(tape, i, g, grads):
    ia, ib = tape.inputs[i]
    kind = tape.ctx[i]
    _accumulate(grads, ia, _reduce_broadcast(g * tape.values[ib], kind, "a"))
    _accumulate(grads, ib, _reduce_broadcast(g * tape.values[ia], kind, "b"))


def scale(a, c):
    c = float(c)
    return a.tape._record("scale", (a.idx,), a.value * c, ctx=c)


def _back_scale(tape, i, g, grads):
    _accumulate(grads, tape.inputs[i][0], g * tape.ctx[i])


def matmul(a, b):
    tape = _tape_of(a, b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ShapeMismatch("matmul requires 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul inner dims {a.shape} x {b.shape}")
    return tape._record("matmul", (a.idx, b.idx), a.value @ b.value)


def _back_matmul(tape, i, g, grads):
    ia, ib = tape.inputs[i]
    _accumulate(grads, ia, g @ tape.values[ib].T)
    _accumulate(grads, ib, tape.values[ia].T @ g)


def transpose(a):
    if a.value.ndim != 2:
        raise ShapeMismatch("transpose requires a 2-D operand")
    return a.tape._record("transpose", (a.idx,), a.value.T)


def _back_transpose(tape, i, g, grads):
    _accumulate(grads, tape.inputs[i][0], g.T)


def row_softmax(a):
    """Numerically stable softmax along the last axis of a 2-D tensor."""
    if a.value.ndim != 2:
        raise ShapeMismatch("row_softmax requires a 2-D operand")
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)
    return a.tape._record("row_softmax", (a.idx,), out)


def _back_row_softmax(tape, i, g, grads):
    y = tape.values[i]
    dot = (g * y).sum(axis=1, keepdims=True)
    _accumulate(grads, tape.inputs[i][0], y * (g - dot))


def sigmoid(a):
    out = np.exp(-np.logaddexp(0.0, -a.value))  # stable 1/(1+exp(-x))
    return a.tape._record("sigmoid", (a.idx,), out)


def _back_sigmoid(tape, i, g, grads):
    y = tape.values[i]
    _accumulate(grads, tape.inputs[i][0], g * y * (1.0 - y))


def relu(a):
    return a.tape._record("relu", (a.idx,), np.maximum(a.value, 0.0))


def _back_relu(tape, i, g, grads):
    x = tape.values[tape.inputs[i][0]]
    _accumulate(grads, tape.inputs[i][0], g * (x > 0))


def square(a):
    return a.tape._record("square", (a.idx,), a.value * a.value)


def _back_square(tape, i, g, grads):
    x = tape.values[tape.inputs[i][0]]
    _accumulate(grads, tape.inputs[i][0], g * 2.0 * x)


def concat_lastdim(a, b):
    tape = _tape_of(a, b)
    if a.value.ndim != b.value.ndim or a.shape[:-1] != b.shape[:-1]:
        raise ShapeMismatch(f"concat_lastdim shapes {a.shape} and {b.shape}")
    return tape._record(
        "concat_lastdim",
        (a.idx, b.idx),
        np.concatenate([a.value, b.value], axis=-1),
        ctx=a.shape[-1],
    )


def _back_concat(tape, i, g, grads):
    ia, ib = tape.inputs[i]
    split = tape.ctx[i]
    _accumulate(grads, ia, g[..., :split])
    _accumulate(grads, ib, g[..., split:])


def slice_lastdim(a, start, stop):
    if not (0 <= start < stop <= a.shape[-1]):
        raise ShapeMismatch(f"slice [{start}:{stop}] outside last dim {a.shape[-1]}")
    return a.tape._record("slice_lastdim", (a.idx,), a.value[..., start:stop], ctx=(start, stop))


def _back_slice(tape, i, g, grads):
    start, stop = tape.ctx[i]
    full = np.zeros_like(tape.values[tape.inputs[i][0]])
    full[..., start:stop] = g
    _accumulate(grads, tape.inputs[i][0], full)


def mean_all(a):
    return a.tape._record("mean_all", (a.idx,), np.asarray(a.value.mean()), ctx=a.value.size)


def _back_mean_all(tape, i, g, grads):
    src = tape.inputs[i][0]
    _accumulate(grads, src, np.full_like(tape.values[src], float(g) / tape.ctx[i]))


_BACKWARD = {
    "add": _back_add,
    "sub": _back_sub,
    "mul": _back_mul,
    "scale": _back_scale,
    "matmul": _back_matmul,
    "transpose": _back_transpose,
    "row_softmax": _back_row_softmax,
    "sigmoid": _back_sigmoid,
    "relu": _back_relu,
    "square": _back_square,
    "concat_lastdim": _back_concat,
    "slice_lastdim": _back_slice,
    "mean_all": _back_mean_all,
}

# name -> callable, for generic dispatch and op-sweep tests
OPS = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "transpose": transpose,
    "row_softmax": row_softmax,
    "sigmoid": sigmoid,
    "relu": relu,
    "concat_lastdim": concat_lastdim,
    "slice_lastdim": slice_lastdim,
    "mean_all": mean_all,
    "square": square,
}


def forward(op_kind, *inputs, **kwargs):
    """Generic dispatch into the op table."""
    if op_kind not in OPS:
        raise ValueError(f"unknown op {op_kind!r}")
    return OPS[op_kind](*inputs, **kwargs)


def grad_check(f, x, step=1e-5):
    """Max relative error between reverse-mode and central-difference grads.

    `f` maps one Tensor to a scalar Tensor using tape ops only. The relative
    error denominator is max(|ad|, |fd|, 1e-8) per entry.
    """
    x = np.asarray(x, dtype=float)
    p = Parameter("grad_check_x", x)
    tape = Tape()
    out = f(tape.watch(p))
    if out.value.ndim != 0:
        raise NotScalarLoss("grad_check requires a scalar-valued function")
    tape.backward(out)
    g_ad = p.grad

    def eval_at(xv):
        t = Tape()
        return float(f(t.constant(xv)).value)

    g_fd = np.empty_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xp[idx] += step
        xm = x.copy()
        xm[idx] -= step
        g_fd[idx] = (eval_at(xp) - eval_at(xm)) / (2 * step)

    denom = np.maximum(np.maximum(np.abs(g_ad), np.abs(g_fd)), 1e-8)
    return float(np.max(np.abs(g_ad - g_fd) / denom))


def sgd_step(params, lr):
    """Plain SGD update p <- p - lr * grad; clears gradient slots."""
    if not lr >= 0:
        raise ValueError("lr must be non-negative")
    params = list(params)
    for p in params:
        if p.grad is None:
            raise MissingGradient(f"parameter {p.name!r} has no gradient")
    for p in params:
        p.value -= lr * p.grad
        p.grad = None


class AdamState:
    """Optional Adam optimizer (off by default; plain SGD is the baseline)."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self, lr):
        for p in self.params:
            if p.grad is None:
                raise MissingGradient(f"parameter {p.name!r} has no gradient")
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for i, p in enumerate(self.params):
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            p.value -= lr * (self.m[i] / b1t) / (np.sqrt(self.v[i] / b2t) + self.eps)
            p.grad = None


def uniform_init(name, shape, fan_in, rng):
    """Weight init: uniform(-sqrt(1/fan_in), +sqrt(1/fan_in))."""
    bound = float(np.sqrt(1.0 / fan_in))
    value = rng.uniform(-bound, bound, size=shape)
    return Parameter(name, value, init_info={"dist": "uniform", "bound": bound})


def zeros_init(name, shape):
    return Parameter(name, np.zeros(shape), init_info={"dist": "zeros"})


def save_params(path, params, extra=None):
    """Write parameters as versioned JSON; float64-lossless round trip."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "extra": extra or {},
        "params": [
            {"name": p.name, "shape": list(p.value.shape), "values": p.value.ravel().tolist()}
            for p in params
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_params(path):
    """Read a checkpoint; returns ({name: array}, extra)."""
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a parameter checkpoint")
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version")
    arrays = {
        entry["name"]: np.array(entry["values"], dtype=float).reshape(entry["shape"])
        for entry in payload["params"]
    }
    return arrays, payload.get("extra", {})
