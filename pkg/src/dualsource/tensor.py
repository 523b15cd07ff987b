"""Minimal reverse-mode autodiff over dense numpy tensors.

Ops record themselves on the innermost active :class:`Tape`; outside a tape
they simply compute. The tape is already in topological order, so
:meth:`Tape.backward` walks it in reverse.

    >>> w = Parameter(np.array([1.0, 2.0]), name="w")
    >>> with Tape() as tape:
    ...     loss = sum_all(mul(w, w))
    >>> tape.backward(loss)
    >>> w.grad
    array([2., 4.])
"""

from __future__ import annotations

import json
import logging
import math
import struct
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels

logger = logging.getLogger(__name__)

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "backward",
    "checked_mode",
    "constant",
    "forward_op",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "softmax",
    "layer_norm",
    "embedding_lookup",
    "relu",
    "sigmoid",
    "tanh",
    "concat",
    "slice_axis",
    "transpose",
    "reshape",
    "sum_all",
    "dropout",
    "cross_entropy_mean",
    "lstm_pointwise",
    "AdamState",
    "Adam",
    "adam_step",
    "inverse_sqrt_lr",
    "GradCheckReport",
    "grad_check",
    "save_checkpoint",
    "load_checkpoint",
]


class Tensor:
    """Dense array plus the bookkeeping needed to sit on a tape."""

    __slots__ = ("data", "requires_grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"


class Parameter(Tensor):
    """A named leaf tensor whose gradient accumulates in ``grad``."""

    __slots__ = ("name", "grad")

    def __init__(self, data, name: str):
        super().__init__(np.array(data), requires_grad=True)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        self.name = name
        self.grad = np.zeros_like(self.data)

    @property
    def value(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


def constant(data, dtype=None) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def _active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


_checked = threading.local()


@contextmanager
def checked_mode(enabled: bool = True):
    """Reject non-finite op inputs while active."""
    prev = getattr(_checked, "on", False)
    _checked.on = enabled
    try:
        yield
    finally:
        _checked.on = prev


class Tape:
    """Records ops executed inside its ``with`` block."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.consumed = False

    def __enter__(self) -> Tape:
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], grad_fn: Callable) -> None:
        if self.consumed:
            raise RuntimeError("cannot record on a tape after backward")
        out.requires_grad = True
        out._tape = self
        self.nodes.append((out, inputs, grad_fn))

    def backward(self, loss: Tensor) -> None:
        if self.consumed:
            raise RuntimeError("backward already ran on this tape")
        if loss._tape is not self:
            raise RuntimeError("loss tensor was not recorded on this tape")
        if loss.data.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, grad_fn in reversed(self.nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            in_grads = grad_fn(g)
            for x, gx in zip(inputs, in_grads):
                if gx is None or not x.requires_grad:
                    continue
                if isinstance(x, Parameter):
                    x.grad += gx
                else:
                    prev = grads.get(id(x))
                    grads[id(x)] = gx if prev is None else prev + gx
        self.nodes.clear()
        self.consumed = True


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into every reachable Parameter."""
    tape = loss._tape
    if tape is None:
        raise RuntimeError("loss tensor is not on any tape")
    tape.backward(loss)


def _emit(data: np.ndarray, inputs: tuple[Tensor, ...], grad_fn: Callable) -> Tensor:
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(x.requires_grad for x in inputs):
        tape.record(out, inputs, grad_fn)
    return out


def _check_inputs(op: str, *xs: Tensor) -> None:
    if getattr(_checked, "on", False):
        for x in xs:
            if x.data.dtype.kind == "f" and not np.all(np.isfinite(x.data)):
                raise FloatingPointError(f"{op}: non-finite input of shape {x.shape}")


def _shape_error(op: str, a, b) -> ValueError:
    return ValueError(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}")


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` with equal batch dims, or a shared 2-D right operand."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_inputs("matmul", a, b)
    sa, sb = a.shape, b.shape
    if a.ndim < 2 or b.ndim < 2 or sa[-1] != sb[-2]:
        raise _shape_error("matmul", sa, sb)
    shared = b.ndim == 2
    if not shared and sa[:-2] != sb[:-2]:
        raise _shape_error("matmul", sa, sb)
    A, B = a.data, b.data

    def grad_fn(g):
        ga = g @ np.swapaxes(B, -1, -2) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if shared:
                gb = A.reshape(-1, sa[-1]).T @ g.reshape(-1, sb[-1])
            else:
                gb = np.swapaxes(A, -1, -2) @ g
        return ga, gb

    return _emit(A @ B, (a, b), grad_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a trailing-axis bias vector."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_inputs("add", a, b)
    if a.shape == b.shape:
        bias = False
    elif b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        bias = True
    else:
        raise _shape_error("add", a.shape, b.shape)

    def grad_fn(g):
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if bias else g
        return g, gb

    return _emit(a.data + b.data, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_inputs("sub", a, b)
    if a.shape != b.shape:
        raise _shape_error("sub", a.shape, b.shape)
    return _emit(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_inputs("mul", a, b)
    if a.shape != b.shape:
        raise _shape_error("mul", a.shape, b.shape)
    A, B = a.data, b.data
    return _emit(A * B, (a, b), lambda g: (g * B, g * A))


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    _check_inputs("scale", a)
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    _check_inputs("relu", a)
    pos = a.data > 0
    return _emit(np.where(pos, a.data, 0.0).astype(a.dtype), (a,), lambda g: (g * pos,))


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    _check_inputs("sigmoid", a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _emit(y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    _check_inputs("tanh", a)
    y = np.tanh(a.data)
    return _emit(y, (a,), lambda g: (g * (1.0 - y * y),))


def softmax(a: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis. ``mask`` (bool, broadcastable) keeps True
    positions; a row with nothing kept yields zeros."""
    a = _as_tensor(a)
    _check_inputs("softmax", a)
    x = a.data
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    shape = x.shape
    y = kernels.softmax_rows(np.ascontiguousarray(x.reshape(-1, shape[-1]))).reshape(shape)

    def grad_fn(g):
        n = shape[-1]
        gx = kernels.softmax_backward_rows(
            np.ascontiguousarray(y.reshape(-1, n)), np.ascontiguousarray(g.reshape(-1, n))
        )
        return (gx.reshape(shape),)

    return _emit(y, (a,), grad_fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-9) -> Tensor:
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    _check_inputs("layer_norm", x, gamma, beta)
    n = x.shape[-1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise _shape_error("layer_norm", x.shape, gamma.shape if gamma.shape != (n,) else beta.shape)
    shape = x.shape
    rows = np.ascontiguousarray(x.data.reshape(-1, n))
    y, xhat, rstd = kernels.layer_norm_rows(rows, gamma.data, beta.data, eps)

    def grad_fn(g):
        dx, dgamma, dbeta = kernels.layer_norm_backward_rows(
            np.ascontiguousarray(g.reshape(-1, n)), xhat, rstd, gamma.data
        )
        return dx.reshape(shape), dgamma, dbeta

    return _emit(y.reshape(shape), (x, gamma, beta), grad_fn)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    vocab, dim = table.shape
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise ValueError(f"embedding_lookup: ids outside [0, {vocab}) for table {table.shape}")
    flat = ids.reshape(-1)

    def grad_fn(g):
        rows = np.ascontiguousarray(g.reshape(-1, dim))
        return (kernels.embedding_backward(rows, flat, vocab),)

    return _emit(table.data[ids], (table,), grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(_as_tensor(t) for t in tensors)
    _check_inputs("concat", *tensors)
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            d1 != d2 for i, (d1, d2) in enumerate(zip(ref, t.shape)) if i != ax
        ):
            raise _shape_error("concat", ref, t.shape)
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _emit(np.concatenate([t.data for t in tensors], axis=ax), tensors, grad_fn)


def slice_axis(a: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    ax = axis % a.ndim
    if not 0 <= start <= stop <= a.shape[ax]:
        raise ValueError(f"slice_axis: [{start}:{stop}] out of range for axis {ax} of {a.shape}")
    index = [slice(None)] * a.ndim
    index[ax] = slice(start, stop)
    index = tuple(index)
    shape = a.shape

    def grad_fn(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[index] = g
        return (out,)

    return _emit(a.data[index], (a,), grad_fn)


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[:-2] + (a.ndim - 1, a.ndim - 2)
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ValueError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inverse = tuple(np.argsort(axes))
    return _emit(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise _shape_error("reshape", old, shape) from None
    return _emit(out, (a,), lambda g: (g.reshape(old),))


def sum_all(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    return _emit(np.asarray(a.data.sum()), (a,), lambda g: (np.full(shape, g, dtype=a.dtype),))


def dropout(a: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    if p <= 0.0 or rng is None:
        return a
    keep = (rng.random(a.shape) >= p).astype(a.dtype) / (1.0 - p)
    return _emit(a.data * keep, (a,), lambda g: (g * keep,))


def cross_entropy_mean(logits: Tensor, targets, mask=None, label_smoothing: float = 0.0) -> Tensor:
    """Mean per-token negative log-likelihood over unmasked positions.

    With ``label_smoothing`` the target distribution puts ``1 - s`` on the
    gold token and spreads ``s`` uniformly over the whole vocabulary.
    """
    logits = _as_tensor(logits)
    _check_inputs("cross_entropy_mean", logits)
    targets = np.asarray(targets, dtype=np.int64)
    v = logits.shape[-1]
    if logits.shape[:-1] != targets.shape:
        raise _shape_error("cross_entropy_mean", logits.shape, targets.shape)
    if mask is None:
        weights = np.ones(targets.size, dtype=logits.dtype)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != targets.shape:
            raise _shape_error("cross_entropy_mean", targets.shape, mask.shape)
        weights = mask.reshape(-1).astype(logits.dtype)
    total = weights.sum()
    if total == 0:
        raise ValueError("cross_entropy_mean: every position is masked")
    flat_t = targets.reshape(-1)
    if flat_t.size and (flat_t.min() < 0 or flat_t.max() >= v):
        raise ValueError(f"cross_entropy_mean: targets outside [0, {v})")
    rows = np.ascontiguousarray(logits.data.reshape(-1, v))
    losses, grad = kernels.cross_entropy_rows(rows, flat_t, weights, float(label_smoothing))
    value = np.asarray(losses.sum() / total, dtype=logits.dtype)
    shape = logits.shape

    def grad_fn(g):
        return ((grad * (g / total)).reshape(shape),)

    return _emit(value, (logits,), grad_fn)


def lstm_pointwise(gates: Tensor, c_prev: Tensor, h_prev: Tensor, mask=None) -> Tensor:
    """Fused LSTM gate nonlinearity and state update.

    ``gates`` holds the pre-activations for (input, forget, cell, output)
    along its last axis. Rows with ``mask == 0`` carry the previous state
    through unchanged. Returns ``[h | c]`` concatenated on the last axis.
    """
    gates, c_prev, h_prev = _as_tensor(gates), _as_tensor(c_prev), _as_tensor(h_prev)
    _check_inputs("lstm_pointwise", gates, c_prev, h_prev)
    b, hid = c_prev.shape
    if gates.shape != (b, 4 * hid) or h_prev.shape != (b, hid):
        raise _shape_error("lstm_pointwise", gates.shape, c_prev.shape)
    dt = c_prev.dtype
    m = np.ones(b, dtype=dt) if mask is None else np.asarray(mask, dtype=dt).reshape(b)
    cp = np.ascontiguousarray(c_prev.data)
    h, c, acts = kernels.lstm_pointwise(
        np.ascontiguousarray(gates.data), cp, np.ascontiguousarray(h_prev.data), m
    )

    def grad_fn(g):
        gh = np.ascontiguousarray(g[:, :hid])
        gc = np.ascontiguousarray(g[:, hid:])
        return kernels.lstm_pointwise_backward(gh, gc, acts, cp, m)

    return _emit(np.concatenate([h, c], axis=1), (gates, c_prev, h_prev), grad_fn)


_OPS = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "softmax": softmax,
    "layer_norm": layer_norm,
    "embedding_lookup": embedding_lookup,
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "concat": lambda *ts, axis=-1: concat(ts, axis=axis),
    "slice": slice_axis,
    "transpose": transpose,
    "reshape": reshape,
    "sum": sum_all,
    "cross_entropy_mean": cross_entropy_mean,
    "lstm_pointwise": lstm_pointwise,
}


def forward_op(kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch an op by name, e.g. ``forward_op("matmul", a, b)``."""
    try:
        fn = _OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}") from None
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def like(cls, param: Parameter) -> AdamState:
        return cls(np.zeros_like(param.data), np.zeros_like(param.data))


def adam_step(
    params: Sequence[Parameter],
    states: Sequence[AdamState],
    lr: float = 3e-4,
    beta1: float = 0.9,
    beta2: float = 0.98,
    eps: float = 1e-9,
) -> int:
    """Apply one bias-corrected Adam update and zero the gradients.

    Parameters whose gradient holds NaN/inf are left untouched. Returns the
    number of skipped parameters.
    """
    skipped = 0
    for p, st in zip(params, states):
        g = p.grad
        if not np.all(np.isfinite(g)):
            skipped += 1
            p.zero_grad()
            continue
        st.step += 1
        st.m *= beta1
        st.m += (1.0 - beta1) * g
        st.v *= beta2
        st.v += (1.0 - beta2) * g * g
        mhat = st.m / (1.0 - beta1 ** st.step)
        vhat = st.v / (1.0 - beta2 ** st.step)
        p.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype)
        p.zero_grad()
    return skipped


def inverse_sqrt_lr(step: int, peak: float, warmup: int) -> float:
    """Linear warmup to ``peak`` over ``warmup`` steps, then ``peak*sqrt(warmup/step)``."""
    step = max(step, 1)
    if warmup <= 0:
        return peak
    return peak * min(step / warmup, math.sqrt(warmup / step))


class Adam:
    """Adam over a fixed parameter list with an optional lr schedule."""

    def __init__(
        self,
        params: Iterable[Parameter],
        lr: float = 3e-4,
        beta1: float = 0.9,
        beta2: float = 0.98,
        eps: float = 1e-9,
        warmup: int = 0,
    ):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")
        self.states = [AdamState.like(p) for p in self.params]
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.warmup = warmup
        self.num_updates = 0
        self.skipped = 0

    def current_lr(self) -> float:
        if self.warmup:
            return inverse_sqrt_lr(self.num_updates + 1, self.lr, self.warmup)
        return self.lr

    def step(self) -> float:
        lr = self.current_lr()
        self.skipped += adam_step(self.params, self.states, lr, self.beta1, self.beta2, self.eps)
        self.num_updates += 1
        return lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tol

    def failures(self) -> dict[str, float]:
        return {k: v for k, v in self.max_rel_error.items() if v > self.tol}


def grad_check(
    model_fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    h: float = 1e-5,
    tol: float = 1e-4,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-8,
) -> GradCheckReport:
    """Compare tape gradients with central finite differences.

    ``model_fn`` must rebuild the scalar loss from the current parameter
    values on every call. With ``max_entries`` only that many randomly
    chosen coordinates per parameter are perturbed. ``floor`` bounds the
    denominator of the relative error so that exact zeros are not judged
    against rounding noise of the difference quotient.
    """
    for p in params:
        if p.dtype != np.float64:
            raise TypeError(f"grad_check needs float64 parameters, {p.name} is {p.dtype}")
    saved = [p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = model_fn()
    if loss._tape is tape:
        tape.backward(loss)
    analytic = [p.grad.copy() for p in params]
    for p, g in zip(params, saved):
        p.grad[...] = g

    rng = rng or np.random.default_rng(0)
    report = GradCheckReport(tol=tol)
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        worst = 0.0
        gflat = ga.reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(model_fn().data)
            flat[i] = orig - h
            fm = float(model_fn().data)
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            a = float(gflat[i])
            err = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, err)
        report.max_rel_error[p.name] = worst
    return report


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_MAGIC = b"DSCKPT01"


def save_checkpoint(path, params: Sequence[Parameter], global_step: int = 0, meta: dict | None = None) -> None:
    """Write ``magic | u64 header length | JSON header | raw LE payloads``."""
    entries = []
    for p in params:
        entries.append({"name": p.name, "shape": list(p.shape), "dtype": p.dtype.name})
    header = {"params": entries, "global_step": int(global_step), "meta": meta or {}}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for p in params:
            fh.write(np.ascontiguousarray(p.data, dtype=p.dtype.newbyteorder("<")).tobytes())
    tmp.replace(path)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Return ``(name -> array, header)`` from a file written by :func:`save_checkpoint`."""
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + n].decode("utf-8"))
    offset = 16 + n
    arrays = {}
    for e in header["params"]:
        dt = np.dtype(e["dtype"]).newbyteorder("<")
        count = int(np.prod(e["shape"], dtype=np.int64))
        size = count * dt.itemsize
        arr = np.frombuffer(raw, dtype=dt, count=count, offset=offset).reshape(e["shape"])
        arrays[e["name"]] = arr.astype(dt.newbyteorder("="))
        offset += size
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes after payloads")
    return arrays, header
