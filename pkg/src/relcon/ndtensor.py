"""Dense float64 arrays with reverse-mode automatic differentiation.

Every differentiable op records its parents and a backward closure on the
output tensor.  ``Tensor.backward`` orders the recorded graph topologically
(the tape) and walks it once in reverse.  Storage is a contiguous numpy
array; ops always produce fresh arrays, never strided views.
"""

from __future__ import annotations

import contextlib
import json
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


class ShapeError(ValueError):
    pass


class ConfigError(ValueError):
    pass


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by '{op}'")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None, _op: str = "leaf"):
        if _op == "leaf":
            arr = np.array(data, dtype=np.float64, order="C")
        else:
            arr = np.asarray(data, dtype=np.float64)
            if not arr.flags.c_contiguous:
                arr = np.ascontiguousarray(arr)
        _check_finite(arr, _op)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Callable | None = _backward
        self._op = _op
        self._consumed = False

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def flat(self) -> np.ndarray:
        return self.data.reshape(-1)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __float__(self) -> float:
        return self.item()

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self._op})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -------------------------------------------------------------- operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def swapaxes(self, a: int = -1, b: int = -2):
        return swapaxes(self, a, b)

    # --------------------------------------------------------------- backward
    def backward(self) -> None:
        """Accumulate d(self)/d(x) into ``x.grad`` for every recorded ancestor."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        tape = _topological_order(self)
        if any(node._consumed for node in tape):
            raise RuntimeError("graph already consumed by an earlier backward(); rebuild the forward pass")
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(tape):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
        for node in tape:
            if node._backward is not None:
                node._consumed = True
                node._backward = None


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if track:
        return Tensor(data, True, _parents=tuple(parents), _backward=backward, _op=op)
    return Tensor(data, False, _op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------- elementwise
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    _check_finite(out, "div")

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out, (a, b), backward, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)
    _check_finite(out, "sqrt")

    def backward(g):
        with np.errstate(divide="ignore"):
            d = g * 0.5 / out
        _check_finite(d, "sqrt backward")
        return (d,)

    return _make(out, (a,), backward, "sqrt")


def log(a) -> Tensor:
    a = as_tensor(a)
    if (a.data <= 0).any():
        raise NonFiniteError("log of non-positive value")
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    _check_finite(out, "exp")
    return _make(out, (a,), lambda g: (g * out,), "exp")


def clamp_min(a, lo: float) -> Tensor:
    a = as_tensor(a)
    keep = a.data > lo
    return _make(np.where(keep, a.data, lo), (a,), lambda g: (g * keep,), "clamp_min")


# ---------------------------------------------------------------- reductions
def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.data.sum(axis=axes, keepdims=keepdims) / count

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _make(out, (a,), backward, "mean")


def l2_norm(a, axis=-1, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = np.sqrt((a.data * a.data).sum(axis=axes, keepdims=True))

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = g * a.data / out
        _check_finite(d, "l2_norm backward")
        return (d,)

    return _make(out if keepdims else np.squeeze(out, axis=axes), (a,), backward, "l2_norm")


# ------------------------------------------------------------------- shaping
def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape).copy(), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def swapaxes(a, ax1: int = -1, ax2: int = -2) -> Tensor:
    a = as_tensor(a)
    out = np.ascontiguousarray(np.swapaxes(a.data, ax1, ax2))
    return _make(out, (a,), lambda g: (np.swapaxes(g, ax1, ax2),), "swapaxes")


def index(a, key) -> Tensor:
    """Basic or advanced indexing; backward scatters with accumulation."""
    a = as_tensor(a)
    out = np.array(a.data[key], dtype=np.float64)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return (full,)

    return _make(out, (a,), backward, "index")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, ts, backward, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _make(out, ts, backward, "stack")


# ------------------------------------------------------------- linear algebra
def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, with leading-axis broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape} "
                         f"({a.shape[-1]} != {b.shape[-2]})")
    out = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), backward, "matmul")


def conv1d(x, kernel, dilation: int = 1, stride: int = 1) -> Tensor:
    """Zero-padded "same" dilated cross-correlation along time.

    x has shape (..., T, C_in) and kernel (k, C_in, C_out); the output is
    (..., ceil(T / stride), C_out).  Output step i is centred on input step
    i * stride.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if kernel.ndim != 3:
        raise ShapeError(f"conv1d kernel must be (k, C_in, C_out), got {kernel.shape}")
    k, cin, cout = kernel.shape
    if k % 2 == 0:
        raise ConfigError(f"conv1d kernel size must be odd, got {k}")
    if dilation < 1 or stride < 1:
        raise ConfigError("conv1d dilation and stride must be positive")
    if x.ndim < 2 or x.shape[-1] != cin:
        raise ShapeError(f"conv1d input {x.shape} does not end in C_in={cin}")
    T = x.shape[-2]
    lead = x.shape[:-2]
    pad = dilation * (k - 1) // 2
    t_out = (T - 1) // stride + 1
    span = (t_out - 1) * stride + 1
    xp = np.zeros(lead + (T + 2 * pad, cin))
    xp[..., pad:pad + T, :] = x.data
    cols = np.stack([xp[..., j * dilation:j * dilation + span:stride, :] for j in range(k)], axis=-2)
    cols2 = cols.reshape(-1, k * cin)
    w2 = kernel.data.reshape(k * cin, cout)
    out = (cols2 @ w2).reshape(lead + (t_out, cout))

    def backward(g):
        g2 = g.reshape(-1, cout)
        gw = (cols2.T @ g2).reshape(k, cin, cout)
        gcols = (g2 @ w2.T).reshape(lead + (t_out, k, cin))
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[..., j * dilation:j * dilation + span:stride, :] += gcols[..., j, :]
        return gxp[..., pad:pad + T, :], gw

    return _make(out, (x, kernel), backward, "conv1d")


# ----------------------------------------------------------- normalizers
def softmax(logits, temperature: float = 1.0, axis: int = -1) -> Tensor:
    if temperature <= 0:
        raise ConfigError("softmax temperature must be positive")
    z = as_tensor(logits)
    s = z.data / temperature
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)) / temperature,)

    return _make(p, (z,), backward, "softmax")


def _sparsemax_forward(z: np.ndarray) -> np.ndarray:
    n = z.shape[-1]
    zs = -np.sort(-z, axis=-1)
    cs = np.cumsum(zs, axis=-1)
    ks = np.arange(1, n + 1, dtype=np.float64)
    support = (1.0 + ks * zs) > cs
    kz = support.sum(axis=-1, keepdims=True)
    tau = (np.take_along_axis(cs, kz - 1, axis=-1) - 1.0) / kz
    return np.maximum(z - tau, 0.0)


def sparsemax(logits, axis: int = -1) -> Tensor:
    """Euclidean projection of ``logits`` onto the probability simplex along ``axis``."""
    z = as_tensor(logits)
    if z.ndim == 0 or z.shape[axis] == 0:
        raise ShapeError("sparsemax needs at least one logit")
    zm = np.moveaxis(z.data, axis, -1)
    p = np.moveaxis(_sparsemax_forward(zm), -1, axis)
    supp = p > 0

    def backward(g):
        gs = g * supp
        nsup = supp.sum(axis=axis, keepdims=True)
        return (supp * (g - gs.sum(axis=axis, keepdims=True) / nsup),)

    return _make(np.ascontiguousarray(p), (z,), backward, "sparsemax")


# --------------------------------------------------------------- optimizer
def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: dict,
              lr: float, betas=(0.9, 0.999), eps: float = 1e-8) -> dict:
    """One Adam update with bias correction; params are updated in place.

    ``state`` holds ``t``, ``m`` and ``v``; an empty dict starts fresh.  A
    ``None`` gradient counts as zero.
    """
    if len(params) != len(grads):
        raise ShapeError("adam_step: params and grads differ in length")
    b1, b2 = betas
    if not state:
        state.update(t=0, m=[np.zeros_like(p.data) for p in params],
                     v=[np.zeros_like(p.data) for p in params])
    if len(state["m"]) != len(params):
        raise ShapeError("adam_step: optimizer state does not match params")
    state["t"] += 1
    t = state["t"]
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape or m.shape != p.data.shape:
            raise ShapeError(f"adam_step: grad shape {g.shape} != param shape {p.data.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p.data -= lr * mhat / (np.sqrt(vhat) + eps)
    return state


class Adam:
    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state: dict = {}

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state, self.lr, self.betas, self.eps)


# ------------------------------------------------------------ parameter sets
class ParamSet:
    """Named learnable tensors plus the architecture record that shaped them."""

    kind = "params"
    hyper_cls: type = dict

    def __init__(self, hyper, tensors: dict[str, Tensor] | None = None, frozen: bool = False):
        self.hyper = hyper
        self.tensors: dict[str, Tensor] = tensors if tensors is not None else {}
        self.frozen = frozen

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def n_parameters(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    def freeze(self):
        """Stop gradient tracking and make the weights read-only."""
        for t in self.tensors.values():
            t.requires_grad = False
            t.grad = None
            t.data.flags.writeable = False
        self.frozen = True
        return self

    def copy(self, trainable: bool = True):
        return type(self)(self.hyper, {k: Tensor(v.data, trainable) for k, v in self.tensors.items()})

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for name, t in self.tensors.items():
            h.update(name.encode())
            h.update(t.data.tobytes())
        return h.hexdigest()

    def save(self, path) -> None:
        save_checkpoint(path, self.tensors, {"kind": self.kind, "hyper": self.hyper.to_dict()})

    @classmethod
    def load(cls, path, freeze: bool = True):
        meta, arrays = load_checkpoint(path)
        if meta.get("kind") != cls.kind:
            raise ConfigError(f"{path} holds a {meta.get('kind')!r} checkpoint, expected {cls.kind!r}")
        params = cls(cls.hyper_cls(**meta["hyper"]), {k: Tensor(v, True) for k, v in arrays.items()})
        return params.freeze() if freeze else params


# ---------------------------------------------------------------- checkpoint
def save_checkpoint(path, tensors: dict, meta: dict | None = None) -> None:
    """Write a JSON header line followed by little-endian float64 payloads.

    The header holds ``meta`` and a manifest of ``name``, ``shape`` and the
    byte ``offset`` of each tensor relative to the end of the header line.
    """
    manifest = []
    payloads = []
    offset = 0
    for name, t in tensors.items():
        arr = np.asarray(t.data if isinstance(t, Tensor) else t, dtype="<f8")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payloads.append(arr.tobytes(order="C"))
        offset += arr.nbytes
    header = json.dumps({"format": "ndtensor-ckpt/1", "meta": meta or {}, "tensors": manifest},
                        sort_keys=True, separators=(",", ":"))
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8") + b"\n")
        for p in payloads:
            fh.write(p)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ValueError(f"{path}: missing checkpoint header")
    header = json.loads(raw[:nl].decode("utf-8"))
    body = raw[nl + 1:]
    out = {}
    for entry in header["tensors"]:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        if start + 8 * n > len(body):
            raise ValueError(f"{path}: truncated payload for {entry['name']}")
        out[entry["name"]] = np.frombuffer(body, dtype="<f8", count=n, offset=start).reshape(tuple(entry["shape"])).astype(np.float64)
    return header["meta"], out


# ------------------------------------------------------------ gradient check
def numerical_grad(fn: Callable[[], Tensor], param: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``fn()`` w.r.t. ``param.data``."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn().item()
            flat[i] = orig - h
            fm = fn().item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Norm-wise relative error; gradients whose norms fall below ``floor`` are compared absolutely."""
    denom = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / denom)


def gradcheck(fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max over ``params`` of the relative error between tape and finite-difference gradients."""
    for p in params:
        p.grad = None
    loss = fn()
    # finite-difference noise grows with the loss value, so the absolute floor does too
    floor = 1e-6 * max(1.0, abs(loss.item()))
    loss.backward()
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        worst = max(worst, relative_error(analytic, numerical_grad(fn, p, h), floor))
    return worst
