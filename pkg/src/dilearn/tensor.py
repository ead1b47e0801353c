"""Dense tensors with reverse-mode automatic differentiation.

Arrays are numpy, row-major, NCHW for images. Training runs in float32;
``precision("f64")`` switches newly created tensors to float64, which is what
``gradient_check`` expects.

Every op validates its output: a NaN or Inf raises :class:`NumericError`
instead of propagating into later steps.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GraphError, NumericError, ShapeError

_DTYPES = {"f32": np.float32, "f64": np.float64}
_state = {"dtype": np.float32, "grad_enabled": True}


def get_dtype() -> type:
    return _state["dtype"]


def set_precision(name: str) -> None:
    if name not in _DTYPES:
        raise ValueError(f"unknown precision {name!r}, expected one of {sorted(_DTYPES)}")
    _state["dtype"] = _DTYPES[name]


@contextlib.contextmanager
def precision(name: str) -> Iterator[None]:
    previous = _state["dtype"]
    set_precision(name)
    try:
        yield
    finally:
        _state["dtype"] = previous


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording a graph (evaluation, statistics passes)."""
    previous = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = previous


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"{op} produced non-finite values")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype or _state["dtype"], order="C")
        _check_finite(arr, "tensor creation")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"
        self._consumed = False

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        out = cls.__new__(cls)
        out.data = arr
        out.grad = None
        out.requires_grad = requires_grad
        out._parents = ()
        out._backward = None
        out._op = "leaf"
        out._consumed = False
        return out

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
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag}, op={self._op})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -other if isinstance(other, Tensor) else -float(other))

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def mean(self) -> "Tensor":
        return mul(tensor_sum(self), 1.0 / self.size)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def backward(self) -> None:
        backward(self)


def record(data: np.ndarray, parents: Sequence[Tensor], grad_fn: Callable, op: str) -> Tensor:
    """Wrap an op result and attach its backward closure.

    ``grad_fn(g)`` receives the upstream gradient and returns one array (or
    None) per parent, in order.
    """
    _check_finite(data, op)
    needs = _state["grad_enabled"] and any(p.requires_grad for p in parents)
    out = Tensor._wrap(data, needs)
    out._op = op
    if needs:
        out._parents = tuple(parents)
        out._backward = grad_fn
    return out


def _topological(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from a scalar loss.

    Leaf gradients accumulate across calls. The graph is released afterwards,
    so a second call on the same loss raises.
    """
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("graph already released by a previous backward; run a new forward pass")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any tensor with requires_grad=True")

    order = _topological(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._consumed:
            raise GraphError(f"tensor from op {node._op!r} belongs to a released graph")
        if node._backward is None:
            if g is not None:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            _check_finite(pg, f"backward of {node._op}")
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg

    for node in order:
        if node._backward is not None:
            node._parents = ()
            node._backward = None
            node._consumed = True


# ---------------------------------------------------------------- elementwise


def _as_operand(a: Tensor, b, op: str):
    if isinstance(b, Tensor):
        if b.shape != a.shape:
            raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (no broadcasting)")
        return b
    return float(b)


def add(a: Tensor, b) -> Tensor:
    b = _as_operand(a, b, "add")
    if isinstance(b, Tensor):
        return record(a.data + b.data, (a, b), lambda g: (g, g), "add")
    return record(a.data + a.dtype.type(b), (a,), lambda g: (g,), "add")


def mul(a: Tensor, b) -> Tensor:
    b = _as_operand(a, b, "mul")
    if isinstance(b, Tensor):
        return record(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")
    c = a.dtype.type(b)
    return record(a.data * c, (a,), lambda g: (g * c,), "mul")


def tensor_sum(a: Tensor) -> Tensor:
    return record(
        np.asarray(a.data.sum(), dtype=a.dtype),
        (a,),
        lambda g: (np.full(a.shape, g, dtype=a.dtype),),
        "sum",
    )


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


# ----------------------------------------------------------------- conv stack


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of an NCHW input with an OIKhKw kernel (no bias)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input and OIKhKw kernel, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, i, kh, kw = weight.shape
    if c != i:
        raise ShapeError(f"conv2d: input has {c} channels but kernel expects {i}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: stride must be >= 1 and padding >= 0, got {stride}, {padding}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} does not fit input {h}x{w} with padding {padding}")

    p, s = padding, stride
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    kernel = weight.data
    out = np.tensordot(win, kernel, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)

    def grad_fn(g):
        gx = gw = None
        if weight.requires_grad:
            gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for a in range(kh):
                for b in range(kw):
                    contrib = np.tensordot(g, kernel[:, :, a, b], axes=([1], [0]))
                    gxp[:, :, a : a + s * ho : s, b : b + s * wo : s] += contrib.transpose(0, 3, 1, 2)
            gx = gxp[:, :, p : p + h, p : p + w] if p else gxp
        return gx, gw

    return record(np.ascontiguousarray(out), (x, weight), grad_fn, "conv2d")


def avg_pool2d(x: Tensor, k: int = 2) -> Tensor:
    """Non-overlapping k x k average pooling; trailing rows/columns are dropped."""
    n, c, h, w = x.shape
    ho, wo = h // k, w // k
    if ho < 1 or wo < 1:
        raise ShapeError(f"avg_pool2d: {h}x{w} input is smaller than the {k}x{k} window")
    pooled = x.data[:, :, : ho * k, : wo * k].reshape(n, c, ho, k, wo, k).mean(axis=(3, 5))

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        gx[:, :, : ho * k, : wo * k] = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
        return (gx,)

    return record(pooled.astype(x.dtype), (x,), grad_fn, "avg_pool2d")


def global_pool(x: Tensor) -> Tensor:
    """Per-channel mean over H*W plus max over H*W, NCHW -> NC."""
    if x.ndim != 4:
        raise ShapeError(f"global_pool expects NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    if h * w == 0:
        raise ShapeError("global_pool: empty spatial extent")
    flat = x.data.reshape(n, c, h * w)
    arg = flat.argmax(axis=2)
    out = flat.mean(axis=2) + np.take_along_axis(flat, arg[..., None], axis=2)[..., 0]

    def grad_fn(g):
        gflat = np.repeat((g / (h * w))[..., None], h * w, axis=2)
        np.put_along_axis(gflat, arg[..., None], np.take_along_axis(gflat, arg[..., None], 2) + g[..., None], 2)
        return (gflat.reshape(x.shape),)

    return record(out.astype(x.dtype), (x,), grad_fn, "global_pool")


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ weight.T + bias for x of shape (N, in) and weight (out, in)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias shape {bias.shape} does not match {weight.shape[0]} outputs")

    def grad_fn(g):
        return (
            g @ weight.data if x.requires_grad else None,
            g.T @ x.data if weight.requires_grad else None,
            g.sum(axis=0) if bias.requires_grad else None,
        )

    return record(x.data @ weight.data.T + bias.data, (x, weight, bias), grad_fn, "linear")


def gather_columns(x: Tensor, index: Sequence[int]) -> Tensor:
    """Select columns of an (N, C) tensor; index -1 yields a zero column."""
    idx = np.asarray(index, dtype=np.int64)
    if x.ndim != 2 or (idx >= x.shape[1]).any() or (idx < -1).any():
        raise ShapeError(f"gather_columns: index {idx.tolist()} invalid for shape {x.shape}")
    valid = idx >= 0
    out = np.zeros((x.shape[0], idx.size), dtype=x.dtype)
    out[:, valid] = x.data[:, idx[valid]]

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx.T, idx[valid], g[:, valid].T)
        return (gx,)

    return record(out, (x,), grad_fn, "gather_columns")


# ------------------------------------------------------------- gradient check


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    n_checked: int
    n_excluded: int
    failures: list = field(default_factory=list)

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status}: max rel err {self.max_rel_error:.3e} over {self.n_checked} coords"
            f" ({self.n_excluded} excluded, {len(self.failures)} failures)"
        )


def gradient_check(
    fn: Callable[..., Tensor],
    inputs: Tensor | Sequence[Tensor],
    epsilon: float = 1e-6,
    tol: float = 1e-4,
    exclude: np.ndarray | Sequence[np.ndarray | None] | None = None,
) -> GradCheckReport:
    """Compare autograd against central finite differences.

    ``fn(*inputs)`` must return a scalar tensor. Per coordinate the error is
    ``|ad - fd| / max(1, |ad|, |fd|)``. ``exclude`` masks coordinates that sit
    on a non-differentiable point (e.g. ReLU at exactly 0). Inputs must be
    float64.
    """
    inputs = [inputs] if isinstance(inputs, Tensor) else list(inputs)
    if exclude is None or isinstance(exclude, np.ndarray):
        exclude = [exclude] + [None] * (len(inputs) - 1)
    for t in inputs:
        if t.dtype != np.float64:
            raise ValueError("gradient_check needs float64 inputs; build them under precision('f64')")
        t.requires_grad = True
        t.grad = None

    backward(fn(*inputs))
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    worst, checked, skipped, failures = 0.0, 0, 0, []
    with no_grad():
        for k, t in enumerate(inputs):
            flat = t.data.reshape(-1)
            mask = None if exclude[k] is None else np.asarray(exclude[k], dtype=bool).reshape(-1)
            ad = analytic[k].reshape(-1)
            for j in range(flat.size):
                if mask is not None and mask[j]:
                    skipped += 1
                    continue
                orig = flat[j]
                flat[j] = orig + epsilon
                up = fn(*inputs).item()
                flat[j] = orig - epsilon
                down = fn(*inputs).item()
                flat[j] = orig
                fd = (up - down) / (2 * epsilon)
                rel = abs(ad[j] - fd) / max(1.0, abs(ad[j]), abs(fd))
                worst = max(worst, rel)
                checked += 1
                if rel >= tol:
                    failures.append((k, j, float(ad[j]), fd, rel))
    return GradCheckReport(not failures, worst, checked, skipped, failures)
