"""Small dense-tensor engine with reverse-mode automatic differentiation.

Everything is float64 numpy underneath. Ops build a graph of closures while
grad mode is on; ``Tensor.backward`` walks it in reverse topological order.
Batched inputs are handled by broadcasting (``matmul`` follows
``numpy.matmul`` semantics), which is what the transformer layers rely on.
"""

from __future__ import annotations

import contextlib
import ctypes
import json
import math
import sys
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

DTYPE = np.float64


def _tune_allocator() -> None:
    # Activations are a few hundred KB each; glibc would mmap/munmap every one of
    # them and the page faults cost more than the arithmetic. Keep them on the heap.
    if not sys.platform.startswith("linux"):
        return
    try:
        libc = ctypes.CDLL("libc.so.6")
    except OSError:
        return
    libc.mallopt(-3, 1 << 30)   # M_MMAP_THRESHOLD
    libc.mallopt(-1, 1 << 31)   # M_TRIM_THRESHOLD
    libc.mallopt(-2, 1 << 28)   # M_TOP_PAD


_tune_allocator()

_GRAD_ENABLED = True
_CHECK_FINITE = True


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf from its inputs."""


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def finite_checks(enabled: bool) -> Iterator[None]:
    """Toggle the NaN/Inf guard (benchmarks switch it off)."""
    global _CHECK_FINITE
    prev = _CHECK_FINITE
    _CHECK_FINITE = enabled
    try:
        yield
    finally:
        _CHECK_FINITE = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), op: str = ""):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = op

    # -- basic properties ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, op={self.op!r})"

    # -- autograd -----------------------------------------------------------
    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() without a seed gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=DTYPE)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in node._backward(g):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar -----------------------------------------------------
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)


class Parameter(Tensor):
    """A named leaf tensor that always requires grad."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(out: np.ndarray, parents: tuple, backward, op: str) -> Tensor:
    if _CHECK_FINITE and not np.isfinite(out).all():
        raise NonFiniteError(f"non-finite values produced by {op}")
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    t = Tensor(out, requires_grad=needs, _parents=parents if needs else (), op=op)
    if needs:
        t._backward = backward
    return t


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data, (a, b),
        lambda g: ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape))),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data - b.data, (a, b),
        lambda g: ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape))),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data, (a, b),
        lambda g: (
            (a, _unbroadcast(g * b.data, a.shape) if a.requires_grad else None),
            (b, _unbroadcast(g * a.data, b.shape) if b.requires_grad else None),
        ),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(
        out, (a, b),
        lambda g: (
            (a, _unbroadcast(g / b.data, a.shape) if a.requires_grad else None),
            (b, _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None),
        ),
        "div",
    )


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: ((x, g * out),), "exp")


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: ((x, g / x.data),), "log")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: ((x, g * mask),), "relu")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: ((x, g * (1.0 - out * out)),), "tanh")


def square(x: Tensor) -> Tensor:
    return _make(x.data * x.data, (x,), lambda g: ((x, 2.0 * g * x.data),), "square")


# -- reductions and shape ---------------------------------------------------

def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((x, np.broadcast_to(g, x.shape)),)

    return _make(out, (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return tsum(x, axis, keepdims) * (1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: ((x, g.reshape(x.shape)),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    out = np.transpose(x.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _make(out, (x,), lambda g: ((x, np.transpose(g, inv)),), "transpose")


def getitem(x: Tensor, idx) -> Tensor:
    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return ((x, full),)

    return _make(x.data[idx], (x,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(zip(tensors, np.split(g, splits, axis=axis)))

    return _make(out, tuple(tensors), backward, "concat")


# -- linear algebra ---------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError as exc:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}") from exc

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ((a, ga), (b, gb))

    return _make(out, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with weight stored as (in, out)."""
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear shape mismatch: input {x.shape}, weight {weight.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data
    if bias is not None:
        out = out + bias.data
    out = out.reshape(*lead, weight.shape[1])
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, weight.shape[1])
        res = [
            (x, (g2 @ weight.data.T).reshape(x.shape) if x.requires_grad else None),
            (weight, x2.T @ g2 if weight.requires_grad else None),
        ]
        if bias is not None:
            res.append((bias, g2.sum(axis=0)))
        return res

    return _make(out, parents, backward, "linear")


# -- normalisation / probability --------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return ((x, out * (g - (g * out).sum(axis=axis, keepdims=True))),)

    return _make(out, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def backward(g):
        return ((x, g - np.exp(out) * g.sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), backward, "log_softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if d < 1:
        raise DimensionError("layer_norm needs a non-empty last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    # eps floors the variance so well-spread rows normalise exactly
    floored = var < eps
    inv = 1.0 / np.sqrt(np.maximum(var, eps))
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        res = []
        if x.requires_grad:
            gx = g * gain.data
            proj = np.where(floored, 0.0, (gx * xhat).mean(axis=-1, keepdims=True))
            gx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * proj)
            res.append((x, gx))
        axes = tuple(range(g.ndim - 1))
        res.append((gain, (g * xhat).sum(axis=axes)))
        res.append((bias, g.sum(axis=axes)))
        return res

    return _make(out, (x, gain, bias), backward, "layer_norm")


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return ((table, full),)

    return _make(table.data[ids], (table,), backward, "embedding")


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make(x.data * keep, (x,), lambda g: ((x, g * keep),), "dropout")


def gather_last(x: Tensor, ids: np.ndarray) -> Tensor:
    """``x[..., ids[...]]``: pick one entry of the last axis per leading index."""
    ids = np.asarray(ids, dtype=np.int64)
    picked = np.take_along_axis(x.data, ids[..., None], axis=-1)[..., 0]

    def backward(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, ids[..., None], g[..., None], axis=-1)
        return ((x, full),)

    return _make(picked, (x,), backward, "gather_last")


# -- parameters, init, checkpoints ------------------------------------------

class Module:
    """Parameter container; attributes holding Parameters/Modules are registered by name."""

    training: bool = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            full = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield full, val
            elif isinstance(val, Module):
                yield from val.named_parameters(full + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{full}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, p in self.named_parameters():
            if name in out:
                raise ValueError(f"duplicate parameter name {name!r}")
            p.name = name
            out[name] = p.data.copy()
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"checkpoint mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=DTYPE)
            if arr.shape != p.shape:
                raise DimensionError(f"{name}: checkpoint shape {arr.shape} != parameter shape {p.shape}")
            p.data = arr.copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True) -> "Module":
        for m in self._modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def _modules(self) -> Iterator["Module"]:
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val._modules()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item._modules()


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def normal_init(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


def save_checkpoint(path: str | Path, state: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write parameters (name -> array) plus a JSON metadata blob to an ``.npz`` file."""
    arrays = {f"param:{k}": np.asarray(v, dtype=DTYPE) for k, v in state.items()}
    arrays["__meta__"] = np.array(json.dumps(meta or {}, sort_keys=True))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as npz:
        state = {k[len("param:"):]: npz[k].copy() for k in npz.files if k.startswith("param:")}
        meta = json.loads(str(npz["__meta__"])) if "__meta__" in npz.files else {}
    return state, meta


# -- gradient checking ------------------------------------------------------

def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    h: float = 1e-5,
    max_checks_per_param: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-4,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` is re-evaluated with each probed component nudged by ``±h``; it must
    return a single-element tensor. ``max_checks_per_param`` subsamples
    components of large tensors. Gradients smaller than ``floor`` are compared
    against ``floor`` instead of their own size: central differences carry
    roughly ``1e-16 * |f| / h`` of rounding noise, which would otherwise
    dominate the relative error of near-zero components.
    """
    params = list(params)
    for p in params:
        p.grad = None
    out = f()
    if out.data.size != 1:
        raise ValueError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    with no_grad():
        for p, ga in zip(params, analytic):
            flat = p.data.reshape(-1)
            idxs = np.arange(flat.size)
            if max_checks_per_param is not None and flat.size > max_checks_per_param:
                idxs = rng.choice(flat.size, size=max_checks_per_param, replace=False)
            for i in idxs:
                orig = flat[i]
                flat[i] = orig + h
                fp = float(f().data)
                flat[i] = orig - h
                fm = float(f().data)
                flat[i] = orig
                num = (fp - fm) / (2.0 * h)
                a = ga.reshape(-1)[i]
                err = abs(a - num) / max(abs(a), abs(num), floor)
                worst = max(worst, err)
    return worst
