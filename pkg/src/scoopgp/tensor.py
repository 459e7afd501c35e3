"""Dense float64 tensors with a reverse-mode gradient tape.

Sized for desk-scale GP and MLP training: 2-D matmul, elementwise ops
with scalar broadcast, reductions, transpose/reshape plumbing, and an
Adam optimizer. Everything is float64; there is no GPU path, no
convolution, and no broadcasting beyond scalar-with-tensor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested op."""


class DomainError(ValueError):
    """Operand values are outside the op's domain (log/div)."""


class TapeError(RuntimeError):
    """Tape misuse: nested tapes or a second backward pass."""


class OptimizerError(RuntimeError):
    """Optimizer received a non-finite gradient."""


class Tensor:
    """A dense n-d float64 value, optionally tracked by the active Tape.

    `grad` is populated by Tape.backward() for every tensor on the tape
    that has requires_grad set. Tensors without a tape are plain values
    and safe to share read-only.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_on_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._on_tape = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar; python scalars lift to 0-d tensors (scalar broadcast)
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def sum(self, axis: int | None = None) -> "Tensor":
        return reduce("sum", self, axis)

    def mean(self, axis: int | None = None) -> "Tensor":
        return reduce("mean", self, axis)

    def transpose(self) -> "Tensor":
        return transpose(self)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of differentiable ops for one forward pass.

    Ops append records in execution order, so the list is topologically
    sorted by construction. backward() may run once per tape.
    """

    _active: "Tape | None" = None

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], object]] = []
        self._spent = False

    def __enter__(self) -> "Tape":
        if Tape._active is not None:
            raise TapeError("tapes do not nest; close the active tape first")
        Tape._active = self
        return self

    def __exit__(self, *exc) -> None:
        Tape._active = None

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)=1 and accumulate grads along the reversed record list."""
        if self._spent:
            raise TapeError("backward() already ran on this tape; record a new forward pass")
        self._spent = True
        if loss.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
        for out, inputs, _ in self._records:
            out.grad = None
            for t in inputs:
                t.grad = None
        loss.grad = np.ones_like(loss.data)
        for out, inputs, backward_fn in reversed(self._records):
            g = out.grad
            if g is None:
                continue
            for t, dt in zip(inputs, backward_fn(g)):
                if dt is None:
                    continue
                t.grad = dt if t.grad is None else t.grad + dt


def _track(out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    tape = Tape._active
    if tape is not None and any(t.requires_grad or t._on_tape for t in inputs):
        out._on_tape = True
        tape._records.append((out, inputs, backward_fn))
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    ad, bd = a.data, b.data

    def backward_fn(g):
        return g @ bd.T, ad.T @ g

    return _track(out, (a, b), backward_fn)


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} need to match (or one be scalar)")


def _unbroadcast(g: np.ndarray, t: Tensor) -> np.ndarray:
    if g.shape == t.shape:
        return g
    return np.asarray(g.sum(), dtype=np.float64).reshape(t.shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_binary(a, b, "add")
    out = Tensor(a.data + b.data)

    def backward_fn(g):
        return _unbroadcast(g, a), _unbroadcast(g, b)

    return _track(out, (a, b), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_binary(a, b, "sub")
    out = Tensor(a.data - b.data)

    def backward_fn(g):
        return _unbroadcast(g, a), _unbroadcast(-g, b)

    return _track(out, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_binary(a, b, "mul")
    out = Tensor(a.data * b.data)
    ad, bd = a.data, b.data

    def backward_fn(g):
        return _unbroadcast(g * bd, a), _unbroadcast(g * ad, b)

    return _track(out, (a, b), backward_fn)


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_binary(a, b, "div")
    if np.any(b.data == 0.0):
        raise DomainError("div: zero divisor")
    out = Tensor(a.data / b.data)
    ad, bd = a.data, b.data

    def backward_fn(g):
        return _unbroadcast(g / bd, a), _unbroadcast(-g * ad / (bd * bd), b)

    return _track(out, (a, b), backward_fn)


def exp(a: Tensor) -> Tensor:
    a = _lift(a)
    out = Tensor(np.exp(a.data))
    od = out.data

    def backward_fn(g):
        return (g * od,)

    return _track(out, (a,), backward_fn)


def log(a: Tensor) -> Tensor:
    a = _lift(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log: nonpositive operand")
    out = Tensor(np.log(a.data))
    ad = a.data

    def backward_fn(g):
        return (g / ad,)

    return _track(out, (a,), backward_fn)


def relu(a: Tensor) -> Tensor:
    a = _lift(a)
    mask = a.data > 0.0
    out = Tensor(np.where(mask, a.data, 0.0))

    def backward_fn(g):
        return (g * mask,)

    return _track(out, (a,), backward_fn)


def square(a: Tensor) -> Tensor:
    a = _lift(a)
    out = Tensor(a.data * a.data)
    ad = a.data

    def backward_fn(g):
        return (2.0 * ad * g,)

    return _track(out, (a,), backward_fn)


def negate(a: Tensor) -> Tensor:
    a = _lift(a)
    out = Tensor(-a.data)

    def backward_fn(g):
        return (-g,)

    return _track(out, (a,), backward_fn)


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "exp": exp,
    "log": log,
    "relu": relu,
    "square": square,
    "negate": negate,
}


def elementwise(op: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    """Dispatch an elementwise op by name; binary ops require b."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    if op in ("add", "sub", "mul", "div"):
        if b is None:
            raise ValueError(f"{op} is binary")
        return fn(a, b)
    if b is not None:
        raise ValueError(f"{op} is unary")
    return fn(a)


def reduce(op: str, a: Tensor, axis: int | None = None) -> Tensor:
    """sum or mean over all elements, or along one axis (axis dropped)."""
    a = _lift(a)
    if op not in ("sum", "mean"):
        raise ValueError(f"unknown reduce op {op!r}")
    rank = a.data.ndim
    if axis is not None and not (-rank <= axis < rank):
        raise ShapeError(f"reduce axis {axis} out of range for rank {rank}")
    if op == "sum":
        out = Tensor(a.data.sum(axis=axis))
        count = 1.0
    else:
        out = Tensor(a.data.mean(axis=axis))
        count = a.data.size if axis is None else a.data.shape[axis]
    in_shape = a.shape

    def backward_fn(g):
        if axis is None:
            gb = np.broadcast_to(g, in_shape)
        else:
            gb = np.broadcast_to(np.expand_dims(g, axis), in_shape)
        return (gb / count if count != 1.0 else gb.copy(),)

    return _track(out, (a,), backward_fn)


def transpose(a: Tensor) -> Tensor:
    a = _lift(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a 2-d tensor, got {a.shape}")
    out = Tensor(a.data.T.copy())

    def backward_fn(g):
        return (g.T.copy(),)

    return _track(out, (a,), backward_fn)


def reshape(a: Tensor, shape) -> Tensor:
    a = _lift(a)
    out = Tensor(a.data.reshape(shape).copy())
    in_shape = a.shape

    def backward_fn(g):
        return (g.reshape(in_shape),)

    return _track(out, (a,), backward_fn)


def custom_op(out_data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Record an op whose forward ran outside the op set (e.g. a Cholesky
    solve) but whose input gradients are known analytically."""
    return _track(Tensor(out_data), inputs, backward_fn)


@dataclass
class AdamState:
    """Per-parameter first/second moment accumulators and step counter."""

    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(
    params: list[Tensor],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One Adam update, in place on params' data."""
    if len(params) != len(grads):
        raise OptimizerError(f"{len(params)} params vs {len(grads)} grads")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise OptimizerError("optimizer state does not match the parameter list")
    state.step += 1
    t = state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise OptimizerError(f"non-finite gradient for parameter {p.name or i}")
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        m_hat = state.m[i] / (1.0 - beta1**t)
        v_hat = state.v[i] / (1.0 - beta2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def weights_to_json(weights: dict[str, Tensor]) -> dict:
    """Flat {name -> {shape, data}} serialization of a weight dict."""
    return {
        name: {"shape": list(t.shape), "data": [float(x) for x in t.data.ravel()]}
        for name, t in weights.items()
    }


def weights_from_json(obj: dict, requires_grad: bool = False) -> dict[str, Tensor]:
    out = {}
    for name, entry in obj.items():
        arr = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        out[name] = Tensor(arr, requires_grad=requires_grad, name=name)
    return out
