"""Minimal reverse-mode autodiff over float64 numpy arrays.

Only the handful of operations needed by the multi-layer stand-in models and
the three training losses are provided: affine layers, elementwise
activations, clamped logs, and reductions.  Gradients are accumulated into
leaf tensors by walking the recorded graph in reverse topological order.
"""
from __future__ import annotations

import hashlib
import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

PROB_EPS = 1e-7


class DimensionError(ValueError):
    """Raised when an input does not fit the layer it is fed to."""


class ContractError(ValueError):
    """Raised when an operation is called outside its preconditions."""


class NonFiniteError(FloatingPointError):
    """Raised when a gradient or evaluation produces inf/nan."""


class ChecksumError(IOError):
    """Raised when a binary artifact fails integrity checks."""


class Tensor:
    """Array plus the closure that pushes its gradient to its parents."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")
    # make ndarray <op> Tensor dispatch to the Tensor's reflected operator
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf",
                 parents: Sequence["Tensor"] = ()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = tuple(parents)
        self._backward: Callable[[np.ndarray], None] = _noop

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.data.shape})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, shape is {self.data.shape}")
        return float(self.data.reshape(()))

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


def _noop(_g):
    return None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, op, parents, backward) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, op=op, parents=parents if needs else ())
    if needs:
        out._backward = backward
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _node(a.data + b.data, "add", (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, -g)

    return _node(-a.data, "neg", (a,), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, "mul", (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _node(a.data @ b.data, "matmul", (a, b), backward)


def take(a: Tensor, index) -> Tensor:
    """Basic or integer-array indexing along the leading axes."""
    out = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        _accumulate(a, full)

    return _node(out, "take", (a,), backward)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    def backward(g):
        _accumulate(a, g.reshape(a.shape))

    return _node(a.data.reshape(shape), "reshape", (a,), backward)


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0

    def backward(g):
        _accumulate(a, g * keep)

    return _node(np.where(keep, a.data, 0.0), "relu", (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - out * out))

    return _node(out, "tanh", (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def backward(g):
        _accumulate(a, g * out * (1.0 - out))

    return _node(out, "sigmoid", (a,), backward)


def clamp(a: Tensor, lo: float = PROB_EPS, hi: float = 1.0 - PROB_EPS) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)

    def backward(g):
        _accumulate(a, g * inside)

    return _node(np.clip(a.data, lo, hi), "clamp", (a,), backward)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NonFiniteError("log of non-positive value; clamp probabilities first")

    def backward(g):
        _accumulate(a, g / a.data)

    return _node(np.log(a.data), "log", (a,), backward)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _node(a.data.sum(axis=axis, keepdims=keepdims), "sum", (a,), backward)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis), 1.0 / n)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accumulate(p, g[tuple(sl)])

    return _node(np.concatenate([p.data for p in parts], axis=axis), "concat",
                 tuple(parts), backward)


ACTIVATIONS = {"relu": relu, "tanh": tanh}


# ---------------------------------------------------------------------------
# graph traversal
# ---------------------------------------------------------------------------

def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root``; every input precedes its consumer."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to each of ``params``.

    Parameters not reached from ``loss`` receive an all-zero gradient.
    """
    params = list(params)
    if loss.data.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    for p in params:
        p.grad = None
    order = topological_order(loss)
    for node in order:
        if node is not loss and node._parents:
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node.grad is not None and node._parents:
            node._backward(node.grad)
    grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]
    for node in order:
        if node._parents:
            node.grad = None
    return grads


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

@dataclass
class Layer:
    weight: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray  # (fan_out,)


@dataclass
class Parameters:
    layers: list[Layer]

    def tensors(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend([layer.weight, layer.bias])
        return out

    def copy(self) -> "Parameters":
        return Parameters([Layer(l.weight.copy(), l.bias.copy()) for l in self.layers])

    def checksum(self) -> str:
        h = hashlib.sha256()
        for arr in self.tensors():
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()

    @property
    def size(self) -> int:
        return int(sum(a.size for a in self.tensors()))


def layer_widths(spec) -> list[int]:
    return [spec.input_width, *spec.hidden, spec.output_width]


def init_params(spec, seed: Optional[int] = None) -> Parameters:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(spec.init_seed if seed is None else seed)
    widths = layer_widths(spec)
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        layers.append(Layer(rng.uniform(-bound, bound, size=(fan_in, fan_out)),
                            np.zeros(fan_out)))
    return Parameters(layers)


def as_leaves(params: Parameters) -> list[Tensor]:
    return [Tensor(a, requires_grad=True) for a in params.tensors()]


def forward_graph(spec, leaves: Sequence[Tensor], features) -> Tensor:
    """Per-class sigmoid probabilities as a differentiable node."""
    h = _as_tensor(features)
    act = ACTIVATIONS[spec.activation]
    n_layers = len(leaves) // 2
    for i in range(n_layers):
        w, b = leaves[2 * i], leaves[2 * i + 1]
        if h.shape[-1] != w.shape[0]:
            raise DimensionError(
                f"layer {i} of {spec.name!r} expects width {w.shape[0]}, got {h.shape[-1]}")
        h = matmul(h, w) + b
        h = act(h) if i < n_layers - 1 else sigmoid(h)
    return h


def forward(spec, params: Parameters, features) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != spec.input_width:
        raise DimensionError(
            f"layer 0 of {spec.name!r} expects width {spec.input_width}, "
            f"got shape {features.shape}")
    leaves = [Tensor(a) for a in params.tensors()]
    return forward_graph(spec, leaves, features).data


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Parameters, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        arrays = params.tensors()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays],
                   0, beta1, beta2, eps)


def adam_step(params: Parameters, grads: Sequence[np.ndarray], state: AdamState,
              lr: float) -> None:
    """In-place bias-corrected Adam update of ``params`` and ``state``."""
    arrays = params.tensors()
    if len(grads) != len(arrays):
        raise ContractError(f"expected {len(arrays)} gradients, got {len(grads)}")
    for i, (p, g) in enumerate(zip(arrays, grads)):
        if g.shape != p.shape:
            raise DimensionError(f"gradient {i} has shape {g.shape}, parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in parameter tensor {i}; update rejected")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(arrays, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(fn: Callable[[list[Tensor]], Tensor], point: Sequence[np.ndarray],
               step: float = 1e-5) -> float:
    """Max relative error between ``backward`` and central differences.

    ``fn`` maps a list of leaf tensors to a scalar node; ``point`` gives the
    arrays at which to evaluate.  Error per coordinate is
    ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if step <= 0:
        raise ContractError("step must be positive")
    arrays = [np.array(a, dtype=np.float64, copy=True) for a in point]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(leaves)
    if not np.isfinite(out.data).all():
        raise NonFiniteError("function value is not finite at the check point")
    analytic = backward(out, leaves)

    def value() -> float:
        v = float(fn([Tensor(a) for a in arrays]).data)
        if not math.isfinite(v):
            raise NonFiniteError("non-finite evaluation during finite differences")
        return v

    worst = 0.0
    for a, g in zip(arrays, analytic):
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            hi = value()
            flat[j] = orig - step
            lo = value()
            flat[j] = orig
            numeric = (hi - lo) / (2.0 * step)
            worst = max(worst, abs(gflat[j] - numeric) / max(1.0, abs(numeric)))
    return worst


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"MKCKPT01"


def spec_hash(spec) -> bytes:
    payload = json.dumps(spec.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(payload).digest()


def save_checkpoint(path, spec, params: Parameters) -> None:
    buf = io.BytesIO()
    buf.write(_CKPT_MAGIC)
    buf.write(spec_hash(spec))
    buf.write(struct.pack("<I", len(params.layers)))
    for layer in params.layers:
        for arr in (layer.weight, layer.bias.reshape(1, -1)):
            buf.write(struct.pack("<II", *arr.shape))
            buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    body = buf.getvalue()
    atomic_write(path, body + hashlib.sha256(body).digest())


def load_checkpoint(path, spec=None) -> Parameters:
    raw = Path(path).read_bytes()
    if len(raw) < len(_CKPT_MAGIC) + 32 + 4 + 32:
        raise ChecksumError(f"{path}: truncated checkpoint")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest or not body.startswith(_CKPT_MAGIC):
        raise ChecksumError(f"{path}: checksum mismatch")
    pos = len(_CKPT_MAGIC)
    stored_hash = body[pos:pos + 32]
    pos += 32
    if spec is not None and stored_hash != spec_hash(spec):
        raise ContractError(f"{path}: checkpoint was written for a different model spec")
    (count,) = struct.unpack_from("<I", body, pos)
    pos += 4
    arrays = []
    for _ in range(2 * count):
        rows, cols = struct.unpack_from("<II", body, pos)
        pos += 8
        n = rows * cols
        arrays.append(np.frombuffer(body, dtype="<f8", count=n, offset=pos)
                      .reshape(rows, cols).astype(np.float64))
        pos += 8 * n
    layers = [Layer(arrays[2 * i], arrays[2 * i + 1].reshape(-1)) for i in range(count)]
    return Parameters(layers)


def atomic_write(path, data: bytes) -> None:
    """Write via a temporary sibling then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
