# gdt_libs/tensor_engine.py
"""
Minimal dense tensor library with reverse-mode automatic differentiation.

Every differentiable operation is a `Function` subclass with a numpy `forward` and a `backward`
that maps the gradient of the output to one gradient per input. Operations executed while
gradients are enabled are appended to the active `ComputationTape`; `backward(loss)` replays
that tape in reverse, visiting each node once.

Broadcasting is limited to leading batch dimensions: two operands are compatible when their
shapes are equal or when one shape is a suffix of the other.
"""

import logging
import threading
from contextlib import contextmanager
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .errors import ContractError, DimensionError, InvalidMaskError

logger = logging.getLogger(__name__)

DTYPES = {"float32": np.float32, "float64": np.float64}
LAYER_NORM_EPS = 1e-5

_default_dtype = np.float32
_local = threading.local()


def get_default_dtype():
    return _default_dtype


def set_default_dtype(name: str):
    global _default_dtype
    if name not in DTYPES:
        raise ContractError(f"Unsupported precision '{name}', expected one of {sorted(DTYPES)}")
    _default_dtype = DTYPES[name]


@contextmanager
def precision(name: str):
    previous = _default_dtype
    set_default_dtype(name)
    try:
        yield
    finally:
        set_default_dtype(np.dtype(previous).name)


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad():
    previous = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


class Tensor:

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        if isinstance(dtype, str):
            dtype = DTYPES[dtype]
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = _default_dtype
        # np.require keeps 0-d arrays 0-d
        self.data = np.require(np.asarray(data, dtype=dtype), requirements="C")
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._node: Optional["Node"] = None

    @property
    def shape(self) -> Tuple[int, ...]:
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
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def backward(self, retain_graph: bool = False):
        backward(self, retain_graph=retain_graph)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"

    def __len__(self):
        return self.shape[0]

    def __add__(self, other):
        return Add.apply(self, _lift(other, self))

    def __radd__(self, other):
        return Add.apply(_lift(other, self), self)

    def __sub__(self, other):
        return Sub.apply(self, _lift(other, self))

    def __rsub__(self, other):
        return Sub.apply(_lift(other, self), self)

    def __mul__(self, other):
        return Mul.apply(self, _lift(other, self))

    def __rmul__(self, other):
        return Mul.apply(_lift(other, self), self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("Division is only supported by Python or numpy scalars")
        return Mul.apply(self, _lift(1.0 / other, self))

    def __neg__(self):
        return Mul.apply(self, _lift(-1.0, self))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


class Node:
    __slots__ = ("fn", "inputs", "output", "tape", "index")

    def __init__(self, fn, inputs, output, tape, index):
        self.fn = fn
        self.inputs = inputs
        self.output = output
        self.tape = tape
        self.index = index


class ComputationTape:
    """
    Topologically ordered record of the operations executed while the tape is active.

    Nodes are appended in execution order, so every node comes after the nodes producing its
    inputs. A tape belongs to one thread; use one tape per worker.
    """

    def __init__(self):
        self.nodes: List[Node] = []

    def record(self, fn: "Function", inputs, output: Tensor) -> Node:
        node = Node(fn, inputs, output, self, len(self.nodes))
        self.nodes.append(node)
        return node

    def clear(self):
        for node in self.nodes:
            node.fn.saved = ()
            node.output._node = None
            node.inputs = ()
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False


def _tape_stack() -> List[ComputationTape]:
    if not hasattr(_local, "tapes"):
        _local.tapes = [ComputationTape()]
    return _local.tapes


def current_tape() -> ComputationTape:
    return _tape_stack()[-1]


class Function:

    def __init__(self):
        self.saved = ()

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs) -> Tensor:
        fn = cls()
        out_data = fn.forward(*(t.data for t in inputs), **kwargs)
        requires_grad = is_grad_enabled() and any(t.requires_grad for t in inputs)
        out = Tensor(out_data, requires_grad=requires_grad, dtype=out_data.dtype)
        if requires_grad:
            out._node = current_tape().record(fn, inputs, out)
        else:
            fn.saved = ()
        return out


def _check_suffix(a_shape, b_shape, op: str):
    if a_shape == b_shape:
        return
    short, long = (a_shape, b_shape) if len(a_shape) < len(b_shape) else (b_shape, a_shape)
    if len(short) == len(long) or tuple(long[len(long) - len(short):]) != tuple(short):
        raise DimensionError(
            f"{op}: shapes {tuple(a_shape)} and {tuple(b_shape)} are incompatible "
            "(only leading batch dimensions broadcast)"
        )


def _reduce_to(grad: np.ndarray, shape) -> np.ndarray:
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = np.asarray(grad.sum(axis=tuple(range(extra))))
    return grad


class Add(Function):
    def forward(self, a, b):
        _check_suffix(a.shape, b.shape, "add")
        self.saved = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        a_shape, b_shape = self.saved
        return _reduce_to(grad, a_shape), _reduce_to(grad, b_shape)


class Sub(Function):
    def forward(self, a, b):
        _check_suffix(a.shape, b.shape, "sub")
        self.saved = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        a_shape, b_shape = self.saved
        return _reduce_to(grad, a_shape), -_reduce_to(grad, b_shape)


class Mul(Function):
    def forward(self, a, b):
        _check_suffix(a.shape, b.shape, "mul")
        self.saved = (a, b)
        return a * b

    def backward(self, grad):
        a, b = self.saved
        return _reduce_to(grad * b, a.shape), _reduce_to(grad * a, b.shape)


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
        _check_suffix(a.shape[:-2], b.shape[:-2], "matmul batch")
        self.saved = (a, b)
        return np.matmul(a, b)

    def backward(self, grad):
        a, b = self.saved
        grad_a = np.matmul(grad, np.swapaxes(b, -1, -2))
        grad_b = np.matmul(np.swapaxes(a, -1, -2), grad)
        return _reduce_to(grad_a, a.shape), _reduce_to(grad_b, b.shape)


class Sum(Function):
    def forward(self, a, axis=None, keepdims=False):
        self.saved = (a.shape, axis, keepdims)
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad):
        shape, axis, keepdims = self.saved
        if axis is not None and not keepdims:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            axes = tuple(ax % len(shape) for ax in axes)
            for ax in sorted(axes):
                grad = np.expand_dims(grad, ax)
        return (np.broadcast_to(grad, shape).copy(),)


class Reshape(Function):
    def forward(self, a, shape=()):
        self.saved = (a.shape,)
        return a.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.saved[0]),)


class Transpose(Function):
    def forward(self, a, axes=None):
        axes = tuple(reversed(range(a.ndim))) if not axes else tuple(axes)
        self.saved = (axes,)
        return np.ascontiguousarray(np.transpose(a, axes))

    def backward(self, grad):
        inverse = tuple(np.argsort(self.saved[0]))
        return (np.transpose(grad, inverse),)


class Concat(Function):
    def forward(self, *arrays, axis=0):
        first = arrays[0]
        ax = axis % first.ndim
        for arr in arrays[1:]:
            if arr.ndim != first.ndim or any(
                arr.shape[d] != first.shape[d] for d in range(first.ndim) if d != ax
            ):
                shapes = [tuple(x.shape) for x in arrays]
                raise DimensionError(f"concat: incompatible shapes {shapes} on axis {axis}")
        self.saved = (ax, [arr.shape[ax] for arr in arrays])
        return np.concatenate(arrays, axis=ax)

    def backward(self, grad):
        ax, sizes = self.saved
        bounds = np.cumsum(sizes)[:-1]
        return tuple(np.split(grad, bounds, axis=ax))


class Slice(Function):
    def forward(self, a, axis=0, start=0, stop=None):
        index = [slice(None)] * a.ndim
        index[axis] = slice(start, stop)
        self.saved = (a.shape, tuple(index))
        return a[tuple(index)].copy()

    def backward(self, grad):
        shape, index = self.saved
        full = np.zeros(shape, dtype=grad.dtype)
        full[index] = grad
        return (full,)


class MaskedSoftmax(Function):
    def forward(self, logits, mask=None):
        if mask is not None:
            if mask.shape != logits.shape[-2:]:
                raise DimensionError(
                    f"masked_softmax: mask shape {mask.shape} does not match logits {logits.shape}"
                )
            if not mask.any(axis=-1).all():
                raise InvalidMaskError("attention mask has a fully masked row")
            logits = np.where(mask, logits, -np.inf)
        shifted = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        probs = e / e.sum(axis=-1, keepdims=True)
        self.saved = (probs,)
        return probs

    def backward(self, grad):
        (probs,) = self.saved
        return (probs * (grad - (grad * probs).sum(axis=-1, keepdims=True)),)


class LayerNorm(Function):
    def forward(self, x, *affine, eps=LAYER_NORM_EPS):
        if x.shape[-1] <= 1:
            raise ContractError(f"layer_norm needs a feature dimension > 1, got shape {x.shape}")
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x - mu) * inv
        out = xhat
        gain = None
        if affine:
            gain, bias = affine
            out = xhat * gain + bias
        self.saved = (xhat, inv, gain)
        return out

    def backward(self, grad):
        xhat, inv, gain = self.saved
        gxhat = grad * gain if gain is not None else grad
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        if gain is None:
            return (gx,)
        lead = tuple(range(grad.ndim - 1))
        return gx, (grad * xhat).sum(axis=lead), grad.sum(axis=lead)


_GELU_C = np.sqrt(2.0 / np.pi)


class GELU(Function):
    def forward(self, x):
        u = _GELU_C * (x + 0.044715 * x ** 3)
        th = np.tanh(u)
        self.saved = (x, th)
        return 0.5 * x * (1.0 + th)

    def backward(self, grad):
        x, th = self.saved
        du = _GELU_C * (1.0 + 3.0 * 0.044715 * x ** 2)
        return (grad * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th ** 2) * du),)


class SiLU(Function):
    def forward(self, x):
        s = expit(x)
        self.saved = (x, s)
        return x * s

    def backward(self, grad):
        x, s = self.saved
        return (grad * s * (1.0 + x * (1.0 - s)),)


class Embedding(Function):
    def forward(self, table, ids=None):
        self.saved = (table.shape, ids)
        return table[ids]

    def backward(self, grad):
        shape, ids = self.saved
        full = np.zeros(shape, dtype=grad.dtype)
        np.add.at(full, ids, grad)
        return (full,)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(a, b)


def masked_softmax(logits: Tensor, mask: Optional[np.ndarray]) -> Tensor:
    """Softmax over the last axis where `mask[q, k] == False` receives exactly zero probability."""
    if mask is not None:
        mask = getattr(mask, "bits", mask)
        mask = np.asarray(mask, dtype=bool)
    return MaskedSoftmax.apply(logits, mask=mask)


def softmax(logits: Tensor) -> Tensor:
    return MaskedSoftmax.apply(logits, mask=None)


def layer_norm(x: Tensor, gain: Optional[Tensor] = None, bias: Optional[Tensor] = None,
               eps: float = LAYER_NORM_EPS) -> Tensor:
    if (gain is None) != (bias is None):
        raise ContractError("layer_norm takes both gain and bias, or neither")
    if gain is None:
        return LayerNorm.apply(x, eps=eps)
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise DimensionError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match features of {x.shape}"
        )
    return LayerNorm.apply(x, gain, bias, eps=eps)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    if len(tensors) == 1:
        return tensors[0]
    return Concat.apply(*tensors, axis=axis)


def split(x: Tensor, sizes: Sequence[int], axis: int = 0) -> List[Tensor]:
    if sum(sizes) != x.shape[axis]:
        raise DimensionError(f"split: sizes {list(sizes)} do not add up to axis length {x.shape[axis]}")
    if len(sizes) == 1:
        return [x]
    parts, start = [], 0
    for size in sizes:
        parts.append(Slice.apply(x, axis=axis, start=start, stop=start + size))
        start += size
    return parts


def gelu(x: Tensor) -> Tensor:
    return GELU.apply(x)


nonlinearity = gelu


def silu(x: Tensor) -> Tensor:
    return SiLU.apply(x)


def reshape(x: Tensor, shape) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def transpose(x: Tensor, axes=None) -> Tensor:
    return Transpose.apply(x, axes=axes)


def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / count)


def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(f"token id out of range for vocabulary of {table.shape[0]}")
    return Embedding.apply(table, ids=ids)


def mse(pred: Tensor, target) -> Tensor:
    diff = pred - _lift(target, pred)
    return mean(diff * diff)


def backward(loss: Tensor, retain_graph: bool = False):
    """
    Accumulate d(loss)/d(leaf) into `.grad` of every requires_grad leaf reachable from loss.

    A loss recorded on the thread's default tape frees that tape afterwards unless
    `retain_graph` is set. Scoped tapes are left to their owner.
    """
    if loss.ndim != 0:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    seed = np.ones_like(loss.data)
    if loss._node is None:
        if not loss.requires_grad:
            raise ContractError("loss is not connected to a computation tape")
        loss.grad = seed if loss.grad is None else loss.grad + seed
        return

    node = loss._node
    grads = {id(loss): seed}
    for current in reversed(node.tape.nodes[: node.index + 1]):
        grad = grads.pop(id(current.output), None)
        if grad is None:
            continue
        input_grads = current.fn.backward(grad)
        for tensor, g in zip(current.inputs, input_grads):
            if g is None or not tensor.requires_grad:
                continue
            if tensor._node is None:
                tensor.grad = g.astype(tensor.data.dtype, copy=True) if tensor.grad is None else tensor.grad + g
            else:
                key = id(tensor)
                grads[key] = grads[key] + g if key in grads else g
    if not retain_graph and node.tape is _tape_stack()[0]:
        node.tape.clear()


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = 1e-5,
              max_entries: Optional[int] = None,
              rng: Optional[np.random.Generator] = None) -> List[float]:
    """
    Compare analytic gradients with central finite differences.

    Returns one relative error per input tensor: max |analytic - numeric| divided by the
    larger of the two gradients' max magnitudes. `max_entries` samples that many coordinates
    per tensor instead of checking all of them.
    """
    if any(t.data.dtype != np.float64 for t in inputs):
        logger.warning("gradcheck on non-float64 inputs; finite differences will be unreliable")
    rng = rng or np.random.default_rng(0)
    for t in inputs:
        t.zero_grad()
    with ComputationTape() as tape:
        loss = fn(*inputs)
        backward(loss)
    tape.clear()

    errors = []
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat_count = t.data.size
        if max_entries is not None and flat_count > max_entries:
            picks = rng.choice(flat_count, size=max_entries, replace=False)
        else:
            picks = np.arange(flat_count)
        flat = t.data.reshape(-1)
        numeric = np.empty(len(picks))
        with no_grad():
            for k, pos in enumerate(picks):
                orig = flat[pos]
                flat[pos] = orig + h
                plus = fn(*inputs).item()
                flat[pos] = orig - h
                minus = fn(*inputs).item()
                flat[pos] = orig
                numeric[k] = (plus - minus) / (2.0 * h)
        chosen = analytic.reshape(-1)[picks]
        scale = max(np.abs(chosen).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
        errors.append(float(np.abs(chosen - numeric).max(initial=0.0) / scale))
    return errors
