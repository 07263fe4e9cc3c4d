"""Define-by-run reverse-mode automatic differentiation on dense tensors.

Every operation returns a fresh ``Tensor`` that remembers its parents and
a local backward rule, so the tape is rebuilt on each forward pass.
``backward`` replays the recorded graph once in reverse topological order.
All arithmetic is float64.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from . import kernels


class Tensor:
    """Dense n-d float64 array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # arithmetic sugar; scalars take the cheap constant path
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return scalar_add(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return scalar_add(self, -float(other))

    def __rsub__(self, other):
        return scalar_add(neg(self), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scalar_mul(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not part of the op set")
        return scalar_mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)


def as_tensor(value) -> Tensor:
    """Wrap arrays/scalars as constant tensors; pass tensors through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _accumulate(t: Tensor, grad: np.ndarray) -> None:
    if not t.requires_grad:
        return
    grad = _unbroadcast(np.asarray(grad, dtype=np.float64), t.data.shape)
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += grad


def _node(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


# ---------------------------------------------------------------------------
# elementwise and reduction ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    def bw(g):
        _accumulate(a, g)
        _accumulate(b, g)
    return _node(a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    def bw(g):
        _accumulate(a, g)
        _accumulate(b, -g)
    return _node(a.data - b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    def bw(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)
    return _node(a.data * b.data, (a, b), bw)


def square(a: Tensor) -> Tensor:
    a = as_tensor(a)
    def bw(g):
        _accumulate(a, 2.0 * a.data * g)
    return _node(a.data * a.data, (a,), bw)


def neg(a: Tensor) -> Tensor:
    a = as_tensor(a)
    def bw(g):
        _accumulate(a, -g)
    return _node(-a.data, (a,), bw)


def scalar_mul(a: Tensor, s: float) -> Tensor:
    a = as_tensor(a)
    s = float(s)
    def bw(g):
        _accumulate(a, s * g)
    return _node(a.data * s, (a,), bw)


def scalar_add(a: Tensor, s: float) -> Tensor:
    a = as_tensor(a)
    def bw(g):
        _accumulate(a, g)
    return _node(a.data + float(s), (a,), bw)


def reduce_sum(a: Tensor) -> Tensor:
    a = as_tensor(a)
    def bw(g):
        _accumulate(a, np.broadcast_to(g, a.data.shape))
    return _node(a.data.sum(), (a,), bw)


def reduce_mean(a: Tensor) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    def bw(g):
        _accumulate(a, np.broadcast_to(g / n, a.data.shape))
    return _node(a.data.mean(), (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    def bw(g):
        _accumulate(a, g.reshape(a.data.shape))
    return _node(a.data.reshape(shape), (a,), bw)


def select(a: Tensor, index) -> Tensor:
    """Pick a single element; gradient scatters back to that position."""
    a = as_tensor(a)
    index = tuple(int(i) for i in np.atleast_1d(index)) if not np.isscalar(index) else (int(index),)
    def bw(g):
        z = np.zeros_like(a.data)
        z[index] = g
        _accumulate(a, z)
    return _node(a.data[index], (a,), bw)


def prelu(x: Tensor, alpha: Tensor) -> Tensor:
    """max(0, x) + alpha * min(0, x) with a learnable per-channel alpha.

    x has shape [C, ...]; alpha has shape [C].
    """
    x, alpha = as_tensor(x), as_tensor(alpha)
    if alpha.data.ndim != 1 or alpha.data.shape[0] != x.data.shape[0]:
        raise ValueError(
            f"alpha must have one entry per channel: got {alpha.data.shape} "
            f"for input with {x.data.shape[0]} channels"
        )
    a_exp = alpha.data.reshape((-1,) + (1,) * (x.data.ndim - 1))
    pos = np.maximum(x.data, 0.0)
    negpart = np.minimum(x.data, 0.0)
    def bw(g):
        _accumulate(x, g * np.where(x.data > 0.0, 1.0, a_exp))
        _accumulate(alpha, (g * negpart).sum(axis=tuple(range(1, x.data.ndim))))
    return _node(pos + a_exp * negpart, (x, alpha), bw)


# ---------------------------------------------------------------------------
# masked dilated convolution
# ---------------------------------------------------------------------------

def conv2d_masked(inp: Tensor, kernel: Tensor, mask: np.ndarray,
                  dilation: int, bias: Tensor) -> Tensor:
    """2-D masked dilated cross-correlation with zero padding ('same' size).

    inp: [C_in, H, W]; kernel: [C_out, C_in, kh, kw]; mask: binary [kh, kw];
    bias: [C_out]. Masked-out kernel entries contribute nothing to the
    output and receive exactly zero gradient.
    """
    inp, kernel, bias = as_tensor(inp), as_tensor(kernel), as_tensor(bias)
    if inp.data.ndim != 3:
        raise ValueError(f"input must be [C,H,W], got shape {inp.shape}")
    if kernel.data.ndim != 4:
        raise ValueError(f"kernel must be [C_out,C_in,kh,kw], got {kernel.shape}")
    if kernel.data.shape[1] != inp.data.shape[0]:
        raise ValueError(
            f"kernel expects {kernel.data.shape[1]} input channels, "
            f"input has {inp.data.shape[0]}"
        )
    mask = np.asarray(mask)
    if mask.shape != kernel.data.shape[2:]:
        raise ValueError(f"mask shape {mask.shape} != kernel window {kernel.data.shape[2:]}")
    if not isinstance(dilation, (int, np.integer)) or dilation < 1:
        raise ValueError(f"dilation must be a positive integer, got {dilation!r}")
    if bias.data.shape != (kernel.data.shape[0],):
        raise ValueError(
            f"bias shape {bias.data.shape} != ({kernel.data.shape[0]},)"
        )
    taps = kernels.taps_from_mask(mask)  # rejects all-zero masks
    kh, kw = kernel.data.shape[2:]
    dilation = int(dilation)

    out = kernels.conv_forward(inp.data, kernel.data, bias.data, taps, dilation)

    def bw(g):
        g = np.ascontiguousarray(g, dtype=np.float64)
        if inp.requires_grad:
            _accumulate(inp, kernels.conv_grad_input(g, kernel.data, taps, dilation))
        if kernel.requires_grad:
            _accumulate(kernel, kernels.conv_grad_kernel(g, inp.data, taps, dilation, kh, kw))
        if bias.requires_grad:
            _accumulate(bias, g.sum(axis=(1, 2)))

    return _node(out, (inp, kernel, bias), bw)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _topo_order(root: Tensor) -> list:
    """Iterative post-order: every node appears after all of its parents."""
    order: list = []
    seen: set = set()
    stack: list = [(root, False)]
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
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> dict:
    """Reverse-mode gradients of a scalar loss over its recorded graph.

    Populates ``.grad`` on every reachable tensor with ``requires_grad``
    (accumulating into any existing gradient) and returns a map
    {name: gradient Tensor} for the named ones.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("loss must be a Tensor")
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    if loss._backward is None:
        raise ValueError("loss is not on a tape: no recorded operations produce it")

    order = _topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)

    named = {}
    for node in order:
        if node.requires_grad and node.name is not None and node._backward is None:
            named[node.name] = Tensor(node.grad if node.grad is not None
                                      else np.zeros_like(node.data))
    return named


def finite_diff_grad(f, x: Tensor, eps: float) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    The independent oracle for every backward rule in this module.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    base = np.array(x.data, dtype=np.float64)
    grad = np.zeros_like(base)
    it = np.nditer(base, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        up = base.copy()
        up[idx] += eps
        down = base.copy()
        down[idx] -= eps
        f_up = f(Tensor(up))
        f_down = f(Tensor(down))
        f_up = f_up.item() if isinstance(f_up, Tensor) else float(f_up)
        f_down = f_down.item() if isinstance(f_down, Tensor) else float(f_down)
        grad[idx] = (f_up - f_down) / (2.0 * eps)
        it.iternext()
    return grad
