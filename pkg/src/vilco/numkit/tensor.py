"""Reverse-mode autodiff over numpy float64 arrays.

A Tensor records the op that produced it (parents plus a backward closure)
on an implicit tape; ``backward()`` on a scalar loss topologically sorts the
tape and accumulates gradients into every ``requires_grad`` leaf. The op set
is only what the engine needs, not a general autodiff surface.

Every forward result and every accumulated gradient is checked for NaN/Inf
and a NumericalError aborts the step; continual-learning runs silently
poisoned by a NaN are worse than a crash.
"""

from __future__ import annotations

import numpy as np

from .. import kernels


class NumericalError(RuntimeError):
    """Raised when a non-finite value shows up in data or gradients."""


_FINITE_CHECKS = True


def set_finite_checks(enabled: bool) -> None:
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


def _assert_finite(arr: np.ndarray, where: str) -> None:
    if _FINITE_CHECKS and not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values in {where}")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad back down to `shape` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if squeeze:
        grad = grad.sum(axis=squeeze, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = ()):
        self.data = np.asarray(data, dtype=np.float64)
        _assert_finite(self.data, "tensor data")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None

    # -- bookkeeping ---------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accum(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        self.grad = grad if self.grad is None else self.grad + grad

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))

    def _node(self, data: np.ndarray, parents: tuple, backward) -> "Tensor":
        out = Tensor(data, requires_grad=any(p.requires_grad for p in parents), _parents=parents)
        if out.requires_grad:
            out._backward = backward
        return out

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = self._lift(other)
        out_data = self.data + other.data

        def backward(out):
            self._accum(_unbroadcast(out.grad, self.shape))
            other._accum(_unbroadcast(out.grad, other.shape))

        return self._node(out_data, (self, other), backward)

    def __mul__(self, other) -> "Tensor":
        other = self._lift(other)
        out_data = self.data * other.data

        def backward(out):
            self._accum(_unbroadcast(out.grad * other.data, self.shape))
            other._accum(_unbroadcast(out.grad * self.data, other.shape))

        return self._node(out_data, (self, other), backward)

    def __sub__(self, other) -> "Tensor":
        return self + (self._lift(other) * -1.0)

    def __rsub__(self, other) -> "Tensor":
        return self._lift(other) + (self * -1.0)

    def __neg__(self) -> "Tensor":
        return self * -1.0

    def __truediv__(self, other) -> "Tensor":
        other = self._lift(other)
        out_data = self.data / other.data

        def backward(out):
            self._accum(_unbroadcast(out.grad / other.data, self.shape))
            other._accum(_unbroadcast(-out.grad * self.data / (other.data**2), other.shape))

        return self._node(out_data, (self, other), backward)

    def __rtruediv__(self, other) -> "Tensor":
        return self._lift(other) / self

    __radd__ = __add__
    __rmul__ = __mul__

    def __pow__(self, exponent: float) -> "Tensor":
        e = float(exponent)
        out_data = self.data**e

        def backward(out):
            self._accum(out.grad * e * self.data ** (e - 1.0))

        return self._node(out_data, (self,), backward)

    def __matmul__(self, other) -> "Tensor":
        other = self._lift(other)
        out_data = np.matmul(self.data, other.data)

        def backward(out):
            ga = np.matmul(out.grad, np.swapaxes(other.data, -1, -2))
            gb = np.matmul(np.swapaxes(self.data, -1, -2), out.grad)
            self._accum(_unbroadcast(ga, self.shape) if ga.shape != self.shape else ga)
            other._accum(_unbroadcast(gb, other.shape) if gb.shape != other.shape else gb)

        return self._node(out_data, (self, other), backward)

    # -- pointwise nonlinearities ---------------------------------------------

    def exp(self) -> "Tensor":
        out_data = np.exp(self.data)

        def backward(out):
            self._accum(out.grad * out_data)

        return self._node(out_data, (self,), backward)

    def log(self) -> "Tensor":
        out_data = np.log(self.data)

        def backward(out):
            self._accum(out.grad / self.data)

        return self._node(out_data, (self,), backward)

    def sqrt(self) -> "Tensor":
        out_data = np.sqrt(self.data)

        def backward(out):
            self._accum(out.grad * 0.5 / out_data)

        return self._node(out_data, (self,), backward)

    def relu(self) -> "Tensor":
        mask = self.data > 0.0
        out_data = np.where(mask, self.data, 0.0)

        def backward(out):
            self._accum(out.grad * mask)

        return self._node(out_data, (self,), backward)

    def sigmoid(self) -> "Tensor":
        # evaluate via tanh for symmetric stability at large |x|
        out_data = 0.5 * (1.0 + np.tanh(0.5 * self.data))

        def backward(out):
            self._accum(out.grad * out_data * (1.0 - out_data))

        return self._node(out_data, (self,), backward)

    def softplus(self) -> "Tensor":
        out_data = np.logaddexp(0.0, self.data)

        def backward(out):
            self._accum(out.grad * 0.5 * (1.0 + np.tanh(0.5 * self.data)))

        return self._node(out_data, (self,), backward)

    def maximum(self, other) -> "Tensor":
        other = self._lift(other)
        out_data = np.maximum(self.data, other.data)
        mask = self.data >= other.data  # ties route to self

        def backward(out):
            self._accum(_unbroadcast(out.grad * mask, self.shape))
            other._accum(_unbroadcast(out.grad * ~mask, other.shape))

        return self._node(out_data, (self, other), backward)

    def minimum(self, other) -> "Tensor":
        other = self._lift(other)
        out_data = np.minimum(self.data, other.data)
        mask = self.data <= other.data

        def backward(out):
            self._accum(_unbroadcast(out.grad * mask, self.shape))
            other._accum(_unbroadcast(out.grad * ~mask, other.shape))

        return self._node(out_data, (self, other), backward)

    # -- reductions ------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(out):
            g = out.grad
            if not keepdims and axis is not None:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, self.shape).copy())

        return self._node(out_data, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        denom = self.size if axis is None else np.prod(
            [self.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(denom))

    def logsumexp(self, axis: int, keepdims: bool = False) -> "Tensor":
        m = self.data.max(axis=axis, keepdims=True)
        shifted = np.exp(self.data - m)
        total = shifted.sum(axis=axis, keepdims=True)
        out_data = m + np.log(total)
        soft = shifted / total
        if not keepdims:
            out_data = np.squeeze(out_data, axis=axis)

        def backward(out):
            g = out.grad if keepdims else np.expand_dims(out.grad, axis)
            self._accum(g * soft)

        return self._node(out_data, (self,), backward)

    # -- shape manipulation ------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out_data = self.data.reshape(shape)

        def backward(out):
            self._accum(out.grad.reshape(self.shape))

        return self._node(out_data, (self,), backward)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        axes = axes or tuple(reversed(range(self.ndim)))
        inv = np.argsort(axes)
        out_data = self.data.transpose(axes)

        def backward(out):
            self._accum(out.grad.transpose(inv))

        return self._node(out_data, (self,), backward)

    def __getitem__(self, index) -> "Tensor":
        out_data = self.data[index]

        def backward(out):
            full = np.zeros_like(self.data)
            np.add.at(full, index, out.grad)
            self._accum(full)

        return self._node(np.array(out_data, copy=True), (self,), backward)

    # -- fused ops ---------------------------------------------------------------

    def softmax(self, axis: int = -1) -> "Tensor":
        _assert_finite(self.data, "softmax input")
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out_data = e / e.sum(axis=axis, keepdims=True)

        def backward(out):
            dot = (out.grad * out_data).sum(axis=axis, keepdims=True)
            self._accum(out_data * (out.grad - dot))

        return self._node(out_data, (self,), backward)

    def conv1d(self, weight: "Tensor", bias: "Tensor", stride: int = 2, padding: int = 1) -> "Tensor":
        """Strided 1-D convolution over a (T, D_in) sequence; see kernels."""
        out_data = kernels.conv1d_forward(self.data, weight.data, bias.data, stride, padding)

        def backward(out):
            gx, gw, gb = kernels.conv1d_backward(out.grad, self.data, weight.data, stride, padding)
            self._accum(gx)
            weight._accum(gw)
            bias._accum(gb)

        return self._node(out_data, (self, weight, bias), backward)

    # -- autodiff driver -----------------------------------------------------------

    def backward(self) -> None:
        if self.size != 1:
            raise ValueError("backward() requires a scalar root")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited or not node.requires_grad:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node.grad is None:
                continue
            _assert_finite(node.grad, "gradient")
            if node._backward is not None:
                node._backward(node)


def concatenate(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [Tensor._lift(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(out):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * out.grad.ndim
            sl[axis] = slice(lo, hi)
            t._accum(out.grad[tuple(sl)])

    out = Tensor(
        out_data,
        requires_grad=any(t.requires_grad for t in tensors),
        _parents=tuple(tensors),
    )
    if out.requires_grad:
        out._backward = backward
    return out


def stack(tensors: list[Tensor], axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        t = Tensor._lift(t)
        shape = list(t.shape)
        shape.insert(axis if axis >= 0 else t.ndim + 1 + axis, 1)
        expanded.append(t.reshape(shape))
    return concatenate(expanded, axis=axis)
