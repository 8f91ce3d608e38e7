"""Reverse-mode automatic differentiation over dense float64 tensors.

The op set is exactly what the denoising network needs: elementwise
arithmetic, 2-D convolution, channel concatenation, SiLU, a couple of
broadcast/reduction helpers for time conditioning, and the MSE loss.
Values are numpy arrays; each op records a backward closure on its output
node and :meth:`Tensor.backward` replays the closures in reverse
topological order.

All ops are pure functions of their inputs and check their outputs for
NaN/Inf; diffusion chains amplify numeric faults silently, so violations
raise instead of propagating.
"""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

from . import kernels


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class ShapeError(ValueError):
    """Operand shapes violate an op contract."""


def _as_array(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by op '{op}'")


class Tensor:
    """A node in the computation graph.

    Leaf tensors wrap parameter or input arrays; interior tensors are
    produced by the ops below and carry a backward closure plus references
    to their parents.  The graph is acyclic by construction (ops only ever
    consume existing nodes).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_backward_done")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _backward=None, _op: str = "leaf"):
        self.data = _as_array(data)
        _check_finite(self.data, _op)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self._op = _op
        self._backward_done = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, op={self._op!r})"

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph.

        Visits each node exactly once in reverse topological order.  A
        second call on the same node (without building a new graph) is an
        error: the closures hold forward values from the pass that built
        them, and re-running would silently double gradients.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.data.shape}")
        if self._backward_done:
            raise RuntimeError("backward already ran for this graph; rebuild the forward pass first")
        self._backward_done = True

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Convenience operators over the core ops.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return add(self, scale(other, -1.0))


def _unary(op: str, x: Tensor, out: np.ndarray, bwd) -> Tensor:
    _check_finite(out, op)
    return Tensor(out, _parents=(x,), _backward=bwd, _op=op)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: shape mismatch {a.data.shape} vs {b.data.shape}")

    def bwd(g):
        a.accumulate(g)
        b.accumulate(g)

    return Tensor(a.data + b.data, _parents=(a, b), _backward=bwd, _op="add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: shape mismatch {a.data.shape} vs {b.data.shape}")

    def bwd(g):
        a.accumulate(g * b.data)
        b.accumulate(g * a.data)

    return Tensor(a.data * b.data, _parents=(a, b), _backward=bwd, _op="mul")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def bwd(g):
        x.accumulate(c * g)

    return _unary("scale", x, c * x.data, bwd)


def silu(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = x.data * s

    def bwd(g):
        x.accumulate(g * s * (1.0 + x.data * (1.0 - s)))

    return _unary("silu", x, out, bwd)


def conv2d(x: Tensor, k: Tensor, b: Tensor) -> Tensor:
    """Same-padding stride-1 2-D convolution: [C_in,H,W] -> [C_out,H,W]."""
    if x.data.ndim != 3 or k.data.ndim != 4 or b.data.ndim != 1:
        raise ShapeError("conv2d expects input [C,H,W], kernels [O,C,kh,kw], bias [O]")
    c_out, c_in, kh, kw = k.data.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d kernel dims must be odd, got {kh}x{kw}")
    if x.data.shape[0] != c_in:
        raise ShapeError(f"conv2d channel mismatch: input has {x.data.shape[0]}, kernels expect {c_in}")
    if b.data.shape[0] != c_out:
        raise ShapeError(f"conv2d bias length {b.data.shape[0]} != {c_out} output channels")

    y = kernels.conv2d_forward(x.data, k.data, b.data)

    def bwd(g):
        x.accumulate(kernels.conv2d_grad_input(k.data, g))
        k.accumulate(kernels.conv2d_grad_kernels(x.data, g, kh, kw))
        b.accumulate(kernels.conv2d_grad_bias(g))

    out = Tensor(y, _parents=(x, k, b), _backward=bwd, _op="conv2d")
    return out


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_channels needs at least one tensor")
    hw = parts[0].data.shape[1:]
    for p in parts:
        if p.data.ndim != 3 or p.data.shape[1:] != hw:
            raise ShapeError("concat_channels: all inputs must be [C,H,W] with equal H,W")
    sizes = [p.data.shape[0] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=0)

    def bwd(g):
        start = 0
        for p, c in zip(parts, sizes):
            p.accumulate(g[start : start + c])
            start += c

    return Tensor(out, _parents=tuple(parts), _backward=bwd, _op="concat_channels")


def spatial_mean(x: Tensor) -> Tensor:
    """Mean over H and W per channel: [C,H,W] -> [C]."""
    if x.data.ndim != 3:
        raise ShapeError("spatial_mean expects [C,H,W]")
    _, h, w = x.data.shape

    def bwd(g):
        x.accumulate(np.broadcast_to(g[:, None, None] / (h * w), x.data.shape))

    return _unary("spatial_mean", x, x.data.mean(axis=(1, 2)), bwd)


def broadcast_channels(v: Tensor, h: int, w: int) -> Tensor:
    """Tile a per-channel vector over H x W: [C] -> [C,H,W]."""
    if v.data.ndim != 1:
        raise ShapeError("broadcast_channels expects a vector [C]")
    out = np.broadcast_to(v.data[:, None, None], (v.data.shape[0], h, w)).copy()

    def bwd(g):
        v.accumulate(g.sum(axis=(1, 2)))

    return _unary("broadcast_channels", v, out, bwd)


def linear(w: Tensor, x: Tensor, b: Tensor) -> Tensor:
    """Affine map of a vector: w[O,I] @ x[I] + b[O]."""
    if w.data.ndim != 2 or x.data.ndim != 1 or b.data.ndim != 1:
        raise ShapeError("linear expects w [O,I], x [I], b [O]")
    if w.data.shape[1] != x.data.shape[0] or w.data.shape[0] != b.data.shape[0]:
        raise ShapeError(f"linear: incompatible shapes {w.data.shape}, {x.data.shape}, {b.data.shape}")

    def bwd(g):
        w.accumulate(np.outer(g, x.data))
        x.accumulate(w.data.T @ g)
        b.accumulate(g)

    return Tensor(w.data @ x.data + b.data, _parents=(w, x, b), _backward=bwd, _op="linear")


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error reduced to a scalar node."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mse: shape mismatch {a.data.shape} vs {b.data.shape}")
    diff = a.data - b.data
    n = diff.size

    def bwd(g):
        d = (2.0 / n) * g * diff
        a.accumulate(d)
        b.accumulate(-d)

    return Tensor(np.mean(diff * diff), _parents=(a, b), _backward=bwd, _op="mse")


def backward(loss: Tensor, params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Run backprop from ``loss`` and collect per-parameter gradients.

    Parameters that do not lie on any path to the loss get zero gradients
    of the matching shape.  Gradients are checked finite before return.
    """
    loss.backward()
    grads: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        _check_finite(g, f"grad[{name}]")
        grads[name] = g
    return grads


def finite_difference_gradient(
    f: Callable[[np.ndarray], float], point: np.ndarray, eps: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient oracle: (f(x+eps*e_i) - f(x-eps*e_i)) / (2*eps)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(point, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = float(f(x))
        flat[i] = orig - eps
        f_minus = float(f(x))
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteError(f"non-finite evaluation of f at coordinate {i}")
        gflat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad
