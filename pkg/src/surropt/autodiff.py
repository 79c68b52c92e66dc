"""Array-valued reverse-mode autodiff on float64 numpy arrays.

The graph is built per forward call out of closures and discarded after
``backward``; there is no persistent tape. ReLU takes subgradient 0 at 0.
"""
import numpy as np

__all__ = ["Tensor", "concat"]


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` (reverses numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _as_data(other):
    if isinstance(other, Tensor):
        return other
    return Tensor(np.asarray(other, dtype=np.float64))


class Tensor:
    """A float64 array with an optional gradient slot and backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_prev", "_back")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._prev = ()
        self._back = None

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def _accum(self, g):
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad += g

    @staticmethod
    def _make(data, parents, back):
        out = Tensor(data)
        if any(p.requires_grad or p._prev for p in parents):
            out._prev = tuple(parents)
            out._back = back
        return out

    # ---- arithmetic ----

    def __add__(self, other):
        other = _as_data(other)
        out_data = self.data + other.data

        def back(g):
            return (_unbroadcast(g, self.data.shape),
                    _unbroadcast(g, other.data.shape))

        return Tensor._make(out_data, (self, other), back)

    __radd__ = __add__

    def __sub__(self, other):
        other = _as_data(other)
        out_data = self.data - other.data

        def back(g):
            return (_unbroadcast(g, self.data.shape),
                    _unbroadcast(-g, other.data.shape))

        return Tensor._make(out_data, (self, other), back)

    def __rsub__(self, other):
        return _as_data(other).__sub__(self)

    def __mul__(self, other):
        other = _as_data(other)
        out_data = self.data * other.data
        a, b = self.data, other.data

        def back(g):
            return (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))

        return Tensor._make(out_data, (self, other), back)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_data(other)
        out_data = self.data / other.data
        a, b = self.data, other.data

        def back(g):
            return (_unbroadcast(g / b, a.shape),
                    _unbroadcast(-g * a / (b * b), b.shape))

        return Tensor._make(out_data, (self, other), back)

    def __rtruediv__(self, other):
        return _as_data(other).__truediv__(self)

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __matmul__(self, other):
        other = _as_data(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError(
                f"matmul expects 2-d operands, got {self.data.shape} @ {other.data.shape}")
        if self.data.shape[1] != other.data.shape[0]:
            raise ValueError(
                f"matmul shape mismatch: {self.data.shape} @ {other.data.shape}")
        a, b = self.data, other.data

        def back(g):
            return (g @ b.T, a.T @ g)

        return Tensor._make(a @ b, (self, other), back)

    # ---- elementwise nonlinearities ----

    def relu(self):
        mask = self.data > 0.0

        def back(g):
            return (g * mask,)

        return Tensor._make(self.data * mask, (self,), back)

    def sigmoid(self):
        out_data = np.exp(-np.logaddexp(0.0, -self.data))

        def back(g):
            return (g * out_data * (1.0 - out_data),)

        return Tensor._make(out_data, (self,), back)

    def tanh(self):
        out_data = np.tanh(self.data)

        def back(g):
            return (g * (1.0 - out_data * out_data),)

        return Tensor._make(out_data, (self,), back)

    def softplus(self):
        out_data = np.logaddexp(0.0, self.data)
        sig = np.exp(-np.logaddexp(0.0, -self.data))

        def back(g):
            return (g * sig,)

        return Tensor._make(out_data, (self,), back)

    def exp(self):
        out_data = np.exp(self.data)

        def back(g):
            return (g * out_data,)

        return Tensor._make(out_data, (self,), back)

    def log(self):
        a = self.data

        def back(g):
            return (g / a,)

        return Tensor._make(np.log(a), (self,), back)

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def back(g):
            return (g * 0.5 / out_data,)

        return Tensor._make(out_data, (self,), back)

    def square(self):
        a = self.data

        def back(g):
            return (g * 2.0 * a,)

        return Tensor._make(a * a, (self,), back)

    def maximum(self, other):
        other = _as_data(other)
        a, b = self.data, other.data
        mask = a > b

        def back(g):
            return (_unbroadcast(g * mask, a.shape),
                    _unbroadcast(g * ~mask, b.shape))

        return Tensor._make(np.maximum(a, b), (self, other), back)

    def minimum(self, other):
        other = _as_data(other)
        a, b = self.data, other.data
        mask = a < b

        def back(g):
            return (_unbroadcast(g * mask, a.shape),
                    _unbroadcast(g * ~mask, b.shape))

        return Tensor._make(np.minimum(a, b), (self, other), back)

    # ---- reductions / shape ----

    def sum(self):
        shape = self.data.shape

        def back(g):
            return (np.broadcast_to(g, shape),)

        return Tensor._make(self.data.sum(), (self,), back)

    def mean(self):
        shape = self.data.shape
        n = self.data.size

        def back(g):
            return (np.broadcast_to(g / n, shape),)

        return Tensor._make(self.data.mean(), (self,), back)

    def reshape(self, shape):
        old = self.data.shape

        def back(g):
            return (g.reshape(old),)

        return Tensor._make(self.data.reshape(shape), (self,), back)

    def broadcast_to(self, shape):
        old = self.data.shape

        def back(g):
            return (_unbroadcast(g, old),)

        return Tensor._make(np.broadcast_to(self.data, shape).copy(), (self,), back)

    # ---- backward ----

    def backward(self):
        if self.data.size != 1:
            raise ValueError(f"backward needs a scalar output, got shape {self.data.shape}")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accum(np.ones_like(self.data))
        for node in reversed(order):
            if node._back is None:
                continue
            grads = node._back(node.grad)
            for p, g in zip(node._prev, grads):
                if p.requires_grad or p._prev:
                    p._accum(g)
            if not node.requires_grad:
                node.grad = None  # free intermediates

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"


def concat(tensors, axis=1):
    """Concatenate tensors along `axis`, routing gradients to each part."""
    datas = [t.data for t in tensors]
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(np.concatenate(datas, axis=axis), tuple(tensors), back)
