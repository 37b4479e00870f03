"""Reverse-mode automatic differentiation over numpy arrays.

A DiffTensor wraps an ndarray and remembers how it was produced; calling
``backward()`` on a scalar result walks the recorded graph in reverse
topological order and accumulates gradients into every node that requested
them.  The op set is deliberately small: just enough to express the encoder,
the projection/reconstruction heads and both training losses.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

_DEBUG_CHECKS = False


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where one must not."""


def set_debug_checks(enabled: bool) -> None:
    """Enable finiteness checks on every forward output and backward gradient."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


def debug_checks_enabled() -> bool:
    return _DEBUG_CHECKS


def _check_finite(arr: np.ndarray, what: str) -> None:
    if _DEBUG_CHECKS and not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")


class DiffTensor:
    """An n-dimensional array with a gradient slot and a provenance record."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str | None = None,
        _parents: tuple["DiffTensor", ...] = (),
        _backward: Callable[[np.ndarray], tuple[np.ndarray, ...]] | None = None,
    ):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "DiffTensor":
        return DiffTensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate gradients of this scalar into the recorded graph."""
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar, got shape {self.shape}")
        order: list[DiffTensor] = []
        seen: set[int] = set()
        stack: list[tuple[DiffTensor, bool]] = [(self, False)]
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

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None:
                    continue
                _check_finite(pg, f"gradient into {parent.name or 'tensor'}")
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg

    # Operator sugar; scalars and ndarrays are promoted to constants.
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    def __rmul__(self, other):
        return mul(_as_tensor(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other, self.dtype))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other, self.dtype))

    def __neg__(self):
        return mul(self, _as_tensor(-1.0, self.dtype))

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"DiffTensor(shape={self.shape}, dtype={self.dtype}{tag})"


def tensor(data, requires_grad: bool = False, name: str | None = None) -> DiffTensor:
    """Wrap array-like data in a DiffTensor leaf."""
    return DiffTensor(np.asarray(data), requires_grad=requires_grad, name=name)


def _as_tensor(x, dtype) -> DiffTensor:
    if isinstance(x, DiffTensor):
        return x
    return DiffTensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents, backward, name: str) -> DiffTensor:
    _check_finite(data, f"output of {name}")
    return DiffTensor(data, _parents=tuple(parents), _backward=backward, name=name)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape the operand had before broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), backward, "add")


def sub(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, (a, b), backward, "sub")


def mul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), backward, "mul")


def div(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _make(out, (a, b), backward, "div")


def relu(a: DiffTensor) -> DiffTensor:
    out = np.maximum(a.data, 0)

    def backward(g):
        return (g * (a.data > 0),)

    return _make(out, (a,), backward, "relu")


def exp(a: DiffTensor) -> DiffTensor:
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return _make(out, (a,), backward, "exp")


def log(a: DiffTensor) -> DiffTensor:
    out = np.log(a.data)

    def backward(g):
        return (g / a.data,)

    return _make(out, (a,), backward, "log")


def sqrt(a: DiffTensor) -> DiffTensor:
    out = np.sqrt(a.data)

    def backward(g):
        return (g * (0.5 / out),)

    return _make(out, (a,), backward, "sqrt")


# ---------------------------------------------------------------------------
# reductions and structure


def sum(a: DiffTensor, axis=None, keepdims: bool = False) -> DiffTensor:  # noqa: A001
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _make(out, (a,), backward, "sum")


def mean(a: DiffTensor, axis=None, keepdims: bool = False) -> DiffTensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.shape[ax]

    def backward(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=False) / count,)

    return _make(out, (a,), backward, "mean")


def mean_over_time(a: DiffTensor) -> DiffTensor:
    """Average pooling over the time axis of a (..., T, D) sequence."""
    if a.ndim < 2:
        raise ShapeError(f"mean_over_time needs at least 2 dims, got {a.shape}")
    return mean(a, axis=-2)


def reshape(a: DiffTensor, shape: Sequence[int]) -> DiffTensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(a.shape),)

    return _make(out, (a,), backward, "reshape")


def transpose(a: DiffTensor, axes: Sequence[int]) -> DiffTensor:
    axes = tuple(axes)
    out = a.data.transpose(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inv),)

    return _make(out, (a,), backward, "transpose")


def concat(tensors: Sequence[DiffTensor], axis: int = 0) -> DiffTensor:
    if not tensors:
        raise ShapeError("concat of zero tensors")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), backward, "concat")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    if a.ndim < 1 or b.ndim < 1:
        raise ShapeError(f"matmul needs arrays, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    # (..., m, k) @ (k, n) flattens to one GEMM; that path dominates training.
    flat_weight = a.ndim > 2 and b.ndim == 2
    if flat_weight:
        k = a.shape[-1]
        out = (a.data.reshape(-1, k) @ b.data).reshape(a.shape[:-1] + (b.shape[-1],))
    else:
        out = a.data @ b.data

    def backward(g):
        if flat_weight:
            k = a.shape[-1]
            n = b.shape[-1]
            gflat = g.reshape(-1, n)
            ga = (gflat @ b.data.T).reshape(a.shape)
            gb = a.data.reshape(-1, k).T @ gflat
            return ga, gb
        bt = b.data.swapaxes(-1, -2) if b.ndim > 1 else b.data
        at = a.data.swapaxes(-1, -2) if a.ndim > 1 else a.data
        if b.ndim == 1:
            ga = np.multiply.outer(g, bt) if g.ndim else g * bt
        else:
            ga = g @ bt
        if a.ndim == 1:
            gb = np.multiply.outer(at, g)
        else:
            gb = at @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), backward, "matmul")


def softmax(a: DiffTensor, axis: int = -1) -> DiffTensor:
    out = a.data - a.data.max(axis=axis, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=axis, keepdims=True)

    def backward(g):
        res = g - (g * out).sum(axis=axis, keepdims=True)
        res *= out
        return (res,)

    return _make(out, (a,), backward, "softmax")


def layer_norm(x: DiffTensor, scale: DiffTensor, shift: DiffTensor, eps: float = 1e-5) -> DiffTensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if scale.shape != x.shape[-1:] or shift.shape != x.shape[-1:]:
        raise ShapeError(f"layer_norm affine shapes {scale.shape}/{shift.shape} do not match feature dim of {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xn = x.data - mu
    var = np.mean(xn * xn, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xn *= inv
    out = xn * scale.data
    out += shift.data

    def backward(g):
        gshift = _unbroadcast(g, shift.shape)
        gscale = _unbroadcast(g * xn, scale.shape)
        gxn = g * scale.data
        # d/dx of (x - mu) * inv with mu, inv functions of x
        gx = gxn - gxn.mean(axis=-1, keepdims=True)
        gx -= xn * np.mean(gxn * xn, axis=-1, keepdims=True)
        gx *= inv
        return gx.astype(x.dtype, copy=False), gscale, gshift

    return _make(out, (x, scale, shift), backward, "layer_norm")


def conv1d(x: DiffTensor, kernel: DiffTensor, bias: DiffTensor | None, stride: int) -> DiffTensor:
    """Strided 1-D convolution over time: (B, T, Cin) * (K, Cin, Cout) -> (B, T', Cout).

    Padding keeps T' = ceil(T / stride).
    """
    if x.ndim != 3 or kernel.ndim != 3:
        raise ShapeError(f"conv1d expects (B,T,Cin) and (K,Cin,Cout), got {x.shape} and {kernel.shape}")
    if x.shape[2] != kernel.shape[1]:
        raise ShapeError(f"conv1d channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    bsz, t_in, c_in = x.shape
    ksz, _, c_out = kernel.shape
    t_out = -(-t_in // stride)
    pad_total = max(0, (t_out - 1) * stride + ksz - t_in)
    pad_left = pad_total // 2
    pad_right = pad_total - pad_left
    xp = np.pad(x.data, ((0, 0), (pad_left, pad_right), (0, 0)))
    # im2col: gather K taps per output step
    cols = np.empty((bsz, t_out, ksz, c_in), dtype=x.dtype)
    for k in range(ksz):
        cols[:, :, k, :] = xp[:, k : k + t_out * stride : stride, :]
    flat = cols.reshape(bsz, t_out, ksz * c_in)
    out = flat @ kernel.data.reshape(ksz * c_in, c_out)
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gk = np.einsum("btf,bto->fo", flat, g).reshape(kernel.shape)
        gcols = (g @ kernel.data.reshape(ksz * c_in, c_out).T).reshape(bsz, t_out, ksz, c_in)
        gxp = np.zeros_like(xp)
        for k in range(ksz):
            gxp[:, k : k + t_out * stride : stride, :] += gcols[:, :, k, :]
        gx = gxp[:, pad_left : pad_left + t_in, :]
        gb = _unbroadcast(g, bias.shape) if bias is not None else None
        if bias is not None:
            return gx, gk, gb
        return gx, gk

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(out, parents, backward, "conv1d")


def l1_loss(pred: DiffTensor, target: DiffTensor, mask: np.ndarray | None = None) -> DiffTensor:
    """Mean absolute error over all cells, or over masked cells only."""
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss shapes differ: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != pred.shape:
            raise ShapeError(f"l1_loss mask shape {mask.shape} does not match {pred.shape}")
        count = int(mask.sum())
        if count == 0:
            raise ValueError("l1_loss over an empty mask is undefined")
        out = np.abs(diff[mask]).sum() / count
    else:
        count = diff.size
        out = np.abs(diff).mean()

    def backward(g):
        s = np.sign(diff) * (g / count)
        if mask is not None:
            s = s * mask
        return s.astype(pred.dtype, copy=False), (-s).astype(pred.dtype, copy=False)

    return _make(np.asarray(out, dtype=pred.dtype), (pred, target), backward, "l1_loss")


def dropout(a: DiffTensor, p: float, rng: np.random.Generator) -> DiffTensor:
    """Inverted dropout; identity when p == 0."""
    if p <= 0.0:
        return a
    keep = (rng.random(a.shape) >= p).astype(a.dtype) / (1.0 - p)

    def backward(g):
        return (g * keep,)

    return _make(a.data * keep, (a,), backward, "dropout")


# ---------------------------------------------------------------------------
# numerical checking


def numeric_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function at x (64-bit)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def gradient_close(analytic: np.ndarray, numeric: np.ndarray, rtol: float = 1e-4, atol: float = 1e-6) -> bool:
    """True when every entry matches within atol absolutely or rtol relatively."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    return bool(np.all((diff <= atol) | (diff <= rtol * scale)))


def max_gradient_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst-case relative error, with an absolute fallback near zero."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-2)
    return float(np.max(diff / scale)) if diff.size else 0.0
