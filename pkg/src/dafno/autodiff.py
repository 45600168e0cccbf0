"""Dense real/complex tensors with a reverse-mode tape.

Only the primitives needed by the Fourier layers are provided. Complex
gradients follow the convention ``grad = dL/dRe(w) + 1j * dL/dIm(w)`` for a
real loss ``L``, so a complex128 array viewed as float64 pairs carries the
per-component gradient directly.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "ShapeError",
    "as_tensor",
    "no_grad",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "elementwise",
    "sum",
    "mean",
    "sqrt",
    "square",
    "relu",
    "gelu",
    "activation",
    "einsum",
    "channel_linear",
    "concat",
    "embed",
    "rfft2",
    "irfft2",
]

_DTYPES = {
    "real32": np.float32,
    "real64": np.float64,
    "complex64": np.complex64,
    "complex128": np.complex128,
}

_counter = itertools.count()
_grad_enabled = True


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class _Node:
    __slots__ = ("order", "parents", "backward_fn")

    def __init__(self, parents, backward_fn):
        self.order = next(_counter)
        self.parents = parents
        self.backward_fn = backward_fn


class Tensor:
    """Row-major array with optional gradient tracking."""

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is not None:
            dtype = _DTYPES.get(dtype, dtype)
            arr = np.array(data, dtype=dtype)
        else:
            arr = np.asarray(data)
            if arr.dtype.kind in "biu" or arr.dtype == np.float16:
                arr = arr.astype(np.float64)
            elif arr.dtype.kind not in "fc":
                raise TypeError(f"unsupported dtype {arr.dtype}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_complex(self):
        return self.data.dtype.kind == "c"

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return len(self.data)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return _getitem(self, index)

    def sum(self, axis=None):
        return sum(self, axis)


class Parameter(Tensor):
    """A named leaf that always requires a gradient."""

    def __init__(self, value, name: str = "", dtype=None):
        super().__init__(value, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._node = _Node(tuple(parents), backward_fn)
    return out


def _fit(grad, like: Tensor):
    """Reduce a broadcast gradient to ``like``'s shape and dtype kind."""
    shape = like.shape
    if grad.shape != shape:
        extra = grad.ndim - len(shape)
        if extra > 0:
            grad = grad.sum(axis=tuple(range(extra)))
        axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
        if axes:
            grad = grad.sum(axis=axes, keepdims=True)
    if not like.is_complex and np.iscomplexobj(grad):
        grad = grad.real
    return grad.astype(like.dtype, copy=False)


def _broadcast_shape(a: Tensor, b: Tensor):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"shapes {a.shape} and {b.shape} are not broadcast-compatible") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _make(a.data + b.data, (a, b), lambda g: (_fit(g, a), _fit(g, b)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _make(a.data - b.data, (a, b), lambda g: (_fit(g, a), _fit(-g, b)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data
    return _make(
        ad * bd,
        (a, b),
        lambda g: (_fit(g * np.conj(bd), a), _fit(g * np.conj(ad), b)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def back(g):
        ga = g / np.conj(bd)
        return _fit(ga, a), _fit(-ga * np.conj(out), b)

    return _make(out, (a, b), back)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(kind: str, a, b) -> Tensor:
    """Dispatch a broadcasting binary op by name."""
    try:
        fn = _BINARY[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {kind!r}") from None
    return fn(a, b)


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2.0 * g * np.conj(ad),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g / (2.0 * out),))


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(a.dtype, copy=True),)

    return _make(out, (a,), back)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis), 1.0 / count)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x) -> Tensor:
    """Exact GELU ``x * Phi(x)``."""
    x = as_tensor(x)
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
    return _make(xd * cdf, (x,), lambda g: (g * (cdf + xd * pdf),))


def activation(kind: str, x) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "gelu":
        return gelu(x)
    raise ValueError(f"unknown activation {kind!r}")


# ------------------------------------------------------------------ contraction


def _parse_einsum(spec: str):
    spec = spec.replace(" ", "")
    lhs, out = spec.split("->")
    ins = lhs.split(",")
    if len(ins) != 2:
        raise ValueError("einsum supports exactly two operands")
    for term in ins:
        if len(set(term)) != len(term):
            raise ValueError(f"repeated index in {term!r} is not supported")
    a, b = ins
    for term, other in ((a, b), (b, a)):
        lonely = set(term) - set(other) - set(out)
        if lonely:
            raise ValueError(f"index {sorted(lonely)} is summed within one operand only")
    return a, b, out


def einsum(spec: str, a, b) -> Tensor:
    """Two-operand einsum with explicit output, no repeated indices."""
    a, b = as_tensor(a), as_tensor(b)
    sa, sb, so = _parse_einsum(spec)
    ad, bd = a.data, b.data
    try:
        out = np.einsum(f"{sa},{sb}->{so}", ad, bd, optimize=True)
    except ValueError as exc:
        raise ShapeError(f"einsum {spec!r} on shapes {a.shape} and {b.shape}: {exc}") from None

    def back(g):
        ga = np.einsum(f"{so},{sb}->{sa}", g, np.conj(bd), optimize=True)
        gb = np.einsum(f"{so},{sa}->{sb}", g, np.conj(ad), optimize=True)
        return _fit(ga, a), _fit(gb, b)

    return _make(out, (a, b), back)


def channel_linear(h, W, bias=None) -> Tensor:
    """Pointwise ``h[..., :] @ W + bias`` over all leading grid axes."""
    h, W = as_tensor(h), as_tensor(W)
    if W.ndim != 2 or h.shape[-1] != W.shape[0]:
        raise ShapeError(f"channel mismatch: field {h.shape} vs weight {W.shape}")
    hd, wd = h.data, W.data
    lead = hd.shape[:-1]
    flat = hd.reshape(-1, hd.shape[-1])
    out = (flat @ wd).reshape(*lead, wd.shape[1])

    def back(g):
        gf = g.reshape(-1, g.shape[-1])
        gh = (gf @ np.conj(wd).T).reshape(hd.shape)
        gw = np.conj(flat).T @ gf
        return _fit(gh, h), _fit(gw, W)

    y = _make(out, (h, W), back)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (W.shape[1],):
            raise ShapeError(f"bias shape {bias.shape} does not match output width {W.shape[1]}")
        y = add(y, bias)
    return y


# --------------------------------------------------------------- restructuring


def _getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]
    shape, dtype = a.shape, a.dtype

    basic = all(
        isinstance(i, (slice, int, type(Ellipsis))) or i is None
        for i in (index if isinstance(index, tuple) else (index,))
    )

    def back(g):
        full = np.zeros(shape, dtype=np.result_type(dtype, g.dtype))
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (_fit(full, a),)

    return _make(out, (a,), back)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def back(g):
        parts = np.split(g, sizes, axis=axis)
        return tuple(_fit(p, t) for p, t in zip(parts, ts))

    return _make(out, ts, back)


def embed(x, shape, index) -> Tensor:
    """Place ``x`` at ``index`` inside a zero array of ``shape``."""
    x = as_tensor(x)
    out = np.zeros(shape, dtype=x.dtype)
    out[index] = x.data
    return _make(out, (x,), lambda g: (g[index],))


# ---------------------------------------------------------------- transforms


def _half_weights(n2: int, m: int):
    # multiplicity of each retained column in the implicit Hermitian extension
    w = np.full(m, 2.0)
    w[0] = 1.0
    if n2 % 2 == 0 and m == n2 // 2 + 1:
        w[-1] = 1.0
    return w


def rfft2(x, axes=(-3, -2)) -> Tensor:
    """Unnormalized real-to-complex transform over two grid axes."""
    x = as_tensor(x)
    if x.is_complex:
        raise TypeError("rfft2 expects a real field")
    ax = tuple(a % x.ndim for a in axes)
    n = (x.shape[ax[0]], x.shape[ax[1]])
    out = np.fft.rfft2(x.data, axes=ax)
    w = _half_weights(n[1], out.shape[ax[1]])
    wshape = [1] * x.ndim
    wshape[ax[1]] = -1
    w = w.reshape(wshape)

    def back(g):
        # dL/dx = Re(sum_k e^{+ik.x} g_k) = N * irfft2(g / w)
        return (n[0] * n[1] * np.fft.irfft2(g / w, s=n, axes=ax),)

    return _make(out, (x,), back)


def irfft2(X, s, axes=(-3, -2)) -> Tensor:
    """Inverse of :func:`rfft2` carrying the 1/(n1*n2) factor."""
    X = as_tensor(X)
    ax = tuple(a % X.ndim for a in axes)
    s = tuple(int(v) for v in s)
    if X.shape[ax[0]] != s[0] or X.shape[ax[1]] != s[1] // 2 + 1:
        raise ShapeError(f"spectrum shape {X.shape} inconsistent with output grid {s}")
    out = np.fft.irfft2(X.data, s=s, axes=ax)
    w = _half_weights(s[1], X.shape[ax[1]])
    wshape = [1] * X.ndim
    wshape[ax[1]] = -1
    w = w.reshape(wshape)

    def back(g):
        return (np.fft.rfft2(g, axes=ax) * (w / (s[0] * s[1])),)

    return _make(out, (X,), back)


# ------------------------------------------------------------------- the tape


class Tape:
    """Nodes reachable from an output, in reverse creation order."""

    def __init__(self, output: Tensor):
        seen = set()
        nodes = []
        stack = [output]
        while stack:
            t = stack.pop()
            node = t._node
            if node is None or id(t) in seen:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(p for p in node.parents if p.requires_grad)
        # creation order is a topological order
        nodes.sort(key=lambda t: t._node.order, reverse=True)
        self.nodes = nodes

    def __len__(self):
        return len(self.nodes)

    def replay(self, output: Tensor, seed) -> None:
        grads = {id(output): seed}
        for t in self.nodes:
            g = grads.pop(id(t), None)
            if g is None:
                continue
            pgrads = t._node.backward_fn(g)
            for p, pg in zip(t._node.parents, pgrads):
                if not p.requires_grad or pg is None:
                    continue
                if p._node is None:
                    p.grad = pg.copy() if p.grad is None else p.grad + pg
                else:
                    key = id(p)
                    grads[key] = pg if key not in grads else grads[key] + pg
        if output._node is None and output.requires_grad:
            output.grad = seed if output.grad is None else output.grad + seed


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every tracked leaf.

    Gradients accumulate: a second call on the same graph doubles them.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.is_complex:
        raise TypeError("backward needs a real loss")
    if not loss.requires_grad:
        raise RuntimeError("loss does not depend on any tensor that requires grad")
    seed = np.ones_like(loss.data)
    Tape(loss).replay(loss, seed)
