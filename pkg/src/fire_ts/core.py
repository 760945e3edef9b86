"""Dense real/complex tensors with tape-based reverse-mode differentiation.

Complex gradients follow the real-loss convention: for a complex tensor ``z``
the stored gradient is ``dL/dRe(z) + 1j * dL/dIm(z)``.  Under that convention
the chain rule through a complex product ``out = a * b`` gives
``grad_a = grad_out * conj(b)``, and through a matrix product
``grad_a = grad_out @ b^H``.  A real input receiving a complex-valued
contribution keeps only the real part.

Operations record onto the innermost active :class:`Tape`.  Outside a tape
nothing is recorded, so inference paths carry no bookkeeping.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "CTensor",
    "Tape",
    "tensor",
    "ctensor",
    "as_tensor",
    "record",
    "matmul",
    "transpose",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "square",
    "sqrt",
    "sum",
    "mean",
    "reshape",
    "take",
    "softmax_rows",
    "modulus",
    "polar_decompose",
    "polar_recompose",
]


class Tensor:
    """Real 64-bit tensor.  ``data`` is a numpy array in row-major order."""

    dtype = np.float64

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=self.dtype)
        # ascontiguousarray would turn 0-d scalars into shape (1,)
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_complex(self) -> bool:
        return False

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return type(self)(self.data.copy())

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"{type(self).__name__}(shape={self.shape}{label})"

    # operator sugar
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
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self):
        return transpose(self)


class CTensor(Tensor):
    """Complex tensor; real and imaginary parts are exposed as ``re``/``im``."""

    dtype = np.complex128

    @classmethod
    def from_parts(cls, re, im, requires_grad: bool = False, name: str | None = None):
        re = np.asarray(re, dtype=np.float64)
        im = np.asarray(im, dtype=np.float64)
        if re.shape != im.shape:
            raise ValueError(f"re/im shape mismatch: {re.shape} vs {im.shape}")
        return cls(re + 1j * im, requires_grad=requires_grad, name=name)

    @property
    def is_complex(self) -> bool:
        return True

    @property
    def re(self) -> np.ndarray:
        return self.data.real

    @property
    def im(self) -> np.ndarray:
        return self.data.imag

    @property
    def grad_re(self) -> np.ndarray | None:
        return None if self.grad is None else self.grad.real

    @property
    def grad_im(self) -> np.ndarray | None:
        return None if self.grad is None else self.grad.imag


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def ctensor(data, requires_grad: bool = False, name: str | None = None) -> CTensor:
    return CTensor(data, requires_grad=requires_grad, name=name)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if np.iscomplexobj(arr):
        return CTensor(arr)
    return Tensor(arr)


def _wrap(data: np.ndarray) -> Tensor:
    return CTensor(data) if np.iscomplexobj(data) else Tensor(data)


# ---------------------------------------------------------------------------
# tape

_TAPES: list["Tape"] = []


class Tape:
    """Records differentiable operations for one backward pass.

    Use as a context manager; :meth:`backward` walks the recording in
    reverse, accumulates ``.grad`` on leaf tensors with ``requires_grad`` and
    then frees the recording.
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, fn in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, fn(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if not inp.is_complex and np.iscomplexobj(gi):
                    gi = gi.real
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        # whatever remains are leaves (never produced by a recorded op)
        leaves = {}
        for _, inputs, _ in self._nodes:
            for inp in inputs:
                leaves[id(inp)] = inp
        leaves[id(loss)] = loss
        for key, g in grads.items():
            t = leaves.get(key)
            if t is None or not t.requires_grad:
                continue
            g = np.asarray(g, dtype=t.dtype).reshape(t.shape)
            t.grad = g.copy() if t.grad is None else t.grad + g
        self._nodes.clear()


def record(out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Attach ``backward`` (grad_out -> grads per input) to the active tape."""
    if not _TAPES:
        return out
    if any(inp.requires_grad for inp in inputs):
        out.requires_grad = True
        _TAPES[-1]._nodes.append((out, tuple(inputs), backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _fit(g: np.ndarray, t: Tensor) -> np.ndarray:
    g = _unbroadcast(g, t.shape)
    return g if t.is_complex else g.real


# ---------------------------------------------------------------------------
# elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _wrap(a.data + b.data)
    return record(out, (a, b), lambda g: (_fit(g, a), _fit(g, b)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _wrap(a.data - b.data)
    return record(out, (a, b), lambda g: (_fit(g, a), _fit(-g, b)))


def mul(a, b) -> Tensor:
    """Elementwise product; a real factor may scale a complex one."""
    a, b = as_tensor(a), as_tensor(b)
    out = _wrap(a.data * b.data)

    def backward(g):
        return _fit(g * np.conj(b.data), a), _fit(g * np.conj(a.data), b)

    return record(out, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return record(_wrap(-a.data), (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return record(_wrap(a.data * c), (a,), lambda g: (g * c,))


def square(a: Tensor) -> Tensor:
    if a.is_complex:
        raise TypeError("square expects a real tensor")
    return record(Tensor(a.data * a.data), (a,), lambda g: (2.0 * a.data * g,))


def sqrt(a: Tensor) -> Tensor:
    if a.is_complex:
        raise TypeError("sqrt expects a real tensor")
    r = np.sqrt(a.data)

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(r > 0, 0.5 / r, 0.0)
        return (g * d,)

    return record(Tensor(r), (a,), backward)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = _wrap(np.sum(a.data, axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return record(out, (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    out = _wrap(a.data.reshape(shape))
    return record(out, (a,), lambda g: (g.reshape(a.shape),))


def take(a: Tensor, index) -> Tensor:
    """Basic/advanced indexing (``a[index]``)."""
    out = _wrap(np.array(a.data[index]))

    def backward(g):
        full = np.zeros(a.shape, dtype=np.result_type(g, a.data))
        np.add.at(full, index, g)
        return (full,)

    return record(out, (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra

def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    out = _wrap(np.swapaxes(a.data, -1, -2))
    return record(out, (a,), lambda g: (np.swapaxes(g, -1, -2),))


def _mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # fold batch axes into one GEMM when one side is a plain matrix
    if b.ndim == 2 and a.ndim > 2:
        return (a.reshape(-1, a.shape[-1]) @ b).reshape(a.shape[:-1] + (b.shape[1],))
    if a.ndim == 2 and b.ndim > 2:
        k, n = b.shape[-2], b.shape[-1]
        bt = np.moveaxis(b, -2, 0).reshape(k, -1)
        out = (a @ bt).reshape((a.shape[0],) + b.shape[:-2] + (n,))
        return np.moveaxis(out, 0, -2)
    return a @ b


def _mm_reduce_left(g: np.ndarray, b: np.ndarray) -> np.ndarray:
    """sum over batch of g @ b^H, for a 2-D left operand."""
    m, k = g.shape[-2], b.shape[-2]
    g2 = np.moveaxis(g, -2, 0).reshape(m, -1)
    b2 = np.moveaxis(b, -2, 0).reshape(k, -1)
    return g2 @ np.conj(b2).T


def _mm_reduce_right(a: np.ndarray, g: np.ndarray) -> np.ndarray:
    """sum over batch of a^H @ g, for a 2-D right operand."""
    return np.conj(a.reshape(-1, a.shape[-1])).T @ g.reshape(-1, g.shape[-1])


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    out = _wrap(_mm(a.data, b.data))

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            if a.ndim == 2 and g.ndim > 2:
                ga = _mm_reduce_left(g, b.data)
            else:
                ga = _mm(g, np.conj(np.swapaxes(b.data, -1, -2)))
            ga = _fit(ga, a)
        if b.requires_grad:
            if b.ndim == 2 and g.ndim > 2:
                gb = _mm_reduce_right(a.data, g)
            else:
                gb = _mm(np.conj(np.swapaxes(a.data, -1, -2)), g)
            gb = _fit(gb, b)
        return ga, gb

    return record(out, (a, b), backward)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax along the last axis; ``-inf`` entries receive exactly zero."""
    if x.is_complex:
        raise TypeError("softmax_rows expects a real tensor")
    if x.ndim < 2:
        raise ValueError(f"softmax_rows expects at least 2-D input, got {x.shape}")
    top = np.max(x.data, axis=-1, keepdims=True)
    if np.any(np.isneginf(top)):
        raise ValueError("softmax_rows: a row is fully masked")
    e = np.exp(x.data - top)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - np.sum(g * s, axis=-1, keepdims=True)),)

    return record(Tensor(s), (x,), backward)


# ---------------------------------------------------------------------------
# polar form

def modulus(z: Tensor) -> Tensor:
    """|z| for complex tensors; subgradient 0 at the origin."""
    a = np.abs(z.data)

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            unit = np.where(a > 0, z.data / np.where(a > 0, a, 1.0), 0.0)
        return (g * unit,)

    return record(Tensor(a), (z,), backward)


def polar_decompose(z: CTensor) -> tuple[Tensor, Tensor]:
    """Amplitude and phase (``atan2(im, re)`` in ``(-pi, pi]``) of a complex tensor.

    Both gradients are defined as 0 at ``z == 0``.
    """
    zd = z.data
    amp = np.abs(zd)
    phase = np.arctan2(zd.imag, zd.real)
    phase[phase == -np.pi] = np.pi  # signed zero imaginary part; keep (-pi, pi]
    safe = np.where(amp > 0, amp, 1.0)
    unit = zd / safe  # exactly 0 where z == 0
    amp_t = record(Tensor(amp), (z,), lambda g: (g * unit,))
    phase_t = record(Tensor(phase), (z,), lambda g: (g * (1j * unit / safe),))
    return amp_t, phase_t


def polar_recompose(amplitude: Tensor, phase: Tensor) -> CTensor:
    """``amplitude * exp(1j * phase)``."""
    if amplitude.shape != phase.shape:
        raise ValueError(
            f"polar_recompose shape mismatch: {amplitude.shape} vs {phase.shape}"
        )
    rot = np.empty(phase.shape, dtype=np.complex128)
    rot.real = np.cos(phase.data)
    rot.imag = np.sin(phase.data)
    out = CTensor(amplitude.data * rot)

    def backward(g):
        gr = g * np.conj(rot)
        return gr.real, amplitude.data * gr.imag

    return record(out, (amplitude, phase), backward)
