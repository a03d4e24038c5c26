"""Reverse-mode automatic differentiation on numpy buffers.

A ``Tape`` records every primitive executed while it is active; ``backward``
replays the records in exact reverse order, accumulating gradients
additively so fan-out needs no extra bookkeeping.  Tensors are thin
wrappers around contiguous row-major float arrays.  Training runs in
single precision; the finite-difference harness expects callers to build
their function in double precision for tight tolerances.

The active tape is thread-local: independent models may run forward and
backward passes on different threads concurrently.
"""

import threading

import numpy as np

from .errors import DimensionError


class Tensor:
    """A value buffer plus an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={tuple(self.data.shape)}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class _TapeStack(threading.local):
    def __init__(self):
        self.stack = []


_TAPES = _TapeStack()


class Tape:
    """Execution-ordered record of primitives, replayed in reverse by backward()."""

    def __init__(self):
        self._nodes = []
        self._consumed = False

    def __enter__(self):
        _TAPES.stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPES.stack.pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self._nodes)

    def reset(self):
        self._nodes.clear()
        self._consumed = False

    def backward(self, loss: Tensor):
        backward(self, loss)


def _active_tape():
    stack = _TAPES.stack
    return stack[-1] if stack else None


def backward(tape: Tape, loss: Tensor):
    """Populate grad buffers of every requires_grad tensor reachable from loss."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if tape._consumed:
        raise ValueError("tape already consumed by a backward pass; call reset() first")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape._nodes):
        node()
    tape._consumed = True


def _accum(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum g down to `shape`, inverting numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _op(out_data, inputs, back) -> Tensor:
    """Wrap a computed forward value; register `back(out_grad)` on the active tape."""
    out = Tensor(out_data, requires_grad=any(t.requires_grad for t in inputs))
    tape = _active_tape()
    if out.requires_grad and tape is not None:

        def node():
            if out.grad is not None:
                back(out.grad)

        tape._nodes.append(node)
    return out


# ---------------------------------------------------------------------------
# elementwise and broadcasting primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    def back(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _op(a.data + b.data, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def back(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, -_unbroadcast(g, b.data.shape))

    return _op(a.data - b.data, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def back(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _op(a.data * b.data, (a, b), back)


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)

    def back(g):
        _accum(a, g * factor)

    return _op(a.data * factor, (a,), back)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def back(g):
        _accum(a, g * mask)

    return _op(np.where(mask, a.data, 0), (a,), back)


def sigmoid(a: Tensor) -> Tensor:
    # split by sign so exp never overflows
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def back(g):
        _accum(a, g * out * (1.0 - out))

    return _op(out, (a,), back)


# ---------------------------------------------------------------------------
# matrix primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(
            f"matmul needs 2-D operands, got {a.data.ndim}-D and {b.data.ndim}-D"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul inner dimensions differ: lhs axis 1 is {a.data.shape[1]}, "
            f"rhs axis 0 is {b.data.shape[0]}"
        )

    def back(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _op(a.data @ b.data, (a, b), back)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise DimensionError(
            f"linear needs 2-D input and weight, got {x.data.ndim}-D and {weight.data.ndim}-D"
        )
    if x.data.shape[1] != weight.data.shape[0]:
        raise DimensionError(
            f"linear inner dimensions differ: input axis 1 is {x.data.shape[1]}, "
            f"weight axis 0 is {weight.data.shape[0]}"
        )
    if bias.data.shape != (weight.data.shape[1],):
        raise DimensionError(
            f"linear bias shape {bias.data.shape} does not match weight columns "
            f"({weight.data.shape[1]},)"
        )

    def back(g):
        _accum(x, g @ weight.data.T)
        _accum(weight, x.data.T @ g)
        _accum(bias, g.sum(axis=0))

    return _op(x.data @ weight.data + bias.data, (x, weight, bias), back)


def concat(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(
            f"concat needs 2-D operands, got {a.data.ndim}-D and {b.data.ndim}-D"
        )
    if a.data.shape[0] != b.data.shape[0]:
        raise DimensionError(
            f"concat batch axis differs: {a.data.shape[0]} vs {b.data.shape[0]}"
        )
    split = a.data.shape[1]

    def back(g):
        _accum(a, g[:, :split])
        _accum(b, g[:, split:])

    return _op(np.concatenate([a.data, b.data], axis=1), (a, b), back)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    in_shape = a.data.shape

    def back(g):
        _accum(a, g.reshape(in_shape))

    return _op(a.data.reshape(shape), (a,), back)


# ---------------------------------------------------------------------------
# softmax family (rows of a 2-D batch)


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"softmax needs a 2-D batch, got {a.data.ndim}-D")
    s = _softmax_rows(a.data)

    def back(g):
        dot = (g * s).sum(axis=1, keepdims=True)
        _accum(a, s * (g - dot))

    return _op(s, (a,), back)


def log_softmax(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"log_softmax needs a 2-D batch, got {a.data.ndim}-D")
    z = a.data - a.data.max(axis=1, keepdims=True)
    ls = z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    def back(g):
        _accum(a, g - np.exp(ls) * g.sum(axis=1, keepdims=True))

    return _op(ls, (a,), back)


# ---------------------------------------------------------------------------
# reductions


def sum_all(a: Tensor) -> Tensor:
    shape = a.data.shape

    def back(g):
        _accum(a, np.broadcast_to(g, shape))

    return _op(np.asarray(a.data.sum()), (a,), back)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    shape = a.data.shape

    def back(g):
        _accum(a, np.broadcast_to(g / n, shape))

    return _op(np.asarray(a.data.mean()), (a,), back)


def global_avg_pool(a: Tensor) -> Tensor:
    if a.data.ndim != 4:
        raise DimensionError(f"global_avg_pool needs an NCHW tensor, got {a.data.ndim}-D")
    n, c, h, w = a.data.shape

    def back(g):
        _accum(a, np.broadcast_to(g[:, :, None, None] / (h * w), (n, c, h, w)))

    return _op(a.data.mean(axis=(2, 3)), (a,), back)


def max_pool2x2(a: Tensor) -> Tensor:
    if a.data.ndim != 4:
        raise DimensionError(f"max_pool2x2 needs an NCHW tensor, got {a.data.ndim}-D")
    n, c, h, w = a.data.shape
    if h % 2 or w % 2:
        raise DimensionError(f"max_pool2x2 needs even spatial dims, got H={h}, W={w}")
    ho, wo = h // 2, w // 2
    windows = (
        a.data.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    )
    # argmax picks the first maximum, so tied windows route deterministically
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def back(g):
        dwin = np.zeros((n, c, ho, wo, 4), dtype=g.dtype)
        np.put_along_axis(dwin, idx[..., None], g[..., None], axis=-1)
        dx = dwin.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        _accum(a, dx)

    return _op(out, (a,), back)


# ---------------------------------------------------------------------------
# convolution


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    if x.data.ndim != 4:
        raise DimensionError(f"conv2d input must be NCHW, got {x.data.ndim}-D")
    if kernel.data.ndim != 4:
        raise DimensionError(f"conv2d kernel must be OIKK, got {kernel.data.ndim}-D")
    n, c, h, w = x.data.shape
    o, ci, kh, kw = kernel.data.shape
    if kh != kw:
        raise DimensionError(f"conv2d kernel must be square, got {kh}x{kw}")
    if ci != c:
        raise DimensionError(
            f"conv2d channel mismatch: input axis 1 has {c} channels, kernel axis 1 expects {ci}"
        )
    if bias.data.shape != (o,):
        raise DimensionError(f"conv2d bias shape {bias.data.shape} does not match ({o},)")
    if stride < 1:
        raise ValueError(f"conv2d stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"conv2d padding must be >= 0, got {padding}")
    k = kh
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if ho < 1 or wo < 1:
        raise DimensionError(
            f"conv2d output would be empty: input {h}x{w}, kernel {k}, padding {padding}"
        )

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data

    # im2col: one strided slice per kernel offset
    cols = np.empty((n, c * k * k, ho * wo), dtype=xp.dtype)
    for ki in range(k):
        for kj in range(k):
            patch = xp[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride]
            cols[:, (ki * k + kj) :: k * k, :] = patch.reshape(n, c, ho * wo)
    w2d = kernel.data.reshape(o, c * k * k)
    out = np.matmul(w2d, cols).reshape(n, o, ho, wo) + bias.data[None, :, None, None]

    def back(g):
        g2 = g.reshape(n, o, ho * wo)
        if bias.requires_grad:
            _accum(bias, g.sum(axis=(0, 2, 3)))
        if kernel.requires_grad:
            _accum(kernel, np.einsum("nol,nkl->ok", g2, cols).reshape(o, c, k, k))
        if x.requires_grad:
            dcols = np.matmul(w2d.T, g2)  # (n, c*k*k, ho*wo)
            dxp = np.zeros_like(xp)
            for ki in range(k):
                for kj in range(k):
                    block = dcols[:, (ki * k + kj) :: k * k, :].reshape(n, c, ho, wo)
                    dxp[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride] += block
            if padding:
                dxp = dxp[:, :, padding : padding + h, padding : padding + w]
            _accum(x, dxp)

    return _op(out, (x, kernel, bias), back)


# ---------------------------------------------------------------------------
# parameter initialization and optimizer


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class AdamState:
    """Per-parameter first/second moment buffers plus hyperparameters."""

    def __init__(self, params, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        params = list(params)
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update, in place on each parameter buffer."""
    params = list(params)
    grads = list(grads)
    if len(params) != len(state.m) or len(grads) != len(params):
        raise DimensionError(
            f"adam_step got {len(params)} params / {len(grads)} grads for a state of {len(state.m)}"
        )
    t = state.step_count + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g)
        if g.shape != p.data.shape:
            raise DimensionError(
                f"adam_step gradient {i} has shape {g.shape}, parameter has {p.data.shape}"
            )
        m = state.m[i]
        v = state.v[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    state.step_count = t


# ---------------------------------------------------------------------------
# gradient oracle


def finite_diff_check(f, x: Tensor, eps: float = 1e-5, coords=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be a deterministic scalar-valued function of ``x``.  Build the
    function (and any parameters it closes over) in float64; the comparison
    itself is carried out in double precision.  ``coords`` optionally
    restricts the check to a subset of flat coordinate indices.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    was_required = x.requires_grad
    x.requires_grad = True
    x.grad = None
    try:
        with Tape() as tape:
            y = f(x)
            if y.data.size != 1:
                raise ValueError(f"finite_diff_check needs a scalar function, got {y.data.shape}")
        backward(tape, y)
        analytic = (
            np.zeros(x.data.size, dtype=np.float64)
            if x.grad is None
            else x.grad.astype(np.float64).ravel()
        )
        flat = x.data.reshape(-1)  # contiguous, so this is a view
        indices = range(flat.size) if coords is None else coords
        worst = 0.0
        for i in indices:
            orig = flat[i]
            flat[i] = orig + eps
            y_plus = float(f(x).data.reshape(()))
            flat[i] = orig - eps
            y_minus = float(f(x).data.reshape(()))
            flat[i] = orig
            numeric = (y_plus - y_minus) / (2.0 * eps)
            err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]))
            if err > worst:
                worst = err
        return worst
    finally:
        x.requires_grad = was_required
