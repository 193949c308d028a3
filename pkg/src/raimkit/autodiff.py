"""Reverse-mode automatic differentiation on 64-bit numpy arrays.

Every operation that participates in a gradient builds a node in an
implicit tape: the output tensor keeps references to its operands and a
closure implementing the local backward rule. ``backward`` linearises
that graph topologically (each recorded operation is replayed exactly
once, operands strictly before consumers) and accumulates gradients
additively into every ``requires_grad`` tensor. All data is float64;
tolerances in the verification suite rely on that.

Tensors with ``requires_grad=False`` record nothing, so evaluation
outside training carries no tape overhead.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DomainError, NumericsError, ShapeError

_GRAD_ENABLED = True


class no_grad:
    """Context manager that suspends tape recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    """N-dimensional float64 array participating in recorded computation."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def assert_finite(self, label="tensor"):
        """Raise NumericsError if data contains NaN or Inf."""
        if not np.all(np.isfinite(self.data)):
            raise NumericsError(f"non-finite values in {label}")

    def detach(self):
        return Tensor(self.data, requires_grad=False, name=self.name)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; all arithmetic routes through the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward):
    """Build an output tensor, recording the op if any parent needs grad."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t, g):
    if t.grad is None:
        t.grad = np.zeros(t.data.shape, dtype=np.float64)
    t.grad += g


def _unbroadcast(g, shape):
    """Sum gradient ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and structural operations
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}")

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))

    return _node(data, (a, b), backward)


def sub(a, b):
    return add(a, neg(_wrap(b)))


def neg(a):
    a = _wrap(a)

    def backward(g):
        if a.requires_grad:
            _accum(a, -g)

    return _node(-a.data, (a,), backward)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}")

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(data, (a, b), backward)


def power(a, p):
    """Elementwise a**p for a float exponent."""
    a = _wrap(a)
    p = float(p)
    data = a.data**p

    def backward(g):
        if a.requires_grad:
            _accum(a, g * p * a.data ** (p - 1.0))

    return _node(data, (a,), backward)


def sum_(a, axis=None, keepdims=False):
    a = _wrap(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            axes = tuple(ax % a.data.ndim for ax in axes)
            shape = [1 if i in axes else n for i, n in enumerate(a.data.shape)]
            g = g.reshape(shape)
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    return _node(data, (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = _wrap(a)
    n = a.data.size if axis is None else _axis_size(a.data.shape, axis)
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def _axis_size(shape, axis):
    axes = axis if isinstance(axis, tuple) else (axis,)
    out = 1
    for ax in axes:
        out *= shape[ax % len(shape)]
    return out


def reshape(a, shape):
    a = _wrap(a)
    data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            _accum(a, g.reshape(a.data.shape))

    return _node(data, (a,), backward)


def take(a, key):
    """Basic indexing (ints and slices); backward scatters into zeros."""
    a = _wrap(a)
    data = a.data[key]

    def backward(g):
        if a.requires_grad:
            full = np.zeros(a.data.shape, dtype=np.float64)
            full[key] = g
            _accum(a, full)

    return _node(data, (a,), backward)


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty tensor list")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(g):
        offset = 0
        for t, size in zip(tensors, sizes):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(offset, offset + size)
                _accum(t, g[tuple(idx)])
            offset += size

    return _node(data, tuple(tensors), backward)


def outer(u, v):
    """Outer product of two vectors: out[i, j] = u[i] * v[j]."""
    u, v = _wrap(u), _wrap(v)
    if u.data.ndim != 1 or v.data.ndim != 1:
        raise ShapeError(f"outer: expected vectors, got {u.shape} and {v.shape}")
    data = np.outer(u.data, v.data)

    def backward(g):
        if u.requires_grad:
            _accum(u, g @ v.data)
        if v.requires_grad:
            _accum(v, u.data @ g)

    return _node(data, (u, v), backward)


def matmul(a, b):
    """Matrix product with numpy-style 1-D promotion."""
    a, b = _wrap(a), _wrap(b)
    ad, bd = a.data, b.data
    if ad.ndim > 2 or bd.ndim > 2 or ad.ndim == 0 or bd.ndim == 0:
        raise ShapeError(f"matmul: unsupported ranks {a.shape} x {b.shape}")
    a2 = ad.reshape(1, -1) if ad.ndim == 1 else ad
    b2 = bd.reshape(-1, 1) if bd.ndim == 1 else bd
    if a2.shape[1] != b2.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree: {a.shape} x {b.shape}")
    out2 = a2 @ b2
    # squeeze promoted axes back out
    if ad.ndim == 1 and bd.ndim == 1:
        data = out2.reshape(())
    elif ad.ndim == 1:
        data = out2.reshape(-1)
    elif bd.ndim == 1:
        data = out2.reshape(-1)
    else:
        data = out2

    def backward(g):
        g2 = g.reshape(out2.shape)
        if a.requires_grad:
            _accum(a, (g2 @ b2.T).reshape(ad.shape))
        if b.requires_grad:
            _accum(b, (a2.T @ g2).reshape(bd.shape))

    return _node(data, (a, b), backward)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


def relu(a):
    a = _wrap(a)
    mask = a.data > 0  # subgradient 0 at the kink
    data = np.where(mask, a.data, 0.0)

    def backward(g):
        if a.requires_grad:
            _accum(a, g * mask)

    return _node(data, (a,), backward)


def tanh(a):
    a = _wrap(a)
    data = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            _accum(a, g * (1.0 - data * data))

    return _node(data, (a,), backward)


def sigmoid(a):
    a = _wrap(a)
    x = a.data
    data = np.empty_like(x)
    pos = x >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    data[~pos] = ex / (1.0 + ex)

    def backward(g):
        if a.requires_grad:
            _accum(a, g * data * (1.0 - data))

    return _node(data, (a,), backward)


def masked_softmax(s, mask=None, allow_empty=False):
    """Exp-normalise a vector over its unmasked entries.

    Masked entries are exactly zero in the output; the unmasked entries
    sum to one. Energies are shifted by their unmasked maximum before
    exponentiation. An all-masked input returns the zero vector when
    ``allow_empty`` is set and raises DomainError otherwise.
    """
    s = _wrap(s)
    if s.data.ndim != 1:
        raise ShapeError(f"masked_softmax: expected a vector, got {s.shape}")
    n = s.data.shape[0]
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (n,):
            raise ShapeError(f"masked_softmax: mask shape {mask.shape} != ({n},)")
    active = mask if mask is not None else np.ones(n, dtype=bool)
    if not active.any():
        if not allow_empty:
            raise DomainError("masked_softmax: all entries are masked")
        data = np.zeros(n, dtype=np.float64)

        def backward_zero(g):
            return None

        return _node(data, (s,), backward_zero)

    shifted = s.data[active] - s.data[active].max()
    ex = np.exp(shifted)
    data = np.zeros(n, dtype=np.float64)
    data[active] = ex / ex.sum()

    def backward(g):
        if s.requires_grad:
            # softmax Jacobian; masked coordinates stay at zero
            inner = float(np.dot(g, data))
            _accum(s, data * (g - inner))

    return _node(data, (s,), backward)


def cross_entropy(probs, label):
    """Negative log-probability of ``label`` with a 1e-12 floor before log."""
    probs = _wrap(probs)
    if probs.data.ndim != 1:
        raise ShapeError(f"cross_entropy: expected a vector, got {probs.shape}")
    n = probs.data.shape[0]
    label = int(label)
    if label < 0 or label >= n:
        raise IndexError(f"cross_entropy: label {label} out of range for {n} classes")
    if probs.data.min() < -1e-9 or abs(probs.data.sum() - 1.0) > 1e-6:
        raise DomainError("cross_entropy: input is not a probability vector")
    p = max(float(probs.data[label]), 1e-12)
    data = np.float64(-math.log(p))

    def backward(g):
        if probs.requires_grad:
            full = np.zeros(n, dtype=np.float64)
            full[label] = -float(g) / p
            _accum(probs, full)

    return _node(data, (probs,), backward)


# ---------------------------------------------------------------------------
# convolution / pooling / normalisation
# ---------------------------------------------------------------------------


def _conv_geometry(L, k, stride, padding):
    if padding == "same":
        L_out = -(-L // stride)  # ceil
        total = max((L_out - 1) * stride + k - L, 0)
        left = total // 2
        return L_out, left, total - left
    if padding == "valid":
        if k > L:
            raise ShapeError(f"conv1d: kernel {k} longer than input {L} under valid padding")
        return (L - k) // stride + 1, 0, 0
    raise ContractError(f"conv1d: unknown padding {padding!r}")


def conv1d(x, kernel, stride=1, padding="same"):
    """1-D cross-correlation.

    ``x`` is (c_in, L) or batched (B, c_in, L); ``kernel`` is
    (c_out, c_in, k). Same padding keeps ceil(L/stride) outputs with the
    extra zero on the right when the total pad is odd.
    """
    x, kernel = _wrap(x), _wrap(kernel)
    if kernel.data.ndim != 3:
        raise ShapeError(f"conv1d: kernel must be (c_out, c_in, k), got {kernel.shape}")
    if x.data.ndim not in (2, 3):
        raise ShapeError(f"conv1d: input must be (c_in, L) or (B, c_in, L), got {x.shape}")
    if stride < 1 or kernel.data.shape[2] < 1:
        raise ContractError("conv1d: stride and kernel size must be >= 1")
    batched = x.data.ndim == 3
    xd = x.data if batched else x.data[None]
    B, c_in, L = xd.shape
    c_out, kc_in, k = kernel.data.shape
    if kc_in != c_in:
        raise ShapeError(f"conv1d: input channels {c_in} != kernel channels {kc_in}")
    L_out, pad_l, pad_r = _conv_geometry(L, k, stride, padding)
    xp = np.pad(xd, ((0, 0), (0, 0), (pad_l, pad_r))) if (pad_l or pad_r) else xd
    # gather k strided taps: patches[b, c, i, j] = xp[b, c, i + stride*j]
    patches = np.empty((B, c_in, k, L_out), dtype=np.float64)
    for i in range(k):
        patches[:, :, i, :] = xp[:, :, i : i + stride * (L_out - 1) + 1 : stride]
    kflat = kernel.data.reshape(c_out, c_in * k)
    out = kflat @ patches.reshape(B, c_in * k, L_out)  # (B, c_out, L_out)
    data = out if batched else out[0]

    def backward(g):
        gb = g if batched else g[None]
        gb = gb.swapaxes(0, 1).reshape(c_out, B * L_out)
        if kernel.requires_grad:
            pf = patches.transpose(1, 2, 0, 3).reshape(c_in * k, B * L_out)
            _accum(kernel, (gb @ pf.T).reshape(c_out, c_in, k))
        if x.requires_grad:
            gp = (kflat.T @ gb).reshape(c_in, k, B, L_out).transpose(2, 0, 1, 3)
            dxp = np.zeros((B, c_in, L + pad_l + pad_r), dtype=np.float64)
            for i in range(k):
                dxp[:, :, i : i + stride * (L_out - 1) + 1 : stride] += gp[:, :, i, :]
            dx = dxp[:, :, pad_l : pad_l + L]
            _accum(x, dx if batched else dx[0])

    return _node(data, (x, kernel), backward)


def maxpool1d(x, window, stride=None):
    """Per-window maximum over the last axis; ties route to the lowest index."""
    x = _wrap(x)
    if x.data.ndim not in (2, 3):
        raise ShapeError(f"maxpool1d: input must be (c, L) or (B, c, L), got {x.shape}")
    if window < 1:
        raise ContractError("maxpool1d: window must be >= 1")
    stride = window if stride is None else stride
    batched = x.data.ndim == 3
    xd = x.data if batched else x.data[None]
    B, c, L = xd.shape
    if window > L:
        raise ShapeError(f"maxpool1d: window {window} exceeds length {L}")
    L_out = (L - window) // stride + 1
    taps = np.empty((window, B, c, L_out), dtype=np.float64)
    for i in range(window):
        taps[i] = xd[:, :, i : i + stride * (L_out - 1) + 1 : stride]
    arg = taps.argmax(axis=0)  # first maximiser wins
    out = np.take_along_axis(taps, arg[None], axis=0)[0]
    data = out if batched else out[0]

    def backward(g):
        gb = g if batched else g[None]
        dx = np.zeros((B, c, L), dtype=np.float64)
        for i in range(window):
            sel = arg == i
            if sel.any():
                dx[:, :, i : i + stride * (L_out - 1) + 1 : stride] += gb * sel
        _accum(x, dx if batched else dx[0])

    return _node(data, (x,), backward)


@dataclass
class BatchNormState:
    """Running statistics for one normalisation layer."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def create(cls, n_features, momentum=0.1):
        return cls(
            running_mean=np.zeros(n_features, dtype=np.float64),
            running_var=np.ones(n_features, dtype=np.float64),
            momentum=momentum,
        )


def batchnorm1d(x, gamma, beta, state, mode="train", eps=1e-5):
    """Normalise per feature with learnable scale/shift.

    ``x`` is (features, positions) or (B, features, positions); statistics
    pool over everything but the feature axis. Train mode uses the batch
    statistics and updates the running ones with the state's momentum;
    eval mode uses the running statistics. A train-mode batch with a
    single sample per feature degrades to the identity with a warning.
    """
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    if x.data.ndim == 2:
        axes, view = (1,), (-1, 1)
    elif x.data.ndim == 3:
        axes, view = (0, 2), (1, -1, 1)
    else:
        raise ShapeError(f"batchnorm1d: expected 2-D or 3-D input, got {x.shape}")
    n = _axis_size(x.data.shape, axes)
    if mode == "train":
        if n < 2:
            warnings.warn("batchnorm1d: single-sample batch, falling back to identity")
            return x
        mu = mean(x, axis=axes, keepdims=True)
        centred = sub(x, mu)
        var = mean(mul(centred, centred), axis=axes, keepdims=True)
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mu.data.reshape(-1)
        state.running_var = (1 - m) * state.running_var + m * var.data.reshape(-1)
        inv = power(add(var, eps), -0.5)
        xhat = mul(centred, inv)
    elif mode == "eval":
        inv = 1.0 / np.sqrt(state.running_var + eps)
        xhat = mul(sub(x, state.running_mean.reshape(view)), Tensor(inv.reshape(view)))
    else:
        raise ContractError(f"batchnorm1d: unknown mode {mode!r}")
    return add(mul(xhat, reshape(gamma, view)), reshape(beta, view))


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def backward(loss):
    """Populate gradients of every requires_grad tensor reachable from ``loss``."""
    if not isinstance(loss, Tensor) or loss.data.shape != ():
        raise ContractError("backward: loss must be a scalar tensor")
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p._backward is not None:
                stack.append((p, False))
    loss.grad = np.ones((), dtype=np.float64)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# optimiser
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Adam moment buffers and hyperparameters for a named parameter set."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state):
    """One bias-corrected Adam update over ``params`` (name -> Tensor).

    Parameters without an accumulated gradient are treated as zero-grad.
    A NaN gradient aborts with the offending parameter named.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros(p.data.shape, dtype=np.float64)
        elif not np.all(np.isfinite(g)):
            raise NumericsError(f"adam_step: non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros(p.data.shape, dtype=np.float64)
            state.v[name] = np.zeros(p.data.shape, dtype=np.float64)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def clear_grads(params):
    for p in params.values():
        p.grad = None


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------


def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f`` with respect to ``x``.

    ``f`` takes no arguments and reads ``x.data``; it must be
    deterministic. Returns an array shaped like ``x``.
    """
    base = x.data
    grad = np.zeros(base.shape, dtype=np.float64)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = float(f())
        flat[i] = keep - h
        down = float(f())
        flat[i] = keep
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def gradient_error(build_loss, params, h=1e-5):
    """Worst-case mismatch between tape gradients and finite differences.

    ``build_loss`` constructs the scalar loss tensor from scratch;
    ``params`` maps names to leaf tensors it reads. Returns
    ``(max_error, per_param)`` where the error metric is
    ``max(|ad - fd|, |ad - fd| / max(|fd|, 1))`` over all coordinates.
    """
    clear_grads(params)
    loss = build_loss()
    backward(loss)
    ad = {k: (p.grad.copy() if p.grad is not None else np.zeros(p.data.shape)) for k, p in params.items()}

    def eval_loss():
        with no_grad():
            return build_loss().item()

    per_param = {}
    for name, p in params.items():
        fd = finite_diff_grad(eval_loss, p, h=h)
        diff = np.abs(ad[name] - fd)
        rel = diff / np.maximum(np.abs(fd), 1.0)
        per_param[name] = float(np.maximum(diff, rel).max()) if diff.size else 0.0
    worst = max(per_param.values()) if per_param else 0.0
    return worst, per_param
