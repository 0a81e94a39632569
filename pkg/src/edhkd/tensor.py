"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

Only the primitives needed by the generator/classifier stacks are provided:
broadcasting arithmetic, batched matmul, reductions, abs, clamped log,
softmax / log-softmax, ReLU6 and a fused batch normalization.
"""
from dataclasses import dataclass, field

import numpy as np

from edhkd import kernels

# Non-smooth ops append their active-region pattern here while a recorder is
# installed; grad_check uses it to skip stencils that straddle a kink.
_KINK_RECORDER = None
_GRAD_ENABLED = True


class no_grad:
    """Context manager that stops graph construction (inference only)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev


class frozen:
    """Temporarily mark parameters as constants so no gradient is formed for them."""

    def __init__(self, params):
        self.params = list(params)

    def __enter__(self):
        self._prev = [p.requires_grad for p in self.params]
        for p in self.params:
            p.requires_grad = False

    def __exit__(self, *exc):
        for p, r in zip(self.params, self._prev):
            p.requires_grad = r


def _record_kinks(pattern):
    if _KINK_RECORDER is not None:
        _KINK_RECORDER.append(pattern)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self):
        backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _needs_grad(*ts):
    return any(t.requires_grad for t in ts)


def _make(data, parents, backward_fn):
    if not (_GRAD_ENABLED and _needs_grad(*parents)):
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn)


def unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), bw)


def matmul(a, b):
    """Batched matmul with numpy broadcasting over leading dims (both >= 2-D)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    def bw(g):
        ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), bw)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)

    def bw(g):
        return (g.reshape(a.shape),)

    return _make(a.data.reshape(shape), (a,), bw)


def getitem(a, idx):
    a = as_tensor(a)

    basic = all(isinstance(i, (slice, int, type(Ellipsis))) for i in (idx if isinstance(idx, tuple) else (idx,)))

    def bw(g):
        out = np.zeros_like(a.data)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def tabs(a):
    a = as_tensor(a)
    sign = np.sign(a.data)
    _record_kinks(sign)

    def bw(g):
        return (g * sign,)

    return _make(np.abs(a.data), (a,), bw)


def log(a, floor=1e-12):
    """Natural log of ``max(a, floor)``; zero gradient below the floor."""
    a = as_tensor(a)
    clipped = np.maximum(a.data, floor)
    active = a.data > floor

    def bw(g):
        return (np.where(active, g / clipped, 0.0),)

    return _make(np.log(clipped), (a,), bw)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)

    def bw(g):
        return (g * out,)

    return _make(out, (a,), bw)


def relu6(a):
    """min(max(x, 0), 6); subgradient taken as 0 at both corners."""
    a = as_tensor(a)
    _record_kinks((a.data > 0.0) & (a.data < 6.0))

    def bw(g):
        return (kernels.relu6_backward(a.data, g),)

    return _make(kernels.relu6_forward(a.data), (a,), bw)


def softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _make(p, (a,), bw)


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), bw)


def softmax_cross_entropy(logits, labels):
    """Mean over rows of ``-log softmax(logits)[label]`` for 2-D logits."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ValueError("logits must be (batch, classes)")
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError("labels must have one entry per row")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels.astype(int)] = 1.0
    return -(log_softmax(logits) * onehot).sum() * (1.0 / n)


@dataclass
class BatchNormState:
    """Affine parameters and running statistics of one batch-norm layer.

    ``gamma``/``beta``/running arrays carry the full broadcast shape, i.e. the
    input shape with the batch axis collapsed to 1.
    """

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    axis: int = 0
    momentum: float = 0.1
    eps: float = 1e-5
    training: bool = True

    @classmethod
    def create(cls, stat_shape, axis, momentum=0.1, eps=1e-5):
        return cls(
            gamma=Tensor(np.ones(stat_shape), requires_grad=True),
            beta=Tensor(np.zeros(stat_shape), requires_grad=True),
            running_mean=np.zeros(stat_shape),
            running_var=np.ones(stat_shape),
            axis=axis,
            momentum=momentum,
            eps=eps,
        )


def _to3d(arr, axis):
    shape = arr.shape
    pre = int(np.prod(shape[:axis]))
    post = int(np.prod(shape[axis + 1:]))
    return np.ascontiguousarray(arr).reshape(pre, shape[axis], post)


def batch_norm(x, s, update_stats=True):
    """Normalize ``x`` over axis ``s.axis`` then scale by gamma and shift by beta.

    Train mode uses batch statistics (population variance) and, when
    ``update_stats`` is set, folds them into the running estimates with the
    unbiased variance. Eval mode uses the running estimates and never writes.
    """
    x = as_tensor(x)
    axis = s.axis
    if s.training:
        n = x.shape[axis]
        if n < 2:
            raise ValueError("batch_norm in train mode needs a batch of at least 2")
        xhat3, mean3, var3, inv3 = kernels.bn_train_forward(_to3d(x.data, axis), s.eps)
        xhat = xhat3.reshape(x.shape)
        stat_shape = x.shape[:axis] + (1,) + x.shape[axis + 1:]
        if update_stats:
            m = s.momentum
            mean = mean3.reshape(stat_shape)
            unbiased = var3.reshape(stat_shape) * (n / (n - 1))
            s.running_mean = (1.0 - m) * s.running_mean + m * mean
            s.running_var = (1.0 - m) * s.running_var + m * unbiased
        inv_std3 = inv3
    else:
        inv_std = 1.0 / np.sqrt(s.running_var + s.eps)
        xhat = (x.data - s.running_mean) * inv_std
    gamma, beta = s.gamma, s.beta
    out = xhat * gamma.data + beta.data

    def bw(g):
        dgamma = unbroadcast(g * xhat, gamma.shape)
        dbeta = unbroadcast(g, beta.shape)
        dxhat = g * gamma.data
        if s.training:
            dx = kernels.bn_backward(_to3d(dxhat, axis), xhat3, inv_std3).reshape(x.shape)
        else:
            dx = dxhat * inv_std
        return dx, dgamma, dbeta

    return _make(out, (x, gamma, beta), bw)


def bn_relu6(x, s, update_stats=True):
    """Fused ``relu6(batch_norm(x, s))``; train mode runs one compiled kernel."""
    x = as_tensor(x)
    if not s.training:
        if _GRAD_ENABLED and _needs_grad(x, s.gamma, s.beta):
            return relu6(batch_norm(x, s, update_stats))
        # inference: fold the running statistics into one scale and shift
        scale = s.gamma.data / np.sqrt(s.running_var + s.eps)
        out = x.data * scale
        out += s.beta.data - s.running_mean * scale
        return Tensor(np.clip(out, 0.0, 6.0, out=out))
    axis = s.axis
    n = x.shape[axis]
    if n < 2:
        raise ValueError("batch_norm in train mode needs a batch of at least 2")
    stat_shape = x.shape[:axis] + (1,) + x.shape[axis + 1:]
    pre = int(np.prod(x.shape[:axis]))
    post = int(np.prod(x.shape[axis + 1:]))
    gamma, beta = s.gamma, s.beta
    g3 = gamma.data.reshape(pre, 1, post)
    out3, xhat3, mean3, var3, inv3 = kernels.bn_relu6_forward(
        _to3d(x.data, axis), np.ascontiguousarray(g3), np.ascontiguousarray(beta.data.reshape(pre, 1, post)), s.eps)
    out = out3.reshape(x.shape)
    _record_kinks((out > 0.0) & (out < 6.0))
    if update_stats:
        m = s.momentum
        s.running_mean = (1.0 - m) * s.running_mean + m * mean3.reshape(stat_shape)
        s.running_var = (1.0 - m) * s.running_var + m * var3.reshape(stat_shape) * (n / (n - 1))

    def bw(g):
        dx, dgamma, dbeta = kernels.bn_relu6_backward(_to3d(g, axis), out3, xhat3, g3, inv3)
        return dx.reshape(x.shape), dgamma.reshape(gamma.shape), dbeta.reshape(beta.shape)

    return _make(out, (x, gamma, beta), bw)


def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Populate ``.grad`` of every leaf reachable from scalar ``loss``.

    Leaf gradients accumulate across calls; intermediate gradients are not
    retained.
    """
    if loss.data.size != 1:
        raise ValueError("backward() requires a scalar loss")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = np.array(g, dtype=np.float64) if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    skipped_kinks: int
    worst: tuple = field(default=())


def grad_check(f, params, h=1e-5, coords=None, floor=1e-8, skip_kinks=True, details=False):
    """Compare backward() gradients with central finite differences.

    ``f`` maps the current parameter values to a scalar Tensor. ``coords``
    optionally restricts the check to ``{param_index: [flat indices]}``;
    by default every coordinate is checked. When ``skip_kinks`` is set, a
    coordinate whose +-h stencil changes the active region of relu6/abs is
    excluded, since f is not differentiable across it. Returns the maximum
    of ``|a - n| / max(|a|, |n|, floor)``.
    """
    global _KINK_RECORDER
    for p in params:
        p.grad = None
    backward(f())
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.grad = None
    if coords is None:
        coords = {i: range(p.data.size) for i, p in enumerate(params)}

    def evaluate():
        global _KINK_RECORDER
        rec = [] if skip_kinks else None
        _KINK_RECORDER = rec
        try:
            val = float(f().data)
        finally:
            _KINK_RECORDER = None
        return val, rec

    base_pattern = evaluate()[1] if skip_kinks else None
    worst, max_err, checked, skipped = (), 0.0, 0, 0
    for pi, flat_idx in coords.items():
        p = params[pi]
        flat = p.data.reshape(-1)
        for j in flat_idx:
            old = flat[j]
            flat[j] = old + h
            fp, pat_p = evaluate()
            flat[j] = old - h
            fm, pat_m = evaluate()
            flat[j] = old
            if skip_kinks and not (_same_pattern(pat_p, base_pattern) and _same_pattern(pat_m, base_pattern)):
                skipped += 1
                continue
            num = (fp - fm) / (2.0 * h)
            ana = analytic[pi].reshape(-1)[j]
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            checked += 1
            if err > max_err:
                max_err, worst = err, (pi, j, ana, num)
    if details:
        return GradCheckResult(max_err, checked, skipped, worst)
    return max_err


def _same_pattern(a, b):
    if len(a) != len(b):
        return False
    return all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))
