"""Dense float32 tensors with reverse-mode automatic differentiation.

The operator set is exactly what the convolutional backbones, masking blocks
and gradient attacks need: conv2d, linear, elementwise arithmetic, pooling,
batch normalization and softmax cross-entropy.  Forward values are computed
eagerly with numpy; when gradients are enabled each operation records a node
(operand references plus a backward rule) on the output tensor, and
``backward(loss)`` replays the recorded graph in reverse topological order.

Gradients accumulate additively across fan-out and must be zeroed explicitly
between steps.  Storage is float32; float64 inputs are propagated unchanged
so the finite-difference oracle can run in a 64-bit shadow mode.
"""

import contextlib

import numpy as np

_FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the context (forward-only execution)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Node:
    """One recorded operation: operand references plus a backward rule."""

    __slots__ = ("op", "inputs", "backward_rule")

    def __init__(self, op, inputs, backward_rule):
        self.op = op
        self.inputs = inputs
        self.backward_rule = backward_rule


class Tensor:
    """n-dimensional array of 32-bit reals with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "node", "_backward_done")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node = None
        self._backward_done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype):
        t = Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)
        return t

    def __repr__(self):
        return f"Tensor(shape={list(self.shape)}, requires_grad={self.requires_grad})"

    def _wants_grad(self):
        return self.requires_grad or self.node is not None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g


def _make_output(data, op, inputs, backward_rule):
    out = Tensor(data)
    if _grad_enabled and any(t._wants_grad() for t in inputs):
        out.node = Node(op, inputs, backward_rule)
    return out


def tape(loss):
    """Return the recorded operations reaching ``loss`` in topological order.

    Every operand of node k is produced by some node j < k or is a leaf; one
    reverse traversal of this list implements backpropagation.
    """
    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        t, expanded = stack.pop()
        if t.node is None or id(t) in visited:
            if not expanded:
                continue
        if expanded:
            order.append(t)
            continue
        visited.add(id(t))
        stack.append((t, True))
        for inp in t.node.inputs:
            if inp.node is not None and id(inp) not in visited:
                stack.append((inp, False))
    return order


def backward(loss):
    """Populate ``grad`` for every requires_grad leaf reachable from ``loss``.

    ``loss`` must be a scalar produced by recorded operations.  Calling
    backward twice on the same result is rejected.
    """
    if loss.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {list(loss.shape)}")
    if loss._backward_done:
        raise RuntimeError("backward already executed for this loss; re-run the forward pass")
    loss._backward_done = True
    if loss.node is None:
        if loss.requires_grad:
            loss._accumulate(np.ones_like(loss.data))
        return
    order = tape(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        input_grads = t.node.backward_rule(g)
        for inp, ig in zip(t.node.inputs, input_grads):
            if ig is None:
                continue
            if inp.node is not None:
                acc = grads.get(id(inp))
                grads[id(inp)] = ig if acc is None else acc + ig
            elif inp.requires_grad:
                inp._accumulate(ig)


# ---------------------------------------------------------------------------
# elementwise operators


def _check_same_shape(op, a, b):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {list(a.shape)} vs {list(b.shape)}")


def add(a, b):
    _check_same_shape("add", a, b)

    def bwd(g):
        return (g if a._wants_grad() else None, g if b._wants_grad() else None)

    return _make_output(a.data + b.data, "add", (a, b), bwd)


def sub(a, b):
    _check_same_shape("sub", a, b)

    def bwd(g):
        return (g if a._wants_grad() else None, -g if b._wants_grad() else None)

    return _make_output(a.data - b.data, "sub", (a, b), bwd)


def hadamard(a, b):
    _check_same_shape("hadamard", a, b)

    def bwd(g):
        ga = g * b.data if a._wants_grad() else None
        gb = g * a.data if b._wants_grad() else None
        return ga, gb

    return _make_output(a.data * b.data, "hadamard", (a, b), bwd)


def relu(a):
    out_data = np.maximum(a.data, 0)
    mask = a.data > 0

    def bwd(g):
        return (g * mask,)

    return _make_output(out_data, "relu", (a,), bwd)


def elementwise(kind, a, b=None):
    """Dispatch over the elementwise operator family."""
    if kind == "relu":
        return relu(a)
    if b is None:
        raise ValueError(f"elementwise '{kind}' needs two operands")
    if kind == "add":
        return add(a, b)
    if kind == "sub":
        return sub(a, b)
    if kind == "hadamard":
        return hadamard(a, b)
    raise ValueError(f"unknown elementwise kind '{kind}'")


def sum_all(a):
    def bwd(g):
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)

    return _make_output(np.asarray(a.data.sum()), "sum_all", (a,), bwd)


def flatten(a):
    n = a.shape[0]
    out_data = a.data.reshape(n, -1)

    def bwd(g):
        return (g.reshape(a.shape),)

    return _make_output(out_data, "flatten", (a,), bwd)


# ---------------------------------------------------------------------------
# linear algebra


def linear(x, w, b):
    """Affine map [N,D] @ [D,M] + [M]."""
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ValueError("linear expects 2-d input and weight")
    if x.shape[1] != w.shape[0]:
        raise ValueError(f"linear: inner dims disagree, input {list(x.shape)} weight {list(w.shape)}")
    if b.shape != (w.shape[1],):
        raise ValueError(f"linear: bias shape {list(b.shape)} != [{w.shape[1]}]")
    out_data = x.data @ w.data + b.data

    def bwd(g):
        gx = g @ w.data.T if x._wants_grad() else None
        gw = x.data.T @ g if w._wants_grad() else None
        gb = g.sum(axis=0) if b._wants_grad() else None
        return gx, gw, gb

    return _make_output(out_data, "linear", (x, w, b), bwd)


def _im2col(xp, kh, kw, stride, ho, wo):
    n, c = xp.shape[:2]
    sn, sc, sh, sw = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, (n, c, kh, kw, ho, wo), (sn, sc, sh, sw, sh * stride, sw * stride)
    )
    return view


def conv2d(x, w, b, stride=1, pad=0):
    """Cross-correlation of [N,C,H,W] with kernels [F,C,kh,kw] plus bias [F]."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError("conv2d expects 4-d input and kernel")
    n, c, h, wd = x.shape
    f, ck, kh, kw = w.shape
    if ck != c:
        raise ValueError(f"conv2d: kernel channels {ck} != input channels {c}")
    if b.shape != (f,):
        raise ValueError(f"conv2d: bias shape {list(b.shape)} != [{f}]")
    if stride < 1:
        raise ValueError("conv2d: stride must be >= 1")
    if kh > h + 2 * pad or kw > wd + 2 * pad:
        raise ValueError(f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{wd + 2 * pad}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    # [N,Ho,Wo,C*kh*kw] @ [C*kh*kw,F] as one GEMM
    mat = np.ascontiguousarray(cols.transpose(0, 4, 5, 1, 2, 3)).reshape(n * ho * wo, c * kh * kw)
    out_mat = mat @ w.data.reshape(f, -1).T + b.data
    out_data = out_mat.reshape(n, ho, wo, f).transpose(0, 3, 1, 2).copy()

    def bwd(g):
        gw = gb = gx = None
        if w._wants_grad():
            cols2 = _im2col(xp, kh, kw, stride, ho, wo)
            gw = np.tensordot(g, cols2, axes=([0, 2, 3], [0, 4, 5]))
        if b._wants_grad():
            gb = g.sum(axis=(0, 2, 3))
        if x._wants_grad():
            gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)
            dcols = (gmat @ w.data.reshape(f, -1)).reshape(n, ho, wo, c, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            gx = gxp[:, :, pad : pad + h, pad : pad + wd] if pad else gxp
        return gx, gw, gb

    return _make_output(out_data, "conv2d", (x, w, b), bwd)


# ---------------------------------------------------------------------------
# pooling and normalization


def maxpool2x2(x):
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2x2: spatial dims {h}x{w} not divisible by 2")
    ho, wo = h // 2, w // 2
    windows = x.data.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    idx = windows.argmax(axis=-1)
    out_data = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def bwd(g):
        dwin = np.zeros((n, c, ho, wo, 4), dtype=g.dtype)
        np.put_along_axis(dwin, idx[..., None], g[..., None], axis=-1)
        gx = dwin.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    return _make_output(out_data, "maxpool2x2", (x,), bwd)


def avgpool(x):
    """Global average pool [N,C,H,W] -> [N,C]."""
    n, c, h, w = x.shape
    out_data = x.data.mean(axis=(2, 3))

    def bwd(g):
        gx = np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).astype(g.dtype, copy=True)
        return (gx,)

    return _make_output(out_data, "avgpool", (x,), bwd)


def batchnorm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel batch normalization over [N,C,H,W].

    Training mode normalizes with batch statistics and updates the running
    buffers in place (momentum 0.1 convention); eval mode uses the frozen
    running statistics and never mutates them.
    """
    if x.data.ndim != 4:
        raise ValueError("batchnorm expects a 4-d input")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"batchnorm: parameter shape mismatch for {c} channels")
    cnt = n * h * w
    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        unbiased = var * (cnt / max(cnt - 1, 1))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.astype(running_mean.dtype)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased.astype(running_var.dtype)
    else:
        mu = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * invstd[None, :, None, None]
    out_data = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def bwd(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3)) if gamma._wants_grad() else None
        gbeta = g.sum(axis=(0, 2, 3)) if beta._wants_grad() else None
        gx = None
        if x._wants_grad():
            dxhat = g * gamma.data[None, :, None, None]
            if training:
                sum_dxhat = dxhat.sum(axis=(0, 2, 3))
                sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3))
                gx = (invstd[None, :, None, None] / cnt) * (
                    cnt * dxhat
                    - sum_dxhat[None, :, None, None]
                    - xhat * sum_dxhat_xhat[None, :, None, None]
                )
            else:
                gx = dxhat * invstd[None, :, None, None]
        return gx, ggamma, gbeta

    return _make_output(out_data, "batchnorm", (x, gamma, beta), bwd)


def pool_and_norm(kind, x, **params):
    """Dispatch over the pooling / normalization family."""
    if kind == "maxpool2x2":
        return maxpool2x2(x)
    if kind == "avgpool":
        return avgpool(x)
    if kind == "batchnorm":
        return batchnorm(x, **params)
    raise ValueError(f"unknown pool_and_norm kind '{kind}'")


# ---------------------------------------------------------------------------
# loss


def softmax_cross_entropy(logits, labels):
    """Mean over the batch of -log softmax(logits)[label], max-stabilized."""
    if logits.data.ndim != 2:
        raise ValueError("softmax_cross_entropy expects [N, M] logits")
    n, m = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError(f"labels shape {list(labels.shape)} != [{n}]")
    if labels.min() < 0 or labels.max() >= m:
        raise ValueError(f"label out of range [0, {m})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    sz = ez.sum(axis=1, keepdims=True)
    logp = z - np.log(sz)
    loss = -logp[np.arange(n), labels].mean()

    def bwd(g):
        p = ez / sz
        p[np.arange(n), labels] -= 1.0
        return (p * (g / n),)

    return _make_output(np.asarray(loss, dtype=logits.dtype), "softmax_cross_entropy", (logits,), bwd)
