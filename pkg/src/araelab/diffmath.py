"""Dense tensor math with reverse-mode automatic differentiation.

Tensors are plain numpy arrays (row-major, float32 for training, float64
for gradient checking). ``DiffNode`` wraps a value and carries parent
references plus a backward closure; a fresh graph is built on every
forward pass (define-by-run), which keeps variable-length RNN unrolling
simple. Gradients accumulate additively into ``.grad`` until explicitly
zeroed.

Broadcasting is deliberately narrow: scalar-to-tensor, row-vector bias
onto a matrix (``add``), and column-vector mask onto a matrix (``mul``).
Anything else raises a ``ShapeError``.
"""

import numpy as np


class ShapeError(ValueError):
    pass


class ContractError(ValueError):
    pass


class DiffNode:
    """A node in the reverse-mode graph: value, grad, op record."""

    __slots__ = ("value", "grad", "parents", "_backward", "op")

    def __init__(self, value, parents=(), backward=None, op="leaf"):
        self.value = np.asarray(value)
        self.grad = None
        self.parents = parents
        self._backward = backward
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    def ensure_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        return self.grad

    def zero_grad(self):
        self.grad = None


def as_node(x):
    return x if isinstance(x, DiffNode) else DiffNode(x, op="const")


def value_of(x):
    return x.value if isinstance(x, DiffNode) else np.asarray(x)


def zero_grads(params):
    for p in params:
        p.zero_grad()


def backward(root):
    """Accumulate d(root)/d(leaf) into every reachable node's grad."""
    if root.value.ndim != 0 and root.value.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.shape}")
    # iterative post-order topological sort
    topo, visited, stack = [], set(), [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))
    g = root.ensure_grad()
    g += np.ones_like(root.value)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# primitive ops


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    if shape == ():
        return grad.sum()
    if len(shape) == 1:  # row vector added to each row
        return grad.sum(axis=0)
    if len(shape) == 2 and shape[0] == 1:
        return grad.sum(axis=0, keepdims=True)
    if len(shape) == 2 and shape[1] == 1:
        return grad.sum(axis=1, keepdims=True)
    raise ShapeError(f"cannot reduce grad {grad.shape} to {shape}")


def _check_broadcast(a_shape, b_shape, allow):
    if a_shape == b_shape:
        return
    if b_shape == () or a_shape == ():
        return
    if allow == "row" and len(a_shape) == 2 and b_shape in ((a_shape[1],), (1, a_shape[1])):
        return
    if allow == "col" and len(a_shape) == 2 and b_shape == (a_shape[0], 1):
        return
    raise ShapeError(f"incompatible shapes {a_shape} and {b_shape}")


def matmul(a, b):
    a, b = as_node(a), as_node(b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul shapes {av.shape} x {bv.shape}")
    out_val = av @ bv

    def bwd(g):
        a.ensure_grad()
        a.grad += g @ bv.T
        b.ensure_grad()
        b.grad += av.T @ g
    return DiffNode(out_val, (a, b), bwd, "matmul")


def transpose(a):
    a = as_node(a)

    def bwd(g):
        a.ensure_grad()
        a.grad += g.T
    return DiffNode(a.value.T.copy(), (a,), bwd, "transpose")


def add(a, b):
    a, b = as_node(a), as_node(b)
    _check_broadcast(a.value.shape, b.value.shape, allow="row")
    out_val = a.value + b.value

    def bwd(g):
        a.ensure_grad()
        a.grad += _unbroadcast(g, a.value.shape)
        b.ensure_grad()
        b.grad += _unbroadcast(g, b.value.shape)
    return DiffNode(out_val, (a, b), bwd, "add")


def sub(a, b):
    return add(a, neg(b))


def neg(a):
    a = as_node(a)

    def bwd(g):
        a.ensure_grad()
        a.grad -= g
    return DiffNode(-a.value, (a,), bwd, "neg")


def mul(a, b):
    a, b = as_node(a), as_node(b)
    _check_broadcast(a.value.shape, b.value.shape, allow="col")
    av, bv = a.value, b.value
    out_val = av * bv

    def bwd(g):
        a.ensure_grad()
        a.grad += _unbroadcast(g * bv, av.shape)
        b.ensure_grad()
        b.grad += _unbroadcast(g * av, bv.shape)
    return DiffNode(out_val, (a, b), bwd, "mul")


def scale(a, s):
    a = as_node(a)
    s = float(s)

    def bwd(g):
        a.ensure_grad()
        a.grad += g * s
    return DiffNode(a.value * s, (a,), bwd, "scale")


def tanh(a):
    a = as_node(a)
    t = np.tanh(a.value)

    def bwd(g):
        a.ensure_grad()
        a.grad += g * (1.0 - t * t)
    return DiffNode(t, (a,), bwd, "tanh")


def bounded_tanh(a, margin=1e-7):
    """tanh clipped strictly inside (-1, 1); guards float32 saturation."""
    a = as_node(a)
    t = np.clip(np.tanh(a.value), -1.0 + margin, 1.0 - margin)

    def bwd(g):
        a.ensure_grad()
        a.grad += g * (1.0 - t * t)
    return DiffNode(t, (a,), bwd, "bounded_tanh")


def sigmoid(a):
    a = as_node(a)
    v = a.value
    s = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                 np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v)))).astype(v.dtype)

    def bwd(g):
        a.ensure_grad()
        a.grad += g * s * (1.0 - s)
    return DiffNode(s, (a,), bwd, "sigmoid")


def relu(a):
    a = as_node(a)
    mask = a.value > 0

    def bwd(g):
        a.ensure_grad()
        a.grad += g * mask
    return DiffNode(a.value * mask, (a,), bwd, "relu")


def sum_all(a):
    a = as_node(a)

    def bwd(g):
        a.ensure_grad()
        a.grad += g * np.ones_like(a.value)
    return DiffNode(np.asarray(a.value.sum(), dtype=a.value.dtype), (a,), bwd, "sum")


def mean_all(a):
    a = as_node(a)
    n = a.value.size

    def bwd(g):
        a.ensure_grad()
        a.grad += (g / n) * np.ones_like(a.value)
    return DiffNode(np.asarray(a.value.mean(), dtype=a.value.dtype), (a,), bwd, "mean")


def concat_cols(a, b):
    a, b = as_node(a), as_node(b)
    if a.value.shape[0] != b.value.shape[0]:
        raise ShapeError(f"concat rows {a.value.shape} vs {b.value.shape}")
    na = a.value.shape[1]

    def bwd(g):
        a.ensure_grad()
        a.grad += g[:, :na]
        b.ensure_grad()
        b.grad += g[:, na:]
    return DiffNode(np.concatenate([a.value, b.value], axis=1), (a, b), bwd, "concat")


def slice_cols(a, start, stop):
    a = as_node(a)

    def bwd(g):
        a.ensure_grad()[:, start:stop] += g
    return DiffNode(a.value[:, start:stop].copy(), (a,), bwd, "slice")


def embedding_lookup(table, indices):
    table = as_node(table)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.value.shape[0]):
        raise IndexError(f"embedding index out of range for table {table.value.shape}")

    def bwd(g):
        table.ensure_grad()
        np.add.at(table.grad, idx, g)
    return DiffNode(table.value[idx], (table,), bwd, "embed")


def l2_normalize_rows(a, min_norm=1e-12):
    a = as_node(a)
    norms = np.linalg.norm(a.value, axis=1, keepdims=True)
    if np.any(norms < min_norm):
        raise ContractError("zero-norm code: encoder produced a degenerate pre-normalization output")
    y = a.value / norms

    def bwd(g):
        a.ensure_grad()
        dot = (g * y).sum(axis=1, keepdims=True)
        a.grad += (g - y * dot) / norms
    return DiffNode(y, (a,), bwd, "l2norm")


def softmax(logits_value):
    shifted = logits_value - logits_value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, targets, weights=None, reduction="mean"):
    """Cross-entropy of integer targets; returns (scalar loss node, probs).

    ``weights`` scales each row's loss (used for padding masks). The mean
    reduction divides by the batch size regardless of weights, so a masked
    sequence loss is sum-over-steps, mean-over-sentences.
    """
    logits = as_node(logits)
    t = np.asarray(targets, dtype=np.int64)
    batch, vocab = logits.value.shape
    if t.shape != (batch,):
        raise ShapeError(f"targets shape {t.shape} for logits {logits.value.shape}")
    if t.size and (t.min() < 0 or t.max() >= vocab):
        raise IndexError(f"target index out of range [0, {vocab})")
    w = np.ones(batch, dtype=logits.value.dtype) if weights is None else np.asarray(weights, dtype=logits.value.dtype)
    probs = softmax(logits.value)
    nll = -np.log(np.maximum(probs[np.arange(batch), t], 1e-30))
    denom = batch if reduction == "mean" else 1
    loss = (w * nll).sum() / denom

    def bwd(g):
        logits.ensure_grad()
        d = probs.copy()
        d[np.arange(batch), t] -= 1.0
        logits.grad += g * (w[:, None] * d) / denom
    node = DiffNode(np.asarray(loss, dtype=logits.value.dtype), (logits,), bwd, "softmax_ce")
    return node, probs


def sigmoid_cross_entropy(logits, targets):
    """Per-pixel Bernoulli NLL, summed per row and averaged over the batch."""
    logits = as_node(logits)
    x = np.asarray(targets, dtype=logits.value.dtype)
    if x.shape != logits.value.shape:
        raise ShapeError(f"targets {x.shape} vs logits {logits.value.shape}")
    h = logits.value
    batch = h.shape[0]
    # stable: max(h,0) - h*x + log(1 + exp(-|h|))
    elem = np.maximum(h, 0) - h * x + np.log1p(np.exp(-np.abs(h)))
    loss = elem.sum() / batch
    s = np.where(h >= 0, 1.0 / (1.0 + np.exp(-np.abs(h))),
                 np.exp(-np.abs(h)) / (1.0 + np.exp(-np.abs(h))))

    def bwd(g):
        logits.ensure_grad()
        logits.grad += g * (s - x) / batch
    return DiffNode(np.asarray(loss, dtype=h.dtype), (logits,), bwd, "sigmoid_ce")


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f, x, step=1e-4):
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a DiffNode to a scalar DiffNode. ``x`` should be float64 for
    the stated tolerances to be meaningful.
    """
    x = np.asarray(x, dtype=np.float64)
    node = DiffNode(x.copy())
    out = f(node)
    if not np.isfinite(out.value):
        raise FloatingPointError("non-finite function value in grad_check")
    backward(out)
    analytic = node.ensure_grad().copy()
    worst = 0.0
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(f(DiffNode(x.copy())).value)
        flat[i] = orig - step
        fm = float(f(DiffNode(x.copy())).value)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError("non-finite function value in grad_check")
        numeric = (fp - fm) / (2 * step)
        a = analytic.reshape(-1)[i]
        rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        worst = max(worst, rel)
    return worst
