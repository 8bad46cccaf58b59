"""Parameterized layers: affine, embedding, LSTM cell, batch normalization.

Initialization (not pinned down elsewhere, so fixed here): small-uniform
(-0.08, 0.08) for recurrent weights and embeddings, Glorot-uniform for
affine layers, forget-gate bias 1. LSTM gate order is input, forget, cell,
output throughout.
"""

import numpy as np

from . import diffmath as dm
from .diffmath import DiffNode, ShapeError, ContractError


def glorot_uniform(rng, out_dim, in_dim, dtype=np.float32):
    bound = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-bound, bound, (out_dim, in_dim), dtype=dtype)


def small_uniform(rng, shape, dtype=np.float32, bound=0.08):
    return rng.uniform(-bound, bound, shape, dtype=dtype)


class AffineLayer:
    """y = x W^T + b with W stored (out, in)."""

    def __init__(self, in_dim, out_dim, rng, dtype=np.float32):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.W = DiffNode(glorot_uniform(rng, out_dim, in_dim, dtype))
        self.b = DiffNode(np.zeros(out_dim, dtype=dtype))

    def params(self):
        return [self.W, self.b]

    def forward(self, x):
        xv = dm.value_of(x)
        if xv.ndim != 2 or xv.shape[1] != self.in_dim:
            raise ShapeError(f"affine expects (batch, {self.in_dim}), got {xv.shape}")
        return dm.add(dm.matmul(x, dm.transpose(self.W)), self.b)


class Embedding:
    def __init__(self, vocab_size, dim, rng, dtype=np.float32):
        self.table = DiffNode(small_uniform(rng, (vocab_size, dim), dtype))

    def params(self):
        return [self.table]

    def forward(self, indices):
        return dm.embedding_lookup(self.table, indices)


class LstmCell:
    """Single LSTM cell; gate blocks ordered input, forget, cell, output."""

    def __init__(self, in_dim, hidden_dim, rng, dtype=np.float32):
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.W_x = DiffNode(small_uniform(rng, (4 * hidden_dim, in_dim), dtype))
        self.W_h = DiffNode(small_uniform(rng, (4 * hidden_dim, hidden_dim), dtype))
        bias = np.zeros(4 * hidden_dim, dtype=dtype)
        bias[hidden_dim:2 * hidden_dim] = 1.0  # forget gate starts open
        self.bias = DiffNode(bias)

    def params(self):
        return [self.W_x, self.W_h, self.bias]

    def step(self, x_t, h_prev, c_prev):
        h = self.hidden_dim
        gates = dm.add(
            dm.add(dm.matmul(x_t, dm.transpose(self.W_x)),
                   dm.matmul(h_prev, dm.transpose(self.W_h))),
            self.bias)
        i = dm.sigmoid(dm.slice_cols(gates, 0, h))
        f = dm.sigmoid(dm.slice_cols(gates, h, 2 * h))
        g = dm.tanh(dm.slice_cols(gates, 2 * h, 3 * h))
        o = dm.sigmoid(dm.slice_cols(gates, 3 * h, 4 * h))
        c_t = dm.add(dm.mul(f, c_prev), dm.mul(i, g))
        h_t = dm.mul(o, dm.tanh(c_t))
        return h_t, c_t

    def zero_state(self, batch, dtype=None):
        dtype = dtype or self.W_x.value.dtype
        z = np.zeros((batch, self.hidden_dim), dtype=dtype)
        return DiffNode(z), DiffNode(z.copy())


class BatchNorm:
    def __init__(self, dim, momentum=0.1, eps=1e-5, dtype=np.float32):
        self.gamma = DiffNode(np.ones(dim, dtype=dtype))
        self.beta = DiffNode(np.zeros(dim, dtype=dtype))
        self.running_mean = np.zeros(dim, dtype=dtype)
        self.running_var = np.ones(dim, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def params(self):
        return [self.gamma, self.beta]

    def forward(self, x, mode="train", update_running=True):
        if mode not in ("train", "eval"):
            raise ValueError(f"unknown batchnorm mode {mode!r}")
        x = dm.as_node(x)
        xv = x.value
        if mode == "eval":
            inv = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (xv - self.running_mean) * inv
            gamma, beta = self.gamma, self.beta

            def bwd_eval(g):
                x.ensure_grad()
                x.grad += g * gamma.value * inv
                gamma.ensure_grad()
                gamma.grad += (g * xhat).sum(axis=0)
                beta.ensure_grad()
                beta.grad += g.sum(axis=0)
            out = xhat * self.gamma.value + self.beta.value
            return DiffNode(out.astype(xv.dtype), (x, self.gamma, self.beta), bwd_eval, "batchnorm_eval")

        batch = xv.shape[0]
        if batch < 2:
            raise ContractError("batchnorm train mode needs batch >= 2")
        mu = xv.mean(axis=0)
        var = xv.var(axis=0)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (xv - mu) * inv
        if update_running:
            m = self.momentum
            self.running_mean = ((1 - m) * self.running_mean + m * mu).astype(self.running_mean.dtype)
            self.running_var = ((1 - m) * self.running_var + m * var).astype(self.running_var.dtype)
        gamma, beta = self.gamma, self.beta

        def bwd(g):
            dxhat = g * gamma.value
            dvar = (dxhat * (xv - mu)).sum(axis=0) * (-0.5) * inv ** 3
            dmu = (-dxhat * inv).sum(axis=0) + dvar * (-2.0 * (xv - mu)).mean(axis=0)
            x.ensure_grad()
            x.grad += dxhat * inv + dvar * 2.0 * (xv - mu) / batch + dmu / batch
            gamma.ensure_grad()
            gamma.grad += (g * xhat).sum(axis=0)
            beta.ensure_grad()
            beta.grad += g.sum(axis=0)
        out = xhat * gamma.value + beta.value
        return DiffNode(out.astype(xv.dtype), (x, gamma, beta), bwd, "batchnorm")


def mlp_forward(layers, x, activation=dm.relu, batchnorms=None, mode="train",
                update_running=True, final_activation=None):
    """Run affine layers with an activation between them.

    ``batchnorms[i]`` (if given and non-None) is applied after layer i's
    affine, before the activation. The last layer gets ``final_activation``
    (or none) instead of ``activation``.
    """
    h = x
    last = len(layers) - 1
    for i, layer in enumerate(layers):
        h = layer.forward(h)
        if batchnorms is not None and i < last and batchnorms[i] is not None:
            h = batchnorms[i].forward(h, mode=mode, update_running=update_running)
        if i < last:
            h = activation(h)
        elif final_activation is not None:
            h = final_activation(h)
    return h
