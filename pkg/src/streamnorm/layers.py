"""Standard feedforward layers on (N, Y, X, C) tensors."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, ParameterError
from .module import Module
from .tensor import Rng


class Dense(Module):
    """Fully-connected layer.  Flattens ``(Y, X, C)`` and outputs ``(N, 1, 1, out)``."""

    def __init__(self, n_in, n_out, rng=None, bias=True, scale=None):
        super().__init__()
        rng = rng if rng is not None else Rng(0)
        scale = np.sqrt(2.0 / n_in) if scale is None else scale
        self.n_in, self.n_out = int(n_in), int(n_out)
        self.add_param("W", rng.normal((n_in, n_out), scale))
        if bias:
            self.add_param("b", np.zeros(n_out))

    def forward(self, x):
        n = x.shape[0]
        flat = x.reshape(n, -1)
        if flat.shape[1] != self.n_in:
            raise ContractError(f"dense layer expects {self.n_in} inputs per sample, got {flat.shape[1]}")
        y = flat @ self.params["W"]
        if "b" in self.params:
            y = y + self.params["b"]
        self._push(flat, x.shape)
        return y.reshape(n, 1, 1, self.n_out)

    def backward(self, dy):
        flat, shape = self._pop()
        d = dy.reshape(shape[0], self.n_out)
        self.grads["W"] += flat.T @ d
        if "b" in self.params:
            self.grads["b"] += d.sum(axis=0)
        return (d @ self.params["W"].T).reshape(shape)


class Conv2D(Module):
    """2-D cross-correlation with zero padding.  Weights are ``(k, k, C_in, C_out)``."""

    def __init__(self, c_in, c_out, kernel=3, stride=1, pad=None, rng=None, bias=True):
        super().__init__()
        rng = rng if rng is not None else Rng(0)
        self.k, self.stride = int(kernel), int(stride)
        self.pad = self.k // 2 if pad is None else int(pad)
        self.c_in, self.c_out = int(c_in), int(c_out)
        fan_in = self.k * self.k * c_in
        self.add_param("W", rng.normal((self.k, self.k, c_in, c_out), np.sqrt(2.0 / fan_in)))
        if bias:
            self.add_param("b", np.zeros(c_out))

    def output_hw(self, y, x):
        oy = (y + 2 * self.pad - self.k) // self.stride + 1
        ox = (x + 2 * self.pad - self.k) // self.stride + 1
        return oy, ox

    def forward(self, x):
        if x.shape[3] != self.c_in:
            raise ContractError(f"conv expects {self.c_in} input channels, got {x.shape[3]}")
        p, s = self.pad, self.stride
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        oy, ox = self.output_hw(x.shape[1], x.shape[2])
        if oy < 1 or ox < 1:
            raise ContractError(f"input {x.shape} too small for kernel {self.k}")
        # (N, Yo, Xo, C_in, k, k)
        win = sliding_window_view(xp, (self.k, self.k), axis=(1, 2))[:, : s * oy : s, : s * ox : s]
        y = np.tensordot(win, self.params["W"], axes=([3, 4, 5], [2, 0, 1]))
        if "b" in self.params:
            y = y + self.params["b"]
        self._push(win, xp.shape, x.shape)
        return y

    def backward(self, dy):
        win, xp_shape, x_shape = self._pop()
        # (C_in, k, k, C_out) -> (k, k, C_in, C_out)
        dw = np.tensordot(win, dy, axes=([0, 1, 2], [0, 1, 2]))
        self.grads["W"] += dw.transpose(1, 2, 0, 3)
        if "b" in self.params:
            self.grads["b"] += dy.sum(axis=(0, 1, 2))
        dxp = np.zeros(xp_shape)
        s, oy, ox = self.stride, dy.shape[1], dy.shape[2]
        W = self.params["W"]
        for i in range(self.k):
            for j in range(self.k):
                dxp[:, i : i + s * oy : s, j : j + s * ox : s, :] += dy @ W[i, j].T
        p = self.pad
        if p:
            return dxp[:, p : p + x_shape[1], p : p + x_shape[2], :]
        return dxp


class Pool(Module):
    """Non-overlapping ``size x size`` max or average pooling."""

    def __init__(self, size=2, mode="max"):
        super().__init__()
        if mode not in ("max", "avg"):
            raise ParameterError(f"pool mode must be 'max' or 'avg', got {mode!r}")
        self.size, self.mode = int(size), mode

    def forward(self, x):
        n, y, w, c = x.shape
        k = self.size
        if y % k or w % k:
            raise ContractError(f"pool size {k} does not divide spatial shape {(y, w)}")
        blocks = x.reshape(n, y // k, k, w // k, k, c)
        if self.mode == "avg":
            self._push(x.shape)
            return blocks.mean(axis=(2, 4))
        b = blocks.transpose(0, 1, 3, 5, 2, 4).reshape(n, y // k, w // k, c, k * k)
        idx = b.argmax(axis=-1)
        self._push(x.shape, idx)
        return np.take_along_axis(b, idx[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        entry = self._pop()
        shape = entry[0]
        n, y, w, c = shape
        k = self.size
        if self.mode == "avg":
            d = np.repeat(np.repeat(dy, k, axis=1), k, axis=2)
            return d / (k * k)
        idx = entry[1]
        db = np.zeros((n, y // k, w // k, c, k * k))
        np.put_along_axis(db, idx[..., None], dy[..., None], axis=-1)
        db = db.reshape(n, y // k, w // k, c, k, k).transpose(0, 1, 4, 2, 5, 3)
        return db.reshape(shape)


def sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class Activation(Module):
    FUNCS = ("relu", "tanh", "sigmoid")

    def __init__(self, kind="relu"):
        super().__init__()
        if kind not in self.FUNCS:
            raise ParameterError(f"nonlinearity must be one of {self.FUNCS}, got {kind!r}")
        self.kind = kind

    def forward(self, x):
        if self.kind == "relu":
            y = np.maximum(x, 0.0)
        elif self.kind == "tanh":
            y = np.tanh(x)
        else:
            y = sigmoid(x)
        self._push(x, y)
        return y

    def backward(self, dy):
        x, y = self._pop()
        if self.kind == "relu":
            return dy * (x > 0)
        if self.kind == "tanh":
            return dy * (1.0 - y * y)
        return dy * y * (1.0 - y)


def log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


class SoftmaxLoss(Module):
    """Mean negative log-likelihood of integer labels under a softmax."""

    def forward(self, logits, labels):
        z = logits.reshape(logits.shape[0], -1)
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (z.shape[0],):
            raise ContractError(f"expected {z.shape[0]} labels, got shape {labels.shape}")
        if labels.min() < 0 or labels.max() >= z.shape[1]:
            raise ContractError("label out of range")
        logp = log_softmax(z)
        loss = -logp[np.arange(z.shape[0]), labels].mean()
        self._push(logp, labels, logits.shape)
        return float(loss)

    def backward(self, scale=1.0):
        logp, labels, shape = self._pop()
        g = np.exp(logp)
        g[np.arange(g.shape[0]), labels] -= 1.0
        return (g * (scale / g.shape[0])).reshape(shape)


class Sequential(Module):
    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)

    def children(self):
        return list(self.layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy
