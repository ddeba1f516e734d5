"""Recurrent normalization bindings and normalized RNN / GRU cells.

A :class:`RecurrentNorm` decides how the unrolled copies of one
normalization layer share statistics:

``time_specific``
    one independent layer (and running-statistics store) per timestep, the
    recurrent form of general batch normalization;
``shared``
    a single layer visited at every timestep, so a streaming layer streams
    over both samples and timesteps.
"""

import numpy as np

from .errors import ParameterError, UnseenTimestepError
from .layers import Activation, Dense, SoftmaxLoss, sigmoid
from .module import Module
from .norm import BiasGain, NormConfig
from .tensor import Rng

BINDINGS = ("shared", "time_specific")


class RecurrentNorm(Module):
    def __init__(self, config=None, binding="shared"):
        super().__init__()
        if binding not in BINDINGS:
            raise ParameterError(f"binding must be one of {BINDINGS}, got {binding!r}")
        self.config = config if config is not None else NormConfig()
        self.binding = binding
        self.stores = [self.config.build()] if binding == "shared" else []

    def children(self):
        return list(self.stores)

    @property
    def store_count(self):
        return len(self.stores)

    def layer_at(self, t):
        if self.binding == "shared":
            return self.stores[0]
        if t < len(self.stores):
            return self.stores[t]
        if not self.training:
            raise UnseenTimestepError(
                f"timestep {t} was never seen in training ({len(self.stores)} stores)")
        while len(self.stores) <= t:
            layer = self.config.build()
            self.stores.append(layer)
        return self.stores[t]

    def forward(self, x, t=0):
        return self.layer_at(t).forward(x)

    def backward(self, dy, t=0):
        return self.layer_at(t).backward(dy)


class _Branch(Module):
    """``BiasGain(Norm(W x))`` -- one normalized pre-activation term."""

    def __init__(self, n_in, n_out, norm, binding, rng):
        super().__init__()
        self.w = Dense(n_in, n_out, rng=rng, bias=False, scale=1.0 / np.sqrt(n_in))
        self.norm = RecurrentNorm(norm, binding)
        self.bg = BiasGain.per_channel(n_out)

    def children(self):
        return [self.w, self.norm, self.bg]

    def forward(self, x, t):
        return self.bg.forward(self.norm.forward(self.w.forward(x), t))

    def backward(self, dy, t):
        return self.w.backward(self.norm.backward(self.bg.backward(dy), t))


class RNNCell(Module):
    """``h_t = f(Norm(W_x x_t) + Norm(W_h h_{t-1}))`` with ``f = tanh`` by default."""

    def __init__(self, n_in, n_hidden, norm=None, binding="shared", rng=None,
                 nonlinearity="tanh"):
        super().__init__()
        rng = rng if rng is not None else Rng(0)
        norm = norm if norm is not None else NormConfig()
        self.n_in, self.n_hidden = n_in, n_hidden
        self.x_branch = _Branch(n_in, n_hidden, norm, binding, rng)
        self.h_branch = _Branch(n_hidden, n_hidden, norm, binding, rng)
        self.act = Activation(nonlinearity)

    def children(self):
        return [self.x_branch, self.h_branch, self.act]

    def norm_bindings(self):
        return [self.x_branch.norm, self.h_branch.norm]

    def step(self, x, h, t=0):
        a = self.x_branch.forward(x, t) + self.h_branch.forward(h, t)
        return self.act.forward(a)

    def step_backward(self, dh, t=0):
        da = self.act.backward(dh)
        return self.x_branch.backward(da, t), self.h_branch.backward(da, t)


class GRUCell(Module):
    """Normalized GRU with six independent normalization layers.

    g_r   = sigmoid(Norm(W_xr x) + Norm(W_hr h))
    g_z   = sigmoid(Norm(W_xz x) + Norm(W_hz h))
    h_new = f(Norm(W_xh x) + Norm(W_hh (h * g_r)))
    h'    = g_z * h_new + (1 - g_z) * h
    """

    def __init__(self, n_in, n_hidden, norm=None, binding="shared", rng=None,
                 nonlinearity="tanh"):
        super().__init__()
        rng = rng if rng is not None else Rng(0)
        norm = norm if norm is not None else NormConfig()
        self.n_in, self.n_hidden = n_in, n_hidden
        mk = lambda n: _Branch(n, n_hidden, norm, binding, rng)  # noqa: E731
        self.xr, self.hr = mk(n_in), mk(n_hidden)
        self.xz, self.hz = mk(n_in), mk(n_hidden)
        self.xh, self.hh = mk(n_in), mk(n_hidden)
        self.act = Activation(nonlinearity)

    def children(self):
        return [self.xr, self.hr, self.xz, self.hz, self.xh, self.hh, self.act]

    def norm_bindings(self):
        return [b.norm for b in (self.xr, self.hr, self.xz, self.hz, self.xh, self.hh)]

    def step(self, x, h, t=0):
        gr = sigmoid(self.xr.forward(x, t) + self.hr.forward(h, t))
        gz = sigmoid(self.xz.forward(x, t) + self.hz.forward(h, t))
        h_new = self.act.forward(self.xh.forward(x, t) + self.hh.forward(h * gr, t))
        self._push(h, gr, gz, h_new)
        return gz * h_new + (1.0 - gz) * h

    def step_backward(self, dh_out, t=0):
        h, gr, gz, h_new = self._pop()
        dgz = dh_out * (h_new - h)
        dh = dh_out * (1.0 - gz)
        da = self.act.backward(dh_out * gz)
        dx = self.xh.backward(da, t)
        dhr = self.hh.backward(da, t)
        dh = dh + dhr * gr
        dgr = dhr * h
        daz = dgz * gz * (1.0 - gz)
        dx = dx + self.xz.backward(daz, t)
        dh = dh + self.hz.backward(daz, t)
        dar = dgr * gr * (1.0 - gr)
        dx = dx + self.xr.backward(dar, t)
        dh = dh + self.hr.backward(dar, t)
        return dx, dh


def unroll_forward(cell, xs, h0):
    """Run ``cell`` over the sequence ``xs``; returns the list of hidden states."""
    hs = []
    h = h0
    for t, x in enumerate(xs):
        h = cell.step(x, h, t)
        hs.append(h)
    return hs


def unroll_backward(cell, dhs, window=None):
    """Back-propagate through an unrolled forward pass.

    ``dhs[t]`` is the loss gradient w.r.t. the hidden state at step ``t``.
    With ``window`` set, gradients are cut every ``window`` steps (truncated
    BPTT).  Returns ``(dxs, dh0)``.
    """
    T = len(dhs)
    dxs = [None] * T
    dh = np.zeros_like(dhs[-1])
    for t in range(T - 1, -1, -1):
        dxs[t], dh = cell.step_backward(dh + dhs[t], t)
        if window and t % window == 0 and t > 0:
            dh = np.zeros_like(dh)
    return dxs, dh


def one_hot(ids, vocab_size):
    out = np.zeros((len(ids), 1, 1, vocab_size))
    out[np.arange(len(ids)), 0, 0, ids] = 1.0
    return out


class CharLM(Module):
    """Character-level language model: one recurrent layer and a softmax readout.

    The hidden state is carried from one window to the next (truncated BPTT);
    gradients stop at window boundaries.
    """

    def __init__(self, vocab_size, hidden=100, cell="rnn", norm=None, binding="shared",
                 rng=None, window=None):
        super().__init__()
        rng = rng if rng is not None else Rng(0)
        cls = {"rnn": RNNCell, "gru": GRUCell}.get(cell)
        if cls is None:
            raise ParameterError(f"cell must be 'rnn' or 'gru', got {cell!r}")
        self.vocab_size, self.hidden = vocab_size, hidden
        self.cell = cls(vocab_size, hidden, norm, binding, rng)
        self.out = Dense(hidden, vocab_size, rng=rng, scale=1.0 / np.sqrt(hidden))
        self.loss = SoftmaxLoss()
        self.window = window
        self.h = None
        self._T = 0

    def children(self):
        return [self.cell, self.out, self.loss]

    def begin_epoch(self, epoch=0):
        self.h = None

    def _initial(self, n, h):
        if h is None or h.shape[0] != n:
            return np.zeros((n, 1, 1, self.hidden))
        return h

    def _run(self, ids, h):
        xs = [one_hot(ids[:, t], self.vocab_size) for t in range(ids.shape[1])]
        return unroll_forward(self.cell, xs, h)

    def forward_loss(self, batch):
        ids, targets = batch
        self.clear_cache()
        n, T = ids.shape
        hs = self._run(ids, self._initial(n, self.h))
        self.h = hs[-1].copy()
        self._T = T
        logits = self.out.forward(np.concatenate(hs, axis=0))
        return self.loss.forward(logits, targets.T.reshape(-1))

    def backward(self):
        d = self.out.backward(self.loss.backward())
        n = d.shape[0] // self._T
        dhs = [d[t * n:(t + 1) * n] for t in range(self._T)]
        unroll_backward(self.cell, dhs, self.window)

    def evaluate(self, batches):
        """Mean per-character loss and error over ``batches`` (in eval mode)."""
        h = None
        total, errors, count = 0.0, 0, 0
        for ids, targets in batches:
            n, T = ids.shape
            hs = self._run(ids, self._initial(n, h))
            h = hs[-1]
            logits = self.out.forward(np.concatenate(hs, axis=0)).reshape(T * n, -1)
            flat = targets.T.reshape(-1)
            z = logits - logits.max(axis=1, keepdims=True)
            logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
            total += -logp[np.arange(len(flat)), flat].sum()
            errors += int((logits.argmax(axis=1) != flat).sum())
            count += len(flat)
        return total / count, errors / count
