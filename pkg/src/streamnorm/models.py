"""Classifier networks and the reference architectures.

``arch_a``  fully-connected stack
``arch_b``  convolutional stack
``arch_c``  ``arch_b`` whose stages are residual recurrent blocks unrolled
            ``k1`` / ``k2`` times with shared weights (``k1 = k2 = 1`` is
            exactly ``arch_b``)
``arch_d``  densely recurrent two-stage conv net unrolled ``k`` times, with
            lateral, bottom-up and top-down connections between stage states

Widths are desk-scale defaults, not the sizes of any published model.
"""

import numpy as np

from .errors import ConfigError, ParameterError
from .layers import Activation, Conv2D, Dense, Pool, Sequential, SoftmaxLoss
from .module import Module
from .norm import BiasGain, NormConfig
from .recurrent import RecurrentNorm
from .tensor import Rng


class Classifier(Module):
    """A body network followed by a softmax loss over class labels."""

    def __init__(self, body):
        super().__init__()
        self.body = body
        self.loss = SoftmaxLoss()
        self.input_grad = None
        self.logits = None

    def children(self):
        return [self.body, self.loss]

    def begin_epoch(self, epoch=0):
        pass

    def forward(self, x):
        return self.body.forward(x)

    def forward_loss(self, batch):
        x, labels = batch
        self.clear_cache()
        self.logits = self.body.forward(x)
        return self.loss.forward(self.logits, labels)

    def backward(self):
        self.input_grad = self.body.backward(self.loss.backward())
        return self.input_grad

    def evaluate(self, batches):
        """Mean loss and error rate over ``batches`` of ``(x, labels)``."""
        total, errors, count = 0.0, 0, 0
        for x, labels in batches:
            logits = self.body.forward(x).reshape(len(labels), -1)
            z = logits - logits.max(axis=1, keepdims=True)
            logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
            total += -logp[np.arange(len(labels)), labels].sum()
            errors += int((logits.argmax(axis=1) != labels).sum())
            count += len(labels)
        return total / count, errors / count


def _norm_block(norm, channels):
    return [norm.build(), BiasGain.per_channel(channels)]


def arch_a(in_shape, classes, hidden=(64, 64), norm=None, rng=None):
    """``[fc -> norm -> bias/gain -> relu] * len(hidden) -> fc``."""
    rng = rng if rng is not None else Rng(0)
    norm = norm if norm is not None else NormConfig()
    layers = []
    n_in = int(np.prod(in_shape))
    for h in hidden:
        layers += [Dense(n_in, h, rng=rng, bias=norm.kind == "none")]
        layers += _norm_block(norm, h) + [Activation("relu")]
        n_in = h
    layers.append(Dense(n_in, classes, rng=rng))
    return Classifier(Sequential(layers))


def arch_b(in_shape, classes, channels=(8, 16), norm=None, rng=None):
    """``[conv3x3 -> norm -> bias/gain -> relu -> pool2] * len(channels) -> fc``."""
    rng = rng if rng is not None else Rng(0)
    norm = norm if norm is not None else NormConfig()
    y, x, c = in_shape
    layers = []
    for ch in channels:
        layers += [Conv2D(c, ch, 3, rng=rng, bias=norm.kind == "none")]
        layers += _norm_block(norm, ch) + [Activation("relu"), Pool(2, "max")]
        y, x, c = y // 2, x // 2, ch
    layers.append(Dense(y * x * c, classes, rng=rng))
    return Classifier(Sequential(layers))


class RecurrentStage(Module):
    """Conv stage refined by ``k - 1`` residual recurrent steps.

    h_0 = relu(BG(Norm(conv_in(x))))
    h_t = h_{t-1} + relu(BG_r(Norm_r(conv_r(h_{t-1}), t)))     t = 1 .. k-1

    ``conv_r`` and ``BG_r`` are shared over steps; ``Norm_r`` follows the
    recurrent binding.
    """

    def __init__(self, c_in, c_out, k, norm, binding="shared", rng=None):
        super().__init__()
        rng = rng if rng is not None else Rng(0)
        if k < 1:
            raise ParameterError("unroll count must be >= 1")
        bias = norm.kind == "none"
        self.k = int(k)
        self.conv_in = Conv2D(c_in, c_out, 3, rng=rng, bias=bias)
        self.norm_in = norm.build()
        self.bg_in = BiasGain.per_channel(c_out)
        self.act_in = Activation("relu")
        self.rec = []
        if self.k > 1:
            self.conv_r = Conv2D(c_out, c_out, 3, rng=rng, bias=bias)
            self.norm_r = RecurrentNorm(norm, binding)
            self.bg_r = BiasGain.per_channel(c_out)
            self.act_r = Activation("relu")
            self.rec = [self.conv_r, self.norm_r, self.bg_r, self.act_r]

    def children(self):
        return [self.conv_in, self.norm_in, self.bg_in, self.act_in] + self.rec

    def forward(self, x):
        h = self.act_in.forward(self.bg_in.forward(self.norm_in.forward(self.conv_in.forward(x))))
        for t in range(1, self.k):
            a = self.norm_r.forward(self.conv_r.forward(h), t - 1)
            h = h + self.act_r.forward(self.bg_r.forward(a))
        return h

    def backward(self, dh):
        for t in range(self.k - 1, 0, -1):
            da = self.bg_r.backward(self.act_r.backward(dh))
            dh = dh + self.conv_r.backward(self.norm_r.backward(da, t - 1))
        return self.conv_in.backward(self.norm_in.backward(self.bg_in.backward(self.act_in.backward(dh))))


def arch_c(in_shape, classes, k1=2, k2=2, channels=(8, 16), norm=None, binding="shared", rng=None):
    rng = rng if rng is not None else Rng(0)
    norm = norm if norm is not None else NormConfig()
    y, x, c = in_shape
    layers = []
    for ch, k in zip(channels, (k1, k2)):
        layers += [RecurrentStage(c, ch, k, norm, binding, rng), Pool(2, "max")]
        y, x, c = y // 2, x // 2, ch
    layers.append(Dense(y * x * c, classes, rng=rng))
    return Classifier(Sequential(layers))


class _Term(Module):
    """``BG(Norm(conv(x), t))`` with a recurrent norm binding."""

    def __init__(self, c_in, c_out, norm, binding, rng):
        super().__init__()
        self.conv = Conv2D(c_in, c_out, 3, rng=rng, bias=norm.kind == "none")
        self.norm = RecurrentNorm(norm, binding)
        self.bg = BiasGain.per_channel(c_out)

    def children(self):
        return [self.conv, self.norm, self.bg]

    def forward(self, x, t):
        return self.bg.forward(self.norm.forward(self.conv.forward(x), t))

    def backward(self, dy, t):
        return self.conv.backward(self.norm.backward(self.bg.backward(dy), t))


def _upsample(x, k=2):
    return np.repeat(np.repeat(x, k, axis=1), k, axis=2)


def _upsample_backward(d, k=2):
    n, y, x, c = d.shape
    return d.reshape(n, y // k, k, x // k, k, c).sum(axis=(2, 4))


class DenseRecurrentNet(Module):
    """Two-stage conv net where every stage state feeds back at every step.

    h1_t = relu(T_x(x) + T_11(h1_{t-1}) + T_21(up(h2_{t-1})))
    h2_t = relu(T_12(pool(h1_t)) + T_22(h2_{t-1}))

    The feedback terms are absent at ``t = 0``.  Output: ``fc(pool(h2_{k-1}))``.
    """

    def __init__(self, in_shape, classes, k=3, channels=(8, 16), norm=None,
                 binding="shared", rng=None):
        super().__init__()
        rng = rng if rng is not None else Rng(0)
        norm = norm if norm is not None else NormConfig()
        y, x, c = in_shape
        c1, c2 = channels
        self.k = int(k)
        self.t_x = _Term(c, c1, norm, binding, rng)
        self.t_12 = _Term(c1, c2, norm, binding, rng)
        self.t_11 = _Term(c1, c1, norm, binding, rng)
        self.t_22 = _Term(c2, c2, norm, binding, rng)
        self.t_21 = _Term(c2, c1, norm, binding, rng)
        self.act1, self.act2 = Activation("relu"), Activation("relu")
        self.pool1, self.pool2 = Pool(2, "max"), Pool(2, "max")
        self.fc = Dense((y // 4) * (x // 4) * c2, classes, rng=rng)

    def children(self):
        return [self.t_x, self.t_12, self.t_11, self.t_22, self.t_21,
                self.act1, self.act2, self.pool1, self.pool2, self.fc]

    def forward(self, x):
        h1 = h2 = None
        for t in range(self.k):
            a1 = self.t_x.forward(x, t)
            if t:
                a1 = a1 + self.t_11.forward(h1, t - 1) + self.t_21.forward(_upsample(h2), t - 1)
            h1_new = self.act1.forward(a1)
            a2 = self.t_12.forward(self.pool1.forward(h1_new), t)
            if t:
                a2 = a2 + self.t_22.forward(h2, t - 1)
            h1, h2 = h1_new, self.act2.forward(a2)
        return self.fc.forward(self.pool2.forward(h2))

    def backward(self, dy):
        dh2 = self.pool2.backward(self.fc.backward(dy))
        dh1 = None
        dx = 0.0
        for t in range(self.k - 1, -1, -1):
            da2 = self.act2.backward(dh2)
            dh2_prev = self.t_22.backward(da2, t - 1) if t else None
            dp = self.t_12.backward(da2, t)
            d1 = self.pool1.backward(dp)
            if dh1 is not None:
                d1 = d1 + dh1
            da1 = self.act1.backward(d1)
            if t:
                dh1 = self.t_11.backward(da1, t - 1)
                dh2_prev = dh2_prev + _upsample_backward(self.t_21.backward(da1, t - 1))
            dx = dx + self.t_x.backward(da1, t)
            dh2 = dh2_prev
        return dx


def arch_d(in_shape, classes, k=3, channels=(8, 16), norm=None, binding="shared", rng=None):
    return Classifier(DenseRecurrentNet(in_shape, classes, k, channels, norm, binding, rng))


def parse_layers(specs, in_shape, classes, norm=None, rng=None):
    """Build a feedforward classifier from a list of layer strings.

    Recognized items: ``fc:N``, ``conv:C[:k[:stride[:pad]]]``, ``pool:max|avg[:size]``,
    ``relu``, ``tanh``, ``sigmoid``, ``norm``, ``bias_gain``.  A final
    ``fc:classes`` layer is appended when the last layer's width differs
    from ``classes``.
    """
    rng = rng if rng is not None else Rng(0)
    norm = norm if norm is not None else NormConfig()
    shape = tuple(int(d) for d in in_shape)
    layers = []
    for spec in specs:
        name, *args = str(spec).split(":")
        if name == "fc":
            n = int(args[0])
            layers.append(Dense(int(np.prod(shape)), n, rng=rng))
            shape = (1, 1, n)
        elif name == "conv":
            c = int(args[0])
            k = int(args[1]) if len(args) > 1 else 3
            s = int(args[2]) if len(args) > 2 else 1
            p = int(args[3]) if len(args) > 3 else None
            conv = Conv2D(shape[2], c, k, s, p, rng=rng)
            oy, ox = conv.output_hw(shape[0], shape[1])
            layers.append(conv)
            shape = (oy, ox, c)
        elif name == "pool":
            mode = args[0] if args else "max"
            size = int(args[1]) if len(args) > 1 else 2
            layers.append(Pool(size, mode))
            shape = (shape[0] // size, shape[1] // size, shape[2])
        elif name in Activation.FUNCS:
            layers.append(Activation(name))
        elif name == "norm":
            layers.append(norm.build())
        elif name == "bias_gain":
            layers.append(BiasGain.per_channel(shape[2]))
        else:
            raise ConfigError(f"unknown layer spec {spec!r}")
    if shape != (1, 1, classes):
        layers.append(Dense(int(np.prod(shape)), classes, rng=rng))
    return Classifier(Sequential(layers))
