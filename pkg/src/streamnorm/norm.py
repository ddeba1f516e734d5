"""Normalization layers: sample, general batch and streaming normalization.

All three apply the same operation ``y = (x - mu) / sigma`` and differ in
where ``(mu, sigma)`` come from:

* :class:`SampleNorm` uses statistics of the current sample only.
* :class:`BatchNorm` uses statistics of the current mini-batch while training
  and an exponential moving average of them at test time.
* :class:`StreamNorm` blends long- and short-term running estimates of the
  statistics and of their gradients, so it works with tiny batches and with
  statistics shared over the timesteps of a recurrent net.

Learned shift and scale live in a separate :class:`BiasGain` layer.
"""

import copy
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractError, ParameterError, StateError, UninitializedStatsError
from .lpstats import LpConfig, NormStats, compute_stats, stats_backward
from .module import Module
from .partition import PartitionScheme, preset

KINDS = ("none", "sample", "batch", "streaming")


def norm_op(x, stats):
    if np.any(stats.sigma <= 0):
        raise ContractError("sigma must be strictly positive")
    return (x - stats.mu) / stats.sigma


def _stats_grads(dy, x, mu, sigma, axes):
    """dE/dmu and dE/dsigma per group for ``y = (x - mu) / sigma``."""
    gmu = -np.sum(dy, axis=axes, keepdims=True) / sigma
    gsigma = -np.sum(dy * (x - mu), axis=axes, keepdims=True) / (sigma * sigma)
    return gmu, gsigma


@dataclass
class StreamHyper:
    """Blend weights of a streaming layer.

    ``alpha*`` mix long/short statistics, ``beta*`` mix long/short/current
    statistic gradients, ``kappa1, kappa2`` (``kappa3, kappa4``) set the
    exponential average of statistics (gradients) at every weight update.
    """

    alpha1: float = 0.7
    alpha2: float = 0.3
    beta1: float = 0.7
    beta2: float = 0.0
    beta3: float = 0.3
    kappa1: float = 0.7
    kappa2: float = 0.3
    kappa3: float = 0.7
    kappa4: float = 0.3

    def __post_init__(self):
        pairs = [
            ("alpha1 + alpha2", self.alpha1 + self.alpha2),
            ("beta1 + beta2 + beta3", self.beta1 + self.beta2 + self.beta3),
            ("kappa1 + kappa2", self.kappa1 + self.kappa2),
            ("kappa3 + kappa4", self.kappa3 + self.kappa4),
        ]
        for label, total in pairs:
            if abs(total - 1.0) > 1e-12 and not (label.startswith("beta") and total == 0):
                warnings.warn(f"streaming hyperparameters: {label} = {total:g}, not 1", stacklevel=3)

    @classmethod
    def gbn_reduction(cls):
        """Blend weights under which streaming normalization equals GBN (with n=1)."""
        return cls(alpha1=0.0, alpha2=1.0, beta1=0.0, beta2=0.0, beta3=1.0,
                   kappa1=0.7, kappa2=0.3, kappa3=0.7, kappa4=0.3)

    @property
    def reduces_to_gbn(self):
        return (self.alpha1 == 0 and self.alpha2 == 1 and self.beta1 == 0
                and self.beta2 == 0 and self.beta3 == 1)

    @property
    def beta(self):
        return (self.beta1, self.beta2, self.beta3)

    def to_dict(self):
        return asdict(self)


class _Norm(Module):
    kind = None

    def __init__(self, scheme=None, lp=None):
        super().__init__()
        self.scheme = scheme if scheme is not None else preset("BN")
        self.lp = lp if lp is not None else LpConfig()

    def get_state(self):
        return {}

    def set_state(self, state):
        for k, v in state.items():
            setattr(self, k, copy.deepcopy(v))


class IdentityNorm(_Norm):
    """Pass-through used for unnormalized baselines."""

    kind = "none"

    def forward(self, x):
        return x

    def backward(self, dy):
        return dy


class SampleNorm(_Norm):
    """Statistics from each sample alone; training and test are identical."""

    kind = "sample"

    def __init__(self, scheme=None, lp=None):
        scheme = scheme if scheme is not None else preset("LN")
        if scheme.pools_batch:
            raise ParameterError(f"sample normalization cannot pool the batch axis ({scheme})")
        super().__init__(scheme, lp)

    def forward(self, x):
        mu_hat = np.mean(x, axis=self.scheme.axes, keepdims=True) if self.lp.setting == "B" else None
        stats = compute_stats(x, self.scheme, self.lp, mu_hat)
        y = norm_op(x, stats)
        self._push(x, stats)
        return y

    def backward(self, dy):
        x, s = self._pop()
        gmu, gsigma = _stats_grads(dy, x, s.mu, s.sigma, self.scheme.axes)
        return dy / s.sigma + stats_backward(x, s, gmu, gsigma)


class BatchNorm(_Norm):
    """General batch normalization with moving-average test statistics.

    ``momentum`` is the weight kept on the old running estimate.  The first
    training batch initializes the running estimate directly.
    """

    kind = "batch"

    def __init__(self, scheme=None, lp=None, momentum=0.9):
        scheme = scheme if scheme is not None else preset("BN")
        if not scheme.pools_batch:
            raise ParameterError(f"batch normalization must pool the batch axis ({scheme})")
        super().__init__(scheme, lp)
        self.momentum = float(momentum)
        self.running = None

    def get_state(self):
        return {"running": copy.deepcopy(self.running)}

    def forward(self, x):
        if not self.training:
            if self.running is None:
                raise UninitializedStatsError("batch norm evaluated before any training batch")
            return norm_op(x, self.running)
        mu_hat = None
        if self.lp.setting == "B":
            # running mean as centre; the very first batch falls back to its own mean
            if self.running is not None:
                mu_hat = self.running.mu
            else:
                mu_hat = np.mean(x, axis=self.scheme.axes, keepdims=True)
        s = compute_stats(x, self.scheme, self.lp, mu_hat)
        if self.running is None:
            self.running = NormStats(s.mu.copy(), s.sigma.copy(), self.lp, self.scheme)
        else:
            r, m = self.running, self.momentum
            r.mu = m * r.mu + (1.0 - m) * s.mu
            r.sigma = m * r.sigma + (1.0 - m) * s.sigma
        self._push(x, s)
        return norm_op(x, s)

    def backward(self, dy):
        x, s = self._pop()
        gmu, gsigma = _stats_grads(dy, x, s.mu, s.sigma, self.scheme.axes)
        return dy / s.sigma + stats_backward(x, s, gmu, gsigma)


class StreamNorm(_Norm):
    """Streaming normalization with streaming statistic gradients.

    State: long/short statistics ``s_long``/``s_short`` with ``counter``, and
    the gradient mirror ``g_long``/``g_short`` with ``g_counter``.  Short-term
    stores are exact averages since the last weight update; long-term stores
    are exponential averages updated by :meth:`commit`.  Both are ``(mu,
    sigma)`` tuples, or ``None`` when empty.

    If the scheme does not pool the batch axis, per-sample statistics are
    averaged over the batch before entering the running estimates.
    """

    kind = "streaming"

    def __init__(self, scheme=None, lp=None, hyper=None):
        super().__init__(scheme if scheme is not None else preset("BN"), lp)
        self.hyper = hyper if hyper is not None else StreamHyper()
        self.s_long = None
        self.s_short = None
        self.counter = 0
        self.g_long = None
        self.g_short = None
        self.g_counter = 0
        self.s_hat = None
        self.commits = 0

    _STATE = ("s_long", "s_short", "counter", "g_long", "g_short", "g_counter", "s_hat", "commits")

    def get_state(self):
        return {k: copy.deepcopy(getattr(self, k)) for k in self._STATE}

    def prepare_eval(self):
        """Freeze the latest blended statistics for testing, without committing."""
        self.training = False

    def _batch_stats(self, x):
        mu_hat = None
        if self.lp.setting == "B":
            if self.s_hat is not None:
                mu_hat = self.s_hat[0]
            else:
                mu_hat = np.mean(x, axis=self.scheme.axes, keepdims=True)
        s = compute_stats(x, self.scheme, self.lp, mu_hat)
        if self.scheme.pools_batch:
            return s, (s.mu, s.sigma)
        return s, (np.mean(s.mu, axis=0, keepdims=True), np.mean(s.sigma, axis=0, keepdims=True))

    def forward(self, x):
        if not self.training:
            if self.s_hat is None:
                raise UninitializedStatsError("streaming norm evaluated before any training batch")
            mu, sigma = self.s_hat
            return (x - mu) / sigma
        s, cur = self._batch_stats(x)
        self.counter += 1
        self.s_short = _fold(self.s_short, cur, self.counter)
        h = self.hyper
        if self.s_long is None:
            s_hat = self.s_short
            weight = 1.0 / self.counter
        else:
            s_hat = _blend((h.alpha1, self.s_long), (h.alpha2, self.s_short))
            weight = h.alpha2 / self.counter
        self.s_hat = s_hat
        mu, sigma = s_hat
        self._push(x, s, s_hat, weight)
        return (x - mu) / sigma

    def backward(self, dy):
        x, s, (mu, sigma), weight = self._pop()
        axes = self.scheme.axes
        g = _stats_grads(dy, x, mu, sigma, axes)
        self.g_counter += 1
        self.g_short = _fold(self.g_short, g, self.g_counter)
        h = self.hyper
        terms = [(h.beta2, self.g_short), (h.beta3, g)]
        if self.g_long is not None:
            terms.insert(0, (h.beta1, self.g_long))
        gmu, gsigma = _blend(*terms)
        if not self.scheme.pools_batch:
            n = x.shape[0]
            gmu, gsigma = gmu / n, gsigma / n
        return dy / sigma + weight * stats_backward(x, s, gmu, gsigma)

    def commit(self):
        """Fold the short-term stores into the long-term ones at a weight update."""
        if not self.training:
            raise StateError("commit called while the layer is in eval mode")
        h = self.hyper
        if self.counter == 0 and self.g_counter == 0:
            warnings.warn("commit on a streaming layer with no new statistics", stacklevel=2)
            return
        if self.counter:
            self.s_long = (self.s_short if self.s_long is None
                           else _blend((h.kappa1, self.s_long), (h.kappa2, self.s_short)))
        if self.g_counter:
            self.g_long = (self.g_short if self.g_long is None
                           else _blend((h.kappa3, self.g_long), (h.kappa4, self.g_short)))
        self.s_short, self.counter = None, 0
        self.g_short, self.g_counter = None, 0
        self.commits += 1


def _fold(avg, new, count):
    """Exact running average: ``avg`` holds ``count - 1`` items, ``new`` is the next."""
    if avg is None or count == 1:
        return tuple(np.array(a, dtype=np.float64, copy=True) for a in new)
    return tuple(a + (b - a) / count for a, b in zip(avg, new))


def _blend(*terms):
    out = None
    for w, pair in terms:
        scaled = tuple(w * a for a in pair)
        out = scaled if out is None else tuple(o + t for o, t in zip(out, scaled))
    return out


class BiasGain(Module):
    """Learned per-channel (or per-neuron) scale ``gamma`` and shift ``bias``.

    ``shape`` is the broadcast shape of the parameters, e.g. ``(1, 1, 1, C)``
    for one pair per channel or ``(1, Y, X, C)`` for one per neuron.
    """

    def __init__(self, shape):
        super().__init__()
        shape = tuple(int(d) for d in shape)
        if len(shape) != 4 or shape[0] != 1:
            raise ParameterError(f"bias/gain shape must be (1, Y, X, C), got {shape}")
        self.add_param("gamma", np.ones(shape))
        self.add_param("bias", np.zeros(shape))
        self._axes = tuple(i for i, d in enumerate(shape) if d == 1)

    @classmethod
    def per_channel(cls, channels):
        return cls((1, 1, 1, channels))

    def _check(self, x):
        try:
            shape = np.broadcast_shapes(x.shape, self.params["gamma"].shape)
        except ValueError:
            shape = None
        if shape != x.shape:
            raise ContractError(
                f"bias/gain of shape {self.params['gamma'].shape} cannot apply to input {x.shape}")

    def forward(self, x):
        self._check(x)
        self._push(x)
        return self.params["gamma"] * x + self.params["bias"]

    def backward(self, dy):
        (x,) = self._pop()
        self.grads["gamma"] += np.sum(dy * x, axis=self._axes, keepdims=True)
        self.grads["bias"] += np.sum(dy, axis=self._axes, keepdims=True)
        return self.params["gamma"] * dy


@dataclass
class NormConfig:
    """Everything needed to build a normalization layer."""

    kind: str = "batch"
    scheme: PartitionScheme = None
    lp: LpConfig = None
    hyper: StreamHyper = None
    momentum: float = 0.9

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"norm kind must be one of {KINDS}, got {self.kind!r}")
        if self.scheme is None:
            self.scheme = preset("LN" if self.kind == "sample" else "BN")
        if self.lp is None:
            self.lp = LpConfig()
        if self.hyper is None:
            self.hyper = StreamHyper()

    def build(self):
        if self.kind == "none":
            return IdentityNorm(self.scheme, self.lp)
        if self.kind == "sample":
            return SampleNorm(self.scheme, self.lp)
        if self.kind == "batch":
            return BatchNorm(self.scheme, self.lp, self.momentum)
        return StreamNorm(self.scheme, self.lp, self.hyper)

    @property
    def backprop_exact(self):
        """Whether whole-network backprop through this layer is exact."""
        return self.kind != "streaming" or self.hyper.reduces_to_gbn


def make_norm(kind="batch", scheme=None, lp=None, hyper=None, momentum=0.9):
    return NormConfig(kind, scheme, lp, hyper, momentum).build()
