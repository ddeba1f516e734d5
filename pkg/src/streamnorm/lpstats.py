"""Lp normalization statistics.

The mean of a group is always its arithmetic mean.  The divisive factor is
the p-th root of the p-th absolute moment about a centre ``c``::

    sigma = (mean(|x - c| ** p) + epsilon) ** (1 / p)

Setting ``"A"`` centres on the group mean, ``"B"`` on a running estimate of the
mean supplied by the caller, and ``"C"`` on zero.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DegeneratePartitionError, ParameterError
from .partition import PartitionScheme
from .tensor import abs_pow

SETTINGS = ("A", "B", "C")


@dataclass(frozen=True)
class LpConfig:
    p: int = 2
    setting: str = "A"
    epsilon: float = 1e-5

    def __post_init__(self):
        if isinstance(self.p, bool) or int(self.p) != self.p:
            raise ParameterError(f"p must be an integer, got {self.p!r}")
        if self.p < 1:
            raise ParameterError(f"p must be >= 1, got {self.p}")
        object.__setattr__(self, "p", int(self.p))
        setting = str(self.setting).upper()
        if setting not in SETTINGS:
            raise ParameterError(f"setting must be one of {SETTINGS}, got {self.setting!r}")
        object.__setattr__(self, "setting", setting)
        if not self.epsilon >= 0:
            raise ParameterError(f"epsilon must be >= 0, got {self.epsilon}")


@dataclass
class NormStats:
    """Per-group ``mu`` and ``sigma``, stored with pooled axes kept as size 1."""

    mu: np.ndarray
    sigma: np.ndarray
    config: LpConfig = field(default_factory=LpConfig)
    scheme: PartitionScheme = field(default_factory=PartitionScheme)
    center: object = 0.0

    def copy(self):
        center = self.center.copy() if isinstance(self.center, np.ndarray) else self.center
        return NormStats(self.mu.copy(), self.sigma.copy(), self.config, self.scheme, center)


def compute_stats(x, scheme, cfg, mu_hat=None):
    """Compute :class:`NormStats` of ``x`` for every group of ``scheme``.

    ``mu_hat`` is the running mean used as the centre under setting B.  It
    must broadcast against the group shape.
    """
    axes = scheme.axes
    size = scheme.group_size(x.shape)
    if cfg.setting == "A" and size == 1:
        raise DegeneratePartitionError(
            f"setting A over singleton groups ({scheme.label()} on shape {x.shape}) "
            "collapses every activation to zero; use setting B or C"
        )
    mu = np.mean(x, axis=axes, keepdims=True)
    if cfg.setting == "A":
        center = mu
    elif cfg.setting == "B":
        if mu_hat is None:
            raise ContractError("setting B needs a running mean estimate mu_hat")
        center = np.asarray(mu_hat, dtype=np.float64)
    else:
        center = 0.0
    moment = np.mean(abs_pow(x - center, cfg.p), axis=axes, keepdims=True)
    sigma = _root(moment + cfg.epsilon, cfg.p)
    return NormStats(mu, sigma, cfg, scheme, center)


def _root(a, p):
    if p == 1:
        return a
    if p == 2:
        return np.sqrt(a)
    return a ** (1.0 / p)


def stats_backward(x, stats, grad_mu, grad_sigma):
    """Gradient of ``E`` w.r.t. ``x`` flowing through ``mu`` and ``sigma``.

    ``grad_mu`` and ``grad_sigma`` are ``dE/dmu`` and ``dE/dsigma`` per group.
    Under setting A the centre moves with ``x``; under B and C it is held
    constant.  ``sign(0)`` is taken as 0.
    """
    gshape = stats.scheme.group_shape(x.shape)
    grad_mu = np.asarray(grad_mu, dtype=np.float64)
    grad_sigma = np.asarray(grad_sigma, dtype=np.float64)
    if stats.mu.shape != gshape or np.broadcast_shapes(grad_mu.shape, gshape) != gshape \
            or np.broadcast_shapes(grad_sigma.shape, gshape) != gshape:
        raise ContractError(
            f"statistics of shape {stats.mu.shape} do not match input {x.shape} "
            f"under {stats.scheme.label()}"
        )
    axes = stats.scheme.axes
    n = stats.scheme.group_size(x.shape)
    p = stats.config.p
    d = x - stats.center
    if p == 1:
        w = np.sign(d)
    elif p == 2:
        w = d
    else:
        w = np.sign(d) * np.abs(d) ** (p - 1)
    if stats.config.setting == "A":
        w = w - np.mean(w, axis=axes, keepdims=True)
    scale = grad_sigma / n if p == 1 else grad_sigma * stats.sigma ** (1 - p) / n
    return grad_mu / n + scale * w
