"""Rank-4 float64 arrays in (N, Y, X, C) order and a seeded random source.

Tensors are plain ``numpy.ndarray`` objects.  Fully-connected activations use
``Y = X = 1``.
"""

import numpy as np

from .errors import ParameterError, ShapeError

AXES = ("N", "Y", "X", "C")
AXIS_INDEX = {name: i for i, name in enumerate(AXES)}

# Largest element count we are willing to allocate in one tensor.
MAX_ELEMENTS = 2**31


def check_shape(shape):
    shape = tuple(int(d) for d in shape)
    if len(shape) != 4:
        raise ShapeError(f"expected a 4-tuple (N, Y, X, C), got {shape}")
    if any(d < 1 for d in shape):
        raise ShapeError(f"every dimension must be >= 1, got {shape}")
    if int(np.prod(shape, dtype=object)) > MAX_ELEMENTS:
        raise ShapeError(f"shape {shape} is too large")
    return shape


def tensor_new(shape, fill=0.0):
    return np.full(check_shape(shape), float(fill), dtype=np.float64)


def as_tensor(a):
    """Coerce ``a`` to a contiguous float64 rank-4 array, validating the shape."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    check_shape(a.shape)
    return a


def axis_indices(axes):
    """Map axis names (or integer indices) to a sorted tuple of ints."""
    out = set()
    for a in axes:
        if isinstance(a, str):
            try:
                out.add(AXIS_INDEX[a.strip().upper()])
            except KeyError:
                raise ParameterError(f"unknown axis {a!r}; expected one of {AXES}") from None
        else:
            a = int(a)
            if not 0 <= a < 4:
                raise ParameterError(f"axis index {a} out of range")
            out.add(a)
    return tuple(sorted(out))


def abs_pow(t, p):
    """Elementwise ``|t| ** p`` for integer ``p >= 1``."""
    if p == 1:
        return np.abs(t)
    if p == 2:
        return t * t
    return np.abs(t) ** p


def reduce_over(t, axes, reducer="mean", p=None):
    """Reduce ``t`` over the named axes, keeping them as size-1 dimensions.

    ``reducer`` is ``"sum"``, ``"mean"`` or ``"abs_pow_mean"``; the last one
    computes ``mean(|t| ** p)`` and needs an integer ``p >= 1``.
    """
    ax = axis_indices(axes)
    if reducer == "sum":
        return np.sum(t, axis=ax, keepdims=True)
    if reducer == "mean":
        return np.mean(t, axis=ax, keepdims=True)
    if reducer == "abs_pow_mean":
        if p is None or p < 1 or int(p) != p:
            raise ParameterError(f"abs_pow_mean needs an integer p >= 1, got {p}")
        return np.mean(abs_pow(t, int(p)), axis=ax, keepdims=True)
    raise ParameterError(f"unknown reducer {reducer!r}")


class Rng:
    """Counter-based random source.

    Built on the Philox bit generator, so a ``(seed, counter)`` pair names a
    reproducible position in the stream.  Every draw advances ``counter`` by
    one, which makes sub-streams independent of how many values each draw
    consumed.
    """

    def __init__(self, seed=0, counter=0):
        if seed < 0 or counter < 0:
            raise ParameterError("seed and counter must be non-negative")
        self.seed = int(seed)
        self.counter = int(counter)

    def generator(self):
        """Return a numpy Generator for the current position and advance."""
        bitgen = np.random.Philox(key=self.seed, counter=[0, 0, self.counter, 0])
        self.counter += 1
        return np.random.Generator(bitgen)

    def normal(self, shape, stddev=1.0):
        return rng_normal(self, shape, stddev)

    def uniform(self, size, low=0.0, high=1.0):
        return self.generator().uniform(low, high, size=size)

    def permutation(self, n):
        return self.generator().permutation(n)

    def spawn(self, tag):
        """Independent child stream keyed by an integer ``tag``."""
        return Rng(seed=(self.seed * 1_000_003 + int(tag) + 1) % 2**63, counter=0)

    def __repr__(self):
        return f"Rng(seed={self.seed}, counter={self.counter})"


def rng_normal(rng, shape, stddev=1.0):
    if not stddev > 0:
        raise ParameterError(f"stddev must be > 0, got {stddev}")
    shape = tuple(int(d) for d in shape)
    if any(d < 1 for d in shape):
        raise ShapeError(f"every dimension must be >= 1, got {shape}")
    return rng.generator().normal(0.0, stddev, size=shape)
