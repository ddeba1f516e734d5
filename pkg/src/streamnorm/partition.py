"""Normalization references as pooled-axis partitions.

A :class:`PartitionScheme` names the subset of ``(N, Y, X, C)`` axes whose
activations are pooled to form one statistics group.  Every element belongs
to exactly one group: the group is fixed by the element's coordinates on the
axes that are *not* pooled.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .tensor import AXES, axis_indices, check_shape

PRESETS = {
    "BN": ("N", "Y", "X"),
    "LN": ("Y", "X", "C"),
    "neuron_wise": ("N",),
    "layer_batch": ("N", "Y", "X", "C"),
    "sample_channel": ("Y", "X"),
}


@dataclass(frozen=True)
class PartitionScheme:
    pooled_axes: tuple = ()
    name: str = None

    def __post_init__(self):
        object.__setattr__(self, "pooled_axes", axis_indices(self.pooled_axes))

    @property
    def axes(self):
        return self.pooled_axes

    @property
    def pools_batch(self):
        return 0 in self.pooled_axes

    def group_shape(self, shape):
        """Shape of a per-group statistics array (pooled axes collapsed to 1)."""
        return tuple(1 if i in self.pooled_axes else d for i, d in enumerate(shape))

    def group_size(self, shape):
        return int(np.prod([shape[i] for i in self.pooled_axes], dtype=np.int64))

    def group_count(self, shape):
        return int(np.prod(self.group_shape(shape), dtype=np.int64))

    def label(self):
        if self.name:
            return self.name
        return "pool=" + ",".join(AXES[i] for i in self.pooled_axes)

    def __str__(self):
        return self.label()


def preset(name):
    try:
        axes = PRESETS[name]
    except KeyError:
        raise ParameterError(
            f"unknown partition preset {name!r}; known: {sorted(PRESETS)}"
        ) from None
    return PartitionScheme(axes, name)


def parse_scheme(text):
    """Parse a preset name or an explicit ``pool=N,Y,X`` axis list.

    ``pool=`` with nothing after it is the identity partition.  An optional
    label may follow a colon, e.g. ``"BA4:pool=N,Y,X,C"``.
    """
    text = text.strip()
    label = None
    if ":" in text:
        label, text = (s.strip() for s in text.split(":", 1))
    if text in PRESETS:
        scheme = preset(text)
        return PartitionScheme(scheme.pooled_axes, label or scheme.name)
    if text.startswith("pool="):
        body = text[len("pool="):].strip()
        axes = [a for a in body.split(",") if a.strip()] if body else []
        return PartitionScheme(tuple(axes), label)
    raise ParameterError(f"cannot parse partition scheme {text!r}")


def groups_of(scheme, shape):
    """Integer group id for every element of a tensor of ``shape``.

    Ids are in ``[0, group_count)`` and two elements share an id iff they
    agree on all non-pooled coordinates.
    """
    shape = check_shape(shape)
    gshape = scheme.group_shape(shape)
    ids = np.arange(int(np.prod(gshape)), dtype=np.int64).reshape(gshape)
    return np.broadcast_to(ids, shape).copy()
