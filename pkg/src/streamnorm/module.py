"""Minimal module protocol shared by every layer.

Each module owns ``params``/``grads`` dicts and a LIFO stack of forward
caches.  ``forward`` pushes one cache entry in training mode and
``backward`` pops one, so a module visited several times during an unrolled
forward pass is unwound correctly when the visits are back-propagated in
reverse order.  Gradients accumulate (``+=``) until :meth:`zero_grad`.
"""

import numpy as np

from .errors import ContractError


class Module:
    def __init__(self):
        self.params = {}
        self.grads = {}
        self.training = True
        self._cache = []

    def children(self):
        return []

    def modules(self):
        """All modules in the tree (depth first, each instance once)."""
        seen = set()
        stack = [self]
        out = []
        while stack:
            m = stack.pop()
            if id(m) in seen:
                continue
            seen.add(id(m))
            out.append(m)
            stack.extend(reversed(m.children()))
        return out

    def parameters(self):
        """``(module, key)`` pairs for every trainable array."""
        return [(m, k) for m in self.modules() for k in m.params]

    def add_param(self, name, value):
        self.params[name] = np.asarray(value, dtype=np.float64)
        self.grads[name] = np.zeros_like(self.params[name])

    def zero_grad(self):
        for m in self.modules():
            for k in m.grads:
                m.grads[k].fill(0.0)

    def clear_cache(self):
        for m in self.modules():
            m._cache.clear()

    def train(self):
        for m in self.modules():
            m.training = True
            m.on_train()
        return self

    def eval(self):
        for m in self.modules():
            m.training = False
            m.on_eval()
        return self

    def on_train(self):
        pass

    def on_eval(self):
        pass

    def _push(self, *entry):
        if self.training:
            self._cache.append(entry)

    def _pop(self):
        if not self._cache:
            raise ContractError(f"{type(self).__name__}.backward without a matching forward")
        return self._cache.pop()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)
