"""Central finite-difference gradient checks for layers and whole models."""

import copy

import numpy as np

DEFAULT_STEP = 1e-5
# Denominator floor: absolute, and relative to the largest entry of the
# tensor.  Entries far below the tensor's scale carry only round-off from the
# central difference (~1e-11 absolute), so they are compared on that scale.
REL_FLOOR = 1e-7
SCALE_FLOOR = 1e-5


def rel_error(analytic, numeric, floor=REL_FLOOR):
    """Max over elements of ``|a - n| / max(|a|, |n|, floor, 1e-5 * max|a|)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    floor = max(floor, SCALE_FLOOR * float(np.max(np.abs(a))))
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def numerical_grad(f, x, h=DEFAULT_STEP):
    """Central-difference gradient of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        grad[i] = (fp - fm) / (2 * h)
    return grad


def layer_grads(layer, x, dy, h=DEFAULT_STEP):
    """Analytic and numeric gradients of ``sum(forward(x) * dy)`` for a single layer.

    Returns ``{name: (analytic, numeric)}`` with ``"x"`` for the input and one
    entry per parameter.  Layer state is restored around every evaluation.
    """
    x = np.array(x, dtype=np.float64)
    state = _snapshot(layer)

    def f():
        _restore(layer, state)
        layer.clear_cache()
        return float(np.sum(layer.forward(x) * dy))

    _restore(layer, state)
    layer.clear_cache()
    layer.zero_grad()
    layer.forward(x)
    dx = layer.backward(dy)
    out = {"x": (dx, numerical_grad(f, x, h))}
    analytic = {k: layer.grads[k].copy() for k in layer.params}
    for k in layer.params:
        out[k] = (analytic[k], numerical_grad(f, layer.params[k], h))
    _restore(layer, state)
    return out


def model_grads(model, batch, h=DEFAULT_STEP, check_input=True):
    """Analytic and numeric gradients of ``model.forward_loss(batch)``.

    Keys are ``"<index>:<ModuleType>.<param>"`` plus ``"input"`` for
    classifiers.  All normalization state (and any carried hidden state) is
    restored before each loss evaluation so every evaluation sees the same
    statistics history.
    """
    state = _snapshot(model)
    inputs = batch[0]

    def f():
        _restore(model, state)
        return model.forward_loss(batch)

    _restore(model, state)
    model.zero_grad()
    model.forward_loss(batch)
    model.backward()
    out = {}
    for i, (m, k) in enumerate(model.parameters()):
        a = m.grads[k].copy()
        out[f"{i}:{type(m).__name__}.{k}"] = (a, numerical_grad(f, m.params[k], h))
    if check_input and getattr(model, "input_grad", None) is not None \
            and np.issubdtype(np.asarray(inputs).dtype, np.floating):
        out["input"] = (model.input_grad.copy(), numerical_grad(f, inputs, h))
    _restore(model, state)
    model.zero_grad()
    return out


def max_errors(grads, floor=REL_FLOOR):
    return {k: rel_error(a, n, floor) for k, (a, n) in grads.items()}


def _snapshot(model):
    state = {}
    for m in model.modules():
        if hasattr(m, "get_state"):
            state[id(m)] = (m, m.get_state())
        if hasattr(m, "h"):
            state[("h", id(m))] = (m, None if m.h is None else m.h.copy())
        if hasattr(m, "stores"):
            state[("stores", id(m))] = (m, list(m.stores))
    return state


def _restore(model, state):
    for key, (m, s) in state.items():
        if isinstance(key, tuple) and key[0] == "h":
            m.h = None if s is None else s.copy()
        elif isinstance(key, tuple) and key[0] == "stores":
            m.stores[:] = s
        else:
            m.set_state(copy.deepcopy(s))
