"""Experiment configuration: flat dotted keys in TOML syntax.

A config file may use tables (``[stream]``), inline tables
(``lp = {p = 1, setting = "B"}``) or dotted keys (``train.m = 2``); all are
flattened to dotted keys and checked against :data:`DEFAULTS`.  The resolved
config is written back as one ``key = value`` line per key, which is itself a
valid config file.
"""

import json

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError

DEFAULTS = {
    "experiment.kind": "classify",
    "data.kind": "synthetic",
    "data.path": "",
    "data.n_train": 2000,
    "data.n_val": 500,
    "data.classes": 10,
    "data.separation": 3.0,
    "data.shape": [1, 1, 16],
    "data.seed": 0,
    "data.val_fraction": 0.01,
    "data.window": 100,
    "data.eval_batch": 256,
    "net.arch": "arch_a",
    "net.hidden": [64, 64],
    "net.channels": [8, 16],
    "net.k1": 2,
    "net.k2": 2,
    "net.k": 3,
    "net.layers": [],
    "net.cell": "rnn",
    "net.hidden_units": 100,
    "norm.kind": "batch",
    "norm.scheme": "BN",
    "norm.binding": "shared",
    "norm.momentum": 0.9,
    "lp.p": 2,
    "lp.setting": "A",
    "lp.epsilon": 1e-5,
    "stream.alpha1": 0.7,
    "stream.alpha2": 0.3,
    "stream.beta1": 0.7,
    "stream.beta2": 0.0,
    "stream.beta3": 0.3,
    "stream.kappa1": 0.7,
    "stream.kappa2": 0.3,
    "stream.kappa3": 0.7,
    "stream.kappa4": 0.3,
    "train.m": 32,
    "train.n": 1,
    "train.optimizer": "sgd_momentum",
    "train.momentum": 0.9,
    "train.schedule": [[25, 0.1], [5, 0.01]],
    "train.seed": 0,
    "train.eval_every": 0,
    "train.smooth": 50,
    "train.record_time": False,
    "gradcheck.samples": 8,
    "gradcheck.window": 3,
    "gradcheck.step": 1e-5,
    "gradcheck.tol": 1e-4,
    "out.dir": "runs/default",
}

# composite keys accepted by --set / --axis and expanded to their parts
ALIASES = {
    "stream.beta": ("stream.beta1", "stream.beta2", "stream.beta3"),
    "stream.alpha": ("stream.alpha1", "stream.alpha2"),
    "stream.kappa": ("stream.kappa1", "stream.kappa2", "stream.kappa3", "stream.kappa4"),
}


def flatten(tree, prefix=""):
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def parse_value(text):
    """Parse a TOML value; bare words fall back to strings."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text.strip()


def _check_type(key, value):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = isinstance(value, str)
    if not ok:
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}")
    return value


def set_key(cfg, key, value):
    if key in ALIASES:
        parts = ALIASES[key]
        if not isinstance(value, list) or len(value) != len(parts):
            raise ConfigError(f"{key}: expected a list of {len(parts)} numbers, got {value!r}")
        for k, v in zip(parts, value):
            set_key(cfg, k, v)
        return
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    cfg[key] = _check_type(key, value)


def load_config(path=None, overrides=()):
    """Defaults, updated by the file at ``path`` and then by ``overrides``.

    ``overrides`` holds ``"key=value"`` strings or ``(key, value)`` pairs.
    """
    cfg = dict(DEFAULTS)
    if path is not None:
        try:
            with open(path, "rb") as f:
                tree = tomllib.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from None
        for k, v in flatten(tree).items():
            set_key(cfg, k, v)
    for item in overrides:
        if isinstance(item, str):
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not of the form key=value")
            k, v = item.split("=", 1)
            item = (k.strip(), parse_value(v))
        set_key(cfg, *item)
    return cfg


def format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return "[" + ", ".join(format_value(x) for x in v) + "]"
    if isinstance(v, int):
        return str(v)
    return json.dumps(v)


def dump_config(cfg):
    return "".join(f"{k} = {format_value(cfg[k])}\n" for k in sorted(cfg))
