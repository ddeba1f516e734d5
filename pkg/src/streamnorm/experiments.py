"""Config-driven experiment runs: training, GBN-reduction twin runs,
gradient checks, sweeps and evaluation of saved models."""

import csv
import itertools
import logging
import pickle
from pathlib import Path

import numpy as np

from . import models
from .config import dump_config, format_value, set_key
from .data import char_batches, load_char_corpus, load_cifar10, minibatches, synth_classification
from .errors import ConfigError, NumericalError, StreamNormError
from .gradcheck import max_errors, model_grads
from .lpstats import LpConfig
from .norm import NormConfig, StreamHyper
from .partition import parse_scheme
from .recurrent import CharLM
from .tensor import Rng
from .training import CSV_COLUMNS, Optimizer, TrainConfig, commit_all, dau_train, evaluate

log = logging.getLogger(__name__)


class NotExactError(StreamNormError):
    """Gradient check requested where backprop is deliberately inexact."""


def norm_config(cfg):
    try:
        hyper = StreamHyper(*(cfg[f"stream.{k}"] for k in
                              ("alpha1", "alpha2", "beta1", "beta2", "beta3",
                               "kappa1", "kappa2", "kappa3", "kappa4")))
        return NormConfig(cfg["norm.kind"], parse_scheme(cfg["norm.scheme"]),
                          LpConfig(cfg["lp.p"], cfg["lp.setting"], cfg["lp.epsilon"]),
                          hyper, cfg["norm.momentum"])
    except ValueError as e:
        raise ConfigError(str(e)) from None


def train_config(cfg):
    try:
        return TrainConfig(m=cfg["train.m"], n=cfg["train.n"], optimizer=cfg["train.optimizer"],
                           momentum=cfg["train.momentum"],
                           schedule=[tuple(s) for s in cfg["train.schedule"]],
                           seed=cfg["train.seed"], eval_every=cfg["train.eval_every"],
                           smooth=cfg["train.smooth"], record_time=cfg["train.record_time"])
    except (ValueError, TypeError) as e:
        raise ConfigError(f"train: {e}") from None


def load_data(cfg):
    """Return ``(train, val)`` datasets for the configured source."""
    kind = cfg["data.kind"]
    if kind == "synthetic":
        args = dict(seed=cfg["data.seed"], classes=cfg["data.classes"],
                    separation=cfg["data.separation"], shape=tuple(cfg["data.shape"]))
        return (synth_classification(n=cfg["data.n_train"], split="train", **args),
                synth_classification(n=cfg["data.n_val"], split="val", **args))
    path = Path(cfg["data.path"])
    if not cfg["data.path"] or not path.exists():
        raise ConfigError(f"data.path: dataset not found: {cfg['data.path']!r}")
    if kind == "cifar10":
        train = load_cifar10(path, "train")
        val = load_cifar10(path, "test", mean=train.meta["mean"])
        return train, val
    if kind == "text":
        return load_char_corpus(path, cfg["data.val_fraction"])
    raise ConfigError(f"data.kind: unknown dataset kind {kind!r}")


def build_model(cfg, train):
    norm = norm_config(cfg)
    rng = Rng(cfg["train.seed"])
    arch = cfg["net.arch"]
    if arch in ("rnn", "gru") or cfg["experiment.kind"] == "charlm":
        cell = arch if arch in ("rnn", "gru") else cfg["net.cell"]
        return CharLM(train.vocab_size, cfg["net.hidden_units"], cell, norm,
                      cfg["norm.binding"], rng)
    in_shape = tuple(train.inputs.shape[1:])
    classes = train.classes
    if arch == "arch_a":
        return models.arch_a(in_shape, classes, tuple(cfg["net.hidden"]), norm, rng)
    if arch == "arch_b":
        return models.arch_b(in_shape, classes, tuple(cfg["net.channels"]), norm, rng)
    if arch == "arch_c":
        return models.arch_c(in_shape, classes, cfg["net.k1"], cfg["net.k2"],
                             tuple(cfg["net.channels"]), norm, cfg["norm.binding"], rng)
    if arch == "arch_d":
        return models.arch_d(in_shape, classes, cfg["net.k"], tuple(cfg["net.channels"]),
                             norm, cfg["norm.binding"], rng)
    if arch == "layers":
        return models.parse_layers(cfg["net.layers"], in_shape, classes, norm, rng)
    raise ConfigError(f"net.arch: unknown architecture {arch!r}")


def _is_text(cfg):
    return cfg["experiment.kind"] == "charlm" or cfg["data.kind"] == "text"


def batch_source(cfg, train):
    m, seed = cfg["train.m"], cfg["train.seed"]
    if _is_text(cfg):
        return lambda epoch: char_batches(train.inputs, m, cfg["data.window"])
    rng = Rng(seed).spawn(7)
    return lambda epoch: minibatches(train, m, rng.spawn(epoch))


def eval_batches(cfg, data):
    if _is_text(cfg):
        return char_batches(data.inputs, cfg["train.m"], cfg["data.window"])
    return minibatches(data, cfg["data.eval_batch"])


def prepare(cfg):
    train, val = load_data(cfg)
    model = build_model(cfg, train)
    return model, train, val


def _write_outputs(out, cfg, log_, summary, model=None):
    out.mkdir(parents=True, exist_ok=True)
    log_.write_csv(out / "run.csv")
    (out / "config.resolved").write_text(dump_config(cfg))
    (out / "summary.txt").write_text("".join(f"{k} = {format_value(v)}\n" for k, v in summary.items()))
    if model is not None:
        with open(out / "model.pkl", "wb") as f:
            pickle.dump(model, f)


def run_train(cfg, out=None):
    """Run the experiment described by ``cfg``; returns the summary dict."""
    out = Path(out if out is not None else cfg["out.dir"])
    if cfg["experiment.kind"] == "gbn_reduction":
        return run_gbn_reduction(cfg, out)
    if cfg["experiment.kind"] not in ("classify", "charlm"):
        raise ConfigError(f"experiment.kind: unknown kind {cfg['experiment.kind']!r}")
    model, train, val = prepare(cfg)
    tcfg = train_config(cfg)
    log_ = dau_train(model, batch_source(cfg, train), tcfg,
                     eval_fn=lambda mdl: evaluate(mdl, eval_batches(cfg, val)))
    summary = {"batches": len(log_.rows), "updates": log_.updates,
               "final_train_loss": log_.rows[-1]["train_loss"] if log_.rows else float("nan"),
               "final_smoothed_loss": log_.rows[-1]["smoothed_loss"] if log_.rows else float("nan")}
    if log_.rows:
        summary["eval_loss"] = log_.rows[-1]["eval_loss"]
        summary["eval_error"] = log_.rows[-1]["eval_error"]
    if not _is_text(cfg):
        summary["train_eval_loss"], summary["train_error"] = (
            float(v) for v in evaluate(model, minibatches(train, cfg["data.eval_batch"])))
    _write_outputs(out, cfg, log_, summary, model)
    return summary


def run_gbn_reduction(cfg, out):
    """Train a streaming net and a GBN twin in lockstep and record their divergence.

    The twin uses ``norm.kind = "batch"``; everything else, including the
    initial weights and the batch order, is shared.
    """
    out = Path(out)
    if cfg["norm.kind"] != "streaming":
        raise ConfigError("gbn_reduction needs norm.kind = \"streaming\"")
    model, train, val = prepare(cfg)
    twin = build_model({**cfg, "norm.kind": "batch"}, train)
    tcfg = train_config(cfg)
    t_opt = Optimizer(tcfg.optimizer, tcfg.momentum)
    state = {"count": 0, "delta": 0.0, "epoch": 0}

    def params_delta():
        return max((float(np.max(np.abs(a.params[k] - b.params[k])))
                    for (a, k), (b, _) in zip(model.parameters(), twin.parameters())), default=0.0)

    def source(epoch):
        state["epoch"] = epoch
        return batch_source(cfg, train)(epoch)

    def on_batch(mdl, index, loss, batch):
        d = params_delta()
        t_loss = twin.forward_loss(batch)
        twin.backward()
        d = max(d, abs(t_loss - loss))
        for name in ("logits", "input_grad"):
            a, b = getattr(mdl, name, None), getattr(twin, name, None)
            if a is not None and b is not None:
                d = max(d, float(np.max(np.abs(a - b))))
        state["count"] += 1
        if state["count"] == tcfg.n:
            params = [m.params[k] for m, k in twin.parameters()]
            grads = [m.grads[k] / tcfg.n for m, k in twin.parameters()]
            t_opt.step(params, grads, tcfg.lr_at(state["epoch"]))
            twin.zero_grad()
            commit_all(twin)
            state["count"] = 0
        state["delta"] = max(state["delta"], d)

    twin.train()
    log_ = dau_train(model, source, tcfg, on_batch=on_batch)
    state["delta"] = max(state["delta"], params_delta())
    summary = {"batches": len(log_.rows), "updates": log_.updates,
               "max_abs_delta": state["delta"],
               "final_train_loss": log_.rows[-1]["train_loss"] if log_.rows else float("nan")}
    _write_outputs(out, cfg, log_, summary)
    return summary


def _is_recurrent(cfg):
    arch = cfg["net.arch"]
    return (_is_text(cfg) or arch in ("rnn", "gru", "arch_d")
            or (arch == "arch_c" and max(cfg["net.k1"], cfg["net.k2"]) > 1))


def run_gradcheck(cfg):
    """Finite-difference check of every parameter tensor (and the input).

    Returns ``{name: max relative error}``.  Raises :class:`NotExactError`
    for streaming layers outside the GBN-reduction setting, where
    whole-network backprop is inexact by design.
    """
    norm = norm_config(cfg)
    if not norm.backprop_exact or (norm.kind == "streaming" and cfg["train.n"] != 1):
        raise NotExactError(
            "streaming normalization does not back-propagate exactly through its running "
            "history; gradient-check it in the GBN-reduction setting (n=1, alpha=(0,1), "
            "beta=(0,0,1)) or check the network without it")
    if norm.kind == "streaming" and cfg["norm.binding"] == "shared" and _is_recurrent(cfg):
        raise NotExactError(
            "a shared streaming layer mixes statistics of earlier timesteps into later ones, "
            "so backprop is inexact even with GBN-reduction weights; use "
            "norm.binding = \"time_specific\" for the gradient check")
    small = dict(cfg)
    if not _is_text(cfg):
        small["data.n_train"] = cfg["gradcheck.samples"]
        small["data.n_val"] = 1
    train, _ = load_data(small)
    model = build_model(small, train)
    if _is_text(cfg):
        w = cfg["gradcheck.window"]
        n = cfg["gradcheck.samples"]
        ids = train.inputs[: n * w + 1]
        batch = (ids[:-1].reshape(n, w), ids[1:].reshape(n, w))
    else:
        k = cfg["gradcheck.samples"]
        batch = (np.ascontiguousarray(train.inputs[:k]), train.labels[:k])
    return max_errors(model_grads(model, batch, h=cfg["gradcheck.step"]))


def run_sweep(cfg, axes, out):
    """One run per point of the cross product of ``axes`` (``{key: [values]}``).

    Writes ``sweep.csv`` (every run's log rows, prefixed by the override
    values) and ``sweep_summary.csv`` (one row per run).  Failing runs are
    recorded with their error and do not stop the sweep.
    """
    if not axes:
        raise ConfigError("sweep needs at least one axis")
    for k, values in axes.items():
        if not values:
            raise ConfigError(f"sweep axis {k!r} has no values")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    keys = list(axes)
    rows, summaries = [], []
    for i, point in enumerate(itertools.product(*(axes[k] for k in keys))):
        overrides = list(zip(keys, point))
        run_dir = out / f"run_{i:03d}"
        labels = {k: v if isinstance(v, str) else format_value(v) for k, v in overrides}
        try:
            run_cfg = dict(cfg)
            for k, v in overrides:
                set_key(run_cfg, k, v)
            summary = run_train(run_cfg, run_dir)
            status = "ok"
            with open(run_dir / "run.csv") as f:
                for r in csv.DictReader(f):
                    rows.append({**labels, **r})
        except NumericalError as e:
            summary, status = {"failed_batch": e.batch_index}, f"numerical: {e}"
        except (StreamNormError, ValueError) as e:
            summary, status = {}, f"error: {e}"
        log.info("sweep point %s: %s", labels, status)
        summaries.append({**labels, "status": status, **summary})
    with open(out / "sweep.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=keys + CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    fields = keys + ["status"] + sorted({k for s in summaries for k in s} - set(keys) - {"status"})
    with open(out / "sweep_summary.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields, lineterminator="\n", restval="")
        w.writeheader()
        for s in summaries:
            w.writerow({k: format_value(v) if isinstance(v, float) else v for k, v in s.items()})
    return summaries


def run_eval(cfg, out=None):
    """Evaluate the model saved by a previous ``train`` run on the val split."""
    out = Path(out if out is not None else cfg["out.dir"])
    path = out / "model.pkl"
    if not path.exists():
        raise ConfigError(f"no trained model at {path}")
    with open(path, "rb") as f:
        model = pickle.load(f)
    _, val = load_data(cfg)
    loss, error = evaluate(model, eval_batches(cfg, val))
    (out / "eval.txt").write_text(f"eval_loss = {loss!r}\neval_error = {error!r}\n")
    return {"eval_loss": loss, "eval_error": error}
