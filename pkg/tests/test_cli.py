import csv
from pathlib import Path

import pytest

from streamnorm.cli import main
from streamnorm.config import DEFAULTS, dump_config, load_config, parse_value
from streamnorm.errors import ConfigError

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
FAST = ["data.n_train=64", "data.n_val=32", "net.hidden=[8]", "train.m=16", "train.schedule=[[1, 0.05]]"]


def run(*args):
    return main([str(a) for a in args])


def sets(items):
    out = []
    for item in items:
        out += ["--set", item]
    return out


def read_summary(path):
    out = {}
    for line in Path(path).read_text().splitlines():
        k, v = line.split(" = ", 1)
        out[k] = v
    return out


# ---- config

def test_config_forms(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text('lp = {p = 3, setting = "C"}\ntrain.m = 4\n[stream]\nbeta1 = 0.5\n')
    cfg = load_config(p, ["train.n=2", ("norm.kind", "sample"), "stream.beta=[0, 0, 0]"])
    assert cfg["lp.p"] == 3 and cfg["lp.setting"] == "C"
    assert cfg["train.m"] == 4 and cfg["train.n"] == 2
    assert cfg["norm.kind"] == "sample"
    assert (cfg["stream.beta1"], cfg["stream.beta2"], cfg["stream.beta3"]) == (0.0, 0.0, 0.0)


def test_config_ints_promote_to_floats():
    assert load_config(None, ["stream.alpha1=1"])["stream.alpha1"] == 1.0


@pytest.mark.parametrize("override", ["train.mm=3", "train.m=abc", "train.m=1.5", "stream.beta=[1, 0]",
                                      "train.record_time=1", "nonsense"])
def test_config_errors(override):
    with pytest.raises(ConfigError):
        load_config(None, [override])


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")
    bad = tmp_path / "bad.cfg"
    bad.write_text("train.m = = 3")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_parse_value_bare_words():
    assert parse_value("batch") == "batch"
    assert parse_value('"batch"') == "batch"
    assert parse_value("[1, 2]") == [1, 2]
    assert parse_value("1e-5") == 1e-5


def test_dump_round_trip(tmp_path):
    cfg = load_config(None, ["lp.p=3", "norm.scheme=pool=N,Y"])
    p = tmp_path / "r.cfg"
    p.write_text(dump_config(cfg))
    assert load_config(p) == cfg


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.cfg")), ids=lambda p: p.name)
def test_shipped_configs_parse(path):
    load_config(path)


# ---- train

def test_train_writes_outputs(tmp_path):
    assert run("train", "--out", tmp_path, *sets(FAST)) == 0
    for name in ("run.csv", "config.resolved", "summary.txt", "model.pkl"):
        assert (tmp_path / name).exists()
    resolved = load_config(tmp_path / "config.resolved")
    for key in ("stream.alpha1", "stream.alpha2", "stream.beta1", "stream.beta2", "stream.beta3",
                "stream.kappa1", "stream.kappa2", "stream.kappa3", "stream.kappa4", "train.m", "train.n",
                "norm.scheme", "lp.setting", "lp.p", "lp.epsilon"):
        assert key in resolved
    assert set(resolved) == set(DEFAULTS)
    summary = read_summary(tmp_path / "summary.txt")
    assert {"final_train_loss", "eval_loss", "eval_error"} <= set(summary)
    rows = list(csv.DictReader(open(tmp_path / "run.csv")))
    assert len(rows) == 4 and rows[-1]["eval_loss"] != ""


def test_seed_override_is_deterministic(tmp_path):
    for name, seed in [("a", 1), ("b", 1), ("c", 2)]:
        assert run("train", "--out", tmp_path / name, "--seed", seed, *sets(FAST)) == 0
    a, b, c = ((tmp_path / n / "run.csv").read_bytes() for n in "abc")
    assert a == b and a != c


def test_missing_dataset_path(tmp_path, capsys):
    assert run("train", "--out", tmp_path, "--set", "data.kind=text", "--set", "data.path=nowhere.txt") == 2
    assert "data.path" in capsys.readouterr().err


def test_invalid_config_exit_code(tmp_path, capsys):
    assert run("train", "--out", tmp_path, "--set", "train.m=0") == 2
    assert run("train", "--out", tmp_path, "--set", "lp.p=0") == 2
    assert run("train", "--out", tmp_path, "--set", "norm.scheme=BA9") == 2
    assert run("train", "--out", tmp_path, "--set", "bogus.key=1") == 2
    assert "bogus.key" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_failure_exit_code(tmp_path, capsys):
    args = sets(FAST[:-1] + ["norm.kind=none", "train.schedule=[[1, 1e300]]", "train.momentum=0.0"])
    assert run("train", "--out", tmp_path, *args) == 3
    assert "batch" in capsys.readouterr().err


def test_online_batch_norm_fails(tmp_path, capsys):
    code = run("train", "--config", CONFIGS / "online_stream.cfg", "--out", tmp_path,
               "--set", "norm.kind=batch", "--set", "lp.setting=A", "--set", "data.n_train=10")
    assert code == 2
    assert "singleton" in capsys.readouterr().err


def test_gbn_reduction_config(tmp_path):
    assert run("train", "--config", CONFIGS / "gbn_reduction.cfg", "--out", tmp_path) == 0
    assert float(read_summary(tmp_path / "summary.txt")["max_abs_delta"]) < 1e-9


def test_gbn_reduction_detects_divergence(tmp_path):
    assert run("train", "--config", CONFIGS / "gbn_reduction.cfg", "--out", tmp_path,
               "--set", "stream.alpha=[0.5, 0.5]", "--set", "data.n_train=320") == 0
    assert float(read_summary(tmp_path / "summary.txt")["max_abs_delta"]) > 1e-3


def test_eval_command(tmp_path, capsys):
    assert run("train", "--out", tmp_path, *sets(FAST)) == 0
    capsys.readouterr()
    assert run("eval", "--out", tmp_path, *sets(FAST)) == 0
    assert "eval_loss" in capsys.readouterr().out
    assert (tmp_path / "eval.txt").exists()
    assert run("eval", "--out", tmp_path / "none", *sets(FAST)) == 2


def test_char_lm_train(tmp_path):
    corpus = tmp_path / "text.txt"
    corpus.write_bytes(b"to be or not to be, that is the question. " * 20)
    args = sets(["experiment.kind=charlm", "data.kind=text", f'data.path="{corpus}"', "data.window=10",
                 "net.arch=rnn", "net.hidden_units=8", "norm.binding=time_specific",
                 "train.optimizer=manhattan", "train.schedule=[[1, 0.01]]", "train.m=4"])
    assert run("train", "--out", tmp_path / "out", *args) == 0
    summary = read_summary(tmp_path / "out" / "summary.txt")
    assert float(summary["eval_loss"]) > 0


# ---- gradcheck

def test_gradcheck_arch_a(capsys):
    assert run("gradcheck", "--config", CONFIGS / "gradcheck_arch_a.cfg") == 0
    assert "max relative error" in capsys.readouterr().out


def test_gradcheck_arch_a_eight_samples():
    assert run("gradcheck", *sets(["net.hidden=[6]", "data.shape=[1, 1, 5]", "gradcheck.samples=8"])) == 0


def test_gradcheck_bias_gain_only(capsys):
    assert run("gradcheck", "--config", CONFIGS / "bias_gain_gradcheck.cfg") == 0
    out = capsys.readouterr().out
    worst = float(out.strip().splitlines()[-1].split()[3])
    assert worst < 1e-8


def test_gradcheck_failure_exit_code():
    assert run("gradcheck", "--config", CONFIGS / "gradcheck_arch_a.cfg", "--set", "gradcheck.tol=1e-30") == 1


def test_gradcheck_refuses_streaming(capsys):
    assert run("gradcheck", "--set", "norm.kind=streaming", "--set", "stream.beta=[0.7, 0, 0.3]") == 4
    assert "refused" in capsys.readouterr().err


def test_gradcheck_refuses_shared_recurrent_streaming():
    args = sets(["norm.kind=streaming", "stream.alpha=[0, 1]", "stream.beta=[0, 0, 1]", "net.arch=arch_c",
                 "data.shape=[4, 4, 2]", "net.channels=[2, 2]", "norm.binding=shared"])
    assert run("gradcheck", *args) == 4


def test_gradcheck_streaming_reduction_passes():
    args = sets(["norm.kind=streaming", "stream.alpha=[0, 1]", "stream.beta=[0, 0, 1]",
                 "net.hidden=[5]", "data.shape=[1, 1, 4]", "gradcheck.samples=4"])
    assert run("gradcheck", *args) == 0


# ---- sweep

def test_sweep(tmp_path, capsys):
    code = run("sweep", "--out", tmp_path, *sets(FAST), "--axis", "lp.p=[1, 2]",
               "--axis", "stream.beta=[[0, 0, 0], [0.7, 0, 0.3]]", "--set", "norm.kind=streaming")
    assert code == 0
    assert "4 runs, 0 failed" in capsys.readouterr().out
    summary = list(csv.DictReader(open(tmp_path / "sweep_summary.csv")))
    assert [(r["lp.p"], r["stream.beta"]) for r in summary] == [
        ("1", "[0, 0, 0]"), ("1", "[0.7, 0, 0.3]"), ("2", "[0, 0, 0]"), ("2", "[0.7, 0, 0.3]")]
    rows = list(csv.DictReader(open(tmp_path / "sweep.csv")))
    assert len(rows) == 16 and {"lp.p", "stream.beta", "train_loss"} <= set(rows[0])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_sweep_records_failures(tmp_path, capsys):
    code = run("sweep", "--out", tmp_path, *sets(FAST[:-1] + ["norm.kind=none", "train.momentum=0.0"]),
               "--axis", "train.schedule=[[[1, 0.05]], [[1, 1e300]]]")
    assert code == 0
    assert "2 runs, 1 failed" in capsys.readouterr().out
    summary = list(csv.DictReader(open(tmp_path / "sweep_summary.csv")))
    assert summary[0]["status"] == "ok" and summary[1]["status"].startswith("numerical")


@pytest.mark.parametrize("axis", ["lp.p=[]", "lp.p=3", "lp.p"])
def test_sweep_bad_axis(tmp_path, axis):
    assert run("sweep", "--out", tmp_path, "--axis", axis) == 2


def test_sweep_needs_an_axis(tmp_path):
    assert run("sweep", "--out", tmp_path) == 2
