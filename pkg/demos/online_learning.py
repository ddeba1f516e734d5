#%% Online learning: one sample per batch
# Batch norm with the usual mean-centred sigma cannot run on a batch of one:
# every group has a single element.  Streaming norm with a running-mean
# centre can.

from streamnorm.config import load_config
from streamnorm.errors import DegeneratePartitionError
from streamnorm.experiments import run_train

cfg = load_config("configs/online_stream.cfg")
summary = run_train(cfg, "runs/demo_online")
print("streaming norm, m=1:", {k: round(v, 3) for k, v in summary.items()})

#%% Loss curve
import csv

rows = list(csv.DictReader(open("runs/demo_online/run.csv")))
for r in rows[::250]:
    print(f"update {r['update_index']:>5s}  smoothed loss {float(r['smoothed_loss']):.3f}")

#%% The batch-norm configuration at m=1
try:
    run_train(load_config("configs/online_stream.cfg",
                          ["norm.kind=batch", "lp.setting=A"]), "runs/demo_online_bn")
except DegeneratePartitionError as e:
    print("batch norm:", e)

#%% Decoupled accumulation and update helps small batches
# Two samples per batch; averaging 16 batches per weight update versus
# updating after every batch.
for n in (1, 16):
    cfg = load_config(None, ["data.separation=4.0", "net.hidden=[32, 32]", "train.m=2",
                             f"train.n={n}", "train.schedule=[[2, 0.02]]"])
    s = run_train(cfg, f"runs/demo_dau_{n}")
    print(f"batches per update {n:2d}: training error {s['train_error']:.3f}")
