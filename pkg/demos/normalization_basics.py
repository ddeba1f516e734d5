#%% Statistics groups and Lp statistics
# Every normalization here is y = (x - mu) / sigma.  What changes is which
# activations are pooled to compute (mu, sigma), and how sigma is measured.
import numpy as np

from streamnorm import BatchNorm, LpConfig, SampleNorm, StreamNorm, compute_stats, parse_scheme, preset

x = np.random.default_rng(0).normal(2.0, 3.0, size=(4, 2, 2, 3))   # (N, Y, X, C)

for name in ["BN", "LN", "neuron_wise", "layer_batch", "sample_channel"]:
    s = preset(name)
    axes = ",".join("NYXC"[i] for i in s.axes)
    print(f"{name:15s} pools {axes:8s} -> {s.group_count(x.shape)} groups of {s.group_size(x.shape)}")

# Any subset of axes works, optionally with a label.
print(parse_scheme("BA4:pool=N,C"))

#%% Lp sigma
# sigma is the p-th root of the p-th absolute moment about a centre:
# the group mean (A), a running mean (B) or zero (C).
for p in (1, 2, 3, 7):
    s = compute_stats(x, preset("BN"), LpConfig(p, "A", 0.0))
    print(f"p={p}: sigma per channel {np.round(s.sigma.ravel(), 3)}")

#%% Three layers, one operation
y = BatchNorm(preset("BN")).forward(x)
print("batch norm, per-channel mean", np.round(y.mean(axis=(0, 1, 2)), 12))
print("batch norm, per-channel std ", np.round(y.std(axis=(0, 1, 2)), 6))

y = SampleNorm(preset("LN")).forward(x)
print("sample norm, per-sample mean", np.round(y.mean(axis=(1, 2, 3)), 12))

#%% Streaming statistics
# A streaming layer averages statistics over all batches since the last
# weight update (short term) and blends them with an exponential average
# taken at every update (long term).
layer = StreamNorm(preset("BN"), LpConfig(1, "B"))
gen = np.random.default_rng(1)
for update in range(3):
    for _ in range(2):
        layer.forward(gen.normal(size=(1, 1, 1, 3)))   # one sample per batch
    layer.commit()
    print(f"after update {update}: long-term mu {np.round(layer.s_long[0].ravel(), 3)}")
