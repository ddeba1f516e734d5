#%% Streaming norm collapses to batch norm
# With one batch per update, alpha = (0, 1) and beta = (0, 0, 1), a streaming
# layer uses exactly the current batch's statistics and their exact
# gradients.  Train it side by side with a batch-norm twin and compare.
import warnings

import numpy as np

from streamnorm import BatchNorm, LpConfig, StreamHyper, StreamNorm, preset

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    hyper = StreamHyper.gbn_reduction()
stream = StreamNorm(preset("BN"), LpConfig(2, "A"), hyper)
batch = BatchNorm(preset("BN"), LpConfig(2, "A"))

gen = np.random.default_rng(0)
worst = 0.0
for step in range(100):
    x = gen.normal(size=(8, 1, 1, 4))
    dy = gen.normal(size=x.shape)
    worst = max(worst, np.abs(stream.forward(x) - batch.forward(x)).max(),
                np.abs(stream.backward(dy) - batch.backward(dy)).max())
    stream.commit()
print("largest difference over 100 batches:", worst)

#%% The same check on a whole network, from a config file
# `streamnorm train --config configs/gbn_reduction.cfg` does this for a
# three-layer net, including the weight updates, and reports max_abs_delta.
from streamnorm.config import load_config
from streamnorm.experiments import run_gbn_reduction

summary = run_gbn_reduction(load_config("configs/gbn_reduction.cfg"), "runs/demo_gbn_reduction")
print(summary)
