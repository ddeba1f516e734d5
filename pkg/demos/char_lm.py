#%% Character-level language model
# A 100-unit RNN over the bytes of a public-domain play, trained with the
# sign-of-gradient (Manhattan) rule and truncated backprop over 100 steps.
# Streaming normalization shares one set of statistics across all timesteps.
import numpy as np

from streamnorm.config import load_config
from streamnorm.data import load_char_corpus
from streamnorm.experiments import build_model, run_train

train, val = load_char_corpus("data/hamlet.txt")
print(f"{len(train)} training bytes, {len(val)} validation bytes, vocabulary {train.vocab_size}")
print(f"uniform-guess loss ln({train.vocab_size}) = {np.log(train.vocab_size):.3f}")

#%% One epoch each with shared streaming norm and time-specific batch norm
for name, overrides in [("streaming", []),
                        ("time-specific BN", ["norm.kind=batch", "norm.binding=time_specific",
                                              "lp.setting=A", "train.n=1"])]:
    cfg = load_config("configs/charlm_rnn.cfg", overrides + ["train.schedule=[[1, 0.01]]"])
    s = run_train(cfg, f"runs/demo_charlm_{name.split()[0]}")
    print(f"{name:17s} validation loss {s['eval_loss']:.3f}")

#%% Store counts
# Time-specific binding keeps one statistics store per timestep seen in
# training; the shared streaming layer keeps one in total.
for binding in ("time_specific", "shared"):
    cfg = load_config("configs/charlm_rnn.cfg", [f"norm.binding={binding}", "norm.kind=batch"])
    lm = build_model(cfg, train)
    ids = train.inputs[:3 * 101].reshape(3, 101)
    lm.forward_loss((ids[:, :-1], ids[:, 1:]))
    print(binding, [b.store_count for b in lm.cell.norm_bindings()])
