"""Train a small renderer on the synthetic oracle set, then probe what it learned.

The oracle delays each ear geometrically and applies a level difference of
1 +- 0.3 sin(azimuth). A trained corrector should raise the gain of the ear
nearer the source and lower the other.

Run: python3 demos/02_train_synthetic.py [out_dir]   (about 4 minutes on one core)
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from linn import BinauralRenderer
from linn.config import ModelConfig, merge
from linn.data import load_dataset, synth_dataset
from linn.probe import ProbeGrid, probe
from linn.train import heldout_wave_l2, train

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="linn_demo_"))

# %% Data: 20 two-second items, half circling, half walking past
synth_dataset(out / "synth", seed=7, n_items=20)
ds = load_dataset(out / "synth")
held = ds["valid"] + ds["test"]
print({k: len(v) for k, v in ds.items()})

# %% A desk-sized model (64 hidden units) and a short schedule
cfg = merge(ModelConfig(), {
    "ibc": {"hidden": 64},
    "train": {"epochs": 30, "batch_size": 4, "seed": 0},
    "optim": {"lr_max": 3e-3},
})
before = heldout_wave_l2(BinauralRenderer(cfg, seed=0), held)
res = train(cfg, ds["train"], ds["valid"], log_path=out / "train.jsonl",
            out_path=out / "model.ckpt")
after = heldout_wave_l2(res.model, held)
print(f"held-out wave_l2: {before:.4f} -> {after:.4f}")

# %% Mean log-gain per ear across azimuth, against the oracle
rows = probe(res.model, ProbeGrid("azimuth", -90, 90, 7, radius=1.5))
print(" az   left   right  oracle(left)")
for left, right in zip(rows[0::2], rows[1::2]):
    a = left["azimuth_deg"]
    oracle = np.log(1 + 0.3 * np.sin(np.radians(a)))
    print(f"{a:4.0f} {left['mean_delta_logA']:+.3f} {right['mean_delta_logA']:+.3f}  {oracle:+.3f}")
