"""
Comparing aggregation mechanisms against channel concatenation
==============================================================

The same two-process problem, four ways:

  compol-rnn   per-process branches + gated recurrent latent summary
  compol-atn   per-process branches + attention over process latents
  compol-skip  per-process branches, plain summed summary
  fno-c        one branch over the concatenated channels (the baseline)

`config_for_kind` rewrites a base configuration for each variant, so the
comparison is matched in depth/width/modes by construction.  On a task
where the processes interact strongly, the coupled variants usually land
ahead of concatenation at equal epoch budget; on easy tasks they tie.
"""

import tempfile
from pathlib import Path

import numpy as np

from compol import datagen as G, dataio as D, model as M, training as TR

workdir = Path(tempfile.mkdtemp(prefix="compol_demo_"))

# interaction-dominant variant of the two-population system: order-one
# reaction rates, short horizon, so the map mixes the processes hard
spec = G.system_spec("lv", resolution=32,
                     overrides={"horizon": 2.0, "fine_factor": 2, "dt": 0.02,
                                "a": 1.0, "b": 1.0, "c": 1.0, "d": 1.0})
G.generate_dataset(spec, 64, seed=11, out_dir=workdir / "data")
ds = D.load_dataset(workdir / "data")
train_ds, test_ds = ds.subset(np.arange(48)), ds.subset(np.arange(48, 64))

base = M.CompolConfig(processes=2, channels=[1, 1], layers=3, width=16,
                      modes=8, aggregation="gru")

print(f"{'kind':12s} {'params':>8s} {'test err':>9s}")
for kind in M.MODEL_KINDS:
    cfg = M.config_for_kind(kind, base)
    res = TR.train(cfg, train_ds, test_ds, epochs=40, batch_size=8,
                   lr=2e-3, seed=0)
    n_params = M.total_params(res.model)
    print(f"{kind:12s} {n_params:8d} {res.best_err:9.4f}")

# where do the parameters sit?  spectral mixing dominates; per entry the
# complex weights count as two reals
cfg = M.config_for_kind("compol-rnn", base)
counts = M.param_count(M.init_params(cfg, seed=0))
spectral = sum(v for k, v in counts.items() if k.endswith(".r"))
agg = sum(v for k, v in counts.items() if k.startswith("aggregation"))
total = sum(counts.values())
print(f"\nrnn parameter split: spectral {spectral} | aggregation {agg} "
      f"| other {total - spectral - agg}")
