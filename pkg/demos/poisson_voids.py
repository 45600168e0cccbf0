"""Poisson on randomly voided cells: data, a short eDAFNO run, and super-resolution.

Run from the repository root::

    python3 demos/poisson_voids.py

Takes a few minutes on one core. Increase ``EPOCHS`` to approach the
acceptance-suite numbers.
"""

import numpy as np

from dafno.datasets import gen_poisson_dataset, split
from dafno.training import TrainConfig, evaluate, run_protocol

EPOCHS = 30

data = gen_poisson_dataset(100, 32, seed=0)
train, val, test = split(data, (0.8, 0.1, 0.1), seed=0)
print(f"{len(train)} train / {len(val)} val / {len(test)} test samples on a {data.grid_shape} grid")
print(f"domain fraction per sample: {data.chi.mean(axis=(1, 2)).min():.2f} to {data.chi.mean(axis=(1, 2)).max():.2f}")

cfg = TrainConfig(variant="edafno", beta=10.0, epochs=EPOCHS, seeds=[0], model=dict(width=12, modes=6, proj_width=64))


def log(epoch, tr, va, lr):
    if epoch % 10 == 0 or epoch == EPOCHS - 1:
        print(f"epoch {epoch:3d}  train {tr:.4f}  val {va:.4f}")


report, models = run_protocol(cfg, (train, val, test), log=log)
model, scales = models[0]
print(f"test relative L2 at 32x32: {report.mean:.4f}")

# the same test samples regenerated on a 64x64 grid
idx = [s["index"] for s in test.meta["samples"]]
fine = gen_poisson_dataset(max(idx) + 1, 64, seed=0).subset(idx)
err64 = np.mean(evaluate(model, fine, cfg.variant, cfg.beta, scales))
print(f"zero-shot test relative L2 at 64x64: {err64:.4f}")
