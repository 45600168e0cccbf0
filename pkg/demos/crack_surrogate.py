"""Crack growth in a pre-cracked plate, with the exact force and with learned surrogates.

Run from the repository root::

    python3 demos/crack_surrogate.py

Builds the desk-scale training set (crack snapshots plus intact sinusoids),
trains one eDAFNO per force component and drives the simulation with them.
"""

import numpy as np

from dafno.datasets import FieldSet, gen_pd_dataset
from dafno.peridynamics import PDConfig, SurrogatePair, run_ground_truth, run_surrogate
from dafno.training import TrainConfig, build_model, train

EPOCHS = 40
STEPS = 100

config = PDConfig.desk()
data = gen_pd_dataset(config, n_crack=100, modes=8)
print(f"{len(data)} samples; crack damage at the last snapshot: {data.chi[99].size - data.chi[99].sum():.0f} nodes removed")

models = []
for comp in (0, 1):
    part = FieldSet(data.coords, data.g, data.chi, data.dist, data.u[..., [comp]], data.beta, data.meta)
    cfg = TrainConfig(variant="edafno", beta=None, epochs=EPOCHS, seeds=[0], model=dict(width=16, modes=8, proj_width=64))
    model = build_model(cfg, part, 0)
    report, _, scales = train(model, (part, part), cfg)
    print(f"L{comp + 1} surrogate: train relative L2 {report.curve[-1][1]:.4f}")
    models.append((model, scales))

reference = run_ground_truth(config, steps=STEPS, every=1)
pair = SurrogatePair(models[0][0], models[1][0], models[0][1], models[1][1], config.grid.coords())
traj = run_surrogate(pair, config, steps=STEPS, every=10, reference=reference)
for step, chi_err, u_err in traj.errors[::10]:
    print(f"step {step:4d}  chi error {chi_err:.4f}  u error {u_err:.4f}")
print(f"max over {STEPS} steps: chi {max(e[1] for e in traj.errors):.4f}, u {np.nanmax([e[2] for e in traj.errors[1:]]):.4f}")
