"""FGSM, PGD and EOT-PGD against a small model.

Run from the repository root:  python demos/03_attacks.py
"""
import numpy as np

import dfmlab as dl

rng = np.random.default_rng(3)
model = dl.build_model(dl.ArchitectureSpec("lenet", (1, 28, 28), 10), seed=0)

x = dl.Tensor(rng.random((16, 1, 28, 28), dtype=np.float32))
y = rng.integers(0, 10, 16)

# FGSM: one signed-gradient step of size epsilon.
fgsm_cfg = dl.AttackConfig(family="fgsm", norm="linf", epsilon=0.1, step_size=0.1, steps=1)
adv = dl.fgsm(model, x, y, fgsm_cfg)
print("FGSM max |delta|:", np.abs(adv.data - x.data).max(), "(epsilon 0.1)")

# PGD: iterated steps, projected onto the ball and [0,1] after each step.
pgd_cfg = dl.AttackConfig(family="pgd", norm="linf", epsilon=0.1, step_size=0.02,
                          steps=10, random_start=True)
adv = dl.pgd(model, x, y, pgd_cfg, dl.stream(0, "demo"))
print("PGD containment:", np.abs(adv.data - x.data).max() <= 0.1 + 1e-6,
      "| pixels in range:", 0 <= adv.data.min() and adv.data.max() <= 1)

# L2 norm variant: normalized gradient steps, per-sample ball projection.
l2_cfg = dl.AttackConfig(family="pgd", norm="l2", epsilon=1.5, step_size=0.3,
                         steps=10, random_start=True)
adv = dl.pgd(model, x, y, l2_cfg, dl.stream(0, "demo-l2"))
norms = np.sqrt(((adv.data - x.data).reshape(16, -1) ** 2).sum(axis=1))
print("L2 delta norms (max):", norms.max(), "(epsilon 1.5)")

# EOT-PGD averages the input gradient over stochastic forward passes; this is
# the right attack against a randomized defense.
dl.insert_dfm(model, {1, 2}, r1=0.01, r2=0.1, seed=0)
eot_cfg = dl.AttackConfig(family="eotpgd", norm="linf", epsilon=0.1, step_size=0.02,
                          steps=10, eot_samples=8, random_start=True)
adv = dl.eot_pgd(model, x, y, eot_cfg, dl.stream(0, "demo-eot"))
print("EOT-PGD crafted", adv.shape[0], "examples; containment:",
      np.abs(adv.data - x.data).max() <= 0.1 + 1e-6)

# Attacks never touch the weights: crafting runs in eval mode on frozen params.
before = model.parameters()[0].data.copy()
dl.pgd(model, x, y, pgd_cfg, dl.stream(1, "demo"))
print("weights untouched:", np.array_equal(before, model.parameters()[0].data))
