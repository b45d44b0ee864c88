"""The decoupled feature masking block, step by step.

A block feature map f is split by a small learned net into c1 = phi(f) and
the residual c2 = f - c1.  Each branch is masked with an independent random
binary matrix (ratios r1, r2) and the survivors are fused:

    out = c1 * M1 + c2 * M2

Run from the repository root:  python demos/02_masking_block.py
"""
import numpy as np

import dfmlab as dl
from dfmlab.masking import DecoupledNet, DfmUnit, MaskClock, dfm_forward

rng = np.random.default_rng(7)
shape = (6, 12, 12)

phi = DecoupledNet(seed=0, channels=6, block_id=1)
unit = DfmUnit(phi, shape, r1=0.01, r2=0.1, block_id=1, seed=0, clock=MaskClock())

f = dl.Tensor(rng.standard_normal((4,) + shape).astype(np.float32))

# Decoupling reconstructs the input exactly: c2 is defined as the residual.
c1, c2 = dl.decouple(f, phi)
print("max |c1 + c2 - f|:", np.abs(c1.data + c2.data - f.data).max())

# Mask ratio r is the probability an entry is dropped (set to 0).
m = dl.sample_mask((10_000,), 0.1, dl.stream(0, "demo-mask"))
print("empirical zero fraction at r=0.1:", 1.0 - m.data.mean())

# Stochastic forward: fresh masks per sample, per pass.
out1 = dfm_forward(f, unit)
out2 = dfm_forward(f, unit)
print("two passes differ:", not np.array_equal(out1.data, out2.data))

# The same clock context replays identical masks - reproducibility by address.
unit.clock.set("replay", 0)
a = dfm_forward(f, unit)
unit.clock.set("replay", 0)
b = dfm_forward(f, unit)
print("same address, same output:", np.array_equal(a.data, b.data))

# Survivors are NOT rescaled by 1/(1-r): with r1=r2=0 the fusion returns f.
unit.r1 = unit.r2 = 0.0
out = dfm_forward(f, unit)
print("zero-ratio identity error:", np.abs(out.data - f.data).max())

# Plugging units into a backbone at chosen blocks:
model = dl.build_model(dl.ArchitectureSpec("lenet", (1, 28, 28), 10), seed=0)
x = dl.Tensor(rng.random((2, 1, 28, 28), dtype=np.float32))
base = model.forward(x).data
dl.insert_dfm(model, {1, 2}, r1=0.01, r2=0.1, seed=0)
print("units installed at blocks:", sorted(model.dfm_units))
print("stochastic logits differ from base:", not np.array_equal(model.forward(x).data, base))
dl.set_masking_mode(model, "disabled")
print("disabled mode restores base logits:", np.array_equal(model.forward(x).data, base))
