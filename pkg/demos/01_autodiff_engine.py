"""Tour of the tensor engine: forward ops, reverse-mode gradients, grad checks.

Run from the repository root:  python demos/01_autodiff_engine.py
"""
import numpy as np

import dfmlab as dl
from dfmlab import tensor as T

rng = np.random.default_rng(0)

# Tensors wrap float32 numpy arrays; requires_grad marks trainable leaves.
x = dl.Tensor(np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32), requires_grad=True)
w = dl.Tensor(rng.standard_normal((2, 3)).astype(np.float32), requires_grad=True)
b = dl.Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)

# Every operation records a node; backward replays the graph in reverse.
logits = T.linear(T.relu(x), w, b)
loss = T.softmax_cross_entropy(logits, np.array([0, 2]))
print("loss:", loss.item())

dl.backward(loss)
print("dloss/dx:\n", x.grad)
print("dloss/dw:\n", w.grad)

# Gradients accumulate across uses until explicitly zeroed.
x.zero_grad(), w.zero_grad(), b.zero_grad()

# A convolution against the brute-force definition.
img = dl.Tensor(rng.random((1, 1, 5, 5), dtype=np.float32))
kern = dl.Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
out = T.conv2d(img, kern, dl.Tensor(np.zeros(1, dtype=np.float32)))
print("conv output shape:", out.shape)
print("top-left window sum:", img.data[0, 0, :3, :3].sum(), "vs conv:", out.data[0, 0, 0, 0])

# grad_check compares analytic gradients with central differences in float64.
def f(t):
    h = T.relu(T.conv2d(t, kern, dl.Tensor(np.zeros(1)), 1, 0))
    return T.sum_all(T.hadamard(h, h))

err = dl.grad_check(f, img, h=1e-4)
print(f"finite-difference check: max relative error {err:.2e}")

# Forward-only evaluation skips graph recording entirely.
with dl.no_grad():
    silent = T.relu(x)
print("recorded a node under no_grad?", silent.node is not None)
