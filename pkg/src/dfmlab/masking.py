"""Decoupled feature masking units.

Each unit splits a block's feature map f into a learned part c1 = phi(f) and
the residual c2 = f - c1, drops entries of each branch independently with
random binary masks at ratios r1 and r2, and fuses the survivors:

    out = c1 * M1 + c2 * M2

Surviving entries are intentionally not rescaled by 1/(1-r).  Masks are
drawn fresh per sample and per forward pass from counter-based streams, so
any fixed addressing (seed, phase, epoch, batch, pass, sample, block)
reproduces the same masks regardless of execution schedule.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nets import BatchNorm2d, Conv2d, _Init
from .rng import stream


class MaskClock:
    """Shared addressing context (phase, epoch, batch) for mask streams.

    Advancing the clock resets every unit's per-batch pass counter, so each
    forward pass within one batch context draws distinct masks while staying
    reproducible.
    """

    def __init__(self):
        self.context = (0, 0, 0)
        self.version = 0

    def set(self, *context):
        self.context = context
        self.version += 1


class DecoupledNet:
    """Channel-preserving three-conv transform producing the c1 branch."""

    def __init__(self, seed, channels, block_id, dtype=np.float32):
        init = _Init(seed, dtype, "dfm", block_id)
        self.channels = channels
        self.conv1 = Conv2d(init, channels, channels, 1)
        self.bn1 = BatchNorm2d(init, channels)
        self.conv2 = Conv2d(init, channels, channels, 3, pad=1)
        self.bn2 = BatchNorm2d(init, channels)
        self.conv3 = Conv2d(init, channels, channels, 1)

    def __call__(self, f):
        h = T.relu(self.bn1(self.conv1(f)))
        h = T.relu(self.bn2(self.conv2(h)))
        return self.conv3(h)

    def params(self):
        return (self.conv1.params() + self.bn1.params() + self.conv2.params()
                + self.bn2.params() + self.conv3.params())

    def bn_layers(self):
        return [self.bn1, self.bn2]

    def tensors(self):
        out = {}
        for tag, layer in [("conv1", self.conv1), ("bn1", self.bn1), ("conv2", self.conv2),
                           ("bn2", self.bn2), ("conv3", self.conv3)]:
            for name, arr in layer.tensors().items():
                out[f"{tag}.{name}"] = arr
        return out


@dataclass
class MaskPair:
    m1: T.Tensor
    m2: T.Tensor
    r1: float
    r2: float


def decouple(f, phi):
    """Split f into (c1, c2) with c1 = phi(f) and c2 = f - c1."""
    if f.shape[1] != phi.channels:
        raise ValueError(f"feature has {f.shape[1]} channels, unit expects {phi.channels}")
    c1 = phi(f)
    c2 = T.sub(f, c1)
    return c1, c2


def sample_mask(shape, r, gen):
    """Binary mask tensor; each entry is 0 with probability r."""
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"mask ratio {r} outside [0, 1]")
    u = gen.random(size=tuple(shape), dtype=np.float32)
    return T.Tensor((u >= r).astype(np.float32))


class DfmUnit:
    """Per-block masking unit: decoupling net, mask ratios and a rng stream."""

    def __init__(self, phi, shape, r1, r2, block_id, seed, clock):
        if not (0.0 <= r1 <= 1.0 and 0.0 <= r2 <= 1.0):
            raise ValueError(f"mask ratios ({r1}, {r2}) outside [0, 1]")
        self.phi = phi
        self.shape = tuple(shape)
        self.r1 = r1
        self.r2 = r2
        self.block_id = block_id
        self.seed = seed
        self.clock = clock
        self.mode = "stochastic"
        self._pass = 0
        self._clock_version = clock.version

    def __call__(self, f):
        return dfm_forward(f, self)

    def _next_pass(self):
        if self._clock_version != self.clock.version:
            self._pass = 0
            self._clock_version = self.clock.version
        idx = self._pass
        self._pass += 1
        return idx

    def sample_masks(self, n, dtype=np.float32):
        """Fresh per-sample mask pair for a batch of n feature maps."""
        shape = self.shape
        size = int(np.prod(shape))
        context = self.clock.context
        pass_idx = self._next_pass()
        m1 = np.empty((n,) + shape, dtype=dtype)
        m2 = np.empty((n,) + shape, dtype=dtype)
        for i in range(n):
            g = stream(self.seed, "mask", *context, pass_idx, i, self.block_id)
            u = g.random(size=2 * size, dtype=np.float32)
            m1[i] = (u[:size] >= self.r1).reshape(shape)
            m2[i] = (u[size:] >= self.r2).reshape(shape)
        return MaskPair(T.Tensor(m1), T.Tensor(m2), self.r1, self.r2)


def dfm_forward(f, unit, mode=None):
    """Apply a masking unit to a batch of block features [N,c,h,w].

    Stochastic mode draws a fresh mask pair per sample; disabled mode
    returns f unchanged (exact bypass, for debugging and identity checks).
    """
    mode = unit.mode if mode is None else mode
    if mode == "disabled":
        return f
    if mode != "stochastic":
        raise ValueError(f"unknown masking mode '{mode}'")
    if tuple(f.shape[1:]) != unit.shape:
        raise ValueError(f"feature shape {list(f.shape[1:])} != unit shape {list(unit.shape)}")
    masks = unit.sample_masks(f.shape[0], dtype=f.dtype)
    c1, c2 = decouple(f, unit.phi)
    return T.add(T.hadamard(c1, masks.m1), T.hadamard(c2, masks.m2))


def insert_dfm(model, block_ids, r1, r2, seed):
    """Install masking units at the given 1-based block indices.

    Each unit gets an independent decoupling net and rng stream; the nets'
    parameters join the model's trainable set.  Returns the model.
    """
    block_ids = set(block_ids)
    for idx in block_ids:
        if not 1 <= idx <= model.num_blocks:
            raise ValueError(f"block id {idx} outside 1..{model.num_blocks}")
    if model.mask_clock is None:
        model.mask_clock = MaskClock()
    dtype = model.base_parameters()[0].dtype
    for idx in sorted(block_ids):
        if idx in model.dfm_units:
            raise ValueError(f"block {idx} already has a masking unit")
        c = model.taps[idx - 1][0]
        phi = DecoupledNet(seed, c, idx, dtype=dtype)
        unit = DfmUnit(phi, model.taps[idx - 1], r1, r2, idx, seed, model.mask_clock)
        for bn in phi.bn_layers():
            bn.training = model.training
        model.dfm_units[idx] = unit
        model.hooks[idx] = unit
    return model


def set_masking_mode(model, mode):
    """Switch every installed unit between stochastic and disabled."""
    if mode not in ("stochastic", "disabled"):
        raise ValueError(f"unknown masking mode '{mode}'")
    for unit in model.dfm_units.values():
        unit.mode = mode
