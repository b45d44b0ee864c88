"""Backbone model zoo, partitioned into blocks with feature taps.

Two desk-scale architectures: a classic LeNet-style CNN (two conv-pool
blocks) and a width-reduced residual network (four stages of two basic
residual units, base width 16).  Block boundaries fall after each stage so
that masking units can be hooked in between.
"""

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .rng import stream


@dataclass
class ArchitectureSpec:
    name: str
    input_shape: tuple  # (C, H, W)
    num_classes: int = 10

    def __post_init__(self):
        if self.name not in ("lenet", "resnet-small"):
            raise ValueError(f"unknown architecture '{self.name}'")
        self.input_shape = tuple(self.input_shape)


def lenet_mnist(num_classes=10):
    return ArchitectureSpec("lenet", (1, 28, 28), num_classes)


def resnet_small_cifar(num_classes=10):
    return ArchitectureSpec("resnet-small", (3, 32, 32), num_classes)


class _Init:
    """Deterministic He fan-in initializer; one stream per parameter."""

    def __init__(self, seed, dtype, *scope):
        self.seed = seed
        self.dtype = dtype
        self.scope = scope
        self.counter = 0

    def he(self, shape, fan_in):
        g = stream(self.seed, "init", *self.scope, self.counter)
        self.counter += 1
        w = g.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        return T.Tensor(w.astype(self.dtype), requires_grad=True)

    def zeros(self, shape):
        self.counter += 1
        return T.Tensor(np.zeros(shape, dtype=self.dtype), requires_grad=True)

    def ones(self, shape):
        self.counter += 1
        return T.Tensor(np.ones(shape, dtype=self.dtype), requires_grad=True)


class Conv2d:
    def __init__(self, init, in_ch, out_ch, k, stride=1, pad=0):
        self.w = init.he((out_ch, in_ch, k, k), fan_in=in_ch * k * k)
        self.b = init.zeros((out_ch,))
        self.stride = stride
        self.pad = pad

    def __call__(self, x):
        return T.conv2d(x, self.w, self.b, self.stride, self.pad)

    def params(self):
        return [self.w, self.b]

    def tensors(self):
        return {"w": self.w.data, "b": self.b.data}


class Linear:
    def __init__(self, init, d_in, d_out):
        self.w = init.he((d_in, d_out), fan_in=d_in)
        self.b = init.zeros((d_out,))

    def __call__(self, x):
        return T.linear(x, self.w, self.b)

    def params(self):
        return [self.w, self.b]

    def tensors(self):
        return {"w": self.w.data, "b": self.b.data}


class BatchNorm2d:
    def __init__(self, init, ch, momentum=0.1):
        self.gamma = init.ones((ch,))
        self.beta = init.zeros((ch,))
        self.running_mean = np.zeros(ch, dtype=init.dtype)
        self.running_var = np.ones(ch, dtype=init.dtype)
        self.momentum = momentum
        self.training = False

    def __call__(self, x):
        return T.batchnorm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=self.training, momentum=self.momentum,
        )

    def params(self):
        return [self.gamma, self.beta]

    def tensors(self):
        return {
            "gamma": self.gamma.data, "beta": self.beta.data,
            "running_mean": self.running_mean, "running_var": self.running_var,
        }


class ReLU:
    def __call__(self, x):
        return T.relu(x)

    def params(self):
        return []

    def tensors(self):
        return {}


class MaxPool2x2:
    def __call__(self, x):
        return T.maxpool2x2(x)

    def params(self):
        return []

    def tensors(self):
        return {}


class Flatten:
    def __call__(self, x):
        return T.flatten(x)

    def params(self):
        return []

    def tensors(self):
        return {}


class GlobalAvgPool:
    def __call__(self, x):
        return T.avgpool(x)

    def params(self):
        return []

    def tensors(self):
        return {}


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def tensors(self, prefix):
        out = OrderedDict()
        for i, layer in enumerate(self.layers):
            for name, arr in layer.tensors().items():
                out[f"{prefix}.{i}.{name}"] = arr
        return out


class BasicBlock:
    """Residual unit: two 3x3 conv-bn pairs plus an (optionally projected) skip."""

    def __init__(self, init, in_ch, out_ch, stride):
        self.conv1 = Conv2d(init, in_ch, out_ch, 3, stride=stride, pad=1)
        self.bn1 = BatchNorm2d(init, out_ch)
        self.conv2 = Conv2d(init, out_ch, out_ch, 3, stride=1, pad=1)
        self.bn2 = BatchNorm2d(init, out_ch)
        if stride != 1 or in_ch != out_ch:
            self.proj = Conv2d(init, in_ch, out_ch, 1, stride=stride, pad=0)
            self.proj_bn = BatchNorm2d(init, out_ch)
        else:
            self.proj = None
            self.proj_bn = None

    def __call__(self, x):
        h = T.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        skip = self.proj_bn(self.proj(x)) if self.proj is not None else x
        return T.relu(T.add(h, skip))

    def params(self):
        out = self.conv1.params() + self.bn1.params() + self.conv2.params() + self.bn2.params()
        if self.proj is not None:
            out += self.proj.params() + self.proj_bn.params()
        return out

    def tensors(self):
        parts = [("conv1", self.conv1), ("bn1", self.bn1), ("conv2", self.conv2), ("bn2", self.bn2)]
        if self.proj is not None:
            parts += [("proj", self.proj), ("proj_bn", self.proj_bn)]
        out = {}
        for tag, layer in parts:
            for name, arr in layer.tensors().items():
                out[f"{tag}.{name}"] = arr
        return out


class BlockModel:
    """K feature blocks plus a classifier head, with hookable block outputs."""

    def __init__(self, spec, blocks, head):
        self.spec = spec
        self.blocks = blocks
        self.head = head
        self.taps = []
        self.training = False
        self.hooks = {}       # block index (1-based) -> transform installed on the model
        self.dfm_units = {}   # populated by masking.insert_dfm
        self.mask_clock = None

    @property
    def num_blocks(self):
        return len(self.blocks)

    def _bn_layers(self):
        for seq in self.blocks + [self.head]:
            for layer in seq.layers:
                if isinstance(layer, BatchNorm2d):
                    yield layer
                elif isinstance(layer, BasicBlock):
                    yield layer.bn1
                    yield layer.bn2
                    if layer.proj_bn is not None:
                        yield layer.proj_bn
        for unit in self.dfm_units.values():
            yield from unit.phi.bn_layers()

    def train(self):
        self.training = True
        for bn in self._bn_layers():
            bn.training = True
        return self

    def eval(self):
        self.training = False
        for bn in self._bn_layers():
            bn.training = False
        return self

    def parameters(self):
        """All trainable tensors: backbone plus any installed masking units."""
        out = self.base_parameters()
        for idx in sorted(self.dfm_units):
            out.extend(self.dfm_units[idx].phi.params())
        return out

    def base_parameters(self):
        out = []
        for seq in self.blocks:
            out.extend(seq.params())
        out.extend(self.head.params())
        return out

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def forward(self, x):
        logits, _ = forward_with_taps(self, x)
        return logits

    def state(self):
        """Ordered name -> live ndarray map of every persistent array."""
        out = OrderedDict()
        for k, seq in enumerate(self.blocks, start=1):
            out.update(seq.tensors(f"block{k}"))
        out.update(self.head.tensors("head"))
        for idx in sorted(self.dfm_units):
            for name, arr in self.dfm_units[idx].phi.tensors().items():
                out[f"dfm{idx}.{name}"] = arr
        return out


def _trace_taps(blocks, input_shape, dtype):
    taps = []
    with T.no_grad():
        f = T.Tensor(np.zeros((1,) + tuple(input_shape), dtype=dtype))
        for seq in blocks:
            f = seq(f)
            taps.append(tuple(f.shape[1:]))
    return taps


def build_model(spec, seed, dtype=np.float32):
    """Deterministically initialized model for the given architecture."""
    init = _Init(seed, dtype)
    if spec.name == "lenet":
        c = spec.input_shape[0]
        blocks = [
            Sequential([Conv2d(init, c, 6, 5), ReLU(), MaxPool2x2()]),
            Sequential([Conv2d(init, 6, 16, 5), ReLU(), MaxPool2x2()]),
        ]
        taps = _trace_taps(blocks, spec.input_shape, dtype)
        flat = int(np.prod(taps[-1]))
        head = Sequential([Flatten(), Linear(init, flat, 120), ReLU(), Linear(init, 120, spec.num_classes)])
    elif spec.name == "resnet-small":
        c = spec.input_shape[0]
        widths = (16, 32, 64, 128)
        strides = (1, 2, 2, 2)
        blocks = []
        in_ch = widths[0]
        for k, (w, s) in enumerate(zip(widths, strides)):
            layers = [Conv2d(init, c, in_ch, 3, stride=1, pad=1), BatchNorm2d(init, in_ch), ReLU()] if k == 0 else []
            layers.append(BasicBlock(init, in_ch, w, s))
            layers.append(BasicBlock(init, w, w, 1))
            blocks.append(Sequential(layers))
            in_ch = w
        taps = _trace_taps(blocks, spec.input_shape, dtype)
        head = Sequential([GlobalAvgPool(), Linear(init, widths[-1], spec.num_classes)])
    else:
        raise ValueError(f"unknown architecture '{spec.name}'")

    model = BlockModel(spec, blocks, head)
    model.taps = taps
    return model


def forward_with_taps(model, x, hooks=None):
    """Run the model, returning logits and the per-block features.

    ``hooks`` maps 1-based block index to a transform applied to that block's
    output before the next block consumes it.  When omitted, the transforms
    installed on the model (if any) are used.
    """
    if x.shape[1:] != model.spec.input_shape:
        raise ValueError(f"input shape {list(x.shape[1:])} != {list(model.spec.input_shape)}")
    if hooks is None:
        hooks = model.hooks
    for idx in hooks:
        if not 1 <= idx <= model.num_blocks:
            raise ValueError(f"hook index {idx} outside 1..{model.num_blocks}")
    feats = []
    f = x
    for k, seq in enumerate(model.blocks, start=1):
        f = seq(f)
        hook = hooks.get(k)
        if hook is not None:
            g = hook(f)
            if g.shape != f.shape:
                raise ValueError(f"hook at block {k} changed shape {list(f.shape)} -> {list(g.shape)}")
            f = g
        feats.append(f)
    logits = model.head(f)
    return logits, feats
