"""White-box gradient attacks: FGSM, PGD and expectation-over-transformation PGD.

All attacks operate on pixel inputs in [0, 1], craft against a model in eval
mode with parameters frozen (batchnorm running statistics are never touched),
and project onto the epsilon ball after every step, so containment holds by
construction.  EOT averages the input gradient over several stochastic
forward passes, drawing fresh masks each pass.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .rng import stream

_FAMILIES = ("fgsm", "pgd", "eotpgd")
_NORMS = ("linf", "l2")


@dataclass
class AttackConfig:
    family: str = "pgd"
    norm: str = "linf"
    epsilon: float = 8 / 255
    step_size: float = 2 / 255
    steps: int = 10
    eot_samples: int = 1
    random_start: bool = True

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown attack family '{self.family}'")
        if self.norm not in _NORMS:
            raise ValueError(f"unknown norm '{self.norm}'")
        # epsilon 0 is allowed as the identity attack used for clean-accuracy checks
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.eot_samples < 1:
            raise ValueError("eot_samples must be >= 1")


class _FrozenParams:
    """Temporarily drop requires_grad on model parameters."""

    def __init__(self, model):
        self.model = model

    def __enter__(self):
        self.saved = [(p, p.requires_grad) for p in self.model.parameters()]
        for p, _ in self.saved:
            p.requires_grad = False

    def __exit__(self, *exc):
        for p, flag in self.saved:
            p.requires_grad = flag


def _per_sample_l2(a):
    n = a.shape[0]
    return np.sqrt((a.reshape(n, -1) ** 2).sum(axis=1))


def _input_gradient(model, x_np, y, eot_samples):
    """Mean over eot_samples stochastic passes of grad of the loss wrt input."""
    xa = T.Tensor(x_np, requires_grad=True)
    for _ in range(eot_samples):
        logits = model.forward(xa)
        loss = T.softmax_cross_entropy(logits, y)
        T.backward(loss)
    g = xa.grad / eot_samples
    if not np.isfinite(g).all():
        raise RuntimeError("non-finite input gradient during attack crafting")
    return g


def _gradient_attack(model, x, y, epsilon, step_size, steps, norm, random_start, eot_samples, rng):
    x0 = np.asarray(x.data, dtype=x.data.dtype)
    if x0.min() < 0 or x0.max() > 1:
        raise ValueError("attack input must lie in [0, 1]")
    n = x0.shape[0]
    delta = np.zeros_like(x0)
    if random_start and epsilon > 0:
        if rng is None:
            rng = stream(0, "attack-default")
        delta = rng.uniform(-epsilon, epsilon, size=x0.shape).astype(x0.dtype)
        if norm == "l2":
            norms = _per_sample_l2(delta)
            scale = np.minimum(1.0, epsilon / np.maximum(norms, 1e-12))
            delta *= scale.reshape((n,) + (1,) * (x0.ndim - 1))
        delta = np.clip(x0 + delta, 0.0, 1.0) - x0

    was_training = model.training
    model.eval()
    try:
        with _FrozenParams(model):
            for _ in range(steps):
                g = _input_gradient(model, x0 + delta, y, eot_samples)
                if norm == "linf":
                    delta = delta + step_size * np.sign(g)
                    delta = np.clip(delta, -epsilon, epsilon)
                else:
                    gnorm = np.maximum(_per_sample_l2(g), 1e-12)
                    delta = delta + step_size * g / gnorm.reshape((n,) + (1,) * (x0.ndim - 1))
                    dnorm = _per_sample_l2(delta)
                    scale = np.minimum(1.0, epsilon / np.maximum(dnorm, 1e-12))
                    delta = delta * scale.reshape((n,) + (1,) * (x0.ndim - 1))
                delta = np.clip(x0 + delta, 0.0, 1.0) - x0
    finally:
        if was_training:
            model.train()
    return T.Tensor(x0 + delta)


def fgsm(model, x, y, cfg, rng=None):
    """Single signed-gradient step of size epsilon, clipped to [0, 1]."""
    return _gradient_attack(
        model, x, y, cfg.epsilon, cfg.epsilon, 1, cfg.norm,
        random_start=False, eot_samples=1, rng=rng,
    )


def pgd(model, x, y, cfg, rng=None):
    """Iterated projected gradient ascent inside the epsilon ball."""
    return _gradient_attack(
        model, x, y, cfg.epsilon, cfg.step_size, cfg.steps, cfg.norm,
        random_start=cfg.random_start, eot_samples=1, rng=rng,
    )


def eot_pgd(model, x, y, cfg, rng=None):
    """PGD where each step averages the gradient over stochastic forward passes."""
    return _gradient_attack(
        model, x, y, cfg.epsilon, cfg.step_size, cfg.steps, cfg.norm,
        random_start=cfg.random_start, eot_samples=cfg.eot_samples, rng=rng,
    )


def craft(model, x, y, cfg, rng=None):
    """Dispatch on cfg.family."""
    if cfg.family == "fgsm":
        return fgsm(model, x, y, cfg, rng)
    if cfg.family == "pgd":
        return pgd(model, x, y, cfg, rng)
    return eot_pgd(model, x, y, cfg, rng)
