"""Two-phase adversarial training.

Phase 1 trains the backbone on adversarial examples crafted against the
current parameters (standard min-max adversarial training).  Phase 2 inserts
masking units at the requested blocks and jointly fine-tunes backbone and
unit parameters on examples crafted against the augmented stochastic model.
Every random draw (shuffling, attack starts, masks) is addressed by
(seed, phase, epoch, batch), so runs are reproducible and resumable.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attacks import AttackConfig, craft
from .masking import insert_dfm
from .rng import stream


@dataclass
class TrainPlan:
    e1: int = 10
    e2: int = 10
    batch_size: int = 100
    lr: float = 0.1
    lr_phase2: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    attack: AttackConfig = field(default_factory=AttackConfig)
    blocks: tuple = ()
    r1: float = 0.01
    r2: float = 0.1
    seed: int = 0
    eval_subset: int = 1000
    lr_schedule: tuple = None  # ((epoch, rate), ...) overriding the phase-1 default

    def __post_init__(self):
        if self.e1 < 0 or self.e2 < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")

    def phase1_lr(self, epoch):
        """Piecewise-constant schedule: base lr with x0.1 drops at 50% and 75%."""
        if self.lr_schedule:
            rate = self.lr_schedule[0][1]
            for e, r in self.lr_schedule:
                if epoch >= e:
                    rate = r
            return rate
        rate = self.lr
        if self.e1 and epoch >= (3 * self.e1) // 4:
            return rate * 0.01
        if self.e1 and epoch >= self.e1 // 2:
            return rate * 0.1
        return rate


class SgdState:
    """Momentum buffers, one per parameter, in parameter order."""

    def __init__(self, params):
        self.velocities = [np.zeros_like(p.data) for p in params]


def sgd_step(params, state, lr, momentum, weight_decay):
    """v <- momentum*v + grad + wd*param; param <- param - lr*v; zero grads."""
    if len(params) != len(state.velocities):
        raise ValueError("optimizer state does not match parameter list")
    for p, v in zip(params, state.velocities):
        if p.grad is None:
            raise ValueError("sgd_step called with unpopulated gradient")
        if p.grad.shape != p.data.shape:
            raise ValueError("gradient shape mismatch")
        v *= momentum
        v += p.grad
        if weight_decay:
            v += weight_decay * p.data
        p.data -= lr * v
        p.zero_grad()


@dataclass
class MetricsRow:
    phase: int
    epoch: int
    clean_acc: float
    robust_acc: float
    mean_loss: float
    wall_seconds: float


def metrics_to_csv(rows, fh):
    fh.write("epoch,phase,clean_acc,robust_acc,mean_loss,wall_seconds\n")
    for r in rows:
        fh.write(f"{r.epoch},{r.phase},{r.clean_acc:.6g},{r.robust_acc:.6g},"
                 f"{r.mean_loss:.6g},{r.wall_seconds:.6g}\n")


@dataclass
class TrainState:
    phase: int = 1
    epoch: int = 0           # completed epochs within the current phase
    step: int = 0            # sgd steps taken within the current phase
    opt: SgdState = None
    metrics: list = field(default_factory=list)


def _epoch_metrics(model, plan, phase, epoch, eval_ds, loss_sum, batches, elapsed):
    from .evaluate import _single_trial_accuracy  # local import to avoid a cycle

    clean = robust = float("nan")
    if eval_ds is not None:
        n = min(plan.eval_subset, eval_ds.images.shape[0])
        sub = eval_ds.subset(range(n))
        clean = _single_trial_accuracy(model, sub, _zero_attack(plan.attack),
                                       plan.seed, ("epoch-clean", phase, epoch), 0)
        robust = _single_trial_accuracy(model, sub, plan.attack,
                                        plan.seed, ("epoch-robust", phase, epoch), 0)
    return MetricsRow(phase, epoch, clean, robust, loss_sum / max(batches, 1), elapsed)


def _zero_attack(cfg):
    return AttackConfig(family=cfg.family, norm=cfg.norm, epsilon=0.0,
                        step_size=cfg.step_size, steps=1, eot_samples=1, random_start=False)


def _run_phase(model, train_ds, plan, phase, epochs, lr_of_epoch, eval_ds, state, on_epoch):
    params = [p for p in model.parameters() if p.requires_grad]
    if state.opt is None:
        state.opt = SgdState(params)
    images, labels = train_ds.images, train_ds.labels
    n = images.shape[0]
    for epoch in range(state.epoch, epochs):
        t0 = time.perf_counter()
        lr = lr_of_epoch(epoch)
        perm = stream(plan.seed, "shuffle", phase, epoch).permutation(n)
        loss_sum = 0.0
        batches = 0
        for b, lo in enumerate(range(0, n, plan.batch_size)):
            idx = perm[lo : lo + plan.batch_size]
            xb = T.Tensor(images[idx])
            yb = labels[idx]
            if model.mask_clock is not None:
                model.mask_clock.set(phase, epoch, b)
            rng = stream(plan.seed, "attack", phase, epoch, b)
            x_adv = craft(model, xb, yb, plan.attack, rng)
            model.train()
            logits = model.forward(x_adv)
            loss = T.softmax_cross_entropy(logits, yb)
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise RuntimeError(f"training loss diverged (phase {phase}, epoch {epoch}, batch {b})")
            model.zero_grad()
            T.backward(loss)
            sgd_step(params, state.opt, lr, plan.momentum, plan.weight_decay)
            loss_sum += loss_val
            batches += 1
            state.step += 1
        model.eval()
        elapsed = time.perf_counter() - t0
        row = _epoch_metrics(model, plan, phase, epoch, eval_ds, loss_sum, batches, elapsed)
        state.metrics.append(row)
        state.epoch = epoch + 1
        if on_epoch is not None:
            on_epoch(model, state)
    return state


def train_phase1(model, train_ds, plan, eval_ds=None, state=None, on_epoch=None):
    """Standard adversarial training of the un-augmented backbone."""
    if model.dfm_units:
        raise ValueError("phase 1 expects an un-augmented model")
    if state is None:
        state = TrainState(phase=1)
    return _run_phase(model, train_ds, plan, 1, plan.e1, plan.phase1_lr, eval_ds, state, on_epoch)


def train_phase2(model, train_ds, plan, eval_ds=None, state=None, on_epoch=None):
    """Insert masking units and jointly fine-tune backbone and units.

    The optimizer state is reinitialized for the joint parameter set; the
    attack inside the loop runs against the augmented stochastic model.
    """
    if not model.dfm_units:
        insert_dfm(model, plan.blocks, plan.r1, plan.r2, plan.seed)
    elif set(model.dfm_units) != set(plan.blocks):
        raise ValueError("installed masking units do not match the plan's blocks")
    if state is None:
        state = TrainState(phase=2)
    return _run_phase(model, train_ds, plan, 2, plan.e2, lambda e: plan.lr_phase2, eval_ds, state, on_epoch)


def _param_names(model):
    by_id = {id(arr): name for name, arr in model.state().items()}
    return [by_id[id(p.data)] for p in model.parameters() if p.requires_grad]


def training_checkpoint(model, state=None):
    """Capture model arrays, optimizer buffers and the training cursor."""
    from .checkpoint import CheckpointState

    cs = CheckpointState()
    for name, arr in model.state().items():
        cs.params[name] = arr
    if state is not None and state.opt is not None:
        for name, v in zip(_param_names(model), state.opt.velocities):
            cs.optimizer[f"v.{name}"] = v
        cs.rng["cursor"] = np.array([state.phase, state.epoch, state.step], dtype=np.float32)
    return cs


def restore_training(model, cs):
    """Write checkpoint arrays into the model in place; rebuild TrainState."""
    live = model.state()
    if set(live) != set(cs.params):
        missing = sorted(set(live) - set(cs.params))
        extra = sorted(set(cs.params) - set(live))
        raise ValueError(f"checkpoint does not match model: missing {missing}, unexpected {extra}")
    for name, arr in live.items():
        loaded = cs.params[name]
        if loaded.shape != arr.shape:
            raise ValueError(f"checkpoint tensor '{name}' shape {loaded.shape} != {arr.shape}")
        arr[:] = loaded
    state = TrainState()
    if "cursor" in cs.rng:
        phase, epoch, step = (int(v) for v in cs.rng["cursor"])
        state.phase, state.epoch, state.step = phase, epoch, step
    if cs.optimizer:
        state.opt = SgdState([p for p in model.parameters() if p.requires_grad])
        names = _param_names(model)
        for name, v in zip(names, state.opt.velocities):
            key = f"v.{name}"
            if key not in cs.optimizer:
                raise ValueError(f"checkpoint optimizer state missing '{key}'")
            v[:] = cs.optimizer[key]
    return state

