"""Flat key=value run configuration.

Documented keys and defaults (dataset- or architecture-dependent defaults
are resolved after parsing):

    arch              lenet | resnet-small          (default lenet)
    dataset           mnist | cifar10               (default mnist)
    data_dir          dataset directory             (default ./data)
    seed              integer                       (default 0)
    e1, e2            phase epoch counts            (default 10, 10)
    batch_size        minibatch size                (default 100)
    lr                phase-1 base learning rate    (default 0.1)
    momentum          sgd momentum                  (default 0.9)
    weight_decay      sgd weight decay              (default 5e-4)
    r1, r2            mask ratios                   (default 0.01, 0.1)
    blocks            comma list of block ids       (default 1,2 lenet / 1,2,4 resnet-small)
    attack.family     fgsm | pgd | eotpgd           (default pgd)
    attack.norm       linf | l2                     (default linf)
    attack.epsilon    training budget               (default 0.3 mnist / 8/255 cifar10)
    attack.step       training step size            (default 0.1 mnist / 2/255 cifar10)
    attack.steps      training iterations           (default 7 mnist / 10 cifar10)
    attack.eot_samples                              (default 1)
    eval.trials       stochastic eval trials        (default 5)
    out_dir           output directory              (default ./runs)

Unknown keys are rejected.  Lines starting with '#' and blank lines are
ignored.
"""

from dataclasses import dataclass

from .attacks import AttackConfig

_DATASET_DEFAULTS = {
    "mnist": {"attack.epsilon": 0.3, "attack.step": 0.1, "attack.steps": 7},
    "cifar10": {"attack.epsilon": 8 / 255, "attack.step": 2 / 255, "attack.steps": 10},
}

_ARCH_BLOCKS = {"lenet": (1, 2), "resnet-small": (1, 2, 4)}

_KEYS = {
    "arch": str,
    "dataset": str,
    "data_dir": str,
    "seed": int,
    "e1": int,
    "e2": int,
    "batch_size": int,
    "lr": float,
    "momentum": float,
    "weight_decay": float,
    "r1": float,
    "r2": float,
    "blocks": str,
    "attack.family": str,
    "attack.norm": str,
    "attack.epsilon": float,
    "attack.step": float,
    "attack.steps": int,
    "attack.eot_samples": int,
    "eval.trials": int,
    "out_dir": str,
}


@dataclass
class RunConfig:
    arch: str = "lenet"
    dataset: str = "mnist"
    data_dir: str = "./data"
    seed: int = 0
    e1: int = 10
    e2: int = 10
    batch_size: int = 100
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    r1: float = 0.01
    r2: float = 0.1
    blocks: tuple = None
    attack_family: str = "pgd"
    attack_norm: str = "linf"
    attack_epsilon: float = None
    attack_step: float = None
    attack_steps: int = None
    attack_eot_samples: int = 1
    eval_trials: int = 5
    out_dir: str = "./runs"

    def attack_config(self, random_start=True):
        return AttackConfig(
            family=self.attack_family, norm=self.attack_norm,
            epsilon=self.attack_epsilon, step_size=self.attack_step,
            steps=self.attack_steps, eot_samples=self.attack_eot_samples,
            random_start=random_start,
        )


def _resolve(cfg):
    if cfg.arch not in _ARCH_BLOCKS:
        raise ValueError(f"unknown arch '{cfg.arch}'")
    if cfg.dataset not in _DATASET_DEFAULTS:
        raise ValueError(f"unknown dataset '{cfg.dataset}'")
    ds = _DATASET_DEFAULTS[cfg.dataset]
    if cfg.attack_epsilon is None:
        cfg.attack_epsilon = ds["attack.epsilon"]
    if cfg.attack_step is None:
        cfg.attack_step = ds["attack.step"]
    if cfg.attack_steps is None:
        cfg.attack_steps = ds["attack.steps"]
    if cfg.blocks is None:
        cfg.blocks = _ARCH_BLOCKS[cfg.arch]
    return cfg


def _parse_blocks(text):
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(int(p) for p in text.split(","))
    except ValueError:
        raise ValueError(f"blocks must be a comma list of integers, got '{text}'") from None


def config_from_pairs(pairs):
    cfg = RunConfig()
    for key, value in pairs:
        if key not in _KEYS:
            raise ValueError(f"unknown config key '{key}'")
        conv = _KEYS[key]
        attr = key.replace(".", "_")
        if key == "blocks":
            setattr(cfg, attr, _parse_blocks(value))
        else:
            try:
                setattr(cfg, attr, conv(value))
            except ValueError:
                raise ValueError(f"config key '{key}': cannot parse '{value}' as {conv.__name__}") from None
    return _resolve(cfg)


def default_config():
    return _resolve(RunConfig())


def load_config(path):
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got '{line}'")
            key, _, value = line.partition("=")
            pairs.append((key.strip(), value.strip()))
    return config_from_pairs(pairs)
