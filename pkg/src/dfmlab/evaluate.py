"""Robust-accuracy evaluation and feature-distribution diagnostics.

Stochastic (masked) models are evaluated over several trials with fresh mask
streams per trial and reported as mean plus standard deviation.  The feature
diagnostics quantify intra-class diversity (mean per-dimension standard
deviation within a class) and inter-class discriminability (centroid
separation, pooled-diagonal Mahalanobis distance and diagonal-Gaussian KL).
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attacks import craft
from .nets import forward_with_taps
from .rng import stream

_KL_VAR_FLOOR = 1e-6


def _is_stochastic(model):
    return any(u.mode == "stochastic" for u in model.dfm_units.values())


def _predict(model, images, batch_size=500):
    out = []
    with T.no_grad():
        for lo in range(0, images.shape[0], batch_size):
            logits = model.forward(T.Tensor(images[lo : lo + batch_size]))
            out.append(logits.data.argmax(axis=1))
    return np.concatenate(out)


def _single_trial_accuracy(model, dataset, cfg, seed, tag, trial, batch_size=250):
    """Attacked accuracy (percent) for one pass over the dataset."""
    images, labels = dataset.images, dataset.labels
    was_training = model.training
    model.eval()
    correct = 0
    try:
        for b, lo in enumerate(range(0, images.shape[0], batch_size)):
            xb = images[lo : lo + batch_size]
            yb = labels[lo : lo + batch_size]
            if model.mask_clock is not None:
                model.mask_clock.set(*tag, trial, b)
            if cfg.epsilon > 0:
                rng = stream(seed, "eval-attack", *tag, trial, b)
                x_adv = craft(model, T.Tensor(xb), yb, cfg, rng)
                xb = x_adv.data
            pred = _predict(model, xb, batch_size)
            correct += int((pred == yb).sum())
    finally:
        if was_training:
            model.train()
    return 100.0 * correct / images.shape[0]


def robust_accuracy(model, dataset, cfg, trials=1, seed=0, tag=("eval",), batch_size=250):
    """Mean and std of attacked accuracy over independent trials.

    Stochastic models must be evaluated with more than one trial; each trial
    re-runs the attack and the masked prediction under a fresh mask stream.
    """
    if dataset.images.shape[0] == 0:
        raise ValueError("empty dataset")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if trials == 1 and _is_stochastic(model):
        raise ValueError("stochastic model: evaluate with trials > 1")
    accs = [
        _single_trial_accuracy(model, dataset, cfg, seed, tag, t, batch_size)
        for t in range(trials)
    ]
    return float(np.mean(accs)), float(np.std(accs))


@dataclass
class EvalRow:
    attack: str
    norm: str
    epsilon: float
    steps: int
    eot_samples: int
    trials: int
    acc_mean: float
    acc_std: float


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)

    def add(self, cfg, trials, mean, std):
        self.rows.append(EvalRow(cfg.family, cfg.norm, cfg.epsilon, cfg.steps,
                                 cfg.eot_samples, trials, mean, std))

    def write_csv(self, fh):
        fh.write("attack,norm,epsilon,steps,eot_samples,trials,acc_mean,acc_std\n")
        for r in self.rows:
            fh.write(f"{r.attack},{r.norm},{r.epsilon:.6g},{r.steps},{r.eot_samples},"
                     f"{r.trials},{r.acc_mean:.6g},{r.acc_std:.6g}\n")


@dataclass
class FeatureStats:
    classes: list
    centroids: np.ndarray        # [M, D]
    intra_class_std: float
    separation: float            # mean pairwise centroid L2 distance
    mahalanobis: float           # mean pairwise distance under pooled diagonal covariance
    kl: np.ndarray               # [M, M] diagonal-Gaussian KL divergences

    def write_csv(self, fh):
        fh.write("metric,value\n")
        fh.write(f"intra_class_std,{self.intra_class_std:.6g}\n")
        fh.write(f"separation,{self.separation:.6g}\n")
        fh.write(f"mahalanobis,{self.mahalanobis:.6g}\n")
        for a, ca in enumerate(self.classes):
            for b, cb in enumerate(self.classes):
                fh.write(f"kl_{ca}_{cb},{self.kl[a, b]:.6g}\n")


def _collect_features(model, dataset, tap, stochastic, batch_size=250, tag=("diag",)):
    if not 1 <= tap <= model.num_blocks:
        raise ValueError(f"tap {tap} outside 1..{model.num_blocks}")
    units = list(model.dfm_units.values())
    saved = [u.mode for u in units]
    if not stochastic:
        for u in units:
            u.mode = "disabled"
    was_training = model.training
    model.eval()
    feats = []
    try:
        with T.no_grad():
            for b, lo in enumerate(range(0, dataset.images.shape[0], batch_size)):
                if model.mask_clock is not None:
                    model.mask_clock.set(*tag, b)
                _, taps = forward_with_taps(model, T.Tensor(dataset.images[lo : lo + batch_size]))
                f = taps[tap - 1].data
                feats.append(f.reshape(f.shape[0], -1).copy())
    finally:
        for u, m in zip(units, saved):
            u.mode = m
        if was_training:
            model.train()
    return np.concatenate(feats, axis=0)


def feature_stats(model, dataset, tap, stochastic=True, batch_size=250):
    """Per-class feature-distribution statistics at the given block tap."""
    feats = _collect_features(model, dataset, tap, stochastic, batch_size)
    labels = dataset.labels
    classes = []
    mus, sigmas, stds = [], [], []
    for c in np.unique(labels):
        rows = feats[labels == c]
        if rows.shape[0] < 2:
            warnings.warn(f"class {c} has fewer than 2 samples; excluded from feature stats")
            continue
        classes.append(int(c))
        mus.append(rows.mean(axis=0, dtype=np.float64))
        var = rows.var(axis=0, dtype=np.float64)
        sigmas.append(var)
        stds.append(float(np.sqrt(var).mean()))
    if not classes:
        raise ValueError("no class with at least 2 samples")
    mus = np.stack(mus)
    sigmas = np.stack(sigmas)
    m = len(classes)

    pair_l2 = []
    pair_mah = []
    pooled = np.maximum(sigmas.mean(axis=0), _KL_VAR_FLOOR)
    for a in range(m):
        for b in range(a + 1, m):
            d = mus[a] - mus[b]
            pair_l2.append(float(np.sqrt((d ** 2).sum())))
            pair_mah.append(float(np.sqrt((d ** 2 / pooled).sum())))

    kl = np.zeros((m, m))
    floored = np.maximum(sigmas, _KL_VAR_FLOOR)
    for a in range(m):
        for b in range(m):
            if a == b:
                continue
            d2 = (mus[a] - mus[b]) ** 2
            kl[a, b] = 0.5 * float(
                (np.log(floored[b] / floored[a]) + (floored[a] + d2) / floored[b] - 1.0).sum()
            )

    return FeatureStats(
        classes=classes,
        centroids=mus,
        intra_class_std=float(np.mean(stds)),
        separation=float(np.mean(pair_l2)) if pair_l2 else 0.0,
        mahalanobis=float(np.mean(pair_mah)) if pair_mah else 0.0,
        kl=kl,
    )


def export_features(model, dataset, tap, path, stochastic=False, batch_size=250):
    """Write one CSV row per sample: label plus the flattened tap features."""
    feats = _collect_features(model, dataset, tap, stochastic, batch_size)
    d = feats.shape[1]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("label," + ",".join(f"d{i}" for i in range(d)) + "\n")
        for y, row in zip(dataset.labels, feats):
            fh.write(str(int(y)) + "," + ",".join(f"{v:.6g}" for v in row) + "\n")
    return path
