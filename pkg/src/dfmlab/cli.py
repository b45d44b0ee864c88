"""Command-line entry points tying the pipeline together.

Subcommands: train, attack, eval, diagnose, export-features.  Exit code 0 on
success, 1 on runtime errors, 2 on usage errors.
"""

import argparse
import os
import sys

import numpy as np

from . import tensor as T
from .attacks import AttackConfig, craft
from .checkpoint import CheckpointState, load_checkpoint, save_checkpoint
from .config import default_config, load_config
from .data import load_cifar10, load_mnist
from .evaluate import EvalReport, export_features, feature_stats, robust_accuracy
from .masking import insert_dfm
from .nets import ArchitectureSpec, build_model
from .rng import stream
from .trainer import (TrainPlan, metrics_to_csv, restore_training,
                      train_phase1, train_phase2, training_checkpoint)

_INPUT_SHAPES = {"mnist": (1, 28, 28), "cifar10": (3, 32, 32)}


def _load_cfg(args):
    cfg = load_config(args.config) if args.config else default_config()
    return cfg


def _load_datasets(cfg):
    if cfg.dataset == "mnist":
        return load_mnist(cfg.data_dir)
    return load_cifar10(cfg.data_dir)


def _make_spec(cfg):
    return ArchitectureSpec(cfg.arch, _INPUT_SHAPES[cfg.dataset], 10)


def _make_plan(cfg):
    return TrainPlan(
        e1=cfg.e1, e2=cfg.e2, batch_size=cfg.batch_size, lr=cfg.lr,
        momentum=cfg.momentum, weight_decay=cfg.weight_decay,
        attack=cfg.attack_config(random_start=True),
        blocks=cfg.blocks, r1=cfg.r1, r2=cfg.r2, seed=cfg.seed,
    )


def _restore_model(cfg, path):
    cs = load_checkpoint(path)
    model = build_model(_make_spec(cfg), cfg.seed)
    ids = sorted({int(n[3 : n.index(".")]) for n in cs.params if n.startswith("dfm")})
    if ids:
        insert_dfm(model, ids, cfg.r1, cfg.r2, cfg.seed)
    state = restore_training(model, cs)
    model.eval()
    return model, state


def _attack_overrides(cfg, args, steps_default, step_default):
    return AttackConfig(
        family=args.attack, norm=args.norm,
        epsilon=cfg.attack_epsilon if args.epsilon is None else args.epsilon,
        step_size=step_default if args.step is None else args.step,
        steps=steps_default if args.steps is None else args.steps,
        eot_samples=args.eot_samples, random_start=args.random_start,
    )


def _cmd_train(args):
    cfg = _load_cfg(args)
    out_dir = args.out or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    train_ds, test_ds = _load_datasets(cfg)
    model = build_model(_make_spec(cfg), cfg.seed)
    save_checkpoint(training_checkpoint(model), os.path.join(out_dir, "init.dfmc"))
    plan = _make_plan(cfg)

    def save_last(m, st):
        save_checkpoint(training_checkpoint(m, st), os.path.join(out_dir, "last.dfmc"))

    rows = []
    state1 = train_phase1(model, train_ds, plan, eval_ds=test_ds, on_epoch=save_last)
    rows.extend(state1.metrics)
    save_checkpoint(training_checkpoint(model, state1), os.path.join(out_dir, "phase1.dfmc"))
    if plan.blocks and plan.e2 > 0:
        state2 = train_phase2(model, train_ds, plan, eval_ds=test_ds, on_epoch=save_last)
        rows.extend(state2.metrics)
        save_checkpoint(training_checkpoint(model, state2), os.path.join(out_dir, "phase2.dfmc"))
    with open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8") as fh:
        metrics_to_csv(rows, fh)
    print(f"training complete; outputs in {out_dir}")
    return 0


def _cmd_attack(args):
    cfg = _load_cfg(args)
    model, _ = _restore_model(cfg, args.checkpoint)
    _, test_ds = _load_datasets(cfg)
    n = min(args.count, test_ds.images.shape[0])
    sub = test_ds.subset(range(n))
    atk = _attack_overrides(cfg, args, cfg.attack_steps, cfg.attack_step)
    if model.mask_clock is not None:
        model.mask_clock.set("cli-attack", 0)
    x = T.Tensor(sub.images)
    x_adv = craft(model, x, sub.labels, atk, stream(cfg.seed, "cli-attack"))
    cs = CheckpointState()
    cs.params["x_adv"] = x_adv.data
    cs.params["x"] = sub.images
    cs.params["labels"] = sub.labels.astype(np.float32)
    save_checkpoint(cs, args.out)
    print(f"saved {n} adversarial examples to {args.out}")
    return 0


def _cmd_eval(args):
    cfg = _load_cfg(args)
    model, _ = _restore_model(cfg, args.checkpoint)
    _, test_ds = _load_datasets(cfg)
    if args.max_samples:
        test_ds = test_ds.subset(range(min(args.max_samples, test_ds.images.shape[0])))
    # evaluation defaults: 40 iterations at step 0.01
    atk = _attack_overrides(cfg, args, 40, 0.01)
    trials = args.trials
    if trials is None:
        trials = cfg.eval_trials if model.dfm_units else 1
    mean, std = robust_accuracy(model, test_ds, atk, trials=trials, seed=cfg.seed)
    report = EvalReport()
    report.add(atk, trials, mean, std)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            report.write_csv(fh)
    else:
        report.write_csv(sys.stdout)
    return 0


def _cmd_diagnose(args):
    cfg = _load_cfg(args)
    model, _ = _restore_model(cfg, args.checkpoint)
    _, test_ds = _load_datasets(cfg)
    if args.count:
        test_ds = test_ds.subset(range(min(args.count, test_ds.images.shape[0])))
    tap = args.tap if args.tap is not None else max(1, model.num_blocks - 1)
    stats = feature_stats(model, test_ds, tap, stochastic=not args.deterministic)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            stats.write_csv(fh)
    else:
        stats.write_csv(sys.stdout)
    return 0


def _cmd_export_features(args):
    cfg = _load_cfg(args)
    model, _ = _restore_model(cfg, args.checkpoint)
    _, test_ds = _load_datasets(cfg)
    if args.count:
        test_ds = test_ds.subset(range(min(args.count, test_ds.images.shape[0])))
    tap = args.tap if args.tap is not None else max(1, model.num_blocks - 1)
    export_features(model, test_ds, tap, args.out, stochastic=args.stochastic)
    print(f"wrote features for {test_ds.images.shape[0]} samples to {args.out}")
    return 0


def _add_attack_flags(p):
    p.add_argument("--attack", default="pgd", choices=["fgsm", "pgd", "eotpgd"])
    p.add_argument("--norm", default="linf", choices=["linf", "l2"])
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--step", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--eot-samples", type=int, default=1)
    p.add_argument("--random-start", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="dfmlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run phase-1 (and phase-2) adversarial training")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("attack", help="craft adversarial examples and save them")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--out", default="adv.dfmc")
    _add_attack_flags(p)
    p.set_defaults(fn=_cmd_attack)

    p = sub.add_parser("eval", help="robust-accuracy report for one attack configuration")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--max-samples", type=int, default=None)
    p.add_argument("--out", default=None)
    _add_attack_flags(p)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("diagnose", help="feature-distribution statistics at a block tap")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--tap", type=int, default=None)
    p.add_argument("--count", type=int, default=2000)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_diagnose)

    p = sub.add_parser("export-features", help="dump per-sample tap features as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--tap", type=int, default=None)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--stochastic", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_export_features)

    return parser


def run_cli(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.fn(args)
    except Exception as exc:  # surface a message, not a traceback
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
