"""Two-phase adversarial training on a small MNIST slice.

Phase 1 trains the backbone on PGD examples; phase 2 inserts masking units
at both LeNet blocks and fine-tunes everything jointly.  A few minutes on a
laptop CPU.  Expects the MNIST IDX files under ./data/mnist (see README).

Run from the repository root:  python demos/04_train_mnist.py
"""
import os

import dfmlab as dl

data_dir = os.environ.get("DFMLAB_DATA", "./data")
train, test = dl.load_mnist(os.path.join(data_dir, "mnist"))
train_small = train.subset(range(2000))
eval_small = test.subset(range(1000))

plan = dl.TrainPlan(
    e1=3, e2=2, batch_size=100, lr=0.1, lr_phase2=0.01, seed=0,
    blocks=(1, 2), r1=0.01, r2=0.1, eval_subset=500,
    attack=dl.AttackConfig(family="pgd", norm="linf", epsilon=0.3,
                           step_size=0.1, steps=7, random_start=True),
)

model = dl.build_model(dl.ArchitectureSpec("lenet", (1, 28, 28), 10), seed=0)

print("== phase 1: adversarial training of the backbone ==")
state = dl.train_phase1(model, train_small, plan, eval_ds=eval_small)
for r in state.metrics:
    print(f"  epoch {r.epoch}: clean {r.clean_acc:.1f}%  robust {r.robust_acc:.1f}%  loss {r.mean_loss:.3f}")

print("== phase 2: insert masking units, joint fine-tune ==")
state = dl.train_phase2(model, train_small, plan, eval_ds=eval_small)
for r in state.metrics:
    print(f"  epoch {r.epoch}: clean {r.clean_acc:.1f}%  robust {r.robust_acc:.1f}%  loss {r.mean_loss:.3f}")

print("== final evaluation (stochastic model, 3 trials) ==")
pgd40 = dl.AttackConfig(family="pgd", norm="linf", epsilon=0.3, step_size=0.01,
                        steps=40, random_start=True)
clean = dl.AttackConfig(family="pgd", epsilon=0.0, step_size=0.1, steps=1, random_start=False)
for name, cfg in (("clean", clean), ("pgd-40", pgd40)):
    mean, std = dl.robust_accuracy(model, eval_small, cfg, trials=3, seed=0)
    print(f"  {name}: {mean:.1f}% +- {std:.2f}")
