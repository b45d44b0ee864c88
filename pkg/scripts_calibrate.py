"""Calibration run for the desk-scale MNIST acceptance experiment (temporary)."""
import sys, time
import numpy as np
sys.path.insert(0, "src")
import dfmlab as dl

t_all = time.time()
train, test = dl.load_mnist("/root/data/mnist")
train_sub = train.subset(range(10_000))
eval_sub = test.subset(range(2_000))

atk_train = dl.AttackConfig(family="pgd", norm="linf", epsilon=0.3, step_size=0.1, steps=7, random_start=True)
plan = dl.TrainPlan(e1=10, e2=10, batch_size=100, lr=0.1, lr_phase2=0.01, seed=0,
                    blocks=(1, 2), r1=0.01, r2=0.1, attack=atk_train, eval_subset=1000)

spec = dl.ArchitectureSpec("lenet", (1, 28, 28), 10)
model = dl.build_model(spec, seed=0)

t0 = time.time()
st1 = dl.train_phase1(model, train_sub, plan, eval_ds=test)
t1 = time.time()
print(f"[phase1] {t1-t0:.0f}s", flush=True)
for r in st1.metrics:
    print(f"  epoch {r.epoch}: clean {r.clean_acc:.2f} robust {r.robust_acc:.2f} loss {r.mean_loss:.4f} ({r.wall_seconds:.0f}s)", flush=True)

pgd40 = dl.AttackConfig(family="pgd", norm="linf", epsilon=0.3, step_size=0.01, steps=40, random_start=True)
l2pgd = dl.AttackConfig(family="pgd", norm="l2", epsilon=2.0, step_size=0.2, steps=40, random_start=True)

c1, _ = dl.robust_accuracy(model, eval_sub, dl.AttackConfig(family="pgd", epsilon=0.0, step_size=0.1, steps=1, random_start=False), trials=1, seed=0)
r1m, _ = dl.robust_accuracy(model, eval_sub, pgd40, trials=1, seed=0)
l1m, _ = dl.robust_accuracy(model, eval_sub, l2pgd, trials=1, seed=0)
print(f"[phase1 eval] clean {c1:.2f}  pgd40 {r1m:.2f}  l2pgd {l1m:.2f}  ({time.time()-t1:.0f}s)", flush=True)

t2 = time.time()
st2 = dl.train_phase2(model, train_sub, plan, eval_ds=test)
t3 = time.time()
print(f"[phase2] {t3-t2:.0f}s", flush=True)
for r in st2.metrics:
    print(f"  epoch {r.epoch}: clean {r.clean_acc:.2f} robust {r.robust_acc:.2f} loss {r.mean_loss:.4f} ({r.wall_seconds:.0f}s)", flush=True)

c2, c2s = dl.robust_accuracy(model, eval_sub, dl.AttackConfig(family="pgd", epsilon=0.0, step_size=0.1, steps=1, random_start=False), trials=5, seed=0)
r2m, r2s = dl.robust_accuracy(model, eval_sub, pgd40, trials=5, seed=0)
l2m, l2s = dl.robust_accuracy(model, eval_sub, l2pgd, trials=5, seed=0)
print(f"[phase2 eval] clean {c2:.2f}±{c2s:.2f}  pgd40 {r2m:.2f}±{r2s:.2f}  l2pgd {l2m:.2f}±{l2s:.2f}  ({time.time()-t3:.0f}s)", flush=True)

# deterministic-eval comparison (masks disabled)
dl.set_masking_mode(model, "disabled")
c2d, _ = dl.robust_accuracy(model, eval_sub, dl.AttackConfig(family="pgd", epsilon=0.0, step_size=0.1, steps=1, random_start=False), trials=1, seed=0)
dl.set_masking_mode(model, "stochastic")
print(f"[phase2 deterministic clean] {c2d:.2f}", flush=True)

# EOT sanity (criterion 7 shape)
t4 = time.time()
pgd10 = dl.AttackConfig(family="pgd", norm="linf", epsilon=0.3, step_size=0.075, steps=10, random_start=True)
eot10 = dl.AttackConfig(family="eotpgd", norm="linf", epsilon=0.3, step_size=0.075, steps=10, eot_samples=16, random_start=True)
p10, p10s = dl.robust_accuracy(model, eval_sub, pgd10, trials=5, seed=0)
print(f"[pgd10] {p10:.2f}±{p10s:.2f} ({time.time()-t4:.0f}s)", flush=True)
t5 = time.time()
e10, e10s = dl.robust_accuracy(model, eval_sub, eot10, trials=5, seed=0)
print(f"[eot10 k=16] {e10:.2f}±{e10s:.2f} ({time.time()-t5:.0f}s)", flush=True)
print(f"[total] {time.time()-t_all:.0f}s", flush=True)
