import numpy as np
import pytest

import dfmlab as dl
from dfmlab import tensor as T
from dfmlab.data import Dataset
from dfmlab.trainer import SgdState, TrainState, sgd_step


def toy_dataset(rng, n=200, shape=(1, 28, 28), classes=10):
    return Dataset(rng.random((n,) + shape, dtype=np.float32),
                   rng.integers(0, classes, n).astype(np.int64), "train")


def small_plan(**kw):
    base = dict(e1=1, e2=1, batch_size=50, lr=0.05, lr_phase2=0.01, seed=0,
                blocks=(1, 2), r1=0.05, r2=0.1, eval_subset=100,
                attack=dl.AttackConfig(family="pgd", epsilon=0.1, step_size=0.05,
                                       steps=2, random_start=True))
    base.update(kw)
    return dl.TrainPlan(**base)


# ---------------------------------------------------------------------------
# sgd


def test_sgd_plain_step():
    p = dl.Tensor(np.array([1.0, 2.0], dtype=np.float32), requires_grad=True)
    p.grad = np.array([0.5, -0.5], dtype=np.float32)
    sgd_step([p], SgdState([p]), lr=1.0, momentum=0.0, weight_decay=0.0)
    np.testing.assert_allclose(p.data, [0.5, 2.5])
    assert p.grad is None


def test_sgd_momentum_two_steps():
    # constant grad g with momentum 0.9: decrements lr*g then lr*1.9g
    p = dl.Tensor(np.array([0.0], dtype=np.float32), requires_grad=True)
    st = SgdState([p])
    g = 0.4
    lr = 0.1
    p.grad = np.array([g], dtype=np.float32)
    sgd_step([p], st, lr, 0.9, 0.0)
    p.grad = np.array([g], dtype=np.float32)
    sgd_step([p], st, lr, 0.9, 0.0)
    np.testing.assert_allclose(p.data, [-lr * (g + 1.9 * g)], atol=1e-7)


def test_sgd_quadratic_bowl_converges():
    target = np.array([1.5, -2.0], dtype=np.float32)
    p = dl.Tensor(np.zeros(2, dtype=np.float32), requires_grad=True)
    st = SgdState([p])
    for _ in range(200):
        p.grad = (p.data - target).astype(np.float32)
        sgd_step([p], st, lr=0.1, momentum=0.9, weight_decay=0.0)
    assert np.abs(p.data - target).max() < 1e-4


def test_sgd_requires_grad_populated():
    p = dl.Tensor(np.zeros(2, dtype=np.float32), requires_grad=True)
    with pytest.raises(ValueError, match="unpopulated"):
        sgd_step([p], SgdState([p]), 0.1, 0.9, 0.0)


def test_sgd_weight_decay():
    p = dl.Tensor(np.array([2.0], dtype=np.float32), requires_grad=True)
    p.grad = np.array([0.0], dtype=np.float32)
    sgd_step([p], SgdState([p]), lr=1.0, momentum=0.0, weight_decay=0.1)
    np.testing.assert_allclose(p.data, [1.8], atol=1e-7)


# ---------------------------------------------------------------------------
# lr schedule


def test_phase1_lr_schedule_drops():
    plan = small_plan(e1=10)
    assert plan.phase1_lr(0) == pytest.approx(0.05)
    assert plan.phase1_lr(4) == pytest.approx(0.05)
    assert plan.phase1_lr(5) == pytest.approx(0.005)
    assert plan.phase1_lr(7) == pytest.approx(0.0005)
    explicit = small_plan(e1=10, lr_schedule=((0, 0.2), (3, 0.02)))
    assert explicit.phase1_lr(2) == pytest.approx(0.2)
    assert explicit.phase1_lr(3) == pytest.approx(0.02)


# ---------------------------------------------------------------------------
# phase 1


def test_e1_zero_leaves_params_bitwise(lenet, rng):
    ds = toy_dataset(rng)
    before = [p.data.copy() for p in lenet.parameters()]
    dl.train_phase1(lenet, ds, small_plan(e1=0))
    for p, b in zip(lenet.parameters(), before):
        np.testing.assert_array_equal(p.data, b)


def test_phase1_rejects_augmented_model(lenet, rng):
    dl.insert_dfm(lenet, {1}, 0.1, 0.1, seed=0)
    with pytest.raises(ValueError, match="un-augmented"):
        dl.train_phase1(lenet, toy_dataset(rng), small_plan())


def test_phase1_deterministic_trajectory(lenet_spec, rng):
    ds = toy_dataset(rng, n=100)
    losses = []
    for _ in range(2):
        model = dl.build_model(lenet_spec, seed=5)
        state = dl.train_phase1(model, ds, small_plan(e1=2, eval_subset=0))
        losses.append([m.mean_loss for m in state.metrics])
    assert losses[0] == losses[1]


def test_phase1_changes_params_and_logs_metrics(lenet, rng):
    ds = toy_dataset(rng, n=100)
    before = [p.data.copy() for p in lenet.parameters()]
    state = dl.train_phase1(lenet, ds, small_plan(), eval_ds=toy_dataset(rng, n=50))
    assert any(not np.array_equal(p.data, b) for p, b in zip(lenet.parameters(), before))
    assert len(state.metrics) == 1
    row = state.metrics[0]
    assert np.isfinite(row.mean_loss) and row.wall_seconds > 0
    assert 0 <= row.clean_acc <= 100 and 0 <= row.robust_acc <= 100


def test_divergent_params_abort_in_crafting(lenet, rng):
    ds = toy_dataset(rng, n=50)
    lenet.parameters()[0].data[:] = np.inf
    with pytest.raises(RuntimeError, match="non-finite"):
        dl.train_phase1(lenet, ds, small_plan(batch_size=25))


def test_nan_loss_aborts(lenet, rng, monkeypatch):
    ds = toy_dataset(rng, n=50)
    monkeypatch.setattr("dfmlab.trainer.craft", lambda model, x, y, cfg, rng: x)
    lenet.parameters()[0].data[:] = np.inf
    with pytest.raises(RuntimeError, match="diverged"):
        dl.train_phase1(lenet, ds, small_plan(batch_size=25))


# ---------------------------------------------------------------------------
# phase 2


def test_e2_zero_installs_units_but_leaves_params(lenet, rng):
    ds = toy_dataset(rng)
    theta_before = [p.data.copy() for p in lenet.base_parameters()]
    dl.train_phase2(lenet, ds, small_plan(e2=0))
    assert sorted(lenet.dfm_units) == [1, 2]
    for p, b in zip(lenet.base_parameters(), theta_before):
        np.testing.assert_array_equal(p.data, b)
    reference = dl.masking.DecoupledNet(0, 6, 1)
    for p, q in zip(lenet.dfm_units[1].phi.params(), reference.params()):
        np.testing.assert_array_equal(p.data, q.data)


def test_phase2_updates_theta_and_phi(lenet, rng):
    ds = toy_dataset(rng, n=100)
    dl.train_phase1(lenet, ds, small_plan(e1=1))
    theta_before = [p.data.copy() for p in lenet.base_parameters()]
    dl.train_phase2(lenet, ds, small_plan(e2=1))
    phi_init = dl.masking.DecoupledNet(0, 6, 1)
    assert any(not np.array_equal(p.data, b)
               for p, b in zip(lenet.base_parameters(), theta_before))
    assert any(not np.array_equal(p.data, q.data)
               for p, q in zip(lenet.dfm_units[1].phi.params(), phi_init.params()))


def test_phase2_zero_ratio_frozen_phi_matches_disabled_units(lenet_spec, rng):
    """With r1=r2=0 and frozen phi, phase 2 is plain backbone training."""
    ds = toy_dataset(rng, n=100)
    plan = small_plan(e1=0, e2=1, r1=0.0, r2=0.0, eval_subset=0)

    runs = []
    for mode in ("stochastic", "disabled"):
        model = dl.build_model(lenet_spec, seed=5)
        dl.insert_dfm(model, plan.blocks, plan.r1, plan.r2, plan.seed)
        for p in model.parameters():
            if not any(p is q for q in model.base_parameters()):
                p.requires_grad = False
        dl.set_masking_mode(model, mode)
        dl.train_phase2(model, ds, plan)
        runs.append([p.data.copy() for p in model.base_parameters()])
    for a, b in zip(*runs):
        np.testing.assert_allclose(a, b, atol=1e-4)


def test_crafting_does_not_touch_bn_stats_training_does(rng):
    model = dl.build_model(dl.ArchitectureSpec("resnet-small", (3, 32, 32), 10), seed=0)
    ds = toy_dataset(rng, n=20, shape=(3, 32, 32))
    bns = list(model._bn_layers())
    before = [bn.running_mean.copy() for bn in bns]
    x = dl.Tensor(ds.images[:10])
    dl.pgd(model, x, ds.labels[:10], small_plan().attack, dl.stream(0, "bn"))
    for bn, rm in zip(bns, before):
        np.testing.assert_array_equal(bn.running_mean, rm)
    dl.train_phase1(model, ds, small_plan(e1=1, batch_size=10, eval_subset=0,
                                          blocks=(), e2=0))
    assert any(not np.array_equal(bn.running_mean, rm) for bn, rm in zip(bns, before))


# ---------------------------------------------------------------------------
# checkpoint round-trip through training state


def test_training_checkpoint_roundtrip(lenet, rng, tmp_path):
    ds = toy_dataset(rng, n=100)
    state = dl.train_phase1(lenet, ds, small_plan(e1=1, eval_subset=0))
    cs = dl.training_checkpoint(lenet, state)
    path = tmp_path / "t.dfmc"
    dl.save_checkpoint(cs, path)
    loaded = dl.load_checkpoint(path)

    model2 = dl.build_model(dl.ArchitectureSpec("lenet", (1, 28, 28), 10), seed=99)
    state2 = dl.restore_training(model2, loaded)
    for a, b in zip(lenet.parameters(), model2.parameters()):
        np.testing.assert_array_equal(a.data, b.data)
    assert (state2.phase, state2.epoch, state2.step) == (state.phase, state.epoch, state.step)
    for va, vb in zip(state.opt.velocities, state2.opt.velocities):
        np.testing.assert_array_equal(va, vb)


def test_resume_matches_uninterrupted(lenet_spec, rng, tmp_path):
    ds = toy_dataset(rng, n=100)
    plan = small_plan(e1=2, eval_subset=0)
    mid = tmp_path / "mid.dfmc"

    def snapshot(model, state):
        if state.epoch == 1:
            dl.save_checkpoint(dl.training_checkpoint(model, state), mid)

    uninterrupted = dl.build_model(lenet_spec, seed=3)
    dl.train_phase1(uninterrupted, ds, plan, on_epoch=snapshot)

    resumed = dl.build_model(lenet_spec, seed=3)
    st = dl.restore_training(resumed, dl.load_checkpoint(mid))
    assert st.epoch == 1
    dl.train_phase1(resumed, ds, plan, state=st)

    for a, b in zip(uninterrupted.parameters(), resumed.parameters()):
        np.testing.assert_array_equal(a.data, b.data)
