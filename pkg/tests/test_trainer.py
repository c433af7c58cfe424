import math

import numpy as np
import pytest

from jigsawhsi import graph, trainer
from jigsawhsi.errors import ValidationError
from jigsawhsi.tiler import TileSet, build_dataset, one_hot, stratified_split

from oracles import confusion_loop


# ---------------------------------------------------------------- optimizers

def test_sgd_single_step():
    w = np.array([1.0])
    trainer.optimizer_step("sgd", None, [w], [np.array([0.5])], 0.1)
    assert w[0] == pytest.approx(0.95, abs=1e-12)


def _adam_scalar(w, grads, lr, b1=0.9, b2=0.999, eps=1e-7):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    return w


def test_adam_matches_hand_recurrence():
    gs = [0.3, -1.2, 0.05]
    w = np.array([0.7])
    state = None
    for g in gs:
        _, state = trainer.optimizer_step("adam", state, [w], [np.array([g])], 1e-3)
    assert w[0] == pytest.approx(_adam_scalar(0.7, gs, 1e-3), abs=1e-12)
    assert state["t"] == 3


def test_adam_first_step_is_lr_sized():
    # bias correction makes the first move lr * sign(g)
    w = np.array([2.0, -1.0])
    trainer.optimizer_step("adam", None, [w], [np.array([4.0, -0.01])], 0.01)
    assert np.allclose(w, [1.99, -0.99], atol=1e-6)


def _adadelta_scalar(w, grads, lr, rho=0.95, eps=1e-7):
    eg = ed = 0.0
    for g in grads:
        eg = rho * eg + (1 - rho) * g * g
        d = -math.sqrt(ed + eps) / math.sqrt(eg + eps) * g
        ed = rho * ed + (1 - rho) * d * d
        w = w + lr * d
    return w


def test_adadelta_matches_hand_recurrence():
    gs = [1.0, -0.5, 2.0, 0.1]
    w = np.array([0.0])
    state = None
    for g in gs:
        _, state = trainer.optimizer_step("adadelta", state, [w], [np.array([g])], 0.1)
    assert w[0] == pytest.approx(_adadelta_scalar(0.0, gs, 0.1), abs=1e-12)


def test_adadelta_zero_gradient_only_decays():
    w = np.array([3.0])
    opt = trainer.Adadelta(1.0)
    state = opt.init_state([w])
    state["acc_grad"][0][...] = 2.0
    state["acc_delta"][0][...] = 4.0
    opt.update([w], [np.zeros(1)], state)
    assert w[0] == 3.0
    assert state["acc_grad"][0][0] == pytest.approx(1.9)
    assert state["acc_delta"][0][0] == pytest.approx(3.8)


@pytest.mark.parametrize("lr", [0.0, -0.1])
def test_non_positive_learning_rate(lr):
    with pytest.raises(ValidationError, match="learning_rate"):
        trainer.optimizer_step("sgd", None, [np.zeros(1)], [np.zeros(1)], lr)
    with pytest.raises(ValidationError, match="learning_rate"):
        trainer.TrainConfig(learning_rate=lr)


def test_shape_mismatch_and_unknown_optimizer():
    with pytest.raises(ValidationError, match="shapes"):
        trainer.optimizer_step("adam", None, [np.zeros(2)], [np.zeros(3)], 0.1)
    with pytest.raises(ValidationError, match="optimizer"):
        trainer.make_optimizer("rmsprop", 0.1)


def test_optimizer_names_case_insensitive():
    assert isinstance(trainer.make_optimizer("Adadelta", 0.1), trainer.Adadelta)
    assert trainer.TrainConfig(optimizer="ADAM").optimizer == "adam"


# ---------------------------------------------------------------- early stopping

def test_early_stopping_plateau():
    es = trainer.EarlyStopping(patience=3, mode="max")
    values = [50.0, 60.0, 60.0, 59.0, 60.0]
    stops = [es.update(e, v) for e, v in enumerate(values, start=1)]
    assert stops == [False, False, False, False, True]
    assert es.best_epoch == 2 and es.stopped_epoch == 5


def test_early_stopping_min_mode():
    es = trainer.EarlyStopping(patience=2, mode="min")
    assert not es.update(1, 1.0)
    assert not es.update(2, 0.5)
    assert not es.update(3, 0.5 - 1e-9)  # below min_delta: not an improvement
    assert es.update(4, 0.6)
    assert es.best_epoch == 2


# ---------------------------------------------------------------- training loop

def _spec(**kw):
    base = dict(window=5, channels=4, num_classes=3, max_filter_size=3, branch_units=6, dense_units=(16, 8))
    base.update(kw)
    return graph.NetworkSpec(**base)


@pytest.fixture(scope="module")
def scene_tiles():
    from jigsawhsi.decompose import reduce_cube
    from jigsawhsi.hsi_io import generate_synthetic_scene

    cube, labels = generate_synthetic_scene(24, 24, 12, 3, 6, 0.05, seed=3)
    reduced, _ = reduce_cube(cube, "PCA", 4, seed=0)
    return build_dataset(reduced, labels, 5)


def test_one_sgd_step_lowers_single_example_loss():
    rng = np.random.default_rng(0)
    for seed in range(5):
        model = graph.build(_spec(dropout=0.0), seed=seed, dtype=np.float64)
        x = rng.normal(size=(1, 5, 5, 4))
        y = one_hot(rng.integers(1, 4, size=1), 3, np.float64)
        model.zero_grad()
        model.logits(x, training=True)
        before, _ = model.backward(y)
        trainer.SGD(1e-4).update(model.params(), model.grads(), {})
        assert model.loss(x, y) < before


def test_lr_zero_keeps_params_and_stops_at_patience(scene_tiles):
    model = graph.build(_spec(), seed=0)
    start = model.get_state()
    cfg = trainer.TrainConfig(optimizer="sgd", batch_size=32, max_epochs=50, patience=4, seed=1)
    _, hist = trainer.train(model, scene_tiles, cfg, optimizer=trainer.SGD(0.0))
    assert all(a.tobytes() == b.tobytes() for a, b in zip(start, model.params()))
    # constant validation accuracy: the first epoch stays best
    assert len(set(hist.val_accuracy)) == 1
    assert hist.best_epoch == 1 and hist.stopped_epoch == 5 and hist.epochs == 5


def test_overfits_small_set(scene_tiles):
    idx = np.concatenate([np.flatnonzero(scene_tiles.labels == k)[:14] for k in (1, 2, 3)])[:40]
    small = scene_tiles.subset(idx)
    model = graph.build(_spec(dropout=0.0, l2=0.0), seed=2)
    cfg = trainer.TrainConfig(optimizer="adam", learning_rate=3e-3, batch_size=8, max_epochs=200,
                              patience=200, val_fraction=0.0, monitor="train_loss", seed=0)
    reached = []
    trainer.train(model, small, cfg, progress=lambda e, h: reached.append(h.train_accuracy[-1]))
    cm, _ = trainer.evaluate(model, small)
    assert np.trace(cm.counts) == len(small) == 40
    assert max(reached) == 100.0


def test_training_is_deterministic(scene_tiles):
    cfg = trainer.TrainConfig(optimizer="adadelta", learning_rate=0.5, batch_size=16, max_epochs=6, patience=3, seed=9)
    runs = []
    for _ in range(2):
        model = graph.build(_spec(), seed=1)
        _, hist = trainer.train(model, scene_tiles, cfg)
        runs.append((hist, [p.tobytes() for p in model.params()]))
    assert runs[0][0] == runs[1][0]
    assert runs[0][1] == runs[1][1]


def test_best_weights_are_restored(scene_tiles):
    train_set, _ = stratified_split(scene_tiles, 0.6, seed=0)
    cfg = trainer.TrainConfig(optimizer="adam", learning_rate=2e-3, batch_size=16, max_epochs=30, patience=5,
                              val_fraction=0.3, seed=4)
    model = graph.build(_spec(), seed=3)
    _, hist = trainer.train(model, train_set, cfg)
    assert 1 <= hist.best_epoch <= hist.stopped_epoch <= cfg.max_epochs
    assert hist.stopped_epoch - hist.best_epoch <= cfg.patience
    _, val_set = trainer.split_validation(train_set, cfg.val_fraction, cfg.seed)
    cm, _ = trainer.evaluate(model, val_set)
    assert 100.0 * np.trace(cm.counts) / cm.total == pytest.approx(hist.val_accuracy[hist.best_epoch - 1], abs=1e-9)


def test_history_csv(tmp_path, scene_tiles):
    cfg = trainer.TrainConfig(batch_size=64, max_epochs=2, patience=5, seed=0)
    _, hist = trainer.train(graph.build(_spec(), seed=0), scene_tiles, cfg)
    trainer.write_history(hist, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,train_acc,val_loss,val_acc"
    assert len(lines) == 3 and lines[1].startswith("1,")


def test_train_rejects_missing_class(scene_tiles):
    idx = np.flatnonzero(scene_tiles.labels != 2)
    with pytest.raises(ValidationError, match="no training tiles"):
        trainer.train(graph.build(_spec(), seed=0), scene_tiles.subset(idx), trainer.TrainConfig(max_epochs=1))


def test_monitor_needs_validation():
    with pytest.raises(ValidationError, match="val_fraction"):
        trainer.TrainConfig(val_fraction=0.0)


# ---------------------------------------------------------------- evaluation

def test_evaluate_matches_loop_oracle(scene_tiles):
    model = graph.build(_spec(), seed=5)
    cm, loss = trainer.evaluate(model, scene_tiles, batch_size=37)
    preds, losses = [], []
    for tile in scene_tiles:
        p = model.forward(tile.data[None])[0]
        preds.append(int(np.argmax(p)) + 1)
        losses.append(-math.log(float(p[tile.label - 1])))
    assert np.array_equal(cm.counts, confusion_loop(scene_tiles.labels, preds, 3))
    assert loss == pytest.approx(np.mean(losses), rel=1e-5)


def test_evaluate_forced_single_class():
    model = graph.build(_spec(), seed=0)
    model.head.layers[-1].bias[...] = [0.0, 100.0, 0.0]
    n = 11
    ts = TileSet(np.zeros((n, 5, 5, 4), np.float32), np.arange(n), np.zeros(n, int), np.full(n, 2), 3)
    cm, _ = trainer.evaluate(model, ts)
    assert cm.counts[1, 1] == n and cm.total == n
