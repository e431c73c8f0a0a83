import numpy as np
import pytest

from physarch import autodiff as ad
from physarch import baselines as bl
from physarch import datasets as ds
from physarch import physics as ph
from physarch.errors import CollapseError


@pytest.fixture(scope="module")
def collision_low():
    train = ds.generate_dataset("collision", "low", n=64, seed=1)
    return train, ds.fit_context(train)


@pytest.fixture(scope="module")
def toss_low():
    train = ds.generate_dataset("toss", "low", n=64, seed=1)
    return train, ds.fit_context(train)


def test_spec_validation():
    with pytest.raises(ValueError):
        bl.ModelSpec("vae", "toss")
    with pytest.raises(ValueError):
        bl.ModelSpec("naive", "orbits")
    with pytest.raises(ValueError):
        bl.TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        bl.TrainConfig(lr=-1.0)
    assert bl.ModelSpec("Naive", "toss").kind == "naive"


def _count_affine(i, o):
    return i * o + o


def test_parameter_counts(toss_low, collision_low):
    _, ctx_t = toss_low
    _, ctx_c = collision_low
    h = bl.HIDDEN_WIDTH
    naive = bl.build_model(bl.ModelSpec("naive", "toss"), ctx_t, 0)
    assert bl.parameter_count(naive) == (
        _count_affine(6, h) + _count_affine(h, h) + _count_affine(h, 30))
    fusion = bl.build_model(bl.ModelSpec("fusion", "collision"), ctx_c, 0)
    expected = (_count_affine(7, h) + _count_affine(h, h)       # feature branch
                + _count_affine(2, h) + _count_affine(h, h)     # prior branch
                + _count_affine(2 * h, 2))                      # output
    assert bl.parameter_count(fusion) == expected
    residual = bl.build_model(bl.ModelSpec("residual", "toss"), ctx_t, 0)
    assert bl.parameter_count(residual) == (
        _count_affine(36, h) + _count_affine(h, h) + _count_affine(h, 30))
    embedded = bl.build_model(bl.ModelSpec("embedded", "toss"), ctx_t, 0)
    assert bl.parameter_count(embedded) == (
        _count_affine(6, h) + _count_affine(h, h) + _count_affine(h, 4))


def test_zero_residual_body_returns_prior(collision_low):
    train, ctx = collision_low
    model = bl.build_model(bl.ModelSpec("residual", "collision"), ctx, 0)
    for p in model.params:
        p.value = np.zeros_like(p.value)
    pred = model.predict(train.x, train.y_phy)
    np.testing.assert_allclose(pred, train.y_phy, atol=1e-9)


def test_embedded_with_exact_parameters_reproduces_prior(collision_low):
    train, ctx = collision_low
    model = bl.build_model(bl.ModelSpec("embedded", "collision"), ctx, 0)
    rec = train.meta[0]
    truth = np.array([rec["m_a"], rec["m_b"], rec["v_a1"], rec["v_b1"]])
    model.trunk.w3.value = np.zeros_like(model.trunk.w3.value)
    model.trunk.b3.value = truth - ctx.param_anchor
    pred = model.predict(train.x[:1], train.y_phy[:1])
    np.testing.assert_allclose(pred[0], ph.collision_prior(train.x[0]), atol=1e-9)


def test_every_parameter_receives_gradient(toss_low, collision_low):
    for (train, ctx) in (toss_low, collision_low):
        for kind in bl.MODEL_KINDS:
            model = bl.build_model(bl.ModelSpec(kind, ctx.task), ctx, 3)
            xn = ad.constant(ctx.x_norm.transform(train.x[:8]))
            ypn = ad.constant(ctx.y_norm.transform(train.y_phy[:8]))
            yn = ad.constant(ctx.y_norm.transform(train.y[:8]))
            loss = ad.mse_loss(model.forward(xn, ypn), yn)
            ad.backward(loss)
            for i, p in enumerate(model.params):
                assert p.grad is not None, f"{ctx.task}/{kind} param {i} got no gradient"
                assert np.any(p.grad != 0.0), f"{ctx.task}/{kind} param {i} gradient all zero"


def test_penalty_zero_for_monotone_toss_prediction():
    x = np.array([[0.0, 0.0, 0.5, 0.4, 1.0, 0.7]])  # moving right
    pred = ad.constant(ph.ballistic_points(0, 0, 5, 8, 0.1 * np.arange(3, 18)).reshape(1, -1))
    pen = bl.reg_penalty("toss", pred, x)
    assert pen.value[0] == 0.0


def test_penalty_positive_for_reversed_toss_prediction():
    x = np.array([[0.0, 0.0, 0.5, 0.4, 1.0, 0.7]])
    points = ph.ballistic_points(0, 0, 5, 8, 0.1 * np.arange(3, 18))
    points[:, 0] = -points[:, 0]  # drifts left while observations went right
    pen = bl.reg_penalty("toss", ad.constant(points.reshape(1, -1)), x)
    assert pen.value[0] > 0.0


def test_penalty_zero_when_energy_conserved():
    x = np.array([[3.0, 3.0, -3.0, -3.0, 2.0, 1.0, 1.0]])
    pred = ad.constant(np.array(ph.elastic_collision(2.0, 1.0, 3.0, -3.0)).reshape(1, 2))
    pen = bl.reg_penalty("collision", pred, x)
    assert pen.value[0] == pytest.approx(0.0, abs=1e-12)


def test_penalty_for_doubled_speeds_is_three_times_initial_energy():
    x = np.array([[3.0, 3.0, -3.0, -3.0, 2.0, 1.0, 1.0]])
    v = np.array(ph.elastic_collision(2.0, 1.0, 3.0, -3.0))
    pen = bl.reg_penalty("collision", ad.constant(2.0 * v.reshape(1, 2)), x)
    ke_init = 0.5 * (2.0 * 9.0 + 1.0 * 9.0)
    assert pen.value[0] == pytest.approx(3.0 * ke_init, rel=1e-12)


def test_penalty_averages_over_samples():
    x = np.array([[3.0, 3.0, -3.0, -3.0, 2.0, 1.0, 1.0],
                  [3.0, 3.0, -3.0, -3.0, 2.0, 1.0, 1.0]])
    v = np.array(ph.elastic_collision(2.0, 1.0, 3.0, -3.0))
    pred = np.vstack([v, 2.0 * v])  # one conserving row, one doubled row
    pen = bl.reg_penalty("collision", ad.constant(pred), x)
    ke_init = 0.5 * (2.0 * 9.0 + 1.0 * 9.0)
    assert pen.value[0] == pytest.approx(3.0 * ke_init / 2.0, rel=1e-12)


def test_zero_weight_regularized_matches_naive_training(collision_low):
    train, ctx = collision_low
    cfg = bl.TrainConfig(epochs=40, seed=5)
    naive = bl.build_model(bl.ModelSpec("naive", "collision"), ctx, 5)
    reg = bl.build_model(bl.ModelSpec("regularized", "collision", reg_weight=0.0), ctx, 5)
    bl.train(naive, train, cfg)
    bl.train(reg, train, cfg)
    for a, b in zip(naive.params, reg.params):
        np.testing.assert_array_equal(a.value, b.value)


def test_regularized_weight_changes_training(collision_low):
    train, ctx = collision_low
    cfg = bl.TrainConfig(epochs=40, seed=5)
    naive = bl.build_model(bl.ModelSpec("naive", "collision"), ctx, 5)
    reg = bl.build_model(bl.ModelSpec("regularized", "collision", reg_weight=10.0), ctx, 5)
    bl.train(naive, train, cfg)
    bl.train(reg, train, cfg)
    assert any(not np.array_equal(a.value, b.value)
               for a, b in zip(naive.params, reg.params))


def test_naive_solves_linear_task():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(64, 6))
    A = rng.normal(size=(30, 6))
    y = x @ A.T
    data = ds.Dataset(task="toss", level="synthetic", split="train", seed=0,
                      x=x, y=y, y_phy=y.copy(), meta=[{} for _ in range(64)])
    ctx = ds.TaskContext(task="toss", x_norm=ds.Normalizer.fit(x),
                         y_norm=ds.Normalizer.fit(y), param_anchor=np.zeros(4))
    model = bl.build_model(bl.ModelSpec("naive", "toss"), ctx, 0)
    result = bl.train(model, data, bl.TrainConfig(epochs=2000))
    assert result.losses[-1] < 1e-3


def test_training_is_deterministic(toss_low):
    train, ctx = toss_low
    cfg = bl.TrainConfig(epochs=30, seed=2)
    runs = []
    for _ in range(2):
        model = bl.build_model(bl.ModelSpec("fusion", "toss"), ctx, 2)
        res = bl.train(model, train, cfg)
        runs.append((res.losses, [p.value.copy() for p in model.params]))
    assert runs[0][0] == runs[1][0]
    for a, b in zip(runs[0][1], runs[1][1]):
        np.testing.assert_array_equal(a, b)


def test_validation_checkpoint_restores_best_weights(toss_low):
    train, ctx = toss_low
    val = ds.generate_dataset("toss", "low", n=32, seed=9)
    model = bl.build_model(bl.ModelSpec("naive", "toss"), ctx, 0)
    res = bl.train(model, train, bl.TrainConfig(epochs=60), val_data=val)
    assert res.val_losses is not None and len(res.val_losses) == 60
    assert res.best_epoch == int(np.argmin(res.val_losses))
    xn = ad.constant(ctx.x_norm.transform(val.x))
    ypn = ad.constant(ctx.y_norm.transform(val.y_phy))
    yn = ad.constant(ctx.y_norm.transform(val.y))
    restored = float(ad.mse_loss(model.forward(xn, ypn), yn).value[0])
    assert restored == pytest.approx(min(res.val_losses), rel=1e-12)


def test_early_stop_patience_halts_training(toss_low):
    train, ctx = toss_low
    val = ds.generate_dataset("toss", "low", n=32, seed=9)
    model = bl.build_model(bl.ModelSpec("naive", "toss"), ctx, 0)
    res = bl.train(model, train, bl.TrainConfig(epochs=5000, patience=5), val_data=val)
    assert len(res.losses) < 5000


def test_non_finite_loss_raises_collapse(toss_low):
    train, ctx = toss_low
    bad = ds.Dataset(task="toss", level="low", split="train", seed=1,
                     x=train.x, y=np.full_like(train.y, np.inf),
                     y_phy=train.y_phy, meta=train.meta)
    model = bl.build_model(bl.ModelSpec("naive", "toss"), ctx, 0)
    with pytest.raises(CollapseError) as err:
        bl.train(model, bad, bl.TrainConfig(epochs=10, lr=1e-3))
    assert err.value.epoch == 0
    assert err.value.weight_lr == 1e-3


def test_evaluate_perfect_model_and_empty_set(collision_low):
    train, ctx = collision_low
    zero_mis = ds.generate_dataset("collision", "none", n=32, seed=4)
    ctx0 = ds.fit_context(zero_mis)
    model = bl.build_model(bl.ModelSpec("residual", "collision"), ctx0, 0)
    for p in model.params:
        p.value = np.zeros_like(p.value)
    assert bl.evaluate(model, zero_mis) < 1e-9
    with pytest.raises(ValueError):
        bl.evaluate(model, zero_mis.subset([]))


def test_minibatch_training_runs(toss_low):
    train, ctx = toss_low
    model = bl.build_model(bl.ModelSpec("naive", "toss"), ctx, 0)
    res = bl.train(model, train, bl.TrainConfig(epochs=5, batch_size=16))
    assert len(res.losses) == 5
    assert all(np.isfinite(v) for v in res.losses)


def test_save_and_load_round_trip(tmp_path, collision_low):
    train, ctx = collision_low
    cfg = bl.TrainConfig(epochs=20, seed=7)
    model = bl.build_model(bl.ModelSpec("embedded", "collision"), ctx, 7)
    res = bl.train(model, train, cfg)
    bl.save_trained(tmp_path / "m", res, cfg)
    loaded, cfg2 = bl.load_trained(tmp_path / "m")
    assert cfg2 == cfg
    assert loaded.spec == model.spec
    np.testing.assert_array_equal(
        loaded.predict(train.x, train.y_phy), model.predict(train.x, train.y_phy))
    curve = (tmp_path / "m" / "losses.csv").read_text().strip().splitlines()
    assert curve[0] == "epoch,loss"
    assert len(curve) == 21


def test_residual_beats_naive_on_sparse_collision_data():
    train = ds.generate_dataset("collision", "low", n=128, seed=0)
    ctx = ds.fit_context(train)
    test = ds.generate_dataset("collision", "low", n=256, seed=0, split="test")
    cfg = bl.TrainConfig(epochs=2000, seed=0)
    naive = bl.build_model(bl.ModelSpec("naive", "collision"), ctx, 0)
    residual = bl.build_model(bl.ModelSpec("residual", "collision"), ctx, 0)
    bl.train(naive, train, cfg)
    bl.train(residual, train, cfg)
    assert bl.evaluate(residual, test) < bl.evaluate(naive, test)
