import copy

import numpy as np
import pytest

from conftest import SMALL_MODEL
from lineloss.autograd import Tensor
from lineloss.errors import ContractError, DimensionError, DivergenceError
from lineloss.model import ForecastModel
from lineloss.training import (AdamState, EarlyStopping, TrainConfig, adam_step, clip_gradients,
                               evaluate, mse_loss, regression_metrics, train)


def test_mse_examples():
    assert mse_loss(np.ones(3), np.ones(3)).item() == 0.0
    assert mse_loss(np.full(4, 3.0), np.ones(4)).item() == 4.0
    assert mse_loss(np.zeros(2), np.array([1.0, 3.0])).item() == 5.0
    with pytest.raises(ContractError):
        mse_loss(np.empty(0), np.empty(0))
    with pytest.raises(DimensionError):
        mse_loss(np.zeros(2), np.zeros(3))


def _with_grads(*gs):
    out = []
    for g in gs:
        t = Tensor(np.zeros_like(g))
        t.grad = np.array(g, dtype=float)
        out.append(t)
    return out


def test_clip_examples():
    ps = _with_grads([6.0, 8.0])                       # norm 10 = 2 * max
    assert clip_gradients(ps, 5.0) == 0.5
    np.testing.assert_allclose(ps[0].grad, [3.0, 4.0])
    ps = _with_grads([0.3], [0.4])
    assert clip_gradients(ps, 5.0) == 1.0 and ps[0].grad[0] == 0.3
    assert clip_gradients(_with_grads([0.0, 0.0]), 5.0) == 1.0


def test_clip_bounds_norm(rng):
    for _ in range(20):
        ps = _with_grads(*(rng.normal(0, rng.uniform(0.1, 30), size=rng.integers(1, 6)) for _ in range(3)))
        clip_gradients(ps, 5.0)
        assert np.sqrt(sum((p.grad ** 2).sum() for p in ps)) <= 5.0 + 1e-9


def test_adam_first_step_and_zero_grad():
    cfg = TrainConfig(lr=1e-3, weight_decay=0.0)
    p = {"w": Tensor(np.zeros(3))}
    adam_step(p, {"w": np.ones(3)}, AdamState(), 1, cfg)
    np.testing.assert_allclose(p["w"].data, -1e-3 / (1 + 1e-8))
    state = AdamState()
    p = {"w": Tensor(np.array([0.7, -2.0]))}
    adam_step(p, {"w": np.zeros(2)}, state, 1, cfg)
    np.testing.assert_array_equal(p["w"].data, [0.7, -2.0])
    with pytest.raises(ContractError):
        adam_step(p, {"w": np.zeros(2)}, state, 0, cfg)


def test_adam_decreases_quadratic():
    cfg = TrainConfig(lr=0.1, weight_decay=0.0)
    p, st = {"x": Tensor(np.array([1.0]))}, AdamState()
    f0 = p["x"].data[0] ** 2
    for t in (1, 2):
        adam_step(p, {"x": 2 * p["x"].data}, st, t, cfg)
    assert p["x"].data[0] ** 2 < f0
    # scalar oracle written out by hand
    x, m, v = 1.0, 0.0, 0.0
    for t in (1, 2):
        g = 2 * x
        m, v = 0.9 * m + 0.1 * g, 0.999 * v + 0.001 * g * g
        x -= 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert p["x"].data[0] == pytest.approx(x, abs=1e-15)


def test_early_stopping_counter():
    es = EarlyStopping(patience=3, min_delta=0.0)
    seq = [5, 4, 4, 4, 4]
    out = [es.update(i, v) for i, v in enumerate(seq)]
    assert [o[1] for o in out] == [False, False, False, False, True]
    assert es.best_step == 1


def test_metric_fixtures():
    y = np.array([1.0, 2.0, 3.0])
    assert regression_metrics(y, y) == (0.0, 0.0, 1.0)
    assert regression_metrics(y, np.full(3, 2.0))[2] == 0.0
    rmse, mae, r2 = regression_metrics(y, [2.0, 2.0, 2.0])
    assert rmse == pytest.approx(np.sqrt(2 / 3), abs=1e-12) and mae == pytest.approx(2 / 3, abs=1e-12)
    assert regression_metrics(np.ones(3), [1.0, 2.0, 0.0])[2] is None
    assert regression_metrics(y, [3.0, 2.0, 1.0])[2] < 0


def _fit(prep, **kw):
    cfg = prep.model_config(seed=0, **SMALL_MODEL)
    model = ForecastModel(cfg, prep.adjacency)
    return train(model, prep.train, prep.val, TrainConfig(**kw), prep.loss_scaler)


def test_train_is_deterministic(tiny_prepared):
    a = _fit(tiny_prepared, lr=1e-3, max_epochs=3)[1]
    b = _fit(tiny_prepared, lr=1e-3, max_epochs=3)[1]
    assert a.train_loss == b.train_loss and a.val_loss == b.val_loss


def test_improving_curve_runs_all_epochs(tiny_prepared):
    p = tiny_prepared
    m = ForecastModel(p.model_config(**SMALL_MODEL), p.adjacency)
    _, res = train(m, p.train, p.val, TrainConfig(max_epochs=6, patience=2), p.loss_scaler,
                   val_loss_fn=lambda model, epoch: 1.0 / epoch)
    assert res.stopped_epoch == 6 and res.best_epoch == 6 and not res.stopped_early


def test_best_epoch_restored(tiny_prepared):
    p = tiny_prepared
    snaps = {}

    def val(model, epoch):
        snaps[epoch] = copy.deepcopy(model.state_dict())
        return [3.0, 1.0, 2.0, 2.5, 2.2][epoch - 1]

    m = ForecastModel(p.model_config(**SMALL_MODEL), p.adjacency)
    m, res = train(m, p.train, p.val, TrainConfig(lr=1e-2, max_epochs=5, patience=10), p.loss_scaler,
                   val_loss_fn=val)
    assert res.best_epoch == 2
    for k, v in m.state_dict().items():
        np.testing.assert_array_equal(v, snaps[2][k])


def test_iteration_unit_counts_steps(tiny_prepared):
    p = tiny_prepared
    m = ForecastModel(p.model_config(**SMALL_MODEL), p.adjacency)
    _, res = train(m, p.train, p.val, TrainConfig(max_epochs=50, patience=3, early_stop_unit="iteration"),
                   p.loss_scaler, val_loss_fn=lambda model, step: 1.0)
    assert res.steps == 4 and res.best_epoch == 1


def test_divergence_is_reported(tiny_prepared):
    p = tiny_prepared
    m = ForecastModel(p.model_config(**SMALL_MODEL), p.adjacency)
    with pytest.raises(DivergenceError):
        train(m, p.train, p.val, TrainConfig(max_epochs=2), p.loss_scaler,
              val_loss_fn=lambda model, epoch: float("nan"))


def test_evaluate_reports_raw_scale(tiny_prepared):
    m, _ = _fit(tiny_prepared, lr=1e-3, max_epochs=2)
    rep = evaluate(m, tiny_prepared.test, tiny_prepared.loss_scaler)
    assert rep.actual.shape == (len(tiny_prepared.test), 2)
    np.testing.assert_allclose(rep.actual, tiny_prepared.test.targets)
    assert rep.rmse >= rep.mae >= 0 and rep.r2 <= 1
    assert rep.inference_ms > 0


def test_train_config_validation():
    with pytest.raises(ContractError):
        TrainConfig(patience=0)
    with pytest.raises(ContractError):
        TrainConfig(lr=0)
