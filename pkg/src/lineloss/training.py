"""Adam training loop with clipping and early stopping, metrics, and ablation sweeps."""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ContractError, DimensionError, DivergenceError, NumericError
from .features import MinMaxScaler, WindowedDataset
from .model import ForecastModel, ModelConfig

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 20
    min_delta: float = 1e-6
    clip_norm: float = 5.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 5e-4
    early_stop_unit: str = "epoch"      # or "iteration"
    max_steps: int | None = None
    init_head_bias: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ContractError("patience must be >= 1")
        if self.lr <= 0:
            raise ContractError("learning rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ContractError("batch_size and max_epochs must be positive")
        if self.early_stop_unit not in ("epoch", "iteration"):
            raise ContractError("early_stop_unit must be 'epoch' or 'iteration'")


@dataclass
class MetricsReport:
    horizon: int
    rmse: float
    mae: float
    r2: float | None
    inference_ms: float | None = None
    note: str = ""
    actual: np.ndarray | None = None
    predicted: np.ndarray | None = None


@dataclass
class TrainResult:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = float("inf")
    stopped_epoch: int = 0
    steps: int = 0
    stopped_early: bool = False


# -- primitives -------------------------------------------------------------------

def mse_loss(yhat, y) -> Tensor:
    if np.size(getattr(yhat, "data", yhat)) == 0 or np.size(getattr(y, "data", y)) == 0:
        raise ContractError("mse_loss of an empty batch")
    yhat, y = ag.as_tensor(yhat), ag.as_tensor(y)
    if yhat.shape != y.shape:
        raise DimensionError(f"prediction shape {yhat.shape} != target shape {y.shape}")
    d = ag.sub(yhat, y)
    return ag.reduce_mean(ag.mul(d, d))


def clip_gradients(params: Iterable[Tensor], max_norm: float) -> float:
    """Scale all grads so their global L2 norm is at most ``max_norm``; returns the scale."""
    params = [p for p in params if p.grad is not None]
    total = float(np.sqrt(sum(float((p.grad ** 2).sum()) for p in params)))
    if total <= max_norm or total == 0.0:
        return 1.0
    scale = max_norm / total
    for p in params:
        p.grad = p.grad * scale
    return scale


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, t: int, cfg: TrainConfig) -> None:
    """Bias-corrected Adam update in place; ``weight_decay`` is added to the gradient."""
    if t < 1:
        raise ContractError("Adam step counter starts at 1")
    b1, b2 = cfg.beta1, cfg.beta2
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if cfg.weight_decay:
            g = g + cfg.weight_decay * p.data
        m = state.m.get(name, np.zeros_like(p.data))
        v = state.v.get(name, np.zeros_like(p.data))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p.data = p.data - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    state.t = t


class EarlyStopping:
    """Stop after ``patience`` consecutive evaluations without an improvement > min_delta."""

    def __init__(self, patience: int = 20, min_delta: float = 1e-6):
        self.patience = patience
        self.min_delta = min_delta
        self.best = float("inf")
        self.best_step = -1
        self.bad = 0

    def update(self, step: int, value: float) -> tuple[bool, bool]:
        """Returns (improved, stop)."""
        if value < self.best - self.min_delta:
            self.best, self.best_step, self.bad = value, step, 0
            return True, False
        self.bad += 1
        return False, self.bad >= self.patience


def regression_metrics(actual, predicted) -> tuple[float, float, float | None]:
    y = np.asarray(actual, dtype=np.float64).reshape(-1)
    p = np.asarray(predicted, dtype=np.float64).reshape(-1)
    if y.size == 0 or y.shape != p.shape:
        raise ContractError("metrics need equal, nonempty actual/predicted arrays")
    err = p - y
    rmse = float(np.sqrt(np.mean(err ** 2)))
    mae = float(np.mean(np.abs(err)))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = None if ss_tot == 0.0 else float(1.0 - np.sum(err ** 2) / ss_tot)
    return rmse, mae, r2


# -- loop -------------------------------------------------------------------------

def _scaled_targets(ds: WindowedDataset, idx, scaler: MinMaxScaler):
    x, y = ds.batch(idx)
    return x, scaler.transform(y[..., None])[..., 0]


def validation_mse(model: ForecastModel, ds: WindowedDataset, scaler: MinMaxScaler,
                   batch_size: int = 256) -> float:
    idx = np.arange(len(ds))
    total = 0.0
    for s in range(0, idx.size, batch_size):
        x, y = _scaled_targets(ds, idx[s:s + batch_size], scaler)
        pred = model.predict(x, batch_size=batch_size)
        total += float(((pred - y) ** 2).sum())
    return total / (len(ds) * ds.horizon)


def train(model: ForecastModel, train_set: WindowedDataset, val_set: WindowedDataset,
          cfg: TrainConfig, scaler: MinMaxScaler,
          val_loss_fn: Callable[[ForecastModel, int], float] | None = None) -> tuple[ForecastModel, TrainResult]:
    """Fit in scaled target space and restore the best-validation parameters.

    ``scaler`` maps raw loss percent to model space. ``val_loss_fn(model, epoch)``
    replaces the validation pass when given (used to script validation curves).
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ContractError("train and validation sets must be nonempty")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    drop_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    params = model.parameters()
    if cfg.init_head_bias:
        all_y = scaler.transform(train_set.targets[..., None])[..., 0]
        model.params["b_FC"].data = np.full(model.config.horizon, float(all_y.mean()))
    state = AdamState()
    stopper = EarlyStopping(cfg.patience, cfg.min_delta)
    result = TrainResult()
    best_state = model.state_dict()
    step = 0
    n = len(train_set)

    def check_val(tag: int) -> bool:
        v = val_loss_fn(model, tag) if val_loss_fn else validation_mse(model, val_set, scaler)
        if not np.isfinite(v):
            raise DivergenceError(f"validation loss became {v} at {cfg.early_stop_unit} {tag}")
        result.val_loss.append(float(v))
        improved, stop = stopper.update(tag, v)
        if improved:
            nonlocal best_state
            best_state = model.state_dict()
            result.best_epoch, result.best_val = tag, float(v)
        return stop

    stop = False
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        epoch_loss, seen = 0.0, 0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            x, y = _scaled_targets(train_set, idx, scaler)
            model.zero_grad()
            try:
                with ag.tape():
                    yhat, _ = model.forward(x, training=True, rng=drop_rng)
                    loss = mse_loss(yhat, y)
                    ag.backward(loss)
            except NumericError as exc:
                raise DivergenceError(f"training diverged at epoch {epoch}: {exc}") from None
            clip_gradients(params.values(), cfg.clip_norm)
            step += 1
            adam_step(params, {k: p.grad for k, p in params.items()}, state, step, cfg)
            epoch_loss += loss.item() * idx.size
            seen += idx.size
            if cfg.early_stop_unit == "iteration" and check_val(step):
                stop = True
            if stop or (cfg.max_steps is not None and step >= cfg.max_steps):
                break
        result.train_loss.append(epoch_loss / max(seen, 1))
        result.stopped_epoch = epoch
        if cfg.early_stop_unit == "epoch" and not stop:
            stop = check_val(epoch)
        log.debug("epoch %d train %.6g val %.6g", epoch, result.train_loss[-1], result.val_loss[-1])
        if stop or (cfg.max_steps is not None and step >= cfg.max_steps):
            break
    result.steps = step
    result.stopped_early = stop
    model.load_state_dict(best_state)
    return model, result


def evaluate(model: ForecastModel, test_set: WindowedDataset, scaler: MinMaxScaler,
             batch_size: int = 256) -> MetricsReport:
    """Metrics on the raw percent scale over every (window, horizon step) pair."""
    x, y = test_set.batch(np.arange(len(test_set)))
    t0 = time.perf_counter()
    pred_scaled = model.predict(x, batch_size=batch_size)
    elapsed = time.perf_counter() - t0
    pred = scaler.inverse(pred_scaled[..., None])[..., 0]
    rmse, mae, r2 = regression_metrics(y, pred)
    note = "" if r2 is not None else "r2 undefined: constant test targets"
    return MetricsReport(test_set.horizon, rmse, mae, r2, 1000.0 * elapsed / len(test_set), note, y, pred)


ABLATION_STEPS = (
    ("Attention-GCN-LSTM", {}),
    ("- T_atten", {"use_t_atten": False}),
    ("- LSTM", {"use_lstm": False}),
    ("- F_atten", {"use_f_atten": False}),
    ("- D_atten", {"use_d_atten": False}),
)


def ablation_configs(base: ModelConfig) -> list[tuple[str, ModelConfig]]:
    out, switches = [], {}
    for name, change in ABLATION_STEPS:
        switches.update(change)
        out.append((name, replace(base, **switches)))
    return out


def fit_and_evaluate(config: ModelConfig, adjacency, datasets, train_cfg: TrainConfig,
                     scaler: MinMaxScaler):
    train_set, val_set, test_set = datasets
    model = ForecastModel(config, adjacency)
    model, result = train(model, train_set, val_set, train_cfg, scaler)
    return model, result, evaluate(model, test_set, scaler)


def ablation_sweep(base: ModelConfig, adjacency, datasets, train_cfg: TrainConfig,
                   scaler: MinMaxScaler) -> list[tuple[str, MetricsReport]]:
    """Nested removal in the order T_atten, LSTM, F_atten, D_atten; same seed and data."""
    rows = []
    for name, cfg in ablation_configs(base):
        _, _, report = fit_and_evaluate(cfg, adjacency, datasets, copy.deepcopy(train_cfg), scaler)
        rows.append((name, report))
    return rows
