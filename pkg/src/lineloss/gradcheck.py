"""Finite-difference checks for every differentiable op and for each parameter block of a toy model."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor, gradient_check
from .graph import FeederGraph, normalize_adjacency
from .model import ForecastModel, ModelConfig

TOLERANCE = 1e-4


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    return ag.reduce_sum(ag.mul(out, Tensor(w)))


def op_checks(seed: int = 0, eps: float = 1e-5) -> dict[str, float]:
    """Max relative error per op. Outputs are reduced with a fixed random weighting
    so every output coordinate contributes a distinct gradient."""
    rng = np.random.default_rng(seed)

    def leaf(*shape, lo=-1.0, hi=1.0):
        return Tensor(rng.uniform(lo, hi, size=shape))

    def away_from_zero(*shape):
        v = rng.uniform(0.2, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
        return Tensor(v)

    cases = {
        "add": (lambda a, b: ag.add(a, b), [leaf(3, 4), leaf(4)]),
        "sub": (lambda a, b: ag.sub(a, b), [leaf(2, 3, 4), leaf(3, 1)]),
        "mul": (lambda a, b: ag.mul(a, b), [leaf(3, 4), leaf(1, 4)]),
        "div": (lambda a, b: ag.div(a, b), [leaf(3, 4), leaf(3, 4, lo=0.5, hi=2.0)]),
        "neg": (lambda a: ag.neg(a), [leaf(5)]),
        "tanh": (lambda a: ag.tanh(a), [leaf(3, 4, lo=-2, hi=2)]),
        "sigmoid": (lambda a: ag.sigmoid(a), [leaf(3, 4, lo=-3, hi=3)]),
        "relu": (lambda a: ag.relu(a), [away_from_zero(3, 4)]),
        "exp": (lambda a: ag.exp(a), [leaf(3, 4)]),
        "matmul": (lambda a, b: ag.matmul(a, b), [leaf(2, 3, 4), leaf(4, 5)]),
        "matmul_batched": (lambda a, b: ag.matmul(a, b), [leaf(2, 1, 3, 4), leaf(3, 4, 2)]),
        "softmax_axis": (lambda a: ag.softmax_axis(a, axis=-2), [leaf(2, 5, 3, lo=-2, hi=2)]),
        "reduce_sum": (lambda a: ag.reduce_sum(a, axis=1), [leaf(3, 4, 2)]),
        "reduce_mean": (lambda a: ag.reduce_mean(a, axis=0, keepdims=True), [leaf(3, 4)]),
        "reshape": (lambda a: ag.reshape(a, (4, 6)), [leaf(2, 3, 4)]),
        "transpose": (lambda a: ag.transpose(a, (2, 0, 1)), [leaf(2, 3, 4)]),
        "concat": (lambda a, b: ag.concat([a, b], axis=1), [leaf(2, 3), leaf(2, 2)]),
        "stack": (lambda a, b: ag.stack([a, b], axis=1), [leaf(2, 3), leaf(2, 3)]),
        "take": (lambda a: ag.take(a, (slice(None), slice(1, 3))), [leaf(3, 4)]),
    }
    out = {}
    for name, (fn, args) in cases.items():
        with ag.no_grad():
            shape = fn(*args).shape
        w = rng.normal(size=shape)
        out[name] = gradient_check(lambda *xs, fn=fn, w=w: _weighted(fn(*xs), w), args, eps=eps)
    return out


TOY_CONFIG = dict(n_nodes=2, window=4, in_channels=5, horizon=2, gcn_hidden=6, gcn_out=3,
                  embed_dim=4, d_att_hidden=5, f_att_hidden=5, t_att_hidden=5,
                  lstm_layers=2, lstm_hidden=4, dropout=0.0)


def relu_margin(model: ForecastModel, x: np.ndarray) -> float:
    """Smallest |pre-activation| over every ReLU in the model for input ``x``.

    Central differences are only valid when no ReLU input lies within ``eps``
    of its kink, so the toy problem is chosen to keep this margin wide.
    """
    p = model.params
    a = model.adjacency if model.config.use_gcn else np.eye(model.config.n_nodes)
    pre1 = (a @ x) @ p["W0"].data
    pre2 = a @ (np.maximum(pre1, 0) @ p["W1"].data)
    with ag.no_grad():
        y, _ = model.forward(x)
    # The head is a ReLU; a zero output means a dead unit sitting on the kink.
    return float(min(np.abs(pre1).min(), np.abs(pre2).min(), y.data.min()))


def toy_problem(seed: int, margin: float = 1e-3, tries: int = 50):
    """First (model, x, y) from seeds ``seed, seed+1, ...`` whose ReLU margin exceeds ``margin``."""
    g = FeederGraph.from_edges(2, [(0, 1)])
    a_norm = normalize_adjacency(g)
    for s in range(seed, seed + tries):
        model = ForecastModel(ModelConfig(seed=s, **TOY_CONFIG), a_norm)
        rng = np.random.default_rng(s)
        # O(1) weights: with the small default init some attention-bias gradients
        # sit near 1e-9, where central-difference roundoff dominates the ratio.
        for prm in model.params.values():
            prm.data = rng.uniform(-1.0, 1.0, prm.shape)
        model.params["b_FC"].data = np.full(model.config.horizon, 0.5)
        x = rng.uniform(0, 1, (3, 4, 2, 5))
        y = rng.uniform(0, 1, (3, model.config.horizon))
        if relu_margin(model, x) > margin:
            return model, x, y
    raise RuntimeError(f"no toy problem with ReLU margin > {margin} in {tries} seeds")


def model_checks(seed: int = 0, eps: float = 1e-5) -> dict[str, float]:
    """Max relative error of d(MSE)/d(params) for each parameter group of the toy model."""
    model, x, y = toy_problem(seed)
    yt = Tensor(y)

    def loss(*_):
        out, _ = model.forward(x)
        d = ag.sub(out, yt)
        return ag.reduce_mean(ag.mul(d, d))

    out = {}
    for group in model.active_groups():
        params = [model.params[n] for n in model.groups[group]]
        out[group] = gradient_check(loss, params, eps=eps)
    return out


def run_all(seed: int = 0, eps: float = 1e-5) -> dict[str, float]:
    res = {f"op:{k}": v for k, v in op_checks(seed, eps).items()}
    res.update({f"model:{k}": v for k, v in model_checks(seed, eps).items()})
    return res
