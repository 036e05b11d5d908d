"""Attention-GCN-LSTM forecaster built on the autograd engine.

Composition per window: two GCN layers at every time step, transformer-level
attention over nodes, feature-level attention over the flattened node x feature
axis, a stacked LSTM, time-level attention over hidden states, and a ReLU head.
All block functions accept an optional leading batch axis.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ContractError, DimensionError

AGGREGATIONS = ("weighted_sum", "mean", "last")


@dataclass
class ModelConfig:
    n_nodes: int
    window: int
    in_channels: int
    horizon: int = 1
    gcn_hidden: int = 256
    gcn_out: int = 16
    embed_dim: int = 8
    d_att_hidden: int = 32
    f_att_hidden: int = 32
    t_att_hidden: int = 32
    lstm_layers: int = 2
    lstm_hidden: int = 256
    use_gcn: bool = True
    use_d_atten: bool = True
    use_f_atten: bool = True
    use_lstm: bool = True
    use_t_atten: bool = True
    time_aggregation: str = "weighted_sum"
    dropout: float = 0.05
    seed: int = 0

    def __post_init__(self):
        dims = ("n_nodes", "window", "in_channels", "horizon", "gcn_hidden", "gcn_out", "embed_dim",
                "d_att_hidden", "f_att_hidden", "t_att_hidden", "lstm_layers", "lstm_hidden")
        for name in dims:
            if int(getattr(self, name)) < 1:
                raise DimensionError(f"model dimension {name} must be positive")
        if self.time_aggregation not in AGGREGATIONS:
            raise ContractError(f"time_aggregation must be one of {AGGREGATIONS}")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError("dropout must lie in [0, 1)")

    @property
    def flat_features(self) -> int:
        return self.n_nodes * self.gcn_out

    @property
    def temporal_features(self) -> int:
        return self.lstm_hidden if self.use_lstm else self.flat_features

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class AttentionTrace:
    zeta: np.ndarray | None = None   # (B, T, N) node scores per time step
    xi: np.ndarray | None = None     # (B, T, N*F) feature scores per time step
    nu: np.ndarray | None = None     # (B, T) time-step scores


# -- blocks ---------------------------------------------------------------------

def gcn_forward(c, a_norm, w0, w1) -> Tensor:
    """ReLU(A ReLU(A C W0) W1) applied to every leading (batch, time) slice."""
    c = ag.as_tensor(c)
    a = ag.as_tensor(a_norm)
    if c.shape[-2] != a.shape[0] or c.shape[-1] != ag.as_tensor(w0).shape[0]:
        raise DimensionError(f"GCN input {c.shape} does not fit adjacency {a.shape} / W0 {ag.as_tensor(w0).shape}")
    if isinstance(c, Tensor) and not c.requires_grad:
        ac = Tensor(a.data @ c.data)
    else:
        ac = ag.matmul(a, c)
    h = ag.relu(ag.matmul(ac, w0))
    return ag.relu(ag.matmul(a, ag.matmul(h, w1)))


def _score_mlp(x, w_in, b_in, w_out, b_out) -> Tensor:
    return ag.tanh(ag.add(ag.matmul(ag.add(ag.matmul(x, w_in), b_in), w_out), b_out))


def d_attention(g, w0, b0, w1, b1) -> tuple[Tensor, Tensor]:
    """Node attention on (..., T, N, F). Returns (zeta * G + G, zeta of shape (..., T, N))."""
    g = ag.as_tensor(g)
    alpha = _score_mlp(g, w0, b0, w1, b1)            # (..., T, N, 1)
    zeta = ag.softmax_axis(alpha, axis=-2)
    out = ag.add(ag.mul(zeta, g), g)
    return out, zeta


def f_attention(x, embedding, w2, b2, w3, b3) -> tuple[Tensor, Tensor]:
    """Feature attention on (..., T, N*F) with a frozen (N*F) x d embedding.

    Uses (x_ji e_i) w2 = x_ji (e_i w2) and mean_d(xi_ji x_ji e_i) = xi_ji x_ji mean(e_i),
    which avoids materializing the (..., T, N*F, d) tensor.
    """
    x = ag.as_tensor(x)
    emb = ag.as_tensor(embedding)
    if x.shape[-1] != emb.shape[0]:
        raise DimensionError(f"feature axis {x.shape[-1]} does not match embedding rows {emb.shape[0]}")
    xe = ag.reshape(x, x.shape + (1,))
    hidden = ag.add(ag.mul(xe, ag.matmul(emb, w2)), b2)          # (..., T, NF, a)
    score = ag.tanh(ag.add(ag.matmul(hidden, w3), b3))           # (..., T, NF, 1)
    xi = ag.softmax_axis(score, axis=-2)
    xi2 = ag.reshape(xi, x.shape)
    reduced = ag.mul(ag.mul(xi2, x), Tensor(emb.data.mean(axis=1)))
    return ag.add(reduced, x), xi2


def lstm_layer(seq, w_f, w_i, w_g, w_o, b_f, b_i, b_g, b_o) -> Tensor:
    """One LSTM layer over (B, T, D); gate weights are (H + D) x H acting on [h, x]."""
    seq = ag.as_tensor(seq)
    bsz, steps, d = seq.shape
    hid = ag.as_tensor(w_f).shape[1]
    if ag.as_tensor(w_f).shape[0] != hid + d:
        raise DimensionError(f"LSTM weight rows {ag.as_tensor(w_f).shape[0]} != hidden {hid} + input {d}")
    ws = [w_f, w_i, w_g, w_o]
    w_h = ag.concat([ag.take(w, slice(0, hid)) for w in ws], axis=1)       # (H, 4H)
    w_x = ag.concat([ag.take(w, slice(hid, None)) for w in ws], axis=1)    # (D, 4H)
    bias = ag.concat([b_f, b_i, b_g, b_o], axis=0)
    proj = ag.add(ag.matmul(seq, w_x), bias)                               # (B, T, 4H)
    h = Tensor(np.zeros((bsz, hid)))
    c = Tensor(np.zeros((bsz, hid)))
    outs = []
    for t in range(steps):
        z = ag.add(ag.take(proj, (slice(None), t)), ag.matmul(h, w_h))
        f = ag.sigmoid(ag.take(z, (slice(None), slice(0, hid))))
        i = ag.sigmoid(ag.take(z, (slice(None), slice(hid, 2 * hid))))
        g = ag.tanh(ag.take(z, (slice(None), slice(2 * hid, 3 * hid))))
        o = ag.sigmoid(ag.take(z, (slice(None), slice(3 * hid, 4 * hid))))
        c = ag.add(ag.mul(f, c), ag.mul(i, g))
        h = ag.mul(o, ag.tanh(c))
        outs.append(h)
    return ag.stack(outs, axis=1)


def lstm_forward(seq, layers: list[dict]) -> Tensor:
    """Stacked LSTM; each dict holds w_f, w_i, w_g, w_o, b_f, b_i, b_g, b_o."""
    out = seq
    for p in layers:
        out = lstm_layer(out, p["w_f"], p["w_i"], p["w_g"], p["w_o"], p["b_f"], p["b_i"], p["b_g"], p["b_o"])
    return out


def t_attention(h, w4, b4, w5, b5, aggregation: str = "weighted_sum") -> tuple[Tensor, Tensor]:
    """Time attention on (B, T, H). Returns (context (B, H), nu (B, T))."""
    h = ag.as_tensor(h)
    eta = _score_mlp(h, w4, b4, w5, b5)               # (B, T, 1)
    nu = ag.softmax_axis(eta, axis=-2)
    y = ag.add(ag.mul(nu, h), h)
    if aggregation == "weighted_sum":
        ctx = ag.reduce_sum(ag.mul(nu, y), axis=-2)
    elif aggregation == "mean":
        ctx = ag.reduce_mean(y, axis=-2)
    else:
        ctx = ag.take(y, (Ellipsis, -1, slice(None)))
    return ctx, ag.reshape(nu, nu.shape[:-1])


def head_forward(context, w_fc, b_fc) -> Tensor:
    return ag.relu(ag.add(ag.matmul(context, w_fc), b_fc))


# -- model ------------------------------------------------------------------------

GROUPS = ("gcn", "d_atten", "f_atten", "lstm", "t_atten", "head")


class ForecastModel:
    def __init__(self, config: ModelConfig, adjacency: np.ndarray):
        adjacency = np.asarray(adjacency, dtype=np.float64)
        if adjacency.shape != (config.n_nodes, config.n_nodes):
            raise DimensionError(f"adjacency {adjacency.shape} does not match n_nodes={config.n_nodes}")
        self.config = config
        self.adjacency = adjacency
        self.params: dict[str, Tensor] = {}
        self.groups: dict[str, list[str]] = {g: [] for g in GROUPS}
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5EED]))
        self._init(rng)

    def _add(self, group, name, shape, fan_in, rng):
        bound = 1.0 / np.sqrt(fan_in)
        self.params[name] = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)
        self.groups[group].append(name)

    def _init(self, rng):
        cfg = self.config
        c, h, f = cfg.in_channels, cfg.gcn_hidden, cfg.gcn_out
        nf = cfg.flat_features
        self._add("gcn", "W0", (c, h), c, rng)
        self._add("gcn", "W1", (h, f), h, rng)
        a = cfg.d_att_hidden
        self._add("d_atten", "w0", (f, a), f, rng)
        self._add("d_atten", "b0", (a,), f, rng)
        self._add("d_atten", "w1", (a, 1), a, rng)
        self._add("d_atten", "b1", (1,), a, rng)
        d, a = cfg.embed_dim, cfg.f_att_hidden
        emb_bound = 1.0 / np.sqrt(d)
        self.embedding = Tensor(rng.uniform(-emb_bound, emb_bound, size=(nf, d)), name="E")
        self._add("f_atten", "w2", (d, a), d, rng)
        self._add("f_atten", "b2", (a,), d, rng)
        self._add("f_atten", "w3", (a, 1), a, rng)
        self._add("f_atten", "b3", (1,), a, rng)
        hid = cfg.lstm_hidden
        inp = nf
        for layer in range(cfg.lstm_layers):
            for gate in "figo":
                self._add("lstm", f"lstm{layer}.w_{gate}", (hid + inp, hid), hid + inp, rng)
            for gate in "figo":
                self._add("lstm", f"lstm{layer}.b_{gate}", (hid,), hid + inp, rng)
            inp = hid
        tf, a = cfg.temporal_features, cfg.t_att_hidden
        self._add("t_atten", "w4", (tf, a), tf, rng)
        self._add("t_atten", "b4", (a,), tf, rng)
        self._add("t_atten", "w5", (a, 1), a, rng)
        self._add("t_atten", "b5", (1,), a, rng)
        self._add("head", "W_FC", (tf, cfg.horizon), tf, rng)
        self._add("head", "b_FC", (cfg.horizon,), tf, rng)

    # parameters ------------------------------------------------------------------
    def active_groups(self) -> list[str]:
        cfg = self.config
        on = {"gcn": True, "d_atten": cfg.use_d_atten, "f_atten": cfg.use_f_atten,
              "lstm": cfg.use_lstm, "t_atten": cfg.use_t_atten, "head": True}
        return [g for g in GROUPS if on[g]]

    def parameters(self, active_only: bool = True) -> dict[str, Tensor]:
        groups = self.active_groups() if active_only else GROUPS
        return {n: self.params[n] for g in groups for n in self.groups[g]}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {n: p.data.copy() for n, p in self.params.items()}
        out["E"] = self.embedding.data.copy()
        return out

    def load_state_dict(self, state: dict) -> None:
        for n, p in self.params.items():
            if state[n].shape != p.shape:
                raise DimensionError(f"parameter {n}: checkpoint shape {state[n].shape} != {p.shape}")
            p.data = np.array(state[n], dtype=np.float64)
        if "E" in state:
            self.embedding = Tensor(np.array(state["E"], dtype=np.float64), name="E")

    def _lstm_layers(self) -> list[dict]:
        out = []
        for layer in range(self.config.lstm_layers):
            pre = f"lstm{layer}."
            out.append({k[len(pre):]: v for k, v in self.params.items() if k.startswith(pre)})
        return out

    # forward ---------------------------------------------------------------------
    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None):
        """x: (B, T_w, N, C) scaled inputs. Returns (yhat (B, P) scaled, AttentionTrace)."""
        cfg = self.config
        x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        if x.shape[1:] != (cfg.window, cfg.n_nodes, cfg.in_channels):
            raise DimensionError(
                f"input window {x.shape[1:]} != (T_w={cfg.window}, N={cfg.n_nodes}, C={cfg.in_channels})")
        p = self.params
        trace = AttentionTrace()
        a_norm = self.adjacency if cfg.use_gcn else np.eye(cfg.n_nodes)
        g = gcn_forward(Tensor(x), a_norm, p["W0"], p["W1"])                 # (B, T, N, F)
        if cfg.use_d_atten:
            g, zeta = d_attention(g, p["w0"], p["b0"], p["w1"], p["b1"])
            trace.zeta = zeta.data[..., 0]
        bsz = x.shape[0]
        flat = ag.reshape(g, (bsz, cfg.window, cfg.flat_features))
        if cfg.use_f_atten:
            flat, xi = f_attention(flat, self.embedding, p["w2"], p["b2"], p["w3"], p["b3"])
            trace.xi = xi.data
        seq = flat
        if cfg.use_lstm:
            seq = self._dropout(seq, training, rng)
            seq = lstm_forward(seq, self._lstm_layers())
        if cfg.use_t_atten:
            ctx, nu = t_attention(seq, p["w4"], p["b4"], p["w5"], p["b5"], cfg.time_aggregation)
            trace.nu = nu.data
        else:
            ctx = ag.reduce_mean(seq, axis=1)
        ctx = self._dropout(ctx, training, rng)
        return head_forward(ctx, p["W_FC"], p["b_FC"]), trace

    def _dropout(self, t: Tensor, training: bool, rng) -> Tensor:
        rate = self.config.dropout
        if not training or rate <= 0 or rng is None:
            return t
        keep = (rng.random(t.shape) >= rate) / (1.0 - rate)
        return ag.mul(t, Tensor(keep))

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        outs = []
        with ag.no_grad():
            for s in range(0, len(x), batch_size):
                y, _ = self.forward(x[s:s + batch_size])
                outs.append(y.data)
        return np.concatenate(outs, axis=0)


def model_forward(window, a_norm, config: ModelConfig, model: ForecastModel | None = None):
    """Single-window convenience: window is N x T_w x C. Returns (yhat (P,), trace)."""
    model = model or ForecastModel(config, a_norm)
    w = np.asarray(window, dtype=np.float64)
    if w.ndim != 3:
        raise DimensionError("a window is N x T_w x C")
    y, trace = model.forward(np.transpose(w, (1, 0, 2))[None])
    return ag.reshape(y, (config.horizon,)), trace
