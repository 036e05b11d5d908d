"""Mixed feature tensor assembly: resampling, indicators, one-hot, scaling, windows."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import (AlignmentError, ContractError, DegenerateSplitError,
                     InsufficientDataError, SchemaError, VocabularyError)

ELECTRICAL_CHANNELS = ("ua", "ub", "uc", "ia", "ib", "ic", "p", "q", "imbalance", "pf", "load_rate")
WEATHER_CHANNELS = ("temp", "humidity", "wind_dir", "wind_speed", "sunhour", "visibility", "dew_point")
STATIC_ATTRIBUTES = ("transformer_type", "branch_type")
SCADA_HEADER = ("timestamp", "node_id") + ELECTRICAL_CHANNELS
LOSS_HEADER = ("timestamp", "loss_rate_percent")
STATIC_HEADER = ("node_id",) + STATIC_ATTRIBUTES
WEATHER_HEADER = ("timestamp",) + WEATHER_CHANNELS

QUARTER_HOUR = np.timedelta64(15, "m")
HOUR = np.timedelta64(60, "m")
FLOAT_FORMAT = "%.12g"


@dataclass
class ScadaSeries:
    timestamps: np.ndarray          # datetime64[s], shape (T,)
    electrical: np.ndarray          # (N, T, M); NaN marks a missing cell
    loss: np.ndarray                # (T,) feeder loss rate in percent
    node_ids: tuple = ()

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[s]")
        self.electrical = np.asarray(self.electrical, dtype=np.float64)
        self.loss = np.asarray(self.loss, dtype=np.float64)
        if self.electrical.ndim != 3:
            raise ContractError("electrical array must be N x T x M")
        if self.electrical.shape[1] != self.timestamps.size or self.loss.size != self.timestamps.size:
            raise AlignmentError("electrical, loss and timestamps must share T")
        if self.timestamps.size > 1 and np.any(np.diff(self.timestamps) <= np.timedelta64(0, "s")):
            raise AlignmentError("timestamps must be strictly increasing")
        if not self.node_ids:
            self.node_ids = tuple(str(i) for i in range(self.n_nodes))

    @property
    def n_nodes(self) -> int:
        return self.electrical.shape[0]

    @property
    def n_steps(self) -> int:
        return self.timestamps.size


@dataclass
class StaticAttributes:
    node_ids: tuple
    transformer_type: tuple
    branch_type: tuple

    def __post_init__(self):
        if not (len(self.node_ids) == len(self.transformer_type) == len(self.branch_type)):
            raise ContractError("every node needs both static categories")


@dataclass
class WeatherSeries:
    timestamps: np.ndarray
    values: np.ndarray              # (T, K) shared by all nodes

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[s]")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.timestamps.size, len(WEATHER_CHANNELS)):
            raise ContractError(f"weather values must be T x {len(WEATHER_CHANNELS)}")


@dataclass
class MinMaxScaler:
    """Per-channel affine map onto [0, 1]; constant channels map to 0."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "MinMaxScaler":
        flat = x.reshape(-1, x.shape[-1])
        return cls(np.nanmin(flat, axis=0), np.nanmax(flat, axis=0))

    @property
    def span(self) -> np.ndarray:
        return self.hi - self.lo

    def _safe(self):
        span = self.span
        dead = span < 1e-12
        return np.where(dead, 1.0, span), dead

    def transform(self, x: np.ndarray) -> np.ndarray:
        span, dead = self._safe()
        return np.where(dead, 0.0, (x - self.lo) / span)

    def inverse(self, z: np.ndarray) -> np.ndarray:
        span, dead = self._safe()
        return np.where(dead, self.lo, z * span + self.lo)

    def channel(self, k: int) -> "MinMaxScaler":
        return MinMaxScaler(self.lo[k:k + 1].copy(), self.hi[k:k + 1].copy())

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MinMaxScaler":
        return cls(np.asarray(d["lo"], dtype=np.float64), np.asarray(d["hi"], dtype=np.float64))


@dataclass
class MixedFeatureTensor:
    data: np.ndarray                # (N, T, 1+M+Q+K), scaled
    channel_layout: tuple
    scaler: MinMaxScaler
    timestamps: np.ndarray
    raw_loss: np.ndarray            # (T,) unscaled loss, used for targets

    @property
    def loss_scaler(self) -> MinMaxScaler:
        return self.scaler.channel(0)


@dataclass
class WindowedDataset:
    """Sliding windows over a feature tensor.

    Windows are kept as start offsets into ``source`` and materialized per batch.
    """

    source: np.ndarray              # (N, T, C)
    raw_loss: np.ndarray            # (T,)
    starts: np.ndarray              # (n,) window start offsets, ascending
    window: int
    horizon: int
    timestamps: np.ndarray | None = None

    def __len__(self) -> int:
        return int(self.starts.size)

    def __getitem__(self, i: int):
        s = int(self.starts[i])
        return self.source[:, s:s + self.window, :], self.raw_loss[s + self.window:s + self.window + self.horizon]

    @property
    def samples(self) -> list:
        return [self[i] for i in range(len(self))]

    @property
    def targets(self) -> np.ndarray:
        idx = self.starts[:, None] + self.window + np.arange(self.horizon)[None, :]
        return self.raw_loss[idx]

    def target_timestamps(self, step: int | None = None) -> np.ndarray:
        step = self.horizon - 1 if step is None else step
        return self.timestamps[self.starts + self.window + step]

    def batch(self, idx) -> tuple[np.ndarray, np.ndarray]:
        """Model-ready batch: inputs (B, T_w, N, C) and raw targets (B, P)."""
        idx = np.asarray(idx, dtype=np.int64)
        offs = self.starts[idx][:, None] + np.arange(self.window)[None, :]
        x = self.source[:, offs, :]            # (N, B, T_w, C)
        x = np.ascontiguousarray(np.transpose(x, (1, 2, 0, 3)))
        return x, self.targets[idx]

    def subset(self, sl) -> "WindowedDataset":
        return WindowedDataset(self.source, self.raw_loss, self.starts[sl], self.window,
                               self.horizon, self.timestamps)


# -- operations ---------------------------------------------------------------

def _hourly_selection(timestamps: np.ndarray) -> np.ndarray:
    ts = np.asarray(timestamps, dtype="datetime64[s]")
    if ts.size <= 1:
        return np.arange(ts.size)
    steps = np.diff(ts)
    if np.all(steps == HOUR):
        return np.arange(ts.size)
    if not np.all(steps == QUARTER_HOUR):
        raise AlignmentError("series cadence is neither a regular 15 minutes nor hourly")
    on_hour = (ts - ts.astype("datetime64[h]")) == np.timedelta64(0, "s")
    return np.flatnonzero(on_hour)


def resample_hourly(s):
    """Keep only the on-the-hour samples of a 15-minute series (selection, not averaging)."""
    keep = _hourly_selection(s.timestamps)
    if isinstance(s, WeatherSeries):
        return WeatherSeries(s.timestamps[keep], s.values[keep])
    return ScadaSeries(s.timestamps[keep], s.electrical[:, keep, :], s.loss[keep], s.node_ids)


def derive_electrical_indicators(p_active, q_reactive, ia, ib, ic, capacity):
    """Return (load_rate, power_factor, imbalance) arrays."""
    p = np.asarray(p_active, dtype=np.float64)
    q = np.asarray(q_reactive, dtype=np.float64)
    cap = np.asarray(capacity, dtype=np.float64)
    if np.any(cap <= 0):
        raise ContractError("transformer capacity must be positive")
    load_rate = p / cap
    apparent = np.hypot(p, q)
    with np.errstate(invalid="ignore", divide="ignore"):
        pf = np.where(apparent > 0, p / np.where(apparent > 0, apparent, 1.0), 0.0)
    phases = np.abs(np.stack(np.broadcast_arrays(
        np.asarray(ia, float), np.asarray(ib, float), np.asarray(ic, float))))
    mean = phases.mean(axis=0)
    spread = phases.max(axis=0) - phases.min(axis=0)
    imbalance = np.where(mean > 0, spread / np.where(mean > 0, mean, 1.0), 0.0)
    return load_rate, pf, imbalance


def default_vocab() -> dict:
    return {"transformer_type": ("S9", "S11"), "branch_type": ("overhead", "cable", "mixed")}


def one_hot_static(attrs: StaticAttributes, vocab: dict) -> tuple[np.ndarray, tuple]:
    """N x Q one-hot block and its column names (``attribute=category``)."""
    cols = []
    for name in STATIC_ATTRIBUTES:
        cols += [f"{name}={c}" for c in vocab[name]]
    out = np.zeros((len(attrs.node_ids), len(cols)))
    offset = 0
    for name in STATIC_ATTRIBUTES:
        cats = list(vocab[name])
        for row, (node, value) in enumerate(zip(attrs.node_ids, getattr(attrs, name))):
            if value not in cats:
                raise VocabularyError(f"node {node}: unknown {name} category {value!r}")
            out[row, offset + cats.index(value)] = 1.0
        offset += len(cats)
    return out, tuple(cols)


def build_mixed_features(s: ScadaSeries, a: StaticAttributes, w: WeatherSeries,
                         vocab: dict | None = None, scaler_mode: str = "minmax",
                         train_fraction: float = 0.8) -> MixedFeatureTensor:
    """Stack [loss | electrical | static one-hot | weather] into an N x T x C tensor.

    The min-max scaler is fit on the first ``train_fraction`` of T only.
    """
    if scaler_mode != "minmax":
        raise ContractError(f"unsupported scaler mode {scaler_mode!r}")
    vocab = vocab or default_vocab()
    if w.timestamps.shape != s.timestamps.shape or np.any(w.timestamps != s.timestamps):
        raise AlignmentError("weather and SCADA timestamps are not aligned")
    if len(a.node_ids) != s.n_nodes:
        raise AlignmentError(f"static attributes cover {len(a.node_ids)} nodes, SCADA has {s.n_nodes}")
    if np.isnan(s.electrical).any() or np.isnan(s.loss).any() or np.isnan(w.values).any():
        raise ContractError("feature inputs must be cleaned (no missing cells)")
    n, t = s.n_nodes, s.n_steps
    onehot, static_cols = one_hot_static(a, vocab)
    blocks = [
        np.broadcast_to(s.loss[None, :, None], (n, t, 1)),
        s.electrical,
        np.broadcast_to(onehot[:, None, :], (n, t, onehot.shape[1])),
        np.broadcast_to(w.values[None, :, :], (n, t, w.values.shape[1])),
    ]
    raw = np.concatenate(blocks, axis=2)
    n_fit = max(1, int(math.floor(train_fraction * t)))
    scaler = MinMaxScaler.fit(raw[:, :n_fit, :])
    layout = ("loss",) + ELECTRICAL_CHANNELS + static_cols + WEATHER_CHANNELS
    return MixedFeatureTensor(scaler.transform(raw), layout, scaler, s.timestamps.copy(), s.loss.copy())


def make_windows(c: MixedFeatureTensor, window: int, horizon: int, stride: int = 1) -> WindowedDataset:
    t = c.data.shape[1]
    if window < 1 or horizon < 1 or stride < 1:
        raise ContractError("window, horizon and stride must be positive")
    if t < window + horizon:
        raise InsufficientDataError(f"T={t} is shorter than window {window} + horizon {horizon}")
    count = (t - window - horizon) // stride + 1
    starts = np.arange(count, dtype=np.int64) * stride
    return WindowedDataset(c.data, c.raw_loss, starts, window, horizon, c.timestamps)


def split_dataset(d: WindowedDataset, ratios: Sequence[float] = (0.8, 0.1, 0.1)):
    """Chronological train/val/test split; val and test get floor(n*r), train the rest."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ContractError(f"split ratios must be three positive numbers summing to 1, got {ratios}")
    n = len(d)
    n_val = int(math.floor(n * ratios[1] + 1e-9))
    n_test = int(math.floor(n * ratios[2] + 1e-9))
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise DegenerateSplitError(
            f"{n} windows cannot be split {ratios} without an empty part "
            f"(train={n_train}, val={n_val}, test={n_test})")
    return (d.subset(slice(0, n_train)), d.subset(slice(n_train, n_train + n_val)),
            d.subset(slice(n_train + n_val, n)))


# -- CSV interfaces ---------------------------------------------------------------

def _check_header(df: pd.DataFrame, expected: tuple, path) -> None:
    if tuple(df.columns) != expected:
        raise SchemaError(f"{path}: expected header {','.join(expected)}, got {','.join(map(str, df.columns))}")


def _parse_times(col, path) -> np.ndarray:
    try:
        return pd.to_datetime(col, format="ISO8601").to_numpy().astype("datetime64[s]")
    except (ValueError, TypeError) as exc:
        raise SchemaError(f"{path}: bad timestamp ({exc})") from None


def format_times(ts: np.ndarray) -> list[str]:
    return [str(t) for t in np.asarray(ts, dtype="datetime64[s]")]


def read_scada_csv(path) -> tuple[np.ndarray, np.ndarray, tuple]:
    """Return (timestamps, electrical N x T x M with NaN gaps, node_ids in first-seen order)."""
    df = pd.read_csv(path, dtype={"node_id": str})
    _check_header(df, SCADA_HEADER, path)
    ts = _parse_times(df["timestamp"], path)
    nodes = tuple(pd.unique(df["node_id"]))
    times = np.unique(ts)
    node_pos = {nd: k for k, nd in enumerate(nodes)}
    ti = np.searchsorted(times, ts)
    ni = df["node_id"].map(node_pos).to_numpy()
    out = np.full((len(nodes), times.size, len(ELECTRICAL_CHANNELS)), np.nan)
    try:
        vals = df[list(ELECTRICAL_CHANNELS)].to_numpy(dtype=np.float64)
    except ValueError as exc:
        raise SchemaError(f"{path}: non-numeric measurement ({exc})") from None
    if np.unique(ni * times.size + ti).size != len(df):
        raise SchemaError(f"{path}: duplicate (timestamp, node_id) rows")
    if len(df) != out.shape[0] * out.shape[1]:
        raise SchemaError(f"{path}: every node needs one row per instant")
    out[ni, ti] = vals
    return times, out, nodes


def read_loss_csv(path) -> tuple[np.ndarray, np.ndarray]:
    df = pd.read_csv(path)
    _check_header(df, LOSS_HEADER, path)
    return _parse_times(df["timestamp"], path), df["loss_rate_percent"].to_numpy(dtype=np.float64)


def read_scada(scada_path, loss_path) -> ScadaSeries:
    ts, elec, nodes = read_scada_csv(scada_path)
    lts, loss = read_loss_csv(loss_path)
    if lts.shape != ts.shape or np.any(lts != ts):
        raise AlignmentError(f"{loss_path}: timestamps do not match {scada_path}")
    return ScadaSeries(ts, elec, loss, nodes)


def read_static_csv(path, node_ids: Sequence[str] | None = None) -> StaticAttributes:
    df = pd.read_csv(path, dtype=str)
    _check_header(df, STATIC_HEADER, path)
    rows = {r.node_id: (r.transformer_type, r.branch_type) for r in df.itertuples()}
    order = tuple(node_ids) if node_ids is not None else tuple(df["node_id"])
    missing = [n for n in order if n not in rows]
    if missing:
        raise SchemaError(f"{path}: no static attributes for node(s) {', '.join(missing)}")
    return StaticAttributes(order, tuple(rows[n][0] for n in order), tuple(rows[n][1] for n in order))


def read_weather_csv(path) -> WeatherSeries:
    df = pd.read_csv(path)
    _check_header(df, WEATHER_HEADER, path)
    return WeatherSeries(_parse_times(df["timestamp"], path),
                         df[list(WEATHER_CHANNELS)].to_numpy(dtype=np.float64))


def write_scada_csv(s: ScadaSeries, path) -> None:
    n, t, _ = s.electrical.shape
    times = format_times(s.timestamps)
    df = pd.DataFrame(s.electrical.reshape(n * t, -1), columns=ELECTRICAL_CHANNELS)
    df.insert(0, "node_id", np.repeat(np.asarray(s.node_ids, dtype=object), t))
    df.insert(0, "timestamp", times * n)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_loss_csv(timestamps, loss, path) -> None:
    pd.DataFrame({"timestamp": format_times(timestamps), "loss_rate_percent": loss}).to_csv(
        path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_static_csv(a: StaticAttributes, path) -> None:
    pd.DataFrame({"node_id": a.node_ids, "transformer_type": a.transformer_type,
                  "branch_type": a.branch_type}).to_csv(path, index=False, lineterminator="\n")


def write_weather_csv(w: WeatherSeries, path) -> None:
    df = pd.DataFrame(w.values, columns=WEATHER_CHANNELS)
    df.insert(0, "timestamp", format_times(w.timestamps))
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


@dataclass
class FeederDataset:
    """All inputs for one feeder as read from disk."""

    scada: ScadaSeries
    static: StaticAttributes
    weather: WeatherSeries
    extras: dict = field(default_factory=dict)


def load_feeder_dataset(scada_path, loss_path, static_path, weather_path) -> FeederDataset:
    for p in (scada_path, loss_path, static_path, weather_path):
        if not Path(p).exists():
            raise FileNotFoundError(f"missing input file {p}")
    scada = read_scada(scada_path, loss_path)
    return FeederDataset(scada, read_static_csv(static_path, scada.node_ids), read_weather_csv(weather_path))
