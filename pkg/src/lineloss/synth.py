"""Deterministic synthetic feeders with planted spatial structure.

All randomness comes from Philox-4x64-10 (numpy's ``Philox`` bit generator)
keyed with ``seed + (stream << 64)`` and counter 0, so every stream is a pure
function of the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ContractError
from .features import (ELECTRICAL_CHANNELS, ScadaSeries, StaticAttributes, WeatherSeries,
                       default_vocab, derive_electrical_indicators, format_times,
                       write_loss_csv, write_scada_csv, write_static_csv, write_weather_csv)
from .graph import FeederGraph

STREAM_FEEDER, STREAM_SCADA, STREAM_CORRUPT = 1, 2, 3
START = np.datetime64("2017-01-01T00:00:00", "s")
CAPACITY_KVA = {"S9": 120.0, "S11": 160.0}


def philox(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) + (int(stream) << 64)))


@dataclass
class SynthSpec:
    n_nodes: int = 10
    days: int = 14
    cadence_minutes: int = 15
    seed: int = 0
    topology: str = "random-tree"
    missing_fraction: float = 0.0959      # total bad-cell fraction (gaps + spikes)
    outlier_fraction: float = 0.01        # share of cells turned into spikes, inside the total
    coupling: float = 0.8
    noise: float = 1.0                    # scales every stochastic term

    def __post_init__(self):
        if self.n_nodes < 2:
            raise ContractError("a synthetic feeder needs at least 2 nodes")
        for name in ("missing_fraction", "outlier_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ContractError(f"{name} must lie in [0, 1), got {v}")
        if self.topology not in ("path", "tree", "random-tree"):
            raise ContractError(f"unknown topology kind {self.topology!r}")
        if self.days < 1 or self.cadence_minutes not in (15, 60):
            raise ContractError("days must be >= 1 and cadence 15 or 60 minutes")

    @property
    def n_steps(self) -> int:
        return self.days * 24 * 60 // self.cadence_minutes


@dataclass
class LossFormula:
    """loss = a * sum(load^2) / sum(load) + b * temperature + c + noise."""

    a: float = 0.06
    b: float = 0.05
    c: float = 1.0
    noise_sd: float = 0.05

    def noise_free(self, loads: np.ndarray, temp: np.ndarray) -> np.ndarray:
        return self.a * (loads ** 2).sum(axis=0) / loads.sum(axis=0) + self.b * temp + self.c


@dataclass
class SynthData:
    graph: FeederGraph
    static: StaticAttributes
    scada: ScadaSeries             # clean
    weather: WeatherSeries
    loads: np.ndarray              # (N, T) active power actually drawn
    loss_noise_free: np.ndarray
    formula: LossFormula
    corrupted: ScadaSeries | None = None
    corruption_mask: np.ndarray | None = None   # (N, T, M) 0 ok, 1 missing, 2 spike
    extras: dict = field(default_factory=dict)


def _prufer_tree(n: int, rng) -> list:
    seq = rng.integers(0, n, size=n - 2).tolist()
    degree = [1] * n
    for v in seq:
        degree[v] += 1
    edges = []
    for v in seq:
        leaf = min(i for i in range(n) if degree[i] == 1)
        edges.append((leaf, v))
        degree[leaf] -= 1
        degree[v] -= 1
    u, w = [i for i in range(n) if degree[i] == 1]
    edges.append((u, w))
    return edges


def generate_feeder(spec: SynthSpec) -> tuple[FeederGraph, StaticAttributes]:
    rng = philox(spec.seed, STREAM_FEEDER)
    n = spec.n_nodes
    if spec.topology == "path":
        edges = [(i, i + 1) for i in range(n - 1)]
    elif spec.topology == "tree":
        edges = [(int(rng.integers(0, i)), i) for i in range(1, n)]
    else:
        edges = _prufer_tree(n, rng)
    ids = tuple(f"D{i:02d}" for i in range(n))
    vocab = default_vocab()
    tt, bt = vocab["transformer_type"], vocab["branch_type"]
    static = StaticAttributes(ids, tuple(tt[i % len(tt)] for i in range(n)),
                              tuple(bt[i % len(bt)] for i in range(n)))
    return FeederGraph.from_edges(n, edges, ids), static


def _ar1(rng, shape, rho, sd):
    eps = rng.normal(0.0, sd * np.sqrt(1 - rho ** 2), size=shape)
    out = np.empty(shape)
    out[..., 0] = rng.normal(0.0, sd, size=shape[:-1])
    for k in range(1, shape[-1]):
        out[..., k] = rho * out[..., k - 1] + eps[..., k]
    return out


def _weather(rng, hours: np.ndarray, noise: float) -> np.ndarray:
    day = hours / 24.0
    t = hours.size
    temp = (12 + 8 * np.sin(2 * np.pi * (day - 100) / 365) + 5 * np.sin(2 * np.pi * (hours - 9) / 24)
            + noise * _ar1(rng, (t,), 0.99, 1.5))
    humidity = np.clip(70 - 1.5 * (temp - 12) + noise * _ar1(rng, (t,), 0.98, 4.0), 10, 100)
    wind_dir = np.mod(180 + 90 * np.sin(2 * np.pi * hours / 79.0) + noise * _ar1(rng, (t,), 0.95, 20.0), 360)
    wind_speed = np.clip(3 + 1.5 * np.sin(2 * np.pi * hours / 53.0) + noise * _ar1(rng, (t,), 0.95, 0.8), 0, None)
    sunhour = np.clip(np.sin(2 * np.pi * (hours - 6) / 24), 0, None) * np.clip(1 - (humidity - 40) / 80, 0, 1)
    visibility = np.clip(10 - 0.05 * (humidity - 70) + noise * _ar1(rng, (t,), 0.97, 0.7), 0.5, None)
    dew_point = temp - (100 - humidity) / 5
    return np.column_stack([temp, humidity, wind_dir, wind_speed, sunhour, visibility, dew_point])


def generate_scada(spec: SynthSpec, graph: FeederGraph, static: StaticAttributes,
                   formula: LossFormula | None = None) -> SynthData:
    """Clean SCADA, weather and loss series; loads couple to their graph neighbors."""
    formula = formula or LossFormula()
    rng = philox(spec.seed, STREAM_SCADA)
    n, t = spec.n_nodes, spec.n_steps
    step_h = spec.cadence_minutes / 60.0
    hours = np.arange(t) * step_h
    timestamps = START + (np.arange(t) * spec.cadence_minutes).astype("timedelta64[m]")
    nz = spec.noise

    offset = rng.uniform(35.0, 65.0, size=n)
    phase = rng.uniform(-0.6, 0.6, size=n)
    amp_day = rng.uniform(10.0, 20.0, size=n)
    rho = 0.98 ** (spec.cadence_minutes / 15.0)
    idio = nz * _ar1(rng, (n, t), rho, 6.0)
    base = (offset[:, None]
            + amp_day[:, None] * np.sin(2 * np.pi * hours[None, :] / 24 + phase[:, None])
            + 5.0 * np.sin(2 * np.pi * hours[None, :] / 168)
            + idio)
    adj = graph.adjacency()
    deg = adj.sum(axis=1)
    nbr_mean = (adj @ base) / np.where(deg > 0, deg, 1)[:, None]
    loads = base + spec.coupling * nbr_mean + nz * rng.normal(0.0, 1.0, size=(n, t))
    loads = np.clip(loads, 1.0, None)

    weather = _weather(rng, hours, nz)
    temp = weather[:, 0]
    clean_loss = formula.noise_free(loads, temp)
    loss = clean_loss + nz * rng.normal(0.0, formula.noise_sd, size=t)

    cap = np.array([CAPACITY_KVA[k] for k in static.transformer_type]) * (1 + spec.coupling)
    pf0 = rng.uniform(0.86, 0.95, size=n)
    pf_t = np.clip(pf0[:, None] + nz * 0.01 * rng.normal(size=(n, t)), 0.7, 0.999)
    p = loads
    q = p * np.tan(np.arccos(pf_t))
    volts = 230.0 * (1 - 0.0004 * loads)[None] + nz * rng.normal(0.0, 0.8, size=(3, n, t))
    skew = rng.uniform(-0.06, 0.06, size=(3, n))
    currents = (p * 1000.0 / (3 * volts * pf_t)) * (1 + skew[:, :, None]
                                                      + nz * 0.01 * rng.normal(size=(3, n, t)))
    load_rate, pf, imbalance = derive_electrical_indicators(p, q, *currents, cap[:, None])
    elec = np.stack([volts[0], volts[1], volts[2], currents[0], currents[1], currents[2],
                     p, q, imbalance, pf, load_rate], axis=2)
    scada = ScadaSeries(timestamps, elec, loss, static.node_ids)
    return SynthData(graph, static, scada, WeatherSeries(timestamps, weather), loads,
                     clean_loss, formula)


def inject_bad_data(series: ScadaSeries, spec: SynthSpec) -> tuple[ScadaSeries, np.ndarray]:
    """MCAR gaps plus x5..x20 spikes, exactly round(fraction * cells) cells in total."""
    elec = series.electrical
    cells = elec.size
    total = int(round(spec.missing_fraction * cells))
    n_spike = int(round(spec.outlier_fraction * cells))
    if n_spike > total:
        raise ContractError("outlier_fraction exceeds the total bad-data fraction")
    if total >= cells:
        raise ContractError("bad-data fraction too large to place")
    mask = np.zeros(elec.shape, dtype=np.int8)
    if total == 0:
        return ScadaSeries(series.timestamps, elec.copy(), series.loss.copy(), series.node_ids), mask
    rng = philox(spec.seed, STREAM_CORRUPT)
    pick = rng.permutation(cells)[:total]
    flat = elec.reshape(-1).copy()
    mflat = mask.reshape(-1)
    spikes, gaps = pick[:n_spike], pick[n_spike:]
    flat[spikes] *= rng.uniform(5.0, 20.0, size=spikes.size)
    flat[gaps] = np.nan
    mflat[spikes] = 2
    mflat[gaps] = 1
    corrupted = ScadaSeries(series.timestamps, flat.reshape(elec.shape), series.loss.copy(), series.node_ids)
    return corrupted, mask


def synthesize(spec: SynthSpec) -> SynthData:
    graph, static = generate_feeder(spec)
    data = generate_scada(spec, graph, static)
    data.corrupted, data.corruption_mask = inject_bad_data(data.scada, spec)
    return data


def write_dataset(data: SynthData, out_dir) -> dict:
    """Write every CSV the pipeline consumes plus truth files; returns name -> path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / v for k, v in {
        "scada": "scada.csv", "loss": "loss.csv", "static": "static.csv", "weather": "weather.csv",
        "topology": "topology.txt", "truth_loss": "truth_loss.csv", "mask": "corruption_mask.csv",
    }.items()}
    scada = data.corrupted if data.corrupted is not None else data.scada
    write_scada_csv(scada, paths["scada"])
    write_loss_csv(scada.timestamps, scada.loss, paths["loss"])
    write_static_csv(data.static, paths["static"])
    write_weather_csv(data.weather, paths["weather"])
    paths["topology"].write_text(data.graph.to_text(), encoding="utf-8")
    pd.DataFrame({"timestamp": format_times(data.scada.timestamps),
                  "loss_rate_percent": data.scada.loss,
                  "noise_free_percent": data.loss_noise_free}).to_csv(
        paths["truth_loss"], index=False, float_format="%.12g", lineterminator="\n")
    mask = data.corruption_mask if data.corruption_mask is not None else np.zeros(data.scada.electrical.shape, np.int8)
    ni, ti, ci = np.nonzero(mask)
    pd.DataFrame({
        "timestamp": format_times(data.scada.timestamps[ti]),
        "node_id": [data.scada.node_ids[i] for i in ni],
        "channel": [ELECTRICAL_CHANNELS[c] for c in ci],
        "kind": np.where(mask[ni, ti, ci] == 1, "missing", "outlier"),
        "true_value": data.scada.electrical[ni, ti, ci],
    }).to_csv(paths["mask"], index=False, float_format="%.12g", lineterminator="\n")
    return paths
