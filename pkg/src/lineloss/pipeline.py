"""Glue from a raw feeder dataset to model-ready splits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError
from .features import (FeederDataset, MinMaxScaler, MixedFeatureTensor, WindowedDataset,
                       build_mixed_features, make_windows, resample_hourly, split_dataset)
from .graph import FeederGraph, normalize_adjacency
from .model import ModelConfig


@dataclass
class Prepared:
    features: MixedFeatureTensor
    train: WindowedDataset
    val: WindowedDataset
    test: WindowedDataset
    loss_scaler: MinMaxScaler
    adjacency: np.ndarray

    @property
    def splits(self) -> tuple:
        return self.train, self.val, self.test

    def model_config(self, **kw) -> ModelConfig:
        return ModelConfig(n_nodes=self.features.data.shape[0], window=self.train.window,
                           in_channels=self.features.data.shape[2], horizon=self.train.horizon, **kw)


def prepare(ds: FeederDataset, graph: FeederGraph, window: int = 24, horizon: int = 1,
            ratios=(0.8, 0.1, 0.1)) -> Prepared:
    """Hourly resample, feature tensor (scaler fit on the first 80% of time), windows, split."""
    if graph.n_nodes != ds.scada.n_nodes:
        raise AlignmentError(f"topology has {graph.n_nodes} nodes, SCADA has {ds.scada.n_nodes}")
    scada = resample_hourly(ds.scada)
    weather = resample_hourly(ds.weather)
    feats = build_mixed_features(scada, ds.static, weather, train_fraction=ratios[0])
    windows = make_windows(feats, window, horizon)
    train, val, test = split_dataset(windows, ratios)
    return Prepared(feats, train, val, test, feats.loss_scaler, normalize_adjacency(graph))
