"""Delimited CSV artifacts: metrics, forecasts, loss curves and ablation tables."""

from __future__ import annotations

import csv

import numpy as np
import pandas as pd

from .errors import SchemaError
from .features import format_times

METRICS_HEADER = ("horizon", "rmse", "mae", "r2", "inference_ms")
FORECAST_HEADER = ("timestamp", "actual", "predicted")


def _fmt(v) -> str:
    return "" if v is None else f"{float(v):.12g}"


def write_metrics_csv(reports, path, timing: bool = False) -> None:
    """One row per horizon. ``inference_ms`` is left empty unless ``timing`` is set,
    since wall-clock time would make otherwise identical runs differ byte-wise."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in reports:
            w.writerow([r.horizon, _fmt(r.rmse), _fmt(r.mae), _fmt(r.r2),
                        _fmt(r.inference_ms) if timing else ""])


def write_forecast_csv(timestamps, actual, predicted, path) -> None:
    pd.DataFrame({"timestamp": format_times(np.asarray(timestamps)),
                  "actual": np.asarray(actual, dtype=np.float64),
                  "predicted": np.asarray(predicted, dtype=np.float64)}).to_csv(
        path, index=False, float_format="%.12g", lineterminator="\n")


def read_forecast_csv(path) -> tuple[np.ndarray, np.ndarray]:
    df = pd.read_csv(path)
    if tuple(df.columns) != FORECAST_HEADER:
        raise SchemaError(f"{path}: expected header {','.join(FORECAST_HEADER)}, got {','.join(df.columns)}")
    if df[["actual", "predicted"]].isna().any().any():
        raise SchemaError(f"{path}: empty actual/predicted cells")
    return df["actual"].to_numpy(np.float64), df["predicted"].to_numpy(np.float64)


def write_loss_curve_csv(train_loss, val_loss, path) -> None:
    n = max(len(train_loss), len(val_loss))
    pad = lambda xs: list(xs) + [None] * (n - len(xs))  # noqa: E731
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch", "train_mse", "val_mse"))
        for i, (a, b) in enumerate(zip(pad(train_loss), pad(val_loss)), start=1):
            w.writerow((i, _fmt(a), _fmt(b)))


def write_ablation_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("model", "horizon", "rmse", "mae", "r2"))
        for name, r in rows:
            w.writerow((name, r.horizon, _fmt(r.rmse), _fmt(r.mae), _fmt(r.r2)))
