"""Report figures rendered to files with the Agg backend."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> None:
    fig.tight_layout()
    # Fixed metadata keeps PNG bytes stable across runs.
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)


def plot_loss_curve(train_loss, val_loss, path, best_epoch: int | None = None) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(np.arange(1, len(train_loss) + 1), train_loss, label="train")
    ax.plot(np.arange(1, len(val_loss) + 1), val_loss, label="validation")
    if best_epoch:
        ax.axvline(best_epoch, color="grey", ls="--", lw=0.8, label=f"best ({best_epoch})")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE (scaled)")
    ax.set_yscale("log")
    ax.legend()
    _save(fig, path)


def plot_forecast(timestamps, actual, predicted, path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(8, 3.5))
    t = np.asarray(timestamps, dtype="datetime64[s]").astype("datetime64[ms]").astype(object)
    ax.plot(t, actual, label="actual", lw=1.2)
    ax.plot(t, predicted, label="predicted", lw=1.0)
    ax.set_ylabel("line loss rate (%)")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.autofmt_xdate()
    _save(fig, path)


def plot_ablation(names, rmse, r2, path) -> None:
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    pos = np.arange(len(names))
    a1.bar(pos, rmse)
    a1.set_ylabel("RMSE")
    a2.bar(pos, [np.nan if v is None else v for v in r2])
    a2.set_ylabel("R²")
    for ax in (a1, a2):
        ax.set_xticks(pos)
        ax.set_xticklabels(names, rotation=30, ha="right")
    _save(fig, path)


def plot_horizons(horizons, rmse, mae, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(horizons, rmse, "o-", label="RMSE")
    ax.plot(horizons, mae, "s-", label="MAE")
    ax.set_xscale("log")
    ax.set_xlabel("horizon (hours)")
    ax.legend()
    _save(fig, path)
